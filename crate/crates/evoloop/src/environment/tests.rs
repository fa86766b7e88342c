use std::path::Path;

use super::*;
use crate::experience::embed_prompt;
use crate::policy::{fnv1a64, score_tokens, ColdStartConfig, PolicyParameters, TokenBatch};
use crate::protocol::{
    FilterReason, ObservationPayload, ProtocolFailure, ProtocolStatus, SkillName, ToolArguments,
    ToolCall, ToolName,
};
use crate::reward::RuleJudge;

pub(crate) fn fixture_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/snooker_world.json"))
}

fn world() -> World {
    load_world(fixture_path()).expect("bundled fixture loads")
}

fn cold_params(world: &World) -> PolicyParameters {
    PolicyParameters::cold_start(&world.vocab(), 0.7, &ColdStartConfig::default())
}

/// Column of the main feature block a key folds to.
fn feature_column(key: &str, d_main: usize) -> usize {
    (fnv1a64(key.as_bytes()) % d_main as u64) as usize
}

#[test]
fn bundled_fixture_loads_with_prompts() {
    let w = world();
    assert!(w.prompts.len() >= 8);
    assert_eq!(w.skills.len(), 8);
    assert!(w.vocab().len() >= 8);
}

#[test]
fn fixture_with_missing_image_is_invalid() {
    let mut w = world();
    w.prompts[0]
        .ground_truth
        .correct_img_ids
        .insert("IMG_999".into());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad_world.json");
    std::fs::write(&path, serde_json::to_string(&w).unwrap()).unwrap();
    assert!(matches!(
        load_world(&path),
        Err(EnvError::FixtureInvalid(msg)) if msg.contains("IMG_999")
    ));
}

#[test]
fn empty_fixture_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty_world.json");
    std::fs::write(&path, r#"{"name":"empty"}"#).unwrap();
    let w = load_world(&path).unwrap();
    assert!(w.prompts.is_empty());
}

#[test]
fn prompt_embeddings_stay_below_the_retrieval_gate() {
    let w = world();
    let embeddings: Vec<Vec<f64>> = w
        .prompts
        .iter()
        .map(|p| embed_prompt(&p.request_text).unwrap())
        .collect();
    for i in 0..embeddings.len() {
        for j in (i + 1)..embeddings.len() {
            let cos: f64 = embeddings[i].iter().zip(&embeddings[j]).map(|(a, b)| a * b).sum();
            assert!(
                cos < 0.84,
                "prompts {} and {} are too close for gated retrieval: cos {cos}",
                w.prompts[i].prompt_id,
                w.prompts[j].prompt_id
            );
        }
    }
}

#[test]
fn search_resolves_fuzzy_queries() {
    let w = world();
    let mut budget = BudgetState::new(10);
    let call = ToolCall {
        tool_name: ToolName::Search,
        arguments: ToolArguments::Search {
            queries: vec!["2023 champion nationality".into()],
        },
        turn_index: 0,
    };
    let obs = execute_tool(&w, &call, &mut budget).unwrap();
    match obs.payload {
        ObservationPayload::Snippets(snippets) => {
            assert_eq!(snippets.len(), 1);
            assert!(snippets[0].contains("belgian"));
        }
        other => panic!("expected snippets, got {other:?}"),
    }
    assert_eq!(budget.used, 1);
}

#[test]
fn unmatched_queries_return_empty_payload() {
    let w = world();
    let mut budget = BudgetState::new(10);
    let call = ToolCall {
        tool_name: ToolName::Search,
        arguments: ToolArguments::Search {
            queries: vec!["completely unrelated moon phases".into()],
        },
        turn_index: 0,
    };
    let obs = execute_tool(&w, &call, &mut budget).unwrap();
    assert_eq!(obs.payload, ObservationPayload::Snippets(vec![]));
}

#[test]
fn query_knowledge_returns_guidance_verbatim() {
    let w = world();
    let mut budget = BudgetState::new(10);
    let call = ToolCall {
        tool_name: ToolName::QueryKnowledge,
        arguments: ToolArguments::QueryKnowledge {
            skill_name: "text_rendering".into(),
        },
        turn_index: 0,
    };
    let obs = execute_tool(&w, &call, &mut budget).unwrap();
    assert_eq!(
        obs.payload,
        ObservationPayload::Guidance(w.skills[&SkillName::TextRendering].clone())
    );
}

#[test]
fn unknown_skill_is_an_error() {
    let w = world();
    let mut budget = BudgetState::new(10);
    let call = ToolCall {
        tool_name: ToolName::QueryKnowledge,
        arguments: ToolArguments::QueryKnowledge {
            skill_name: "pottery".into(),
        },
        turn_index: 0,
    };
    assert!(matches!(
        execute_tool(&w, &call, &mut budget),
        Err(EnvError::UnknownSkill(name)) if name == "pottery"
    ));
    assert_eq!(budget.used, 0);
}

#[test]
fn eleventh_call_under_cap_ten_is_rejected() {
    let w = world();
    let mut budget = BudgetState::new(10);
    let call = ToolCall {
        tool_name: ToolName::ImageSearch,
        arguments: ToolArguments::ImageSearch {
            query: "crucible stage circular seating".into(),
        },
        turn_index: 0,
    };
    for _ in 0..10 {
        execute_tool(&w, &call, &mut budget).unwrap();
    }
    assert!(matches!(
        execute_tool(&w, &call, &mut budget),
        Err(EnvError::BudgetExhausted)
    ));
}

#[test]
fn rollouts_are_bit_identical_under_the_same_seed() {
    let w = world();
    let vocab = w.vocab();
    let params = cold_params(&w);
    let cfg = RolloutConfig::default();
    let (t1, trace1) = run_rollout(&w, &params, &vocab, "p01", 42, &cfg).unwrap();
    let (t2, trace2) = run_rollout(&w, &params, &vocab, "p01", 42, &cfg).unwrap();
    assert_eq!(
        crate::protocol::to_log_line(&t1),
        crate::protocol::to_log_line(&t2)
    );
    assert_eq!(trace1.steps.len(), trace2.steps.len());
    for (a, b) in trace1.steps.iter().zip(&trace2.steps) {
        assert_eq!(a.token, b.token);
        assert_eq!(a.logp.to_bits(), b.logp.to_bits());
    }
    assert_eq!(trace1.patched_samples, 0);
}

#[test]
fn unknown_prompt_is_rejected() {
    let w = world();
    let vocab = w.vocab();
    let params = cold_params(&w);
    assert!(matches!(
        run_rollout(&w, &params, &vocab, "p99", 1, &RolloutConfig::default()),
        Err(EnvError::UnknownPrompt(_))
    ));
}

#[test]
fn answer_first_policy_fails_filters() {
    let w = world();
    let vocab = w.vocab();
    let mut params = cold_params(&w);
    let answer = vocab.find("ctl:final_answer").unwrap();
    let col = feature_column("slot:action", params.dims.d_main);
    params.output[answer * params.dims.hidden + col] += 50.0;
    let (t, _) = run_rollout(&w, &params, &vocab, "p01", 7, &RolloutConfig::default()).unwrap();
    assert_eq!(t.tool_call_count, 0);
    assert!(matches!(
        t.protocol_status,
        ProtocolStatus::Failed(ProtocolFailure::Filter(FilterReason::NoImageSearch))
    ));
}

#[test]
fn budget_exhaustion_forces_a_final_answer() {
    let w = world();
    let vocab = w.vocab();
    let mut params = cold_params(&w);
    let search = vocab.find("tool:search").unwrap();
    let col = feature_column("slot:action", params.dims.d_main);
    params.output[search * params.dims.hidden + col] += 50.0;
    let cfg = RolloutConfig::default();
    let (t, _) = run_rollout(&w, &params, &vocab, "p01", 3, &cfg).unwrap();
    assert_eq!(t.tool_call_count, cfg.tool_budget);
    let last = t.turns.last().unwrap();
    assert!(last.final_answer.is_some());
    assert!(last.thought.contains("final step"));
}

#[test]
fn recorded_logps_match_rescoring() {
    let w = world();
    let vocab = w.vocab();
    let params = cold_params(&w);
    for seed in 0..20 {
        let (t, trace) =
            run_rollout(&w, &params, &vocab, "p02", seed, &RolloutConfig::default()).unwrap();
        assert!(t.tool_call_count <= 10, "budget violated");
        let mut batch = TokenBatch::default();
        for step in &trace.steps {
            batch.push(step.context.clone(), step.token, 1);
        }
        let rescored = score_tokens(&params, &batch).unwrap();
        let recorded: f64 = trace.steps.iter().map(|s| s.logp).sum();
        let again: f64 = rescored.iter().sum();
        assert!((recorded - again).abs() < 1e-12);
    }
}

#[test]
fn groups_share_prompt_and_replay_exactly() {
    let w = world();
    let vocab = w.vocab();
    let params = cold_params(&w);
    let cfg = RolloutConfig::default();
    let g1 = run_group(&w, &params, &vocab, "p01", 6, 99, &cfg, &RuleJudge, 0.5).unwrap();
    let g2 = run_group(&w, &params, &vocab, "p01", 6, 99, &cfg, &RuleJudge, 0.5).unwrap();
    assert_eq!(g1.trajectories.len(), 6);
    assert!(g1.trajectories.iter().all(|t| t.prompt_id == "p01"));
    for (a, b) in g1.trajectories.iter().zip(&g2.trajectories) {
        assert_eq!(
            crate::protocol::to_log_line(a),
            crate::protocol::to_log_line(b)
        );
    }
    for (a, b) in g1.rewards.iter().zip(&g2.rewards) {
        assert_eq!(a.mixed.to_bits(), b.mixed.to_bits());
    }
}

#[test]
fn group_of_one_is_too_small() {
    let w = world();
    let vocab = w.vocab();
    let params = cold_params(&w);
    assert!(matches!(
        run_group(
            &w,
            &params,
            &vocab,
            "p01",
            1,
            0,
            &RolloutConfig::default(),
            &RuleJudge,
            0.5
        ),
        Err(EnvError::GroupTooSmall(1))
    ));
}

/// Build the ideal trajectory for a prompt straight from its ground truth:
/// search the required fact, image-search every query key that holds a
/// correct image, activate each required skill, then compose a program
/// with the correct references (sorted), contiguous ordinal bindings, the
/// grounded fact, and the quoted text.
fn ideal_trajectory(w: &World, case: &PromptCase) -> crate::protocol::Trajectory {
    use crate::protocol::*;
    let gt = &case.ground_truth;
    let mut turns = Vec::new();
    let mut index = 0u32;
    let mut fact_texts = Vec::new();
    if let Some(key) = &gt.required_fact_key {
        let entry = &w.facts[key];
        fact_texts.push(entry.text.clone());
        turns.push(Turn::tool(
            "ground the fact",
            ToolCall {
                tool_name: ToolName::Search,
                arguments: ToolArguments::Search { queries: vec![key.clone()] },
                turn_index: index,
            },
            Observation {
                source_tool: ToolName::Search,
                payload: ObservationPayload::Snippets(vec![entry.text.clone()]),
            },
        ));
        index += 1;
    }
    let mut resolved: Vec<(String, String)> = Vec::new();
    for (key, records) in &w.images {
        if records.iter().any(|r| gt.correct_img_ids.contains(&r.img_id)) {
            turns.push(Turn::tool(
                "retrieve references",
                ToolCall {
                    tool_name: ToolName::ImageSearch,
                    arguments: ToolArguments::ImageSearch { query: key.clone() },
                    turn_index: index,
                },
                Observation {
                    source_tool: ToolName::ImageSearch,
                    payload: ObservationPayload::Images(
                        records
                            .iter()
                            .map(|r| ImageResult {
                                img_id: r.img_id.clone(),
                                title: r.title.clone(),
                                cached_path: r.cached_path.clone(),
                                source_tag: r.source_tag.clone(),
                            })
                            .collect(),
                    ),
                },
            ));
            index += 1;
            for r in records {
                if gt.correct_img_ids.contains(&r.img_id) {
                    resolved.push((r.img_id.clone(), r.title.clone()));
                }
            }
        }
    }
    for skill in &gt.required_skills {
        turns.push(Turn::tool(
            "activate knowledge",
            ToolCall {
                tool_name: ToolName::QueryKnowledge,
                arguments: ToolArguments::QueryKnowledge { skill_name: skill.as_str().into() },
                turn_index: index,
            },
            Observation {
                source_tool: ToolName::QueryKnowledge,
                payload: ObservationPayload::Guidance(w.skills[skill].clone()),
            },
        ));
        index += 1;
    }
    resolved.sort();
    let mut prompt = case.request_text.replace('"', "");
    for text in &fact_texts {
        prompt.push(' ');
        prompt.push_str(text);
    }
    for (i, _) in resolved.iter().enumerate() {
        prompt.push_str(&format!(
            " Follow the {} reference image closely.",
            crate::protocol::ORDINAL_WORDS[i]
        ));
    }
    if let Some(text) = &gt.required_text_token {
        prompt.push_str(&format!(" Render the text \"{text}\" exactly."));
    }
    let program = PromptReferenceProgram {
        gen_prompt: prompt,
        reference_images: resolved
            .iter()
            .map(|(id, title)| ReferenceSelection { img_id: id.clone(), note: format!("copy {title}") })
            .collect(),
        selected_skills: gt.required_skills.iter().copied().collect(),
        rationale: "ideal".into(),
    };
    turns.push(Turn::answer("compose", AnswerPayload::Program(program)));
    Trajectory {
        prompt_id: case.prompt_id.clone(),
        request_text: case.request_text.clone(),
        tool_call_count: index,
        turns,
        protocol_status: ProtocolStatus::Ok,
    }
}

#[test]
fn every_prompt_has_a_perfect_score_trajectory() {
    let w = world();
    let cfg = RolloutConfig::default();
    for case in &w.prompts {
        let t = ideal_trajectory(&w, case);
        assert!(t.tool_call_count <= cfg.tool_budget, "{} over budget", case.prompt_id);
        let parsed = crate::protocol::parse_trajectory(&crate::protocol::to_log_line(&t)).unwrap();
        assert_eq!(parsed.protocol_status, ProtocolStatus::Ok, "{}", case.prompt_id);
        let report = judge_rollout(&w, &RuleJudge, &t, 0.5, &cfg);
        assert!(!report.protocol_failed, "{} failed filters", case.prompt_id);
        assert_eq!(
            report.mixed, 1.0,
            "{}: rubric {:?} text {}",
            case.prompt_id, report.rubric, report.text_score
        );
    }
}
