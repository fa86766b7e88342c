//! The mock world: facts, retrievable images, skill guidance, and per-prompt
//! ground truth, loaded from a single JSON fixture.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::policy::Vocab;
use crate::protocol::{PromptReferenceProgram, SkillName, SubjectAnnotations, Trajectory};

use super::EnvError;

/// One searchable fact. `fact_token` is the grounded detail a correct
/// program must carry into its generation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactEntry {
    pub text: String,
    pub fact_token: String,
}

/// One retrievable image with fixture-side annotations and hidden
/// relevance tags (never exposed through observations).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldImage {
    pub img_id: String,
    pub title: String,
    pub cached_path: String,
    pub source_tag: String,
    #[serde(default)]
    pub annotations: SubjectAnnotations,
    #[serde(default)]
    pub relevant_for: BTreeSet<String>,
}

/// What a satisfying program for one prompt must contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    #[serde(default)]
    pub required_fact_key: Option<String>,
    /// Resolved copy of `facts[required_fact_key].fact_token`.
    #[serde(default)]
    pub required_fact_token: Option<String>,
    pub correct_img_ids: BTreeSet<String>,
    #[serde(default)]
    pub required_skills: BTreeSet<SkillName>,
    #[serde(default)]
    pub required_text_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCase {
    pub prompt_id: String,
    pub request_text: String,
    pub ground_truth: GroundTruthSpec,
}

/// Immutable mock world backing all three tools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct World {
    pub name: String,
    #[serde(default)]
    pub facts: BTreeMap<String, FactEntry>,
    #[serde(default)]
    pub images: BTreeMap<String, Vec<WorldImage>>,
    #[serde(default)]
    pub skills: BTreeMap<SkillName, String>,
    #[serde(default)]
    pub prompts: Vec<PromptCase>,
}

impl World {
    pub fn prompt(&self, prompt_id: &str) -> Option<&PromptCase> {
        self.prompts.iter().find(|p| p.prompt_id == prompt_id)
    }

    pub fn image(&self, img_id: &str) -> Option<&WorldImage> {
        self.images
            .values()
            .flatten()
            .find(|img| img.img_id == img_id)
    }

    /// Every canned query phrase (fact keys plus image keys), sorted.
    pub fn query_strings(&self) -> Vec<String> {
        let mut queries: Vec<String> = self.facts.keys().cloned().collect();
        queries.extend(self.images.keys().cloned());
        queries.sort();
        queries.dedup();
        queries
    }

    pub fn image_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .images
            .values()
            .flatten()
            .map(|img| img.img_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// The action vocabulary induced by this world.
    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.query_strings(), self.image_ids())
    }
}

/// Load a world fixture and validate that every prompt's ground truth is
/// satisfiable from the world content.
pub fn load_world(path: &Path) -> Result<World, EnvError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EnvError::FixtureInvalid(format!("{}: {e}", path.display())))?;
    let world: World = serde_json::from_str(&text)
        .map_err(|e| EnvError::FixtureInvalid(format!("{}: {e}", path.display())))?;
    validate_world(&world)?;
    Ok(world)
}

fn validate_world(world: &World) -> Result<(), EnvError> {
    let invalid = |msg: String| Err(EnvError::FixtureInvalid(msg));
    let known_ids: BTreeSet<&str> = world
        .images
        .values()
        .flatten()
        .map(|img| img.img_id.as_str())
        .collect();

    let mut seen_prompts = BTreeSet::new();
    for case in &world.prompts {
        let id = &case.prompt_id;
        if !seen_prompts.insert(id.clone()) {
            return invalid(format!("duplicate prompt_id {id}"));
        }
        let gt = &case.ground_truth;
        match (&gt.required_fact_key, &gt.required_fact_token) {
            (Some(key), Some(token)) => match world.facts.get(key) {
                Some(entry) if &entry.fact_token == token => {}
                Some(entry) => {
                    return invalid(format!(
                        "{id}: required_fact_token {token:?} disagrees with fact entry {:?}",
                        entry.fact_token
                    ))
                }
                None => return invalid(format!("{id}: unknown required_fact_key {key:?}")),
            },
            (None, None) => {}
            _ => {
                return invalid(format!(
                    "{id}: required_fact_key and required_fact_token must be set together"
                ))
            }
        }
        if gt.correct_img_ids.is_empty() {
            return invalid(format!("{id}: correct_img_ids is empty"));
        }
        for img_id in &gt.correct_img_ids {
            if !known_ids.contains(img_id.as_str()) {
                return invalid(format!("{id}: ground truth references missing {img_id}"));
            }
        }
        for skill in &gt.required_skills {
            if !world.skills.contains_key(skill) {
                return invalid(format!("{id}: world has no guidance for skill {skill}"));
            }
        }
        if let Some(token) = &gt.required_text_token {
            if token.is_empty() {
                return invalid(format!("{id}: required_text_token is empty"));
            }
            if !case.request_text.contains(&format!("\"{token}\"")) {
                return invalid(format!(
                    "{id}: request_text does not quote required text {token:?}"
                ));
            }
        }
    }
    Ok(())
}

/// A reference resolved against the world for judging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedReference {
    pub img_id: String,
    pub title: String,
    pub annotations: SubjectAnnotations,
    /// Whether the fixture marks this image relevant for the prompt.
    pub relevant: bool,
}

/// The symbolic stand-in for a rendered image: the program itself plus
/// fixture-resolved reference annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedOutcome {
    pub prompt_id: String,
    pub request_text: String,
    pub resolved_refs: Vec<ResolvedReference>,
}

/// Resolve a program's references against the world.
pub fn render_outcome(
    world: &World,
    trajectory: &Trajectory,
    program: &PromptReferenceProgram,
) -> RenderedOutcome {
    let resolved_refs = program
        .reference_images
        .iter()
        .map(|selection| match world.image(&selection.img_id) {
            Some(img) => ResolvedReference {
                img_id: img.img_id.clone(),
                title: img.title.clone(),
                annotations: img.annotations.clone(),
                relevant: img.relevant_for.contains(&trajectory.prompt_id),
            },
            None => ResolvedReference {
                img_id: selection.img_id.clone(),
                title: String::new(),
                annotations: SubjectAnnotations::default(),
                relevant: false,
            },
        })
        .collect();
    RenderedOutcome {
        prompt_id: trajectory.prompt_id.clone(),
        request_text: trajectory.request_text.clone(),
        resolved_refs,
    }
}
