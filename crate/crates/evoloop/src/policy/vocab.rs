//! Action vocabulary: tool names, skill names, query phrases, image ids,
//! ordinal phrases, and answer-control tokens, plus the decision-slot
//! taxonomy the rollout state machine samples over.

use serde::{Deserialize, Serialize};

use crate::protocol::{SkillName, ToolName, ORDINAL_WORDS};

pub type TokenId = usize;

/// Width of the hashed-text tail of the guidance sub-vector.
pub const GUIDANCE_HASH_CELLS: usize = 8;

/// Answer-control tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlToken {
    /// Emit the final answer now.
    FinalAnswer,
    /// Stop selecting reference images.
    EndRefs,
    /// Quote the request's quoted span verbatim in the final prompt.
    QuoteText,
}

/// What a vocabulary token denotes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenClass {
    Tool(ToolName),
    Skill(SkillName),
    /// Ordinal position, 1-based.
    Ordinal(usize),
    Control(ControlToken),
    /// A canned query phrase the agent can issue.
    Query(String),
    /// A retrievable image id.
    ImgId(String),
}

impl TokenClass {
    /// Tokens eligible for distillation supervision: tool names, skill
    /// names, image ids, and ordinals.
    pub fn is_decision(&self) -> bool {
        matches!(
            self,
            TokenClass::Tool(_) | TokenClass::Skill(_) | TokenClass::ImgId(_) | TokenClass::Ordinal(_)
        )
    }
}

/// The kind of decision a context asks for; drives feature construction and
/// the cold-start prior over valid token classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    /// Choose a tool or terminate with the final answer.
    Action,
    /// Choose a query phrase for `search`.
    SearchQuery,
    /// Choose a query phrase for `image_search`.
    ImageQuery,
    /// Choose a skill for `query_knowledge`.
    SkillArg,
    /// Choose an observed image id or stop selecting.
    RefSelect,
    /// Choose the ordinal phrase binding one selected reference.
    OrdinalChoice,
    /// Decide whether to quote the request's literal text.
    TextDecision,
}

impl SlotKind {
    pub const ALL: [SlotKind; 7] = [
        SlotKind::Action,
        SlotKind::SearchQuery,
        SlotKind::ImageQuery,
        SlotKind::SkillArg,
        SlotKind::RefSelect,
        SlotKind::OrdinalChoice,
        SlotKind::TextDecision,
    ];

    pub fn feature_key(&self) -> &'static str {
        match self {
            SlotKind::Action => "slot:action",
            SlotKind::SearchQuery => "slot:search_query",
            SlotKind::ImageQuery => "slot:image_query",
            SlotKind::SkillArg => "slot:skill_arg",
            SlotKind::RefSelect => "slot:ref_select",
            SlotKind::OrdinalChoice => "slot:ordinal",
            SlotKind::TextDecision => "slot:text_decision",
        }
    }

    /// Whether a token class is a well-formed choice for this slot.
    pub fn admits(&self, class: &TokenClass) -> bool {
        match self {
            SlotKind::Action => matches!(
                class,
                TokenClass::Tool(_) | TokenClass::Control(ControlToken::FinalAnswer)
            ),
            SlotKind::SearchQuery | SlotKind::ImageQuery => matches!(class, TokenClass::Query(_)),
            SlotKind::SkillArg => matches!(class, TokenClass::Skill(_)),
            SlotKind::RefSelect => matches!(
                class,
                TokenClass::ImgId(_) | TokenClass::Control(ControlToken::EndRefs)
            ),
            SlotKind::OrdinalChoice => matches!(class, TokenClass::Ordinal(_)),
            SlotKind::TextDecision => matches!(
                class,
                TokenClass::Control(ControlToken::QuoteText | ControlToken::EndRefs)
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenInfo {
    /// Stable identifier used in feature keys and dumps.
    pub name: String,
    /// Surface phrase matched when reading guidance text.
    pub surface: String,
    pub class: TokenClass,
}

/// Fixed, ordered token table for one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<TokenInfo>,
}

impl Vocab {
    /// Build the vocabulary for a run: base tokens first, then the world's
    /// canned query phrases (sorted) and image ids (sorted).
    pub fn new(mut queries: Vec<String>, mut img_ids: Vec<String>) -> Vocab {
        let mut tokens = Vec::new();
        for tool in ToolName::ALL {
            tokens.push(TokenInfo {
                name: format!("tool:{tool}"),
                surface: tool.as_str().to_string(),
                class: TokenClass::Tool(tool),
            });
        }
        tokens.push(TokenInfo {
            name: "ctl:final_answer".into(),
            surface: "final answer".into(),
            class: TokenClass::Control(ControlToken::FinalAnswer),
        });
        for skill in SkillName::ALL {
            tokens.push(TokenInfo {
                name: format!("skill:{skill}"),
                surface: skill.as_str().to_string(),
                class: TokenClass::Skill(skill),
            });
        }
        for (i, word) in ORDINAL_WORDS.iter().enumerate() {
            tokens.push(TokenInfo {
                name: format!("ord:{word}"),
                surface: format!("the {word} reference image"),
                class: TokenClass::Ordinal(i + 1),
            });
        }
        tokens.push(TokenInfo {
            name: "ctl:end_refs".into(),
            surface: "stop selecting references".into(),
            class: TokenClass::Control(ControlToken::EndRefs),
        });
        tokens.push(TokenInfo {
            name: "ctl:quote_text".into(),
            surface: "quote the required text verbatim".into(),
            class: TokenClass::Control(ControlToken::QuoteText),
        });
        queries.sort();
        queries.dedup();
        for query in queries {
            tokens.push(TokenInfo {
                name: format!("query:{query}"),
                surface: query.clone(),
                class: TokenClass::Query(query),
            });
        }
        img_ids.sort();
        img_ids.dedup();
        for id in img_ids {
            tokens.push(TokenInfo {
                name: format!("img:{id}"),
                surface: id.clone(),
                class: TokenClass::ImgId(id),
            });
        }
        Vocab { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &TokenInfo {
        &self.tokens[id]
    }

    pub fn class(&self, id: TokenId) -> &TokenClass {
        &self.tokens[id].class
    }

    pub fn tokens(&self) -> &[TokenInfo] {
        &self.tokens
    }

    pub fn ids_in_slot(&self, slot: SlotKind) -> Vec<TokenId> {
        (0..self.len())
            .filter(|&id| slot.admits(self.class(id)))
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t.name == name)
    }

    pub fn find_img(&self, img_id: &str) -> Option<TokenId> {
        self.tokens
            .iter()
            .position(|t| matches!(&t.class, TokenClass::ImgId(id) if id == img_id))
    }

    pub fn find_query(&self, query: &str) -> Option<TokenId> {
        self.tokens
            .iter()
            .position(|t| matches!(&t.class, TokenClass::Query(q) if q == query))
    }

    /// Expected width of the guidance sub-vector for this vocabulary:
    /// one patched-header cell, one signed mention cell per token, and a
    /// small hashed-text tail.
    pub fn guidance_dim(&self) -> usize {
        1 + self.len() + GUIDANCE_HASH_CELLS
    }
}
