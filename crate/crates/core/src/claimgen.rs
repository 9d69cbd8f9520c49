//! Supported-claim generation from citances.
//!
//! Two pipelines, both delegating the neural steps to the gateway's
//! generator backend:
//!
//! * entity-centric: for each dictionary mention, generate a question from
//!   `citance || entity`, then a declarative claim from `question || entity`;
//! * direct: a single request on `before after||citance` asking for `k`
//!   sampled claims, where `k` is the citance's noun chunk count.

use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GenerationRequest, ScoreError, Strategy};
use crate::kb::KnowledgeBase;
use crate::linker::{find_mentions, EntityMention};

/// Separator between fields of a generator input.
pub const FIELD_SEPARATOR: &str = "||";

#[derive(Debug, thiserror::Error)]
pub enum ClaimGenError {
    #[error("citance {0} is empty")]
    EmptyCitance(String),
    #[error("citance {id}: {source}")]
    Backend {
        id: String,
        #[source]
        source: ScoreError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitanceRecord {
    pub id: String,
    pub citance: String,
    #[serde(default)]
    pub context_before: String,
    #[serde(default)]
    pub context_after: String,
    pub source_doc_id: String,
    #[serde(default)]
    pub cited_doc_ids: Vec<String>,
}

impl CitanceRecord {
    fn validate(&self) -> Result<(), ClaimGenError> {
        if self.citance.trim().is_empty() {
            return Err(ClaimGenError::EmptyCitance(self.id.clone()));
        }
        Ok(())
    }

    /// `before after||citance`; absent context sentences are omitted.
    pub fn direct_input(&self) -> String {
        let context: Vec<&str> = [self.context_before.trim(), self.context_after.trim()]
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect();
        format!("{}{FIELD_SEPARATOR}{}", context.join(" "), self.citance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Entity,
    Direct,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Entity => "entity",
            Method::Direct => "direct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub entity: EntityMention,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Entity {
        entity: EntityMention,
        question_input: String,
        question: String,
        claim_input: String,
    },
    Direct {
        input: String,
        k: usize,
        sample_index: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
    pub citance_id: String,
    pub method: Method,
    pub provenance: Provenance,
}

/// Generation settings shared by both pipelines.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimGenConfig {
    pub seed: u64,
}

pub struct ClaimGenerator<'a> {
    pub kb: &'a KnowledgeBase,
    pub gateway: &'a Gateway,
    pub config: ClaimGenConfig,
}

impl<'a> ClaimGenerator<'a> {
    pub fn new(kb: &'a KnowledgeBase, gateway: &'a Gateway, config: ClaimGenConfig) -> Self {
        Self { kb, gateway, config }
    }

    fn backend_err(rec: &CitanceRecord) -> impl Fn(ScoreError) -> ClaimGenError + '_ {
        move |source| ClaimGenError::Backend {
            id: rec.id.clone(),
            source,
        }
    }

    /// Generate one beam output; `Ok(None)` when the backend returned nothing usable.
    fn single(&self, rec: &CitanceRecord, input: &str) -> Result<Option<String>, ClaimGenError> {
        let req = GenerationRequest {
            input: input.to_string(),
            num_outputs: 1,
            strategy: Strategy::Beam,
            seed: self.config.seed,
        };
        match self.gateway.generate(&req) {
            Ok(mut v) => Ok(Some(v.swap_remove(0))),
            Err(ScoreError::EmptyGeneration) => Ok(None),
            Err(e) => Err(Self::backend_err(rec)(e)),
        }
    }

    /// Entity-centric claims, one per mention that yields both generations.
    pub fn entity(&self, rec: &CitanceRecord) -> Result<Vec<Claim>, ClaimGenError> {
        rec.validate()?;
        let mut claims = Vec::new();
        for mention in find_mentions(self.kb, &rec.citance) {
            let question_input = format!("{} {FIELD_SEPARATOR} {}", rec.citance, mention.text);
            let Some(question) = self.single(rec, &question_input)? else {
                log::info!("{}: no question generated for {:?}; dropped", rec.id, mention.text);
                continue;
            };
            let claim_input = format!("{question} {FIELD_SEPARATOR} {}", mention.text);
            let Some(text) = self.single(rec, &claim_input)? else {
                log::info!("{}: no claim generated for {:?}; dropped", rec.id, mention.text);
                continue;
            };
            claims.push(Claim {
                id: format!("{}:entity:{}", rec.id, claims.len()),
                text,
                citance_id: rec.id.clone(),
                method: Method::Entity,
                provenance: Provenance::Entity {
                    entity: mention,
                    question_input,
                    question,
                    claim_input,
                },
            });
        }
        Ok(claims)
    }

    /// Direct claims: `k` sampled generations, deduplicated in order.
    pub fn direct(&self, rec: &CitanceRecord, k_override: Option<usize>) -> Result<Vec<Claim>, ClaimGenError> {
        rec.validate()?;
        let k = k_override.unwrap_or_else(|| self.noun_chunk_count(rec)).max(1);
        let input = rec.direct_input();
        let req = GenerationRequest {
            input: input.clone(),
            num_outputs: k,
            strategy: Strategy::SampleTopK,
            seed: self.config.seed,
        };
        let outputs = self.gateway.generate(&req).map_err(Self::backend_err(rec))?;
        let mut seen = std::collections::HashSet::new();
        Ok(outputs
            .into_iter()
            .enumerate()
            .filter(|(_, text)| seen.insert(text.clone()))
            .enumerate()
            .map(|(n, (sample_index, text))| Claim {
                id: format!("{}:direct:{n}", rec.id),
                text,
                citance_id: rec.id.clone(),
                method: Method::Direct,
                provenance: Provenance::Direct {
                    input: input.clone(),
                    k,
                    sample_index,
                    seed: self.config.seed,
                },
            })
            .collect())
    }

    /// Noun chunks in the citance, from the chunker backend when one is
    /// configured, otherwise the number of dictionary mentions (at least 1).
    pub fn noun_chunk_count(&self, rec: &CitanceRecord) -> usize {
        self.gateway
            .noun_chunks(&rec.citance)
            .unwrap_or_else(|| find_mentions(self.kb, &rec.citance).len().max(1))
    }

    pub fn run(&self, method: Method, rec: &CitanceRecord, k_override: Option<usize>) -> Result<Vec<Claim>, ClaimGenError> {
        match method {
            Method::Entity => self.entity(rec),
            Method::Direct => self.direct(rec, k_override),
        }
    }
}
