//! Knowledge-base informed negation.
//!
//! For every linked entity of a claim, same-type siblings of its concept are
//! ranked by concept-vector distance and the closest `top_n_concepts` kept.
//! Each kept concept's surface forms replace the entity span, the most
//! fluent (lowest perplexity) variant per concept is retained, and the
//! pooled variant with the highest NLI contradiction against the original
//! claim is returned.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, ScoreError};
use crate::kb::{Cui, KbError, KnowledgeBase, TypeMatch, VectorTable};
use crate::linker::{linked_mentions, EntityMention};
use crate::text::{normalize, replace_chars};

#[derive(Debug, thiserror::Error)]
pub enum KbinError {
    #[error("claim is empty")]
    EmptyClaim,
    #[error("mention {0:?} is not linked to a concept")]
    UnlinkedMention(String),
    #[error("no entity in the claim links to the knowledge base")]
    NoLinkableEntity,
    #[error("no replacement candidates for any linked entity")]
    NoCandidates,
    #[error("no other concept shares a semantic type with the linked entities")]
    NoSameTypeConcept,
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbinConfig {
    pub top_n_concepts: usize,
    /// Limit on aliases used per concept, after the canonical name.
    pub max_aliases_per_concept: Option<usize>,
    pub type_match: TypeMatch,
    pub seed: u64,
}

impl Default for KbinConfig {
    fn default() -> Self {
        Self {
            top_n_concepts: 20,
            max_aliases_per_concept: None,
            type_match: TypeMatch::Intersect,
            seed: 0,
        }
    }
}

/// A claim variant with one entity span replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegationCandidate {
    pub text: String,
    pub source_entity: EntityMention,
    pub replacement_cui: Cui,
    pub replacement_surface: String,
    /// Position of the replacement concept in the distance ranking.
    pub concept_rank: usize,
    /// Cosine distance of the replacement concept; absent for the random baseline.
    pub distance: Option<f64>,
    pub perplexity: Option<f64>,
    pub contradiction: Option<f64>,
}

/// Replacement candidates for one linked mention, unscored, ordered by
/// concept rank then surface order (canonical name first).
pub fn candidates_for_entity(
    kb: &KnowledgeBase,
    vt: &VectorTable,
    claim: &str,
    mention: &EntityMention,
    cfg: &KbinConfig,
) -> Result<Vec<NegationCandidate>, KbinError> {
    let u = mention
        .cui
        .as_deref()
        .ok_or_else(|| KbinError::UnlinkedMention(mention.text.clone()))?;
    let siblings = kb.siblings(u)?;
    let related = kb.filter_same_type_with(u, &siblings, cfg.type_match)?;
    let ranked = match vt.nearest_concepts(u, &related, cfg.top_n_concepts.max(1)) {
        Ok(r) => r,
        Err(KbError::MissingVector(_)) => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let original = normalize(&mention.text);
    let mut out = Vec::new();
    for (rank, (cui, distance)) in ranked.into_iter().enumerate() {
        let concept = kb.get(&cui).ok_or_else(|| KbError::UnknownCui(cui.clone()))?;
        let surfaces = concept.surfaces();
        let limit = cfg.max_aliases_per_concept.map_or(usize::MAX, |n| n.saturating_add(1));
        for surface in surfaces.into_iter().take(limit) {
            if normalize(surface) == original {
                continue;
            }
            out.push(NegationCandidate {
                text: replace_chars(claim, mention.start, mention.end, surface),
                source_entity: mention.clone(),
                replacement_cui: cui.clone(),
                replacement_surface: surface.to_string(),
                concept_rank: rank,
                distance: Some(distance),
                perplexity: None,
                contradiction: None,
            });
        }
    }
    Ok(out)
}

/// The per-concept winners, pooled over all linked mentions, with perplexity
/// set. Within a concept the lowest perplexity wins; ties keep surface order.
pub fn pooled_candidates(
    kb: &KnowledgeBase,
    vt: &VectorTable,
    gateway: &Gateway,
    claim: &str,
    cfg: &KbinConfig,
) -> Result<Vec<NegationCandidate>, KbinError> {
    if claim.trim().is_empty() {
        return Err(KbinError::EmptyClaim);
    }
    let mentions = linked_mentions(kb, claim);
    if mentions.is_empty() {
        return Err(KbinError::NoLinkableEntity);
    }
    let mut all = Vec::new();
    for m in &mentions {
        all.extend(candidates_for_entity(kb, vt, claim, m, cfg)?);
    }
    if all.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = all.iter().map(|c| c.text.clone()).collect();
    let scores = gateway.perplexity(&texts)?;
    for (c, p) in all.iter_mut().zip(scores) {
        c.perplexity = Some(p);
    }

    // Candidates of one (mention, concept) group are contiguous.
    let mut pool: Vec<NegationCandidate> = Vec::new();
    let same_group = |a: &NegationCandidate, b: &NegationCandidate| {
        a.source_entity.start == b.source_entity.start && a.replacement_cui == b.replacement_cui
    };
    for cand in all {
        match pool.last_mut() {
            Some(best) if same_group(best, &cand) => {
                if cand.perplexity < best.perplexity {
                    *best = cand;
                }
            }
            _ => pool.push(cand),
        }
    }
    Ok(pool)
}

fn better(a: &NegationCandidate, b: &NegationCandidate) -> Ordering {
    let c = |x: &NegationCandidate| x.contradiction.unwrap_or(f64::NEG_INFINITY);
    let p = |x: &NegationCandidate| x.perplexity.unwrap_or(f64::INFINITY);
    c(b).total_cmp(&c(a))
        .then_with(|| p(a).total_cmp(&p(b)))
        .then_with(|| a.text.cmp(&b.text))
}

/// Full negation: pooled candidates scored for contradiction
/// (premise = claim, hypothesis = candidate); highest contradiction wins,
/// ties to lower perplexity, then lexicographic text.
pub fn get_negation(
    kb: &KnowledgeBase,
    vt: &VectorTable,
    gateway: &Gateway,
    claim: &str,
    cfg: &KbinConfig,
) -> Result<NegationCandidate, KbinError> {
    let mut pool = pooled_candidates(kb, vt, gateway, claim, cfg)?;
    if pool.is_empty() {
        return Err(KbinError::NoCandidates);
    }
    let pairs: Vec<(String, String)> = pool
        .iter()
        .map(|c| (claim.to_string(), c.text.clone()))
        .collect();
    let probs = gateway.nli_batch(&pairs)?;
    for (c, p) in pool.iter_mut().zip(probs) {
        c.contradiction = Some(p.contradiction);
    }
    pool.sort_by(better);
    Ok(pool.swap_remove(0))
}

/// Random same-type replacement baseline.
///
/// Picks uniformly among linked mentions that have at least one other
/// same-type concept in the KB, then uniformly among those concepts, and
/// substitutes the concept's canonical name.
pub fn random_entity_baseline(
    kb: &KnowledgeBase,
    claim: &str,
    seed: u64,
    type_match: TypeMatch,
) -> Result<NegationCandidate, KbinError> {
    let mentions = linked_mentions(kb, claim);
    if mentions.is_empty() {
        return Err(KbinError::NoLinkableEntity);
    }
    let mut eligible: Vec<(EntityMention, Vec<Cui>)> = Vec::new();
    for m in mentions {
        let u = kb
            .get(m.cui.as_deref().unwrap_or_default())
            .ok_or_else(|| KbError::UnknownCui(m.cui.clone().unwrap_or_default()))?;
        let original = normalize(&m.text);
        let pool: Vec<Cui> = kb
            .concepts()
            .filter(|v| v.cui != u.cui && type_match.matches(&u.types, &v.types))
            .filter(|v| normalize(&v.name) != original)
            .map(|v| v.cui.clone())
            .collect();
        if !pool.is_empty() {
            eligible.push((m, pool));
        }
    }
    if eligible.is_empty() {
        return Err(KbinError::NoSameTypeConcept);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mention, pool) = &eligible[rng.random_range(0..eligible.len())];
    let cui = &pool[rng.random_range(0..pool.len())];
    let concept = kb.get(cui).expect("pool drawn from kb");
    Ok(NegationCandidate {
        text: replace_chars(claim, mention.start, mention.end, &concept.name),
        source_entity: mention.clone(),
        replacement_cui: cui.clone(),
        replacement_surface: concept.name.clone(),
        concept_rank: 0,
        distance: None,
        perplexity: None,
        contradiction: None,
    })
}

/// Method labels used in negation output records.
pub const METHOD_KBIN: &str = "kbin";
pub const METHOD_RANDOM_ENTITY: &str = "random-entity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacedSpan {
    /// The original mention text that was replaced.
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub cui: Cui,
    pub replacement_cui: Cui,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegationScores {
    pub perplexity: Option<f64>,
    pub contradiction: Option<f64>,
}

/// One line of `negate` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegationRecord {
    pub claim: String,
    pub negation: String,
    pub method: String,
    pub replaced: ReplacedSpan,
    pub scores: NegationScores,
}

impl NegationRecord {
    pub fn from_candidate(claim: &str, method: &str, c: &NegationCandidate) -> Self {
        Self {
            claim: claim.to_string(),
            negation: c.text.clone(),
            method: method.to_string(),
            replaced: ReplacedSpan {
                surface: c.source_entity.text.clone(),
                start: c.source_entity.start,
                end: c.source_entity.end,
                cui: c.source_entity.cui.clone().unwrap_or_default(),
                replacement_cui: c.replacement_cui.clone(),
            },
            scores: NegationScores {
                perplexity: c.perplexity,
                contradiction: c.contradiction,
            },
        }
    }
}
