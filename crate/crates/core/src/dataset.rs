//! Zero-shot fact-checking data from generated claims and negations.
//!
//! * SUPPORTS: a claim paired with each abstract its citance cites.
//! * REFUTES: the claim's negation paired with the same abstracts.
//! * NEI: one instance per claim, pairing either the claim or its negation
//!   with the abstract of the document the citance appears in. Within a
//!   citance the choice cycles through `nei_claim_weight` claim slots and
//!   `nei_negation_weight` negation slots; a negation slot falls back to
//!   the claim when no negation exists.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Deserializer, Serialize};

use crate::claimgen::{CitanceRecord, Claim, Method};
use crate::hashing::short_id;
use crate::kbin::NegationRecord;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("claim {claim_id} references unknown citance {citance_id}")]
    UnknownCitance { claim_id: String, citance_id: String },
    #[error("document corpus is empty")]
    EmptyCorpus,
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(serde_json::Number),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

/// A corpus abstract. `doc_id` may be a JSON string or integer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    #[serde(deserialize_with = "string_or_number")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_sentences: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Supports,
    Refutes,
    Nei,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supports => "SUPPORTS",
            Label::Refutes => "REFUTES",
            Label::Nei => "NEI",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegationMeta {
    pub method: String,
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub cui: String,
    pub replacement_cui: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceProvenance {
    pub citance_id: String,
    pub claim_id: String,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negation: Option<NegationMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactInstance {
    pub id: String,
    pub claim: String,
    pub evidence_doc_id: String,
    pub label: Label,
    pub provenance: InstanceProvenance,
}

/// Deterministic id for a (claim, document, label) triple.
pub fn instance_id(claim: &str, doc_id: &str, label: Label) -> String {
    short_id(&[claim, doc_id, label.as_str()])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Use at most this many cited documents per citance, in listed order.
    pub max_cited: Option<usize>,
    pub nei_claim_weight: usize,
    pub nei_negation_weight: usize,
    /// Keep at most this many instances per label (lowest ids first).
    pub max_per_label: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            max_cited: None,
            nei_claim_weight: 1,
            nei_negation_weight: 1,
            max_per_label: None,
        }
    }
}

/// A pairing that could not be emitted because its document is missing.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SkippedPair {
    pub claim_id: String,
    pub doc_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub skipped: Vec<SkippedPair>,
    pub duplicates_dropped: usize,
    pub capped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub instances: Vec<FactInstance>,
    pub report: BuildReport,
}

fn negation_meta(n: &NegationRecord) -> NegationMeta {
    NegationMeta {
        method: n.method.clone(),
        surface: n.replaced.surface.clone(),
        start: n.replaced.start,
        end: n.replaced.end,
        cui: n.replaced.cui.clone(),
        replacement_cui: n.replaced.replacement_cui.clone(),
    }
}

/// Assemble labelled claim/abstract pairs. Claims are processed in
/// (citance id, claim id) order so the output, sorted by instance id, does
/// not depend on input order.
pub fn build_dataset(
    claims: &[Claim],
    negations: &HashMap<String, NegationRecord>,
    citances: &HashMap<String, CitanceRecord>,
    corpus: &HashMap<String, DocumentRecord>,
    cfg: &DatasetConfig,
) -> Result<Dataset, DatasetError> {
    if corpus.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let mut report = BuildReport::default();
    let mut by_id: BTreeMap<String, FactInstance> = BTreeMap::new();
    let mut nei_slot: HashMap<&str, usize> = HashMap::new();
    let cycle = (cfg.nei_claim_weight + cfg.nei_negation_weight).max(1);

    let mut ordered: Vec<&Claim> = claims.iter().collect();
    ordered.sort_by(|a, b| (&a.citance_id, &a.id).cmp(&(&b.citance_id, &b.id)));
    for claim in ordered {
        let citance = citances
            .get(&claim.citance_id)
            .ok_or_else(|| DatasetError::UnknownCitance {
                claim_id: claim.id.clone(),
                citance_id: claim.citance_id.clone(),
            })?;
        // A negation identical to its claim cannot serve as a refutation.
        let negation = negations
            .get(&claim.id)
            .filter(|n| n.negation != claim.text && !n.negation.trim().is_empty());

        let mut emit = |text: &str, doc_id: &str, label: Label, neg: Option<&NegationRecord>| {
            if !corpus.contains_key(doc_id) {
                report.skipped.push(SkippedPair {
                    claim_id: claim.id.clone(),
                    doc_id: doc_id.to_string(),
                    label,
                });
                return;
            }
            let id = instance_id(text, doc_id, label);
            if by_id.contains_key(&id) {
                report.duplicates_dropped += 1;
                return;
            }
            by_id.insert(
                id.clone(),
                FactInstance {
                    id,
                    claim: text.to_string(),
                    evidence_doc_id: doc_id.to_string(),
                    label,
                    provenance: InstanceProvenance {
                        citance_id: claim.citance_id.clone(),
                        claim_id: claim.id.clone(),
                        method: claim.method,
                        negation: neg.map(negation_meta),
                    },
                },
            );
        };

        let cited = citance
            .cited_doc_ids
            .iter()
            .take(cfg.max_cited.unwrap_or(usize::MAX));
        for doc in cited {
            emit(&claim.text, doc, Label::Supports, None);
            if let Some(n) = negation {
                emit(&n.negation, doc, Label::Refutes, Some(n));
            }
        }

        let slot = nei_slot.entry(claim.citance_id.as_str()).or_default();
        let wants_negation = *slot % cycle >= cfg.nei_claim_weight;
        *slot += 1;
        match negation {
            Some(n) if wants_negation => {
                emit(&n.negation, &citance.source_doc_id, Label::Nei, Some(n));
            }
            _ => emit(&claim.text, &citance.source_doc_id, Label::Nei, None),
        }
    }

    let mut instances: Vec<FactInstance> = by_id.into_values().collect();
    if let Some(cap) = cfg.max_per_label {
        let mut kept: HashMap<Label, usize> = HashMap::new();
        let before = instances.len();
        instances.retain(|i| {
            let n = kept.entry(i.label).or_default();
            *n += 1;
            *n <= cap
        });
        report.capped = before - instances.len();
    }
    report.skipped.sort();
    Ok(Dataset { instances, report })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub supports: usize,
    pub refutes: usize,
    pub nei: usize,
}

impl LabelHistogram {
    pub fn total(&self) -> usize {
        self.supports + self.refutes + self.nei
    }

    fn bump(&mut self, label: Label) {
        match label {
            Label::Supports => self.supports += 1,
            Label::Refutes => self.refutes += 1,
            Label::Nei => self.nei += 1,
        }
    }
}

impl Add for LabelHistogram {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            supports: self.supports + o.supports,
            refutes: self.refutes + o.refutes,
            nei: self.nei + o.nei,
        }
    }
}

impl AddAssign for LabelHistogram {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub labels: LabelHistogram,
    pub per_citance: BTreeMap<String, LabelHistogram>,
}

impl Add for DatasetStats {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self.labels += o.labels;
        for (k, v) in o.per_citance {
            *self.per_citance.entry(k).or_default() += v;
        }
        self
    }
}

pub fn dataset_stats(instances: &[FactInstance]) -> DatasetStats {
    let mut stats = DatasetStats::default();
    for i in instances {
        stats.labels.bump(i.label);
        stats
            .per_citance
            .entry(i.provenance.citance_id.clone())
            .or_default()
            .bump(i.label);
    }
    stats
}

/// SciFact-style claim record for external fact-checking trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SciFactClaim {
    pub id: u64,
    pub claim: String,
    pub evidence: BTreeMap<String, Vec<SciFactEvidence>>,
    pub cited_doc_ids: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SciFactEvidence {
    pub sentences: Vec<usize>,
    pub label: String,
}

fn doc_id_value(id: &str) -> serde_json::Value {
    id.parse::<u64>()
        .map(serde_json::Value::from)
        .unwrap_or_else(|_| serde_json::Value::from(id))
}

/// Group instances by claim text: SUPPORTS/REFUTES documents become
/// evidence (`SUPPORT` / `CONTRADICT`, no rationale sentences), and every
/// paired document is listed in `cited_doc_ids`. Ids are 1-based in claim
/// text order.
pub fn scifact_export(instances: &[FactInstance]) -> Vec<SciFactClaim> {
    let mut grouped: BTreeMap<&str, (BTreeMap<String, Vec<SciFactEvidence>>, BTreeSet<&str>)> =
        BTreeMap::new();
    for i in instances {
        let (evidence, docs) = grouped.entry(&i.claim).or_default();
        docs.insert(&i.evidence_doc_id);
        let label = match i.label {
            Label::Supports => "SUPPORT",
            Label::Refutes => "CONTRADICT",
            Label::Nei => continue,
        };
        evidence
            .entry(i.evidence_doc_id.clone())
            .or_default()
            .push(SciFactEvidence {
                sentences: vec![],
                label: label.to_string(),
            });
    }
    grouped
        .into_iter()
        .enumerate()
        .map(|(n, (claim, (evidence, docs)))| SciFactClaim {
            id: n as u64 + 1,
            claim: claim.to_string(),
            evidence,
            cited_doc_ids: docs.into_iter().map(doc_id_value).collect(),
        })
        .collect()
}
