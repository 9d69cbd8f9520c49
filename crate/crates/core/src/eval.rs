//! Evaluation: ROUGE, max-average reference similarity, agreement
//! statistics, claim acceptability and the yield / negation tables.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationRecord, Entailment, GatingViolation, Protocol};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("text has no tokens: {0:?}")]
    EmptyAfterTokenization(String),
    #[error("no references for citance {0}")]
    MissingReferences(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no generated claims to score")]
    NoClaims,
    #[error(transparent)]
    Gating(#[from] GatingViolation),
}

/// Identifier of the tokenizer, recorded in evaluation metadata.
pub const TOKENIZER_VERSION: &str = "lowercase-alnum-runs/1";

/// Lowercase, split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// ROUGE F1 scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RougeVariant {
    R1,
    R2,
    Rl,
}

impl RougeScores {
    pub fn get(&self, v: RougeVariant) -> f64 {
        match v {
            RougeVariant::R1 => self.r1,
            RougeVariant::R2 => self.r2,
            RougeVariant::Rl => self.rl,
        }
    }
}

fn f1(overlap: usize, cand_total: usize, ref_total: usize) -> f64 {
    if overlap == 0 || cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand_total as f64;
    let r = overlap as f64 / ref_total as f64;
    2.0 * p * r / (p + r)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn rouge_n(cand: &[String], reference: &[String], n: usize) -> f64 {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap: usize = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    f1(
        overlap,
        cand.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F1 between a candidate and one reference.
pub fn rouge(candidate: &str, reference: &str) -> Result<RougeScores, EvalError> {
    let c = tokenize(candidate);
    if c.is_empty() {
        return Err(EvalError::EmptyAfterTokenization(candidate.to_string()));
    }
    let r = tokenize(reference);
    if r.is_empty() {
        return Err(EvalError::EmptyAfterTokenization(reference.to_string()));
    }
    Ok(RougeScores {
        r1: rouge_n(&c, &r, 1),
        r2: rouge_n(&c, &r, 2),
        rl: f1(lcs_len(&c, &r), c.len(), r.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceClaimSet {
    pub citance_id: String,
    pub references: Vec<String>,
}

/// `(1/|C|) * sum over generated claims of max_k ROUGE(claim, reference_k)`.
pub fn max_avg_score(
    generated: &[(String, String)],
    refs: &HashMap<String, ReferenceClaimSet>,
    variant: RougeVariant,
) -> Result<f64, EvalError> {
    if generated.is_empty() {
        return Err(EvalError::NoClaims);
    }
    let mut total = 0.0;
    for (citance_id, claim) in generated {
        let set = refs
            .get(citance_id)
            .filter(|s| !s.references.is_empty())
            .ok_or_else(|| EvalError::MissingReferences(citance_id.clone()))?;
        let mut best = f64::NEG_INFINITY;
        for r in &set.references {
            best = best.max(rouge(claim, r)?.get(variant));
        }
        total += best;
    }
    Ok(total / generated.len() as f64)
}

/// Distance metric for Krippendorff's alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMetric {
    Nominal,
    Ordinal,
    Interval,
}

/// Ratings indexed `[rater][item]`; `None` is a missing cell.
pub type RatingMatrix = Vec<Vec<Option<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alpha {
    pub value: f64,
    /// All pairable values were identical, so expected disagreement is zero
    /// and the value is 1.0 by convention.
    pub zero_expected_disagreement: bool,
}

fn value_key(v: f64) -> u64 {
    // Normalize -0.0 so equal values share a key.
    (v + 0.0).to_bits()
}

/// Krippendorff's alpha via the coincidence matrix. Items with fewer than
/// two ratings are not pairable and are ignored.
pub fn krippendorff_alpha(ratings: &RatingMatrix, metric: AlphaMetric) -> Result<Alpha, EvalError> {
    if ratings.len() < 2 {
        return Err(EvalError::InsufficientData("need at least two raters".into()));
    }
    let n_items = ratings.iter().map(Vec::len).max().unwrap_or(0);
    if let Some(bad) = ratings.iter().flatten().flatten().find(|v| !v.is_finite()) {
        return Err(EvalError::InsufficientData(format!("non-finite rating {bad}")));
    }

    // Distinct values in ascending order.
    let mut values: Vec<f64> = ratings.iter().flatten().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup_by(|a, b| value_key(*a) == value_key(*b));
    let index: HashMap<u64, usize> = values.iter().enumerate().map(|(i, v)| (value_key(*v), i)).collect();
    let k = values.len();

    let mut coincidence = vec![vec![0.0f64; k]; k];
    for item in 0..n_items {
        let unit: Vec<usize> = ratings
            .iter()
            .filter_map(|row| row.get(item).copied().flatten())
            .map(|v| index[&value_key(v)])
            .collect();
        let m = unit.len();
        if m < 2 {
            continue;
        }
        let w = 1.0 / (m - 1) as f64;
        for (i, &a) in unit.iter().enumerate() {
            for (j, &b) in unit.iter().enumerate() {
                if i != j {
                    coincidence[a][b] += w;
                }
            }
        }
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    if n < 2.0 {
        return Err(EvalError::InsufficientData("no item has two or more ratings".into()));
    }

    let delta = |c: usize, d: usize| -> f64 {
        match metric {
            AlphaMetric::Nominal => f64::from(u8::from(c != d)),
            AlphaMetric::Interval => (values[c] - values[d]).powi(2),
            AlphaMetric::Ordinal => {
                let (lo, hi) = if c <= d { (c, d) } else { (d, c) };
                let between: f64 = marginals[lo..=hi].iter().sum();
                (between - (marginals[c] + marginals[d]) / 2.0).powi(2)
            }
        }
    };

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for d in 0..k {
            let dist = delta(c, d);
            observed += coincidence[c][d] * dist;
            expected += marginals[c] * marginals[d] * dist;
        }
    }
    if expected == 0.0 {
        return Ok(Alpha {
            value: 1.0,
            zero_expected_disagreement: true,
        });
    }
    Ok(Alpha {
        value: 1.0 - (n - 1.0) * observed / expected,
        zero_expected_disagreement: false,
    })
}

/// Fraction of items (with at least two ratings) on which all raters agree.
pub fn exact_agreement_pct(ratings: &RatingMatrix) -> Result<f64, EvalError> {
    if ratings.len() < 2 {
        return Err(EvalError::InsufficientData("need at least two raters".into()));
    }
    let n_items = ratings.iter().map(Vec::len).max().unwrap_or(0);
    let mut considered = 0usize;
    let mut agreed = 0usize;
    for item in 0..n_items {
        let unit: Vec<f64> = ratings
            .iter()
            .filter_map(|row| row.get(item).copied().flatten())
            .collect();
        if unit.len() < 2 {
            continue;
        }
        considered += 1;
        if unit.iter().all(|v| value_key(*v) == value_key(unit[0])) {
            agreed += 1;
        }
    }
    if considered == 0 {
        return Err(EvalError::InsufficientData("no item has two or more ratings".into()));
    }
    Ok(agreed as f64 / considered as f64)
}

/// Claim-quality ratings. Downstream criteria are absent when gated off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityRatings {
    pub fluency: u8,
    pub decontextualized: Option<u8>,
    pub atomicity: Option<u8>,
    pub faithfulness: Option<u8>,
}

impl QualityRatings {
    /// Fluency > 1, de-contextualized = 1, atomicity = 1, faithfulness > 3.
    pub fn accepted(&self) -> bool {
        self.fluency > 1
            && self.decontextualized == Some(1)
            && self.atomicity == Some(1)
            && self.faithfulness.is_some_and(|f| f > 3)
    }
}

/// Acceptability of a quality-protocol record; the record must satisfy the
/// rating gates.
pub fn acceptability(rec: &AnnotationRecord) -> Result<bool, EvalError> {
    rec.validate_gating()?;
    if rec.protocol != Protocol::Quality {
        return Err(GatingViolation("acceptability applies to quality ratings only".into()).into());
    }
    Ok(rec.quality_ratings().accepted())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldRow {
    pub method: String,
    pub generated: usize,
    pub annotated: usize,
    pub accepted: usize,
    pub precision: f64,
}

/// Per-method generation counts and acceptance precision.
/// `judgments` holds one (method, accepted) entry per annotated claim.
pub fn yield_table(generated: &BTreeMap<String, usize>, judgments: &[(String, bool)]) -> Vec<YieldRow> {
    let mut rows: BTreeMap<&str, YieldRow> = BTreeMap::new();
    let row = |m: &str| YieldRow {
        method: m.to_string(),
        generated: 0,
        annotated: 0,
        accepted: 0,
        precision: 0.0,
    };
    for (m, &n) in generated {
        rows.entry(m).or_insert_with(|| row(m)).generated = n;
    }
    for (m, ok) in judgments {
        let r = rows.entry(m).or_insert_with(|| row(m));
        r.annotated += 1;
        r.accepted += usize::from(*ok);
    }
    rows.into_values()
        .map(|mut r| {
            if r.annotated > 0 {
                r.precision = r.accepted as f64 / r.annotated as f64;
            }
            r
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegationRow {
    pub method: String,
    pub total: usize,
    /// Ratings other than SKIP.
    pub fluent: usize,
    pub label3: usize,
    pub label2: usize,
    pub label1: usize,
}

/// Tally negation entailment ratings per method.
pub fn negation_table(ratings: &[(String, Entailment)]) -> Vec<NegationRow> {
    let mut rows: BTreeMap<&str, NegationRow> = BTreeMap::new();
    for (m, e) in ratings {
        let r = rows.entry(m).or_insert_with(|| NegationRow {
            method: m.clone(),
            ..Default::default()
        });
        r.total += 1;
        match e {
            Entailment::Skip => {}
            Entailment::DefinitelyFalse => r.label3 += 1,
            Entailment::MightBeTrue => r.label2 += 1,
            Entailment::DefinitelyTrue => r.label1 += 1,
        }
        if *e != Entailment::Skip {
            r.fluent += 1;
        }
    }
    rows.into_values().collect()
}

/// Variant decisions attached to every evaluation output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub rouge_variant: String,
    pub alpha_metric: Option<AlphaMetric>,
    pub tokenizer_version: String,
    pub tool_version: String,
}

impl EvalMetadata {
    pub fn new(alpha_metric: Option<AlphaMetric>) -> Self {
        Self {
            rouge_variant: "f1-nostem-nostop".into(),
            alpha_metric,
            tokenizer_version: TOKENIZER_VERSION.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Default alpha metric per quality criterion.
pub fn default_alpha_metric(criterion: &str) -> AlphaMetric {
    match criterion {
        "faithfulness" => AlphaMetric::Interval,
        _ => AlphaMetric::Nominal,
    }
}
