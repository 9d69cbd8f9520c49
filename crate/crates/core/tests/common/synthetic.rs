//! Seeded synthetic inputs for the dataset builder.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sciclaim::claimgen::{CitanceRecord, Claim, Method, Provenance};
use sciclaim::dataset::DocumentRecord;
use sciclaim::kbin::{NegationRecord, NegationScores, ReplacedSpan};

pub struct Synthetic {
    pub claims: Vec<Claim>,
    pub negations: HashMap<String, NegationRecord>,
    pub citances: HashMap<String, CitanceRecord>,
    pub corpus: HashMap<String, DocumentRecord>,
}

pub fn claim(id: &str, citance: &str, text: &str) -> Claim {
    Claim {
        id: id.into(),
        text: text.into(),
        citance_id: citance.into(),
        method: Method::Direct,
        provenance: Provenance::Direct {
            input: String::new(),
            k: 1,
            sample_index: 0,
            seed: 0,
        },
    }
}

pub fn negation(claim: &str, text: &str) -> NegationRecord {
    NegationRecord {
        claim: claim.into(),
        negation: text.into(),
        method: "kbin".into(),
        replaced: ReplacedSpan {
            surface: "x".into(),
            start: 0,
            end: 1,
            cui: "C1".into(),
            replacement_cui: "C2".into(),
        },
        scores: NegationScores {
            perplexity: Some(1.0),
            contradiction: Some(0.5),
        },
    }
}

pub fn doc(id: &str) -> DocumentRecord {
    DocumentRecord {
        doc_id: id.into(),
        title: format!("title {id}"),
        abstract_sentences: vec![format!("abstract of {id}")],
    }
}

/// 50 citances, 1-3 claims each, 1-4 cited docs drawn from a shared pool of
/// 120 with ~15% missing from the corpus, ~70% of claims negated, and a few
/// negations identical to their claim.
pub fn synthetic(seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = HashMap::new();
    for d in 0..120 {
        if rng.random_bool(0.85) {
            corpus.insert(format!("d{d}"), doc(&format!("d{d}")));
        }
    }
    let mut citances = HashMap::new();
    let mut claims = Vec::new();
    let mut negations = HashMap::new();
    for c in 0..50 {
        let id = format!("cit{c:02}");
        let source = format!("src{c}");
        if c % 7 != 3 {
            corpus.insert(source.clone(), doc(&source));
        }
        let n_cited = rng.random_range(1..=4);
        let mut pool: Vec<usize> = (0..120).collect();
        pool.shuffle(&mut rng);
        citances.insert(
            id.clone(),
            CitanceRecord {
                id: id.clone(),
                citance: format!("citance {c}"),
                context_before: String::new(),
                context_after: String::new(),
                source_doc_id: source,
                cited_doc_ids: pool[..n_cited].iter().map(|d| format!("d{d}")).collect(),
            },
        );
        for k in 0..rng.random_range(1..=3) {
            let cid = format!("{id}-k{k}");
            let text = format!("Claim {k} of citance {c}.");
            if rng.random_bool(0.7) {
                let neg = if rng.random_bool(0.05) { text.clone() } else { format!("Negated claim {k} of citance {c}.") };
                negations.insert(cid.clone(), negation(&text, &neg));
            }
            claims.push(claim(&cid, &id, &text));
        }
    }
    Synthetic {
        claims,
        negations,
        citances,
        corpus,
    }
}

pub fn usable_negation<'a>(s: &'a Synthetic, c: &Claim) -> Option<&'a NegationRecord> {
    s.negations.get(&c.id).filter(|n| n.negation != c.text)
}
