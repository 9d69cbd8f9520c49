//! Fixtures and independent reference implementations shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod cases;
pub mod linking;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use sciclaim::gateway::{EchoGenerator, Gateway, GatewayConfig, NliProbs, TableNli, TablePerplexity};
use sciclaim::kb::{load_kb, load_vectors, Concept, KnowledgeBase, VectorTable};
use sciclaim::linker::linked_mentions;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn fixture_kb() -> KnowledgeBase {
    load_kb(&fixture("kb/concepts.jsonl")).expect("fixture kb")
}

pub fn fixture_vectors() -> VectorTable {
    load_vectors(&fixture("kb/vectors.csv")).expect("fixture vectors")
}

/// Raw concept records, parsed without the library loader.
pub fn raw_concepts() -> Vec<Concept> {
    std::fs::read_to_string(fixture("kb/concepts.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Raw vectors, parsed without the library loader.
pub fn raw_vectors() -> HashMap<String, Vec<f64>> {
    let text = std::fs::read_to_string(fixture("kb/vectors.csv")).unwrap();
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.split(',');
            let cui = parts.next().unwrap().to_string();
            (cui, parts.map(|x| x.trim().parse().unwrap()).collect())
        })
        .collect()
}

#[derive(serde::Deserialize)]
struct ClaimLine {
    text: String,
}

pub fn fixture_claims() -> Vec<String> {
    std::fs::read_to_string(fixture("claims.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<ClaimLine>(l).unwrap().text)
        .collect()
}

/// FNV-1a, used to derive stub scores from text.
pub fn fnv(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn norm_key(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Exhaustive top-n: every candidate scored, fully sorted by (distance, cui).
pub fn brute_nearest(
    vectors: &HashMap<String, Vec<f64>>,
    u: &str,
    pool: &[String],
    n: usize,
) -> Vec<(String, f64)> {
    let target = &vectors[u];
    let mut all: Vec<(String, f64)> = pool
        .iter()
        .filter(|c| vectors.contains_key(*c))
        .map(|c| (c.clone(), cosine_distance(target, &vectors[c])))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.dedup_by(|a, b| a.0 == b.0);
    all.into_iter().take(n).collect()
}

fn replace_span(text: &str, start: usize, end: usize, with: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out: String = chars[..start].iter().collect();
    out.push_str(with);
    out.extend(&chars[end..]);
    out
}

/// One oracle candidate group: every surface of one related concept for one
/// mention, in surface order.
#[derive(Debug, Clone)]
pub struct OracleGroup {
    pub mention_start: usize,
    pub cui: String,
    pub texts: Vec<String>,
}

/// Every candidate text the negation procedure may consider for `claim`,
/// grouped by (mention, concept), found by scanning the whole concept list.
pub fn oracle_groups(
    concepts: &[Concept],
    vectors: &HashMap<String, Vec<f64>>,
    kb: &KnowledgeBase,
    claim: &str,
    top_n: usize,
) -> Option<Vec<OracleGroup>> {
    let by_cui: BTreeMap<&str, &Concept> = concepts.iter().map(|c| (c.cui.as_str(), c)).collect();
    let mentions = linked_mentions(kb, claim);
    if mentions.is_empty() {
        return None;
    }
    let mut groups = Vec::new();
    for m in &mentions {
        let u = by_cui[m.cui.as_deref().unwrap()];
        if !vectors.contains_key(&u.cui) {
            continue;
        }
        let related: Vec<String> = concepts
            .iter()
            .filter(|v| v.cui != u.cui)
            .filter(|v| v.parents.iter().any(|p| u.parents.contains(p)))
            .filter(|v| v.types.iter().any(|t| u.types.contains(t)))
            .map(|v| v.cui.clone())
            .collect();
        for (cui, _) in brute_nearest(vectors, &u.cui, &related, top_n) {
            let v = by_cui[cui.as_str()];
            let mut seen = BTreeSet::new();
            let texts: Vec<String> = std::iter::once(&v.name)
                .chain(&v.aliases)
                .filter(|s| seen.insert(norm_key(s)))
                .filter(|s| norm_key(s) != norm_key(&m.text))
                .map(|s| replace_span(claim, m.start, m.end, s))
                .collect();
            if !texts.is_empty() {
                groups.push(OracleGroup {
                    mention_start: m.start,
                    cui: cui.clone(),
                    texts,
                });
            }
        }
    }
    Some(groups)
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleOutcome {
    Negation(String),
    NoLinkableEntity,
    NoCandidates,
}

/// Brute-force negation: minimum perplexity per (mention, concept) group,
/// then maximum contradiction, ties to lower perplexity then text.
pub fn oracle_negation(
    concepts: &[Concept],
    vectors: &HashMap<String, Vec<f64>>,
    kb: &KnowledgeBase,
    claim: &str,
    top_n: usize,
    ppl: &dyn Fn(&str) -> f64,
    contradiction: &dyn Fn(&str, &str) -> f64,
) -> OracleOutcome {
    let Some(groups) = oracle_groups(concepts, vectors, kb, claim, top_n) else {
        return OracleOutcome::NoLinkableEntity;
    };
    let mut pool: Vec<(String, f64)> = Vec::new();
    for g in &groups {
        let mut best: Option<(String, f64)> = None;
        for t in &g.texts {
            let p = ppl(t);
            if best.as_ref().is_none_or(|(_, bp)| p < *bp) {
                best = Some((t.clone(), p));
            }
        }
        pool.extend(best);
    }
    let best = pool.into_iter().max_by(|(ta, pa), (tb, pb)| {
        let ca = contradiction(claim, ta);
        let cb = contradiction(claim, tb);
        ca.partial_cmp(&cb)
            .unwrap()
            .then(pb.partial_cmp(pa).unwrap())
            .then(tb.cmp(ta))
    });
    match best {
        Some((t, _)) => OracleOutcome::Negation(t),
        None => OracleOutcome::NoCandidates,
    }
}

/// Stub perplexity: four levels, so ties are common.
pub fn stub_ppl(text: &str) -> f64 {
    10.0 + (fnv(text) % 4) as f64 * 5.0
}

/// Stub contradiction: five levels.
pub fn stub_contradiction(premise: &str, hypothesis: &str) -> f64 {
    let h = fnv(&format!("{premise}\u{1f}{hypothesis}"));
    [0.1, 0.3, 0.5, 0.7, 0.9][(h % 5) as usize]
}

/// Krippendorff's alpha from the pairwise definition:
/// `1 - (n - 1) * sum_u (1/(m_u - 1)) sum_{i != j in u} d(v_i, v_j)
///        / sum_{i != j over all pairable values} d(v_i, v_j)`.
/// `metric` is "nominal", "interval" or "ordinal".
pub fn alpha_oracle(ratings: &[Vec<Option<f64>>], metric: &str) -> f64 {
    let items = ratings.iter().map(Vec::len).max().unwrap_or(0);
    let units: Vec<Vec<f64>> = (0..items)
        .map(|i| ratings.iter().filter_map(|r| r.get(i).copied().flatten()).collect::<Vec<f64>>())
        .filter(|u| u.len() >= 2)
        .collect();
    let pairable: Vec<f64> = units.iter().flatten().copied().collect();
    let n = pairable.len() as f64;
    let count = |v: f64| pairable.iter().filter(|x| **x == v).count() as f64;
    let delta = |a: f64, b: f64| -> f64 {
        match metric {
            "nominal" => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            "interval" => (a - b) * (a - b),
            "ordinal" => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let mut distinct: Vec<f64> = pairable.clone();
                distinct.sort_by(|x, y| x.partial_cmp(y).unwrap());
                distinct.dedup();
                let between: f64 = distinct.iter().filter(|g| **g >= lo && **g <= hi).map(|g| count(*g)).sum();
                let s = between - (count(a) + count(b)) / 2.0;
                s * s
            }
            _ => panic!("unknown metric {metric}"),
        }
    };
    let mut observed = 0.0;
    for u in &units {
        let m = u.len() as f64;
        for (i, a) in u.iter().enumerate() {
            for (j, b) in u.iter().enumerate() {
                if i != j {
                    observed += delta(*a, *b) / (m - 1.0);
                }
            }
        }
    }
    let mut expected = 0.0;
    for (i, a) in pairable.iter().enumerate() {
        for (j, b) in pairable.iter().enumerate() {
            if i != j {
                expected += delta(*a, *b);
            }
        }
    }
    if expected == 0.0 {
        return 1.0;
    }
    1.0 - (n - 1.0) * observed / expected
}

/// Reliability data from Krippendorff's "Computing Krippendorff's
/// Alpha-Reliability": 4 observers x 12 units, values 1..5, missing cells.
pub fn krippendorff_reference_data() -> Vec<Vec<Option<f64>>> {
    let rows: [[i8; 12]; 4] = [
        [1, 2, 3, 3, 2, 1, 4, 1, 2, 0, 0, 0],
        [1, 2, 3, 3, 2, 2, 4, 1, 2, 5, 0, 3],
        [0, 3, 3, 3, 2, 3, 4, 2, 2, 5, 1, 0],
        [1, 2, 3, 3, 2, 4, 4, 1, 2, 5, 1, 0],
    ];
    rows.iter()
        .map(|r| r.iter().map(|&v| (v != 0).then_some(f64::from(v))).collect())
        .collect()
}

/// Start `router` on an ephemeral local port in a background runtime.
pub fn spawn_server(router: axum::Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

/// Table-backed stubs covering every text the oracle can produce for the
/// fixture claims.
pub fn stub_gateway(top_n: usize, scale: f64) -> Gateway {
    let concepts = raw_concepts();
    let vectors = raw_vectors();
    let kb = fixture_kb();
    let mut ppl = HashMap::new();
    let mut nli = HashMap::new();
    for claim in fixture_claims() {
        for g in oracle_groups(&concepts, &vectors, &kb, &claim, top_n).unwrap_or_default() {
            for t in g.texts {
                ppl.insert(t.clone(), stub_ppl(&t) * scale);
                let c = stub_contradiction(&claim, &t);
                nli.insert(
                    (claim.clone(), t),
                    NliProbs {
                        entailment: (1.0 - c) / 2.0,
                        neutral: (1.0 - c) / 2.0,
                        contradiction: c,
                    },
                );
            }
        }
    }
    Gateway::new(
        Arc::new(TablePerplexity::new(ppl)),
        Arc::new(TableNli::new(nli)),
        Arc::new(EchoGenerator::default()),
        GatewayConfig::default(),
    )
}
