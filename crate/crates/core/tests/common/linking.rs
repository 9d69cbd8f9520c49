//! Naive alias-occurrence search used to check linker output.

use std::collections::BTreeSet;

use sciclaim::kb::KnowledgeBase;
use sciclaim::linker::EntityMention;

pub fn alias_pool(kb: &KnowledgeBase) -> Vec<String> {
    let mut out: BTreeSet<String> = BTreeSet::new();
    for c in kb.concepts() {
        out.insert(c.name.clone());
        out.extend(c.aliases.iter().cloned());
    }
    out.into_iter().collect()
}

pub const FILLER: &[&str] = &[
    "the", "of", "in", "patients", "with", "reduces", "cold", "common", "high", "blood", "x", "acute",
    "tissue", "cancer", "breast", "pressure", "alpha", "-", ",", ".", "(", ")", "2",
];

/// All word-boundary-aligned alias occurrences, by naive search.
pub fn all_occurrences(kb: &KnowledgeBase, text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let boundary = |i: usize| -> bool {
        i == 0
            || i == chars.len()
            || chars[i - 1].is_alphanumeric() != chars[i].is_alphanumeric()
    };
    let mut out = Vec::new();
    for alias in alias_pool(kb) {
        let a: Vec<char> = alias.to_lowercase().chars().collect();
        if a.len() < 3 {
            continue;
        }
        for s in 0..chars.len().saturating_sub(a.len() - 1) {
            let e = s + a.len();
            if chars[s..e] == a[..] && boundary(s) && boundary(e) {
                out.push((s, e));
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

pub fn check_invariants(kb: &KnowledgeBase, text: &str, mentions: &[EntityMention]) -> Result<(), String> {
    let chars: Vec<char> = text.chars().collect();
    let occ = all_occurrences(kb, text);
    let mut prev_end = 0;
    for m in mentions {
        if m.start >= m.end || m.start < prev_end {
            return Err(format!("bad or overlapping span {m:?}"));
        }
        let slice: String = chars[m.start..m.end].iter().collect();
        if slice != m.text {
            return Err(format!("span text mismatch {m:?}"));
        }
        if !occ.contains(&(m.start, m.end)) {
            return Err(format!("mention is not an alias occurrence: {m:?}"));
        }
        if occ.iter().any(|&(s, e)| s == m.start && e > m.end) {
            return Err(format!("a longer alias starts at {m:?}"));
        }
        if m.candidates.is_empty() || m.candidates.iter().any(|c| kb.get(c).is_none()) {
            return Err(format!("bad candidates {m:?}"));
        }
        prev_end = m.end;
    }
    // Maximality: no occurrence lies entirely in a gap between mentions.
    for &(s, e) in &occ {
        let covered = mentions.iter().any(|m| s < m.end && m.start < e);
        if !covered {
            return Err(format!("missed occurrence {:?}", &chars[s..e]));
        }
    }
    Ok(())
}

/// Random text of 1-11 words drawn from the alias pool and filler words,
/// mirroring the property-test generator.
pub fn random_text(rng: &mut impl rand::Rng, pool: &[String]) -> String {
    const SEPS: [&str; 4] = [" ", " ", "", ", "];
    let n = rng.random_range(1..12);
    let mut out = String::new();
    for _ in 0..n {
        let i = rng.random_range(0..pool.len() + FILLER.len());
        out.push_str(if i < pool.len() { &pool[i] } else { FILLER[i - pool.len()] });
        out.push_str(SEPS[rng.random_range(0..SEPS.len())]);
    }
    out
}
