//! Dictionary-based mention detection and concept linking.
//!
//! Mentions are found by a leftmost-longest scan of the KB alias trie.
//! A match must start and end on a word boundary, i.e. a transition
//! between alphanumeric and non-alphanumeric characters (or the text edge).
//! Offsets are in Unicode scalar values, half-open.

use serde::{Deserialize, Serialize};

use crate::kb::{Cui, KnowledgeBase};
use crate::text::char_slice;
use crate::trie::AliasTrie;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub text: String,
    pub start: usize,
    pub end: usize,
    /// Set when exactly one candidate exists, or after [`link`] resolves it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cui: Option<Cui>,
    /// Candidate concepts, sorted.
    #[serde(default)]
    pub candidates: Vec<Cui>,
}

impl EntityMention {
    /// The mention's span of `source`.
    pub fn span_of<'a>(&self, source: &'a str) -> &'a str {
        char_slice(source, self.start, self.end)
    }
}

fn is_boundary(chars: &[char], idx: usize) -> bool {
    if idx == 0 || idx == chars.len() {
        return true;
    }
    chars[idx - 1].is_alphanumeric() != chars[idx].is_alphanumeric()
}

/// Longest match starting at `start`: returns (end, alias key index).
fn longest_at(trie: &AliasTrie, chars: &[char], start: usize) -> Option<(usize, usize)> {
    let mut node = AliasTrie::ROOT;
    let mut best = None;
    let mut last_was_space = false;
    for (i, &c) in chars.iter().enumerate().skip(start) {
        if c.is_whitespace() {
            if !last_was_space {
                match trie.step(node, ' ') {
                    Some(next) => node = next,
                    None => break,
                }
                last_was_space = true;
            }
        } else {
            last_was_space = false;
            let mut alive = true;
            for lc in c.to_lowercase() {
                match trie.step(node, lc) {
                    Some(next) => node = next,
                    None => {
                        alive = false;
                        break;
                    }
                }
            }
            if !alive {
                break;
            }
            if let Some(key) = trie.terminal(node) {
                if is_boundary(chars, i + 1) {
                    best = Some((i + 1, key));
                }
            }
        }
    }
    best
}

/// All dictionary mentions in `text`, ordered by start offset.
pub fn find_mentions(kb: &KnowledgeBase, text: &str) -> Vec<EntityMention> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        if !chars[pos].is_whitespace() && is_boundary(&chars, pos) {
            if let Some((end, key)) = longest_at(&kb.alias_trie, &chars, pos) {
                let candidates: Vec<Cui> = kb.alias_cuis(key).iter().cloned().collect();
                out.push(EntityMention {
                    text: chars[pos..end].iter().collect(),
                    start: pos,
                    end,
                    cui: (candidates.len() == 1).then(|| candidates[0].clone()),
                    candidates,
                });
                pos = end;
                continue;
            }
        }
        pos += 1;
    }
    out
}

/// Resolve a mention to a single concept.
///
/// Ambiguous mentions go to the candidate with the most aliases, ties to the
/// smallest cui. `None` when there are no candidates in the KB.
pub fn link(kb: &KnowledgeBase, mention: &EntityMention, _context: &str) -> Option<Cui> {
    mention
        .candidates
        .iter()
        .filter_map(|c| kb.get(c))
        .max_by(|a, b| {
            a.aliases
                .len()
                .cmp(&b.aliases.len())
                .then_with(|| b.cui.cmp(&a.cui))
        })
        .map(|c| c.cui.clone())
}

/// Mentions of `text` that link, with `cui` filled in.
pub fn linked_mentions(kb: &KnowledgeBase, text: &str) -> Vec<EntityMention> {
    find_mentions(kb, text)
        .into_iter()
        .filter_map(|mut m| {
            let cui = link(kb, &m, text)?;
            m.cui = Some(cui);
            Some(m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Concept;

    fn kb(entries: &[(&str, &str, &[&str])]) -> KnowledgeBase {
        KnowledgeBase::from_concepts(entries.iter().map(|(cui, name, aliases)| Concept {
            cui: cui.to_string(),
            name: name.to_string(),
            aliases: aliases.iter().map(|s| s.to_string()).collect(),
            types: ["T".to_string()].into(),
            parents: Default::default(),
        }))
        .unwrap()
    }

    #[test]
    fn no_hits() {
        let kb = kb(&[("C1", "aspirin", &[])]);
        assert!(find_mentions(&kb, "nothing to see here").is_empty());
    }

    #[test]
    fn longest_match_suppresses_shorter() {
        let kb = kb(&[("C1", "common cold", &[]), ("C2", "cold", &[])]);
        let text = "the common cold spreads";
        let m = find_mentions(&kb, text);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].text, "common cold");
        assert_eq!((m[0].start, m[0].end), (4, 15));
        assert_eq!(m[0].cui.as_deref(), Some("C1"));
    }

    #[test]
    fn case_and_whitespace_insensitive() {
        let kb = kb(&[("C1", "common cold", &[])]);
        let text = "The COMMON   Cold.";
        let m = find_mentions(&kb, text);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].text, "COMMON   Cold");
        assert_eq!(m[0].span_of(text), "COMMON   Cold");
    }

    #[test]
    fn repeated_alias_gives_two_mentions() {
        let kb = kb(&[("C1", "aspirin", &[])]);
        let m = find_mentions(&kb, "aspirin and aspirin");
        assert_eq!(m.iter().map(|m| m.start).collect::<Vec<_>>(), vec![0, 12]);
    }

    #[test]
    fn respects_word_boundaries_and_min_length() {
        let kb = kb(&[("C1", "cold", &["ab"]), ("C2", "IL-6", &[])]);
        assert!(find_mentions(&kb, "scolding").is_empty());
        assert!(find_mentions(&kb, "ab test").is_empty());
        let m = find_mentions(&kb, "IL-6 and IL-60 and xIL-6");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].start, 0);
    }

    #[test]
    fn ambiguity_resolved_by_alias_count() {
        let kb = kb(&[
            ("C1", "cold", &["a1x", "a2x", "a3x", "a4x", "a5x"]),
            ("C2", "Cold temperature", &["cold", "chill"]),
        ]);
        let m = find_mentions(&kb, "a cold day");
        assert_eq!(m[0].candidates, vec!["C1", "C2"]);
        assert_eq!(m[0].cui, None);
        assert_eq!(link(&kb, &m[0], "a cold day").as_deref(), Some("C1"));
    }

    #[test]
    fn link_ties_and_empty() {
        let kb = kb(&[("B", "cold", &[]), ("A", "Cold", &[])]);
        let m = &find_mentions(&kb, "cold")[0];
        assert_eq!(link(&kb, m, "cold").as_deref(), Some("A"));
        let empty = EntityMention {
            text: "x".into(),
            start: 0,
            end: 1,
            cui: None,
            candidates: vec![],
        };
        assert_eq!(link(&kb, &empty, "x"), None);
    }

    #[test]
    fn unicode_offsets() {
        let kb = kb(&[("C1", "IL-1β", &[])]);
        let text = "Raised IL-1β levels";
        let m = find_mentions(&kb, text);
        assert_eq!((m[0].start, m[0].end), (7, 12));
        assert_eq!(m[0].span_of(text), "IL-1β");
    }
}
