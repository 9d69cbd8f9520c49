//! Concept knowledge base and concept-vector table.
//!
//! Concepts are loaded from JSON lines (`{"cui", "name", "aliases", "types",
//! "parents"}`), vectors from a CSV file whose header is `cui,d1,...,dK`.
//! Both structures are immutable once built.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::text::normalize;
use crate::trie::AliasTrie;

/// Opaque concept identifier.
pub type Cui = String;

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate cui {0}")]
    DuplicateCui(Cui),
    #[error("unknown cui {0}")]
    UnknownCui(Cui),
    #[error("no vector for cui {0}")]
    MissingVector(Cui),
    #[error("zero-norm vector for cui {0}")]
    ZeroVector(Cui),
}

/// A knowledge-base node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub cui: Cui,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub types: BTreeSet<String>,
    #[serde(default)]
    pub parents: BTreeSet<Cui>,
}

impl Concept {
    /// Surface forms in replacement order: canonical name first, then
    /// aliases, skipping any that normalize to an earlier surface.
    pub fn surfaces(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        std::iter::once(self.name.as_str())
            .chain(self.aliases.iter().map(String::as_str))
            .filter(|s| {
                let n = normalize(s);
                !n.is_empty() && seen.insert(n)
            })
            .collect()
    }

    fn dedup_aliases(&mut self) {
        let mut seen = BTreeSet::new();
        self.aliases.retain(|a| {
            let n = normalize(a);
            !n.is_empty() && seen.insert(n)
        });
    }
}

/// How "same semantic type" is decided.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeMatch {
    /// At least one shared type.
    #[default]
    Intersect,
    /// Identical type sets.
    Exact,
}

impl TypeMatch {
    pub fn matches(self, a: &BTreeSet<String>, b: &BTreeSet<String>) -> bool {
        match self {
            TypeMatch::Intersect => !a.is_disjoint(b),
            TypeMatch::Exact => a == b,
        }
    }
}

/// Indexed concept knowledge base.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    concepts: BTreeMap<Cui, Concept>,
    child_index: BTreeMap<Cui, BTreeSet<Cui>>,
    alias_index: BTreeMap<String, BTreeSet<Cui>>,
    pub(crate) alias_keys: Vec<String>,
    pub(crate) alias_trie: AliasTrie,
}

/// Aliases with fewer normalized characters than this are not indexed for
/// mention scanning.
pub const MIN_ALIAS_CHARS: usize = 3;

impl KnowledgeBase {
    /// Build and index a KB. Aliases are deduplicated case-insensitively.
    pub fn from_concepts<I: IntoIterator<Item = Concept>>(concepts: I) -> Result<Self, KbError> {
        let mut map = BTreeMap::new();
        for (i, mut c) in concepts.into_iter().enumerate() {
            if c.cui.is_empty() {
                return Err(KbError::MalformedRecord {
                    line: i + 1,
                    message: "empty cui".into(),
                });
            }
            if c.name.trim().is_empty() {
                return Err(KbError::MalformedRecord {
                    line: i + 1,
                    message: format!("concept {} has an empty name", c.cui),
                });
            }
            c.dedup_aliases();
            if map.contains_key(&c.cui) {
                return Err(KbError::DuplicateCui(c.cui));
            }
            map.insert(c.cui.clone(), c);
        }
        Ok(Self::index(map))
    }

    fn index(concepts: BTreeMap<Cui, Concept>) -> Self {
        let mut child_index: BTreeMap<Cui, BTreeSet<Cui>> = BTreeMap::new();
        let mut alias_index: BTreeMap<String, BTreeSet<Cui>> = BTreeMap::new();
        for c in concepts.values() {
            for p in &c.parents {
                child_index.entry(p.clone()).or_default().insert(c.cui.clone());
            }
            for s in c.surfaces() {
                alias_index
                    .entry(normalize(s))
                    .or_default()
                    .insert(c.cui.clone());
            }
        }
        let mut alias_trie = AliasTrie::new();
        let mut alias_keys = Vec::new();
        for key in alias_index.keys() {
            if key.chars().count() >= MIN_ALIAS_CHARS {
                alias_trie.insert(key, alias_keys.len());
                alias_keys.push(key.clone());
            }
        }
        Self {
            concepts,
            child_index,
            alias_index,
            alias_keys,
            alias_trie,
        }
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, cui: &str) -> Option<&Concept> {
        self.concepts.get(cui)
    }

    fn require(&self, cui: &str) -> Result<&Concept, KbError> {
        self.concepts
            .get(cui)
            .ok_or_else(|| KbError::UnknownCui(cui.to_string()))
    }

    /// All concepts in cui order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    /// Children of `cui` (inverse of `parents`); empty for leaves.
    pub fn children(&self, cui: &str) -> impl Iterator<Item = &Cui> {
        self.child_index.get(cui).into_iter().flatten()
    }

    /// Concepts whose normalized aliases include `alias` after normalization.
    pub fn lookup_alias(&self, alias: &str) -> Option<&BTreeSet<Cui>> {
        self.alias_index.get(&normalize(alias))
    }

    pub(crate) fn alias_cuis(&self, key_idx: usize) -> &BTreeSet<Cui> {
        &self.alias_index[&self.alias_keys[key_idx]]
    }

    /// Parent references that do not resolve to a concept in this KB.
    pub fn dangling_parents(&self) -> Vec<(Cui, Cui)> {
        self.concepts
            .values()
            .flat_map(|c| {
                c.parents
                    .iter()
                    .filter(|p| !self.concepts.contains_key(*p))
                    .map(move |p| (c.cui.clone(), p.clone()))
            })
            .collect()
    }

    /// Every other concept sharing at least one parent with `u`.
    pub fn siblings(&self, u: &str) -> Result<BTreeSet<Cui>, KbError> {
        let concept = self.require(u)?;
        Ok(concept
            .parents
            .iter()
            .flat_map(|p| self.children(p))
            .filter(|v| v.as_str() != u)
            .cloned()
            .collect())
    }

    /// Retain candidates whose types intersect those of `u`.
    pub fn filter_same_type(
        &self,
        u: &str,
        candidates: &BTreeSet<Cui>,
    ) -> Result<BTreeSet<Cui>, KbError> {
        self.filter_same_type_with(u, candidates, TypeMatch::Intersect)
    }

    pub fn filter_same_type_with(
        &self,
        u: &str,
        candidates: &BTreeSet<Cui>,
        mode: TypeMatch,
    ) -> Result<BTreeSet<Cui>, KbError> {
        let types = &self.require(u)?.types;
        let mut out = BTreeSet::new();
        for v in candidates {
            if mode.matches(types, &self.require(v)?.types) {
                out.insert(v.clone());
            }
        }
        Ok(out)
    }

    /// Serialize as JSON lines in cui order.
    pub fn write_jsonl<W: Write>(&self, w: W) -> io::Result<()> {
        let concepts: Vec<&Concept> = self.concepts.values().collect();
        crate::jsonl::write_to(w, &concepts)
    }
}

/// Load a concepts file (one JSON object per line).
pub fn load_kb(path: &Path) -> Result<KnowledgeBase, KbError> {
    let io_err = |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut concepts = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut c: Concept =
            serde_json::from_str(&line).map_err(|e| KbError::MalformedRecord {
                line: lineno,
                message: e.to_string(),
            })?;
        if c.cui.is_empty() || c.name.trim().is_empty() {
            return Err(KbError::MalformedRecord {
                line: lineno,
                message: "cui and name must be non-empty".into(),
            });
        }
        c.dedup_aliases();
        if concepts.contains_key(&c.cui) {
            return Err(KbError::DuplicateCui(c.cui));
        }
        concepts.insert(c.cui.clone(), c);
    }
    let kb = KnowledgeBase::index(concepts);
    for (child, parent) in kb.dangling_parents() {
        log::warn!("{}: concept {child} references unknown parent {parent}", path.display());
    }
    Ok(kb)
}

/// Dense concept vectors keyed by cui.
#[derive(Debug, Clone)]
pub struct VectorTable {
    dim: usize,
    entries: HashMap<Cui, Vec<f64>>,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        Self {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, cui: &str) -> Option<&[f64]> {
        self.entries.get(cui).map(Vec::as_slice)
    }

    /// Insert a vector; rejects wrong lengths, non-finite components and
    /// duplicate cuis. Errors carry line 0 when not loading from a file.
    pub fn insert(&mut self, cui: Cui, v: Vec<f64>) -> Result<(), KbError> {
        self.insert_at(cui, v, 0)
    }

    fn insert_at(&mut self, cui: Cui, v: Vec<f64>, line: usize) -> Result<(), KbError> {
        if v.len() != self.dim {
            return Err(KbError::MalformedRecord {
                line,
                message: format!("{cui}: expected {} components, got {}", self.dim, v.len()),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(KbError::MalformedRecord {
                line,
                message: format!("{cui}: non-finite component"),
            });
        }
        if self.entries.contains_key(&cui) {
            return Err(KbError::DuplicateCui(cui));
        }
        self.entries.insert(cui, v);
        Ok(())
    }

    /// Rank `pool` members by cosine distance to `u`, ascending, ties by cui,
    /// keeping at most `n`. Pool members without a vector are skipped.
    pub fn nearest_concepts<'a, I>(&self, u: &str, pool: I, n: usize) -> Result<Vec<(Cui, f64)>, KbError>
    where
        I: IntoIterator<Item = &'a Cui>,
    {
        let target = self.get(u).ok_or_else(|| KbError::MissingVector(u.to_string()))?;
        let target_norm = norm(target);
        if target_norm == 0.0 {
            return Err(KbError::ZeroVector(u.to_string()));
        }
        let mut ranked = Vec::new();
        for cui in pool {
            let Some(v) = self.get(cui) else { continue };
            let vn = norm(v);
            if vn == 0.0 {
                return Err(KbError::ZeroVector(cui.clone()));
            }
            ranked.push((cui.clone(), distance_with_norms(target, target_norm, v, vn)));
        }
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        ranked.dedup_by(|a, b| a.0 == b.0);
        ranked.truncate(n);
        Ok(ranked)
    }

    /// Write in the CSV format accepted by [`load_vectors`], rows in cui order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["cui".to_string()];
        header.extend((1..=self.dim).map(|i| format!("d{i}")));
        wtr.write_record(&header)?;
        let mut keys: Vec<&Cui> = self.entries.keys().collect();
        keys.sort();
        for k in keys {
            let mut row = vec![k.clone()];
            row.extend(self.entries[k].iter().map(|x| x.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Cosine distance `1 - a.b / (|a||b|)`, clamped to `[0, 2]`.
/// Returns `None` if either vector has zero norm.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    (na > 0.0 && nb > 0.0).then(|| distance_with_norms(a, na, b, nb))
}

/// Load a vectors CSV: header `cui,d1,...,dK`, then one row per concept.
pub fn load_vectors(path: &Path) -> Result<VectorTable, KbError> {
    let file = File::open(path).map_err(|source| KbError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr.headers().map_err(|e| KbError::MalformedRecord {
        line: 1,
        message: e.to_string(),
    })?;
    if header.len() < 2 || &header[0] != "cui" {
        return Err(KbError::MalformedRecord {
            line: 1,
            message: "header must be `cui,d1,...,dK`".into(),
        });
    }
    let mut table = VectorTable::new(header.len() - 1);
    for (idx, row) in rdr.records().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| KbError::MalformedRecord {
            line,
            message: e.to_string(),
        })?;
        let cui = row.get(0).unwrap_or_default().to_string();
        if cui.is_empty() {
            return Err(KbError::MalformedRecord {
                line,
                message: "empty cui".into(),
            });
        }
        let values = row
            .iter()
            .skip(1)
            .map(|x| x.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| KbError::MalformedRecord {
                line,
                message: e.to_string(),
            })?;
        table.insert_at(cui, values, line)?;
    }
    Ok(table)
}
