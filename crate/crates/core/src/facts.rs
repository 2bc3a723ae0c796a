//! Entity-keyed fact storage, focus identification and tf-idf filtering.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

/// Number of facts kept per turn after relevance filtering.
pub const DEFAULT_TOP_K: usize = 10;

/// A raw-text fact filed under an entity key.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fact {
    /// Position in the collection (insertion order).
    pub id: usize,
    pub entity: String,
    pub text: String,
    #[serde(skip)]
    pub tokens: Vec<String>,
}

/// One line of a facts file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactRecord {
    pub entity: String,
    pub text: String,
}

/// Normalized entity key: lowercase, without a leading `@` or `#`.
pub fn entity_key(raw: &str) -> String {
    raw.trim()
        .trim_start_matches(['@', '#'])
        .to_lowercase()
}

type SparseVec = Vec<(String, f64)>;

/// Term statistics over the facts of a single entity.
#[derive(Clone, Debug, Default)]
pub struct TfIdfIndex {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl TfIdfIndex {
    fn add_doc(&mut self, tokens: &[String]) {
        self.n_docs += 1;
        let mut seen: Vec<&String> = tokens.iter().collect();
        seen.sort();
        seen.dedup();
        for t in seen {
            *self.df.entry(t.clone()).or_default() += 1;
        }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// `ln(N / df)`, or `None` for terms never indexed.
    pub fn idf(&self, term: &str) -> Option<f64> {
        let df = self.df(term);
        (df > 0).then(|| (self.n_docs as f64 / df as f64).ln())
    }

    /// Raw-count tf times idf, over indexed terms only, sorted by term.
    pub fn vectorize(&self, tokens: &[String]) -> Vec<(String, f64)> {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        tf.into_iter()
            .filter_map(|(t, c)| self.idf(t).map(|idf| (t.to_string(), c as f64 * idf)))
            .filter(|(_, w)| *w != 0.0)
            .collect()
    }
}

fn norm(v: &[(String, f64)]) -> f64 {
    v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
}

/// Cosine of two term-sorted sparse vectors; 0 if either is zero.
pub fn cosine(a: &[(String, f64)], b: &[(String, f64)]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot / (na * nb)
}

#[derive(Clone, Debug, Default)]
struct EntityEntry {
    members: Vec<usize>,
    index: TfIdfIndex,
}

/// Immutable, indexed facts. Rebuild to add facts.
#[derive(Clone, Debug, Default)]
pub struct FactsCollection {
    facts: Vec<Fact>,
    vectors: Vec<SparseVec>,
    entities: BTreeMap<String, EntityEntry>,
}

impl FactsCollection {
    /// Group facts by entity and build one tf-idf index per entity.
    /// Duplicate records are kept.
    pub fn index(records: impl IntoIterator<Item = FactRecord>) -> Self {
        let mut facts = Vec::new();
        let mut entities: BTreeMap<String, EntityEntry> = BTreeMap::new();
        for rec in records {
            let key = entity_key(&rec.entity);
            if key.is_empty() {
                continue;
            }
            let id = facts.len();
            let tokens = tokenize(&rec.text);
            let entry = entities.entry(key.clone()).or_default();
            entry.members.push(id);
            entry.index.add_doc(&tokens);
            facts.push(Fact {
                id,
                entity: key,
                text: rec.text,
                tokens,
            });
        }
        let vectors = facts
            .iter()
            .map(|f| entities[&f.entity].index.vectorize(&f.tokens))
            .collect();
        Self {
            facts,
            vectors,
            entities,
        }
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn entity_keys(&self) -> impl Iterator<Item = &str> {
        self.entities.keys().map(String::as_str)
    }

    pub fn contains_entity(&self, key: &str) -> bool {
        self.entities.contains_key(&entity_key(key))
    }

    pub fn entity_index(&self, key: &str) -> Option<&TfIdfIndex> {
        self.entities.get(&entity_key(key)).map(|e| &e.index)
    }

    /// Entity keys mentioned in the history, in order of first mention.
    /// A mention is a token equal to the key, optionally prefixed by `@`
    /// or `#`.
    pub fn identify_focus<S: AsRef<str>>(&self, history: &[Vec<S>]) -> Vec<String> {
        let mut found: Vec<String> = Vec::new();
        for tok in history.iter().flatten() {
            let key = tok.as_ref().trim_start_matches(['@', '#']);
            if key.is_empty() || found.iter().any(|k| k == key) {
                continue;
            }
            if self.entities.contains_key(key) {
                found.push(key.to_string());
            }
        }
        found
    }

    /// All facts of each key, key order first, then insertion order.
    pub fn retrieve<S: AsRef<str>>(&self, keys: &[S]) -> Vec<&Fact> {
        keys.iter()
            .filter_map(|k| self.entities.get(&entity_key(k.as_ref())))
            .flat_map(|e| e.members.iter().map(|&i| &self.facts[i]))
            .collect()
    }

    /// Cosine between the input and a stored fact, using that fact's entity
    /// statistics.
    pub fn relevance(&self, input: &[String], fact: &Fact) -> f64 {
        let index = &self.entities[&fact.entity].index;
        cosine(&index.vectorize(input), &self.vectors[fact.id])
    }

    /// The `k` candidates most similar to `input`, by tf-idf cosine; ties
    /// keep candidate order. If the input has no weight under any
    /// candidate's statistics the first `k` candidates are returned.
    pub fn filter_top_k<'a>(&self, input: &[String], candidates: &[&'a Fact], k: usize) -> Vec<&'a Fact> {
        let k = k.max(1);
        let mut queries: HashMap<&str, SparseVec> = HashMap::new();
        let mut scored: Vec<(f64, usize)> = Vec::with_capacity(candidates.len());
        let mut any_query = false;
        for (pos, f) in candidates.iter().enumerate() {
            let q = queries
                .entry(f.entity.as_str())
                .or_insert_with(|| self.entities[&f.entity].index.vectorize(input));
            any_query |= !q.is_empty();
            scored.push((cosine(q, &self.vectors[f.id]), pos));
        }
        if !any_query {
            return candidates.iter().take(k).copied().collect();
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored
            .into_iter()
            .take(k)
            .map(|(_, pos)| candidates[pos])
            .collect()
    }

    /// focus → retrieve → top-k, the per-turn retrieval pipeline.
    pub fn facts_for<S: AsRef<str>>(&self, history: &[Vec<S>], k: usize) -> (Vec<String>, Vec<&Fact>) {
        self.facts_for_entity(history, None, k)
    }

    /// [`facts_for`](Self::facts_for), with a known entity appended to the
    /// focus keys when the collection holds it.
    pub fn facts_for_entity<S: AsRef<str>>(&self, history: &[Vec<S>], entity: Option<&str>, k: usize) -> (Vec<String>, Vec<&Fact>) {
        let mut keys = self.identify_focus(history);
        if let Some(e) = entity.map(entity_key) {
            if self.entities.contains_key(&e) && !keys.contains(&e) {
                keys.push(e);
            }
        }
        let candidates = self.retrieve(&keys);
        let flat: Vec<String> = history
            .iter()
            .flatten()
            .map(|s| s.as_ref().to_string())
            .collect();
        let top = self.filter_top_k(&flat, &candidates, k);
        (keys, top)
    }
}

/// Parse a JSON-lines facts file.
pub fn read_fact_records(r: impl BufRead) -> Result<Vec<FactRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FactRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            what: "facts file",
            line: i + 1,
            detail: e.to_string(),
        })?;
        if entity_key(&rec.entity).is_empty() {
            return Err(Error::Malformed {
                what: "facts file",
                line: i + 1,
                detail: "empty entity".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_fact_records(mut w: impl Write, records: &[FactRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_facts(path: impl AsRef<Path>) -> Result<FactsCollection> {
    let f = std::fs::File::open(path)?;
    Ok(FactsCollection::index(read_fact_records(
        std::io::BufReader::new(f),
    )?))
}
