//! Scorers for picking informative grounded conversations as dev/test data,
//! and the selection procedure built on them.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::facts::{entity_key, FactsCollection};
use crate::numeric::seeded_rng;
use crate::text::tokenize;

pub const DEFAULT_DELTA: f64 = 0.1;

/// Add-δ smoothed unigram model over one handle's facts.
#[derive(Clone, Debug, PartialEq)]
pub struct HandleLm {
    pub handle: String,
    counts: HashMap<String, usize>,
    total: usize,
    vocab_size: usize,
    delta: f64,
}

impl HandleLm {
    /// `vocab_size` is the size of the event space the smoothing spreads
    /// mass over; it must cover every observed token.
    pub fn train<S: AsRef<str>>(handle: &str, docs: &[Vec<S>], vocab_size: usize, delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("smoothing constant {delta}")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in docs.iter().flatten() {
            *counts.entry(t.as_ref().to_string()).or_default() += 1;
        }
        let total = counts.values().sum();
        if total == 0 {
            return Err(Error::Empty("handle language model data"));
        }
        if vocab_size < counts.len() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {vocab_size} smaller than {} observed types",
                counts.len()
            )));
        }
        Ok(Self {
            handle: handle.to_string(),
            counts,
            total,
            vocab_size,
            delta,
        })
    }

    /// `(c + δ) / (N + δV)`.
    pub fn prob(&self, token: &str) -> f64 {
        let c = self.counts.get(token).copied().unwrap_or(0) as f64;
        (c + self.delta) / (self.total as f64 + self.delta * self.vocab_size as f64)
    }
}

/// `exp(−mean ln p(token))`; lower means closer to the handle's facts.
pub fn lm_perplexity_score<S: AsRef<str>>(lm: &HandleLm, response: &[S]) -> Result<f64> {
    if response.is_empty() {
        return Err(Error::Empty("response"));
    }
    let mean = response.iter().map(|t| lm.prob(t.as_ref()).ln()).sum::<f64>() / response.len() as f64;
    Ok((-mean).exp())
}

/// `N(ad − bc)² / ((a+b)(c+d)(a+c)(b+d))`, or 0 when a marginal is 0.
pub fn chi_square(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let n = a + b + c + d;
    let denom = (a + b) * (c + d) * (a + c) * (b + d);
    if denom == 0.0 {
        return 0.0;
    }
    n * (a * d - b * c).powi(2) / denom
}

/// Document counts for χ²: a fact is one document, and a token either
/// occurs in it or not.
#[derive(Clone, Debug, Default)]
pub struct ChiSquareScorer {
    docs: usize,
    df: HashMap<String, usize>,
    handle_docs: HashMap<String, usize>,
    handle_df: HashMap<String, HashMap<String, usize>>,
}

impl ChiSquareScorer {
    pub fn new(facts: &FactsCollection) -> Self {
        let mut s = Self::default();
        for f in facts.facts() {
            s.docs += 1;
            *s.handle_docs.entry(f.entity.clone()).or_default() += 1;
            let per = s.handle_df.entry(f.entity.clone()).or_default();
            let types: HashSet<&String> = f.tokens.iter().collect();
            for t in types {
                *s.df.entry(t.clone()).or_default() += 1;
                *per.entry(t.clone()).or_default() += 1;
            }
        }
        s
    }

    /// χ² of [contains token, does not] × [this handle's facts, other facts].
    pub fn score(&self, token: &str, handle: &str) -> f64 {
        let h = entity_key(handle);
        let n_h = self.handle_docs.get(&h).copied().unwrap_or(0) as f64;
        let a = self
            .handle_df
            .get(&h)
            .and_then(|m| m.get(token))
            .copied()
            .unwrap_or(0) as f64;
        let with = self.df.get(token).copied().unwrap_or(0) as f64;
        let b = n_h - a;
        let c = with - a;
        let d = self.docs as f64 - n_h - c;
        chi_square(a, b, c, d)
    }

    /// Mean token score of a tweet.
    pub fn tweet_score<S: AsRef<str>>(&self, tokens: &[S], handle: &str) -> f64 {
        if tokens.is_empty() {
            return 0.0;
        }
        tokens.iter().map(|t| self.score(t.as_ref(), handle)).sum::<f64>() / tokens.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quotas {
    /// Best conversations by handle LM perplexity.
    pub lm: usize,
    /// Best conversations by χ² among those left.
    pub chi_square: usize,
    /// Random conversations among those left.
    pub random: usize,
    /// Random sample of the union of the three pools.
    pub sample: usize,
    /// Best of the sample by combined rank, split between dev and test.
    pub held_out: usize,
}

impl Quotas {
    pub fn paper() -> Self {
        Self {
            lm: 15_000,
            chi_square: 15_000,
            random: 15_000,
            sample: 10_000,
            held_out: 4_000,
        }
    }

    pub fn desk() -> Self {
        Self {
            lm: 150,
            chi_square: 150,
            random: 150,
            sample: 100,
            held_out: 40,
        }
    }
}

/// Conversation ids per split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

fn ranks(scores: &[f64], ascending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let o = scores[a].total_cmp(&scores[b]);
        if ascending {
            o
        } else {
            o.reverse()
        }
        .then(a.cmp(&b))
    });
    let mut r = vec![0; scores.len()];
    for (rank, i) in order.into_iter().enumerate() {
        r[i] = rank;
    }
    r
}

/// Handle a conversation is about: its entity field, else the first entity
/// mentioned in its history.
fn handle_of(c: &Conversation, facts: &FactsCollection) -> Option<String> {
    if let Some(e) = c.entity.as_deref().map(entity_key) {
        if facts.contains_entity(&e) {
            return Some(e);
        }
    }
    facts.identify_focus(&c.history_tokens()).into_iter().next()
}

/// Pick grounded dev and test conversations.
///
/// Conversations whose handle has facts are scored by the handle's unigram
/// LM and by χ². The best `lm` by perplexity, then the best `chi_square` of
/// the rest, then `random` others form the pool, from which `sample` are
/// drawn. The `held_out` of those with the best summed LM and χ² rank are
/// shuffled and split between dev and test (dev gets the extra one when
/// odd). Everything else stays in train.
pub fn select_grounded_devtest(convs: &[Conversation], facts: &FactsCollection, quotas: &Quotas, delta: f64, seed: u64) -> Result<Splits> {
    let mut seen = HashSet::new();
    if let Some(c) = convs.iter().find(|c| !seen.insert(c.id.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate conversation id {}", c.id)));
    }
    let mut vocab: HashSet<String> = facts.facts().iter().flat_map(|f| f.tokens.iter().cloned()).collect();
    let mut eligible: Vec<(usize, String, Vec<String>)> = Vec::new();
    for (i, c) in convs.iter().enumerate() {
        let resp = tokenize(&c.response);
        vocab.extend(resp.iter().cloned());
        if let Some(h) = handle_of(c, facts) {
            if !resp.is_empty() {
                eligible.push((i, h, resp));
            }
        }
    }
    let pool_size = quotas.lm + quotas.chi_square + quotas.random;
    if pool_size > eligible.len() || quotas.sample > pool_size || quotas.held_out > quotas.sample {
        return Err(Error::InvalidArgument(format!(
            "quotas {quotas:?} do not fit {} eligible conversations",
            eligible.len()
        )));
    }

    let chi = ChiSquareScorer::new(facts);
    let mut lms: HashMap<String, HandleLm> = HashMap::new();
    let mut lm_scores = Vec::with_capacity(eligible.len());
    let mut chi_scores = Vec::with_capacity(eligible.len());
    for (_, h, resp) in &eligible {
        if !lms.contains_key(h) {
            let docs: Vec<&Vec<String>> = facts.retrieve(&[h]).into_iter().map(|f| &f.tokens).collect();
            let docs: Vec<Vec<&str>> = docs.iter().map(|d| d.iter().map(String::as_str).collect()).collect();
            lms.insert(h.clone(), HandleLm::train(h, &docs, vocab.len(), delta)?);
        }
        lm_scores.push(lm_perplexity_score(&lms[h], resp)?);
        chi_scores.push(chi.tweet_score(resp, h));
    }

    let lm_rank = ranks(&lm_scores, true);
    let chi_rank = ranks(&chi_scores, false);
    let mut by_lm: Vec<usize> = (0..eligible.len()).collect();
    by_lm.sort_by_key(|&i| lm_rank[i]);
    let mut by_chi: Vec<usize> = (0..eligible.len()).collect();
    by_chi.sort_by_key(|&i| chi_rank[i]);

    let mut taken = vec![false; eligible.len()];
    let mut pool = Vec::with_capacity(pool_size);
    for &i in by_lm.iter().take(quotas.lm) {
        taken[i] = true;
        pool.push(i);
    }
    for &i in by_chi.iter().filter(|&&i| !taken[i]).take(quotas.chi_square).collect::<Vec<_>>() {
        taken[i] = true;
        pool.push(i);
    }
    let mut rng = seeded_rng(seed);
    let mut rest: Vec<usize> = (0..eligible.len()).filter(|&i| !taken[i]).collect();
    rest.shuffle(&mut rng);
    pool.extend(rest.into_iter().take(quotas.random));

    pool.shuffle(&mut rng);
    pool.truncate(quotas.sample);
    let sample_lm = ranks(&pool.iter().map(|&i| lm_scores[i]).collect::<Vec<_>>(), true);
    let sample_chi = ranks(&pool.iter().map(|&i| chi_scores[i]).collect::<Vec<_>>(), false);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by_key(|&j| (sample_lm[j] + sample_chi[j], eligible[pool[j]].0));
    let mut held: Vec<usize> = order.into_iter().take(quotas.held_out).map(|j| eligible[pool[j]].0).collect();
    held.shuffle(&mut rng);

    let n_dev = held.len().div_ceil(2);
    let dev: Vec<usize> = held[..n_dev].to_vec();
    let test: Vec<usize> = held[n_dev..].to_vec();
    let held_set: HashSet<usize> = held.iter().copied().collect();
    let ids = |v: &[usize]| v.iter().map(|&i| convs[i].id.clone()).collect::<Vec<_>>();
    Ok(Splits {
        train: convs
            .iter()
            .enumerate()
            .filter(|(i, _)| !held_set.contains(i))
            .map(|(_, c)| c.id.clone())
            .collect(),
        dev: ids(&dev),
        test: ids(&test),
    })
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    split: String,
    ids: Vec<String>,
}

/// One `{"split", "ids"}` object per split.
pub fn write_splits(mut w: impl Write, s: &Splits) -> Result<()> {
    for (name, ids) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
        serde_json::to_writer(
            &mut w,
            &ManifestLine {
                split: name.into(),
                ids: ids.clone(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_splits(r: impl BufRead) -> Result<Splits> {
    let mut s = Splits::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            what: "split manifest",
            line: i + 1,
            detail: e.to_string(),
        })?;
        let slot = match m.split.as_str() {
            "train" => &mut s.train,
            "dev" => &mut s.dev,
            "test" => &mut s.test,
            other => {
                return Err(Error::Malformed {
                    what: "split manifest",
                    line: i + 1,
                    detail: format!("unknown split {other}"),
                })
            }
        };
        slot.extend(m.ids);
    }
    Ok(s)
}

/// The conversations named by `ids`, in that order.
pub fn pick<'a>(convs: &'a [Conversation], ids: &[String]) -> Result<Vec<&'a Conversation>> {
    let by_id: HashMap<&str, &Conversation> = convs.iter().map(|c| (c.id.as_str(), c)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("unknown conversation id {id}")))
        })
        .collect()
}
