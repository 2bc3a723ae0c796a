//! Minimum error rate training of the reranking weights.
//!
//! Coordinate ascent over `(λ, γ)`. Along one coordinate every candidate's
//! score is a line in that coordinate, so the 1-best of a list is given by
//! the upper envelope of its lines. Merging the envelope breakpoints of all
//! lists splits the axis into intervals of constant corpus BLEU, and the
//! search moves to the middle of the best one.

use std::collections::HashMap;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nbest::{NBestList, RerankWeights};
use crate::error::{Error, Result};
use crate::metrics::BleuStats;
use crate::numeric::seeded_rng;
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MertConfig {
    /// Starting points, the first of which is always `(0, 0)`.
    pub restarts: usize,
    /// Other starting points are drawn from `[-init_range, init_range]²`.
    pub init_range: f64,
    /// Cap on full coordinate sweeps per restart.
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for MertConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            init_range: 1.0,
            max_sweeps: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MertReport {
    pub weights: RerankWeights,
    pub bleu: f64,
    /// BLEU with both weights at zero, i.e. plain beam order.
    pub baseline_bleu: f64,
    /// BLEU after each accepted move of the winning restart, starting point
    /// included.
    pub trajectory: Vec<f64>,
    pub restart_bleu: Vec<f64>,
}

struct Scored {
    forward: f64,
    length: f64,
    reverse: f64,
    stats: BleuStats,
}

#[derive(Clone, Copy)]
enum Coord {
    Lambda,
    Gamma,
}

struct Problem {
    lists: Vec<Vec<Scored>>,
}

impl Problem {
    fn new(lists: &[NBestList], refs: &[Vec<String>]) -> Result<Self> {
        if lists.is_empty() {
            return Err(Error::Empty("tuning set"));
        }
        if lists.len() != refs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} n-best lists vs {} references",
                lists.len(),
                refs.len()
            )));
        }
        let lists = lists
            .iter()
            .zip(refs)
            .map(|(l, r)| {
                if l.is_empty() {
                    return Err(Error::Empty("n-best list"));
                }
                l.candidates
                    .iter()
                    .map(|c| {
                        Ok(Scored {
                            forward: c.features.forward,
                            length: c.features.length,
                            reverse: c.features.reverse.ok_or_else(|| {
                                Error::InvalidArgument(format!("{}: candidate lacks the reverse feature", l.source_id))
                            })?,
                            stats: BleuStats::sentence(&c.tokens, r),
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Self { lists })
    }

    fn bleu(&self, w: &RerankWeights) -> f64 {
        let mut total = BleuStats::default();
        for list in &self.lists {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (i, c) in list.iter().enumerate() {
                let s = c.forward + w.lambda * c.reverse + w.gamma * c.length;
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            total += list[best].stats;
        }
        total.bleu()
    }

    /// Best value of one coordinate with the other held fixed, and its BLEU.
    fn line_search(&self, w: &RerankWeights, coord: Coord) -> (f64, f64) {
        let mut stats = BleuStats::default();
        let mut events: Vec<(f64, usize, usize)> = Vec::new();
        let mut current: Vec<usize> = Vec::with_capacity(self.lists.len());
        for (l, list) in self.lists.iter().enumerate() {
            let lines: Vec<(f64, f64)> = list
                .iter()
                .map(|c| match coord {
                    Coord::Lambda => (c.reverse, c.forward + w.gamma * c.length),
                    Coord::Gamma => (c.length, c.forward + w.lambda * c.reverse),
                })
                .collect();
            let env = upper_envelope(&lines);
            stats += list[env[0].1].stats;
            current.push(env[0].1);
            events.extend(env[1..].iter().map(|&(x, i)| (x, l, i)));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut best_bleu = stats.bleu();
        let mut best_x = match events.first() {
            Some(e) => e.0 - 1.0,
            None => {
                let x = match coord {
                    Coord::Lambda => w.lambda,
                    Coord::Gamma => w.gamma,
                };
                return (x, best_bleu);
            }
        };
        let mut k = 0;
        while k < events.len() {
            let x = events[k].0;
            while k < events.len() && events[k].0 == x {
                let (_, l, i) = events[k];
                stats -= self.lists[l][current[l]].stats;
                stats += self.lists[l][i].stats;
                current[l] = i;
                k += 1;
            }
            let b = stats.bleu();
            if b > best_bleu {
                best_bleu = b;
                best_x = match events.get(k) {
                    Some(next) => 0.5 * (x + next.0),
                    None => x + 1.0,
                };
            }
        }
        (best_x, best_bleu)
    }
}

/// Upper envelope of lines `y = slope·x + intercept` as `(start, index)`
/// pieces in increasing `x`; the first piece starts at `-∞`. Among identical
/// lines the lowest index wins.
fn upper_envelope(lines: &[(f64, f64)]) -> Vec<(f64, usize)> {
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.sort_by(|&a, &b| {
        lines[a]
            .0
            .total_cmp(&lines[b].0)
            .then(lines[b].1.total_cmp(&lines[a].1))
            .then(a.cmp(&b))
    });
    order.dedup_by(|b, a| lines[*a].0 == lines[*b].0);
    let mut hull: Vec<(f64, usize)> = Vec::new();
    for i in order {
        let (s, c) = lines[i];
        loop {
            match hull.last() {
                None => {
                    hull.push((f64::NEG_INFINITY, i));
                    break;
                }
                Some(&(start, j)) => {
                    let (sj, cj) = lines[j];
                    let x = (cj - c) / (s - sj);
                    if x <= start {
                        hull.pop();
                    } else {
                        hull.push((x, i));
                        break;
                    }
                }
            }
        }
    }
    hull
}

/// Tune `(λ, γ)` for corpus BLEU of the reranked 1-best against `refs`.
pub fn mert_tune(lists: &[NBestList], refs: &[Vec<String>], cfg: &MertConfig) -> Result<MertReport> {
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument("at least one restart is needed".into()));
    }
    let problem = Problem::new(lists, refs)?;
    let mut rng = seeded_rng(cfg.seed);
    let baseline_bleu = problem.bleu(&RerankWeights::default());
    let mut report: Option<MertReport> = None;
    let mut restart_bleu = Vec::with_capacity(cfg.restarts);

    for r in 0..cfg.restarts {
        let mut w = if r == 0 {
            RerankWeights::default()
        } else {
            RerankWeights::new(
                rng.random_range(-cfg.init_range..=cfg.init_range),
                rng.random_range(-cfg.init_range..=cfg.init_range),
            )
        };
        let mut bleu = problem.bleu(&w);
        let mut trajectory = vec![bleu];
        for _ in 0..cfg.max_sweeps {
            let mut moved = false;
            for coord in [Coord::Lambda, Coord::Gamma] {
                let (x, predicted) = problem.line_search(&w, coord);
                if predicted <= bleu {
                    continue;
                }
                let mut next = w;
                match coord {
                    Coord::Lambda => next.lambda = x,
                    Coord::Gamma => next.gamma = x,
                }
                let actual = problem.bleu(&next);
                if actual > bleu {
                    w = next;
                    bleu = actual;
                    trajectory.push(bleu);
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        restart_bleu.push(bleu);
        if report.as_ref().is_none_or(|best| bleu > best.bleu) {
            report = Some(MertReport {
                weights: w,
                bleu,
                baseline_bleu,
                trajectory,
                restart_bleu: Vec::new(),
            });
        }
    }
    let mut report = report.expect("at least one restart");
    report.restart_bleu = restart_bleu;
    Ok(report)
}

/// Corpus BLEU of the reranked 1-best under `w`.
pub fn reranked_bleu(lists: &[NBestList], refs: &[Vec<String>], w: &RerankWeights) -> Result<f64> {
    Ok(Problem::new(lists, refs)?.bleu(w))
}

#[derive(Deserialize)]
struct ReferenceRecord {
    source_id: String,
    text: String,
}

/// Reference file: one `{"source_id", "text"}` object per line; texts are
/// tokenized.
pub fn read_references(r: impl BufRead) -> Result<HashMap<String, Vec<String>>> {
    let mut out = HashMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReferenceRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            what: "references",
            line: i + 1,
            detail: e.to_string(),
        })?;
        if out.insert(rec.source_id.clone(), tokenize(&rec.text)).is_some() {
            return Err(Error::Malformed {
                what: "references",
                line: i + 1,
                detail: format!("duplicate source id {}", rec.source_id),
            });
        }
    }
    Ok(out)
}

/// References in the order of `lists`.
pub fn align_references(lists: &[NBestList], refs: &HashMap<String, Vec<String>>) -> Result<Vec<Vec<String>>> {
    lists
        .iter()
        .map(|l| {
            refs.get(&l.source_id)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("no reference for {}", l.source_id)))
        })
        .collect()
}
