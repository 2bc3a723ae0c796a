use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GroundedModel;
use crate::numeric::log_softmax;
use crate::text::{TokenId, BOS, EOS, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub beam: usize,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    pub n_best: usize,
}

impl BeamConfig {
    pub fn paper() -> Self {
        Self {
            beam: 200,
            max_len: 30,
            n_best: 200,
        }
    }

    pub fn desk() -> Self {
        Self {
            beam: 10,
            max_len: 20,
            n_best: 10,
        }
    }

    pub fn greedy(max_len: usize) -> Self {
        Self {
            beam: 1,
            max_len,
            n_best: 1,
        }
    }
}

/// A generated token sequence and its cumulative log-likelihood.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens; ends in EOS when finished by the model.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub completed: bool,
}

impl Hypothesis {
    /// Tokens without the trailing EOS.
    pub fn words(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Tokens the decoder may emit at a given position. PAD and BOS are never
/// emitted, and EOS is not allowed as the first token.
fn emittable(tok: TokenId, step: usize) -> bool {
    !(tok == PAD || tok == BOS || (tok == EOS && step == 0))
}

/// Length-synchronous beam search from BOS.
///
/// Each step expands every live hypothesis by every emittable token and keeps
/// the `beam` best expansions, ordered by score, then lower token id, then
/// parent rank. Expansions ending in EOS, or reaching `max_len`, move to the
/// finished pool. Search stops early once the `n_best`-th finished score is
/// at least the best live score, since scores only decrease as hypotheses
/// grow. Returns up to `n_best` finished hypotheses, best first, topped up
/// with the best unfinished ones if the pool is short.
pub fn beam_search(model: &GroundedModel, source: &[TokenId], facts: &[Vec<TokenId>], cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    if cfg.beam == 0 || cfg.max_len == 0 || cfg.n_best == 0 {
        return Err(Error::InvalidArgument(format!("degenerate beam config {cfg:?}")));
    }
    if cfg.n_best > cfg.beam {
        return Err(Error::InvalidArgument(format!(
            "n-best {} exceeds beam {}",
            cfg.n_best, cfg.beam
        )));
    }
    let mut state = model.start_state(source, facts)?;
    let mut live: Vec<Hypothesis> = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        completed: false,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();

    for step in 0..cfg.max_len {
        let prev: Vec<TokenId> = live
            .iter()
            .map(|h| h.tokens.last().copied().unwrap_or(BOS))
            .collect();
        let (logits, next_state) = model.decode_step(&prev, &state)?;
        let mut cands: Vec<(f64, TokenId, usize)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let lp = log_softmax(logits.row(i));
            for (tok, l) in lp.into_iter().enumerate() {
                if emittable(tok, step) {
                    cands.push((h.log_prob + l, tok, i));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(cfg.beam);

        let mut next_live = Vec::new();
        let mut parents = Vec::new();
        for (score, tok, parent) in cands {
            let mut tokens = live[parent].tokens.clone();
            tokens.push(tok);
            let done = tok == EOS || tokens.len() == cfg.max_len;
            let h = Hypothesis {
                tokens,
                log_prob: score,
                completed: done,
            };
            if done {
                pool.push(h);
            } else {
                next_live.push(h);
                parents.push(parent);
            }
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
        state = next_state.select(&parents);
        if pool.len() >= cfg.n_best {
            sort_by_score(&mut pool);
            if pool[cfg.n_best - 1].log_prob >= live[0].log_prob {
                break;
            }
        }
    }

    sort_by_score(&mut pool);
    pool.truncate(cfg.n_best);
    if pool.len() < cfg.n_best {
        let missing = cfg.n_best - pool.len();
        pool.extend(live.into_iter().take(missing));
    }
    Ok(pool)
}

fn sort_by_score(hyps: &mut [Hypothesis]) {
    // stable: equal scores keep the order they were found in
    hyps.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
}

/// Repeatedly take the most probable token (lower id on ties).
pub fn greedy_decode(model: &GroundedModel, source: &[TokenId], facts: &[Vec<TokenId>], max_len: usize) -> Result<Hypothesis> {
    let mut state = model.start_state(source, facts)?;
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        completed: false,
    };
    for step in 0..max_len {
        let prev = [h.tokens.last().copied().unwrap_or(BOS)];
        let (logits, next) = model.decode_step(&prev, &state)?;
        state = next;
        let lp = log_softmax(logits.row(0));
        let (tok, l) = lp
            .iter()
            .enumerate()
            .filter(|(t, _)| emittable(*t, step))
            .fold((usize::MAX, f64::NEG_INFINITY), |best, (t, &l)| {
                if l > best.1 {
                    (t, l)
                } else {
                    best
                }
            });
        h.tokens.push(tok);
        h.log_prob += l;
        if tok == EOS {
            break;
        }
    }
    h.completed = true;
    Ok(h)
}
