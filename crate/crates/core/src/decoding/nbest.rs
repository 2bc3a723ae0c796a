use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::beam::Hypothesis;
use crate::error::{Error, Result};
use crate::model::GroundedModel;
use crate::text::{TokenId, Vocabulary, UNK};

/// Reranking features of one candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Features {
    /// `log P(R | S, F)` from the forward model.
    pub forward: f64,
    /// Response length in tokens, EOS excluded.
    pub length: f64,
    /// `log P(S | R)` from the reverse model, once scored.
    pub reverse: Option<f64>,
}

/// One entry of an N-best list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Surface tokens, EOS excluded.
    pub tokens: Vec<String>,
    pub features: Features,
}

/// Candidates for one source, in beam order.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestList {
    pub source_id: String,
    pub candidates: Vec<Candidate>,
}

impl NBestList {
    pub fn from_hypotheses(source_id: impl Into<String>, hyps: &[Hypothesis], vocab: &Vocabulary) -> Result<Self> {
        let candidates = hyps
            .iter()
            .map(|h| {
                let words = h.words();
                Ok(Candidate {
                    tokens: vocab.decode(words)?,
                    features: Features {
                        forward: h.log_prob,
                        length: words.len() as f64,
                        reverse: None,
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            source_id: source_id.into(),
            candidates,
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Fill the reverse feature `log P(S | R)` of every candidate.
pub fn score_reverse(reverse: &GroundedModel, vocab: &Vocabulary, source: &[TokenId], list: &mut NBestList) -> Result<()> {
    if reverse.config().vocab_size != vocab.len() {
        return Err(Error::VocabMismatch(format!(
            "reverse model vocabulary size {} vs {}",
            reverse.config().vocab_size,
            vocab.len()
        )));
    }
    for c in &mut list.candidates {
        let mut r = vocab.encode(&c.tokens);
        if r.is_empty() {
            r.push(UNK);
        }
        c.features.reverse = Some(-reverse.sequence_nll(&r, &[], source)?);
    }
    Ok(())
}

/// Weights of the reverse and length features; the forward weight is 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RerankWeights {
    pub lambda: f64,
    pub gamma: f64,
}

impl RerankWeights {
    pub fn new(lambda: f64, gamma: f64) -> Self {
        Self { lambda, gamma }
    }

    /// `forward + λ·reverse + γ·length`.
    pub fn score(&self, f: &Features) -> Result<f64> {
        let reverse = f
            .reverse
            .ok_or(Error::InvalidArgument("candidate lacks the reverse feature".into()))?;
        Ok(f.forward + self.lambda * reverse + self.gamma * f.length)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Candidate indices from best to worst rerank score; ties keep beam order.
pub fn rerank(list: &NBestList, w: &RerankWeights) -> Result<Vec<usize>> {
    let scores = list
        .candidates
        .iter()
        .map(|c| w.score(&c.features))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(order)
}

/// The top reranked candidate.
pub fn best<'a>(list: &'a NBestList, w: &RerankWeights) -> Result<&'a Candidate> {
    let order = rerank(list, w)?;
    order
        .first()
        .map(|&i| &list.candidates[i])
        .ok_or(Error::Empty("n-best list"))
}

#[derive(Serialize, Deserialize)]
struct Record {
    source_id: String,
    rank: usize,
    tokens: Vec<String>,
    features: (f64, f64, Option<f64>),
}

/// One JSON object per candidate:
/// `{"source_id", "rank", "tokens", "features": [forward, length, reverse]}`.
pub fn write_nbest(mut w: impl Write, lists: &[NBestList]) -> Result<()> {
    for list in lists {
        for (rank, c) in list.candidates.iter().enumerate() {
            let rec = Record {
                source_id: list.source_id.clone(),
                rank,
                tokens: c.tokens.clone(),
                features: (c.features.forward, c.features.length, c.features.reverse),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_nbest`]. Records of one source must be contiguous and
/// in rank order.
pub fn read_nbest(r: impl BufRead) -> Result<Vec<NBestList>> {
    let mut lists: Vec<NBestList> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |detail: String| Error::Malformed {
            what: "n-best",
            line: i + 1,
            detail,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let c = Candidate {
            tokens: rec.tokens,
            features: Features {
                forward: rec.features.0,
                length: rec.features.1,
                reverse: rec.features.2,
            },
        };
        match lists.last_mut() {
            Some(l) if l.source_id == rec.source_id => {
                if rec.rank != l.candidates.len() {
                    return Err(malformed(format!("rank {} out of order", rec.rank)));
                }
                l.candidates.push(c);
            }
            _ => {
                if rec.rank != 0 {
                    return Err(malformed(format!("list {} starts at rank {}", rec.source_id, rec.rank)));
                }
                if lists.iter().any(|l| l.source_id == rec.source_id) {
                    return Err(malformed(format!("list {} is not contiguous", rec.source_id)));
                }
                lists.push(NBestList {
                    source_id: rec.source_id,
                    candidates: vec![c],
                });
            }
        }
    }
    Ok(lists)
}
