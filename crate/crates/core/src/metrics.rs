//! Corpus BLEU-4, perplexity and distinct-n.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::model::{Example, GroundedModel};
use crate::numeric::Tape;

pub const BLEU_ORDER: usize = 4;

/// Pooled BLEU sufficient statistics. Adding the stats of two corpora gives
/// the stats of their union.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; BLEU_ORDER],
    pub totals: [usize; BLEU_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl std::ops::Add for BleuStats {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..BLEU_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

impl std::ops::SubAssign for BleuStats {
    fn sub_assign(&mut self, o: Self) {
        for n in 0..BLEU_ORDER {
            self.matches[n] -= o.matches[n];
            self.totals[n] -= o.totals[n];
        }
        self.hyp_len -= o.hyp_len;
        self.ref_len -= o.ref_len;
    }
}

fn ngram_counts<T: Eq + std::hash::Hash>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

impl BleuStats {
    /// Clipped n-gram matches of one hypothesis against its reference.
    pub fn sentence<T: Eq + std::hash::Hash>(hyp: &[T], reference: &[T]) -> Self {
        let mut s = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=BLEU_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            s.matches[n - 1] = h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    /// `BP · exp(¼ Σ ln p_n)`; 0 when any pooled numerator is 0.
    pub fn bleu(&self) -> f64 {
        if self.matches.iter().any(|&m| m == 0) || self.hyp_len == 0 {
            return 0.0;
        }
        let log_prec: f64 = (0..BLEU_ORDER)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / BLEU_ORDER as f64;
        let bp = if self.hyp_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        } else {
            1.0
        };
        bp * log_prec.exp()
    }
}

/// Corpus BLEU-4 of aligned hypothesis/reference token sequences.
pub fn corpus_bleu<T: Eq + std::hash::Hash>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let stats = hyps
        .iter()
        .zip(refs)
        .fold(BleuStats::default(), |acc, (h, r)| acc + BleuStats::sentence(h, r));
    Ok(stats.bleu())
}

/// Total NLL (nats) and token count of `examples`, EOS included, in batches.
pub fn total_nll(model: &GroundedModel, examples: &[Example], batch_size: usize) -> Result<(f64, usize)> {
    let mut nll = 0.0;
    let mut tokens = 0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let chunk: Vec<Example> = chunk
            .iter()
            .map(|e| {
                let facts = e.facts.as_deref().and_then(|f| model.facts_arg(f));
                Example::new(e.source.clone(), facts, e.target.clone())
            })
            .collect();
        let tape = Tape::new();
        let net = model.net(&tape);
        let (loss, n) = net.batch_nll(&chunk)?;
        nll += tape.value(loss).item();
        tokens += n;
    }
    Ok((nll, tokens))
}

/// `exp(total NLL / total target tokens)`.
pub fn perplexity(model: &GroundedModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("perplexity corpus"));
    }
    let (nll, tokens) = total_nll(model, examples, 32)?;
    Ok((nll / tokens as f64).exp())
}

/// Unique n-grams over total n-grams, pooled across responses.
pub fn distinct_n<T: Eq + std::hash::Hash>(responses: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut unique: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        if r.len() >= n {
            for w in r.windows(n) {
                unique.insert(w);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("n-grams for distinct-n"));
    }
    Ok(unique.len() as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identical_corpus_scores_one() {
        let c = vec![t("the pizza is great here"), t("try the omakase tonight please")];
        assert!((corpus_bleu(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_example() {
        // p = 4/5, 3/4, 2/3, 1/2 ; product 1/5 ; BP 1
        let b = corpus_bleu(&[t("a b c d e")], &[t("a b c d f")]).unwrap();
        assert!((b - 0.2f64.powf(0.25)).abs() < 1e-12);
        assert!((b - 0.6687).abs() < 1e-4);
    }

    #[test]
    fn no_four_gram_overlap_is_zero() {
        let b = corpus_bleu(&[t("a b c x d")], &[t("a b c d e")]).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn brevity_penalty() {
        let s = BleuStats::sentence(&t("a b c d"), &t("a b c d e f g h"));
        let b = s.bleu();
        assert!((b - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn clipping() {
        let s = BleuStats::sentence(&t("the the the"), &t("the cat"));
        assert_eq!(s.matches[0], 1);
        assert_eq!(s.totals[0], 3);
    }

    #[test]
    fn empty_and_misaligned() {
        let e: Vec<Vec<&str>> = vec![];
        assert!(corpus_bleu(&e, &e).is_err());
        assert!(corpus_bleu(&[t("a")], &[]).is_err());
    }

    #[test]
    fn distinct() {
        assert!((distinct_n(&[t("a b a")], 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let same = vec![t("x"), t("x"), t("x"), t("x")];
        assert_eq!(distinct_n(&same, 1).unwrap(), 0.25);
        assert!(distinct_n(&[t("a")], 2).is_err());
    }
}
