use serde::Serialize;

use crate::numeric::Tensor;
use crate::text::{TokenId, Vocabulary};

/// Outcome of a single memory read.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryRead {
    /// Decoder initialization `û`.
    pub u_hat: Tensor,
    /// Attention weight of each fact, in input order.
    pub weights: Vec<f64>,
}

/// Bag-of-words count vector of length `vocab_size`.
pub fn bow_vector(ids: &[TokenId], vocab_size: usize) -> Tensor {
    let mut r = Tensor::zeros(&[vocab_size]);
    for &id in ids {
        r.data_mut()[id] += 1.0;
    }
    r
}

/// [`bow_vector`] of surface tokens; unknown tokens count as UNK.
pub fn bow_vector_text<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Tensor {
    bow_vector(&vocab.encode(tokens), vocab.len())
}
