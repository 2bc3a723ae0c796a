//! Response generation: beam search, N-best reranking and weight tuning.

mod beam;
mod mert;
mod nbest;

pub use beam::{beam_search, greedy_decode, BeamConfig, Hypothesis};
pub use mert::{align_references, mert_tune, read_references, reranked_bleu, MertConfig, MertReport};
pub use nbest::{best, read_nbest, rerank, score_reverse, write_nbest, Candidate, Features, NBestList, RerankWeights};
