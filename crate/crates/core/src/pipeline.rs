//! One chat turn end to end: retrieval, memory read, beam search, reverse
//! scoring and reranking.

use serde::{Deserialize, Serialize};

use crate::corpus::encode_history;
use crate::decoding::{beam_search, rerank, score_reverse, BeamConfig, Features, NBestList, RerankWeights};
use crate::error::{Error, Result};
use crate::facts::{FactsCollection, DEFAULT_TOP_K};
use crate::model::GroundedModel;
use crate::text::{tokenize, Vocabulary};

/// A fact retrieved for the turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnFact {
    pub entity: String,
    pub text: String,
}

/// A reranked N-best entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub text: String,
    pub features: Features,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatTurnResult {
    pub response: String,
    /// Entity keys found in the history, in order of first mention.
    pub entities: Vec<String>,
    pub facts: Vec<TurnFact>,
    /// Attention weight of each fact, present iff the model read facts.
    pub weights: Option<Vec<f64>>,
    /// Candidates in reranked order; the first is the response.
    pub nbest: Vec<ScoredResponse>,
}

/// Everything a chat turn needs, loaded once and shared read-only.
#[derive(Clone, Debug)]
pub struct ChatModels {
    pub model: GroundedModel,
    pub reverse: GroundedModel,
    pub vocab: Vocabulary,
    pub facts: FactsCollection,
    pub weights: RerankWeights,
    pub beam: BeamConfig,
    pub top_k: usize,
}

impl ChatModels {
    pub fn new(
        model: GroundedModel,
        reverse: GroundedModel,
        vocab: Vocabulary,
        facts: FactsCollection,
        weights: RerankWeights,
        beam: BeamConfig,
    ) -> Result<Self> {
        for (what, m) in [("model", &model), ("reverse model", &reverse)] {
            if m.config().vocab_size != vocab.len() {
                return Err(Error::VocabMismatch(format!(
                    "{what} has vocabulary size {}, vocabulary has {}",
                    m.config().vocab_size,
                    vocab.len()
                )));
            }
        }
        Ok(Self {
            model,
            reverse,
            vocab,
            facts,
            weights,
            beam,
            top_k: DEFAULT_TOP_K,
        })
    }

    pub fn chat_turn<S: AsRef<str>>(&self, history: &[S]) -> Result<ChatTurnResult> {
        chat_turn(
            history,
            &self.model,
            &self.reverse,
            &self.vocab,
            &self.facts,
            &self.weights,
            &self.beam,
            self.top_k,
        )
    }
}

/// Respond to `history`, the utterances so far with the latest last.
#[allow(clippy::too_many_arguments)]
pub fn chat_turn<S: AsRef<str>>(
    history: &[S],
    model: &GroundedModel,
    reverse: &GroundedModel,
    vocab: &Vocabulary,
    collection: &FactsCollection,
    weights: &RerankWeights,
    beam: &BeamConfig,
    top_k: usize,
) -> Result<ChatTurnResult> {
    let turns: Vec<Vec<String>> = history.iter().map(|t| tokenize(t.as_ref())).collect();
    if turns.iter().all(Vec::is_empty) {
        return Err(Error::Empty("history"));
    }
    if model.config().vocab_size != vocab.len() {
        return Err(Error::VocabMismatch(format!(
            "model vocabulary size {} vs {}",
            model.config().vocab_size,
            vocab.len()
        )));
    }
    let source = encode_history(vocab, &turns);
    let (entities, found) = collection.facts_for(&turns, top_k);
    let fact_ids: Vec<Vec<_>> = found.iter().map(|f| vocab.encode(&f.tokens)).collect();

    let attention = match model.facts_arg(&fact_ids) {
        Some(fs) => Some(model.memory_read(&model.encode(&source)?, &fs)?.weights),
        None => None,
    };
    let hyps = beam_search(model, &source, &fact_ids, beam)?;
    let mut list = NBestList::from_hypotheses("chat", &hyps, vocab)?;
    score_reverse(reverse, vocab, &source, &mut list)?;
    let order = rerank(&list, weights)?;
    let nbest = order
        .iter()
        .map(|&i| {
            let c = &list.candidates[i];
            Ok(ScoredResponse {
                text: c.tokens.join(" "),
                features: c.features,
                score: weights.score(&c.features)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChatTurnResult {
        response: nbest.first().map(|c| c.text.clone()).unwrap_or_default(),
        entities,
        facts: found
            .iter()
            .map(|f| TurnFact {
                entity: f.entity.clone(),
                text: f.text.clone(),
            })
            .collect(),
        weights: attention,
        nbest,
    })
}
