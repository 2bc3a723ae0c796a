//! Independent oracles and generators shared by the integration tests and
//! the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use groundchat::decoding::{Candidate, Features, NBestList, RerankWeights};
use groundchat::facts::{FactRecord, FactsCollection};
use groundchat::metrics::BleuStats;
use groundchat::model::{Combine, DecoderState, GroundedModel, ModelConfig};
use groundchat::numeric::{grad_check_all, init_uniform, log_softmax, seeded_rng, CustomOp, GradCheckReport, OpKind, Tape, Tensor, Var};
use groundchat::text::{TokenId, BOS, EOS, PAD};
use groundchat::Result;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn toy_config(vocab: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: hidden,
        hidden_dim: hidden,
        layers: 2,
        memory_dim: 2 * hidden,
        combine: Combine::Sum,
        grounded: true,
    }
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    init_uniform(shape, 1, seed).unwrap()
}

#[derive(Debug)]
pub struct Cube;

impl CustomOp for Cube {
    fn name(&self) -> &'static str {
        "cube"
    }
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(|x| x * x * x))
    }
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let d: Vec<f64> = inputs[0].data().iter().zip(grad.data()).map(|(x, g)| 3.0 * x * x * g).collect();
        vec![Tensor::new(inputs[0].shape().to_vec(), d).unwrap()]
    }
}

/// A primitive applied to random inputs.
pub struct OpCase {
    pub label: &'static str,
    pub kind: OpKind,
    pub inputs: Vec<Tensor>,
}

/// Position of a primitive in the list of all primitives; the match is
/// exhaustive so a new primitive cannot go unchecked.
pub fn op_slot(kind: &OpKind) -> usize {
    match kind {
        OpKind::MatMul => 0,
        OpKind::Add => 1,
        OpKind::Sub => 2,
        OpKind::Mul => 3,
        OpKind::Scale(_) => 4,
        OpKind::Sigmoid => 5,
        OpKind::Tanh => 6,
        OpKind::Softmax => 7,
        OpKind::Concat => 8,
        OpKind::Slice { .. } => 9,
        OpKind::Gather(_) => 10,
        OpKind::Sum => 11,
        OpKind::Log => 12,
        OpKind::SoftmaxNll { .. } => 13,
        OpKind::Transpose => 14,
        OpKind::Reshape(_) => 15,
        OpKind::Custom(_) => 16,
    }
}

pub const OP_KINDS: usize = 17;

pub fn op_cases() -> Vec<OpCase> {
    let case = |label, kind, inputs| OpCase { label, kind, inputs };
    let wide = random(&[3, 5], 4).map(|x| 3.0 * x);
    vec![
        case("matmul", OpKind::MatMul, vec![random(&[3, 4], 1), random(&[4, 2], 2)]),
        case("add", OpKind::Add, vec![random(&[3, 4], 1), random(&[3, 4], 2)]),
        case("add row broadcast", OpKind::Add, vec![random(&[3, 4], 1), random(&[1, 4], 2)]),
        case("sub", OpKind::Sub, vec![random(&[3, 4], 1), random(&[3, 4], 2)]),
        case("sub row broadcast", OpKind::Sub, vec![random(&[3, 4], 1), random(&[1, 4], 2)]),
        case("mul", OpKind::Mul, vec![random(&[3, 4], 1), random(&[3, 4], 2)]),
        case("mul row broadcast", OpKind::Mul, vec![random(&[3, 4], 1), random(&[1, 4], 2)]),
        case("scale", OpKind::Scale(-1.7), vec![random(&[2, 3], 1)]),
        case("sigmoid", OpKind::Sigmoid, vec![wide.clone()]),
        case("tanh", OpKind::Tanh, vec![wide.clone()]),
        case("softmax", OpKind::Softmax, vec![wide]),
        case("concat", OpKind::Concat, vec![random(&[2, 3], 1), random(&[2, 2], 2), random(&[2, 1], 3)]),
        case("slice", OpKind::Slice { start: 1, len: 2 }, vec![random(&[2, 4], 1)]),
        case("gather with repeats", OpKind::Gather(vec![4, 0, 4, 2]), vec![random(&[5, 3], 1)]),
        case("sum", OpKind::Sum, vec![random(&[3, 2], 1)]),
        case("log", OpKind::Log, vec![random(&[3, 2], 2).map(|x| 0.5 + x.abs())]),
        case(
            "softmax_nll",
            OpKind::SoftmaxNll {
                targets: vec![0, 5, 2, 2],
                weights: vec![1.0, 0.5, 0.0, 2.0],
            },
            vec![random(&[4, 6], 1).map(|x| 2.0 * x)],
        ),
        case("transpose", OpKind::Transpose, vec![random(&[2, 5], 1)]),
        case("reshape", OpKind::Reshape(vec![3, 4]), vec![random(&[2, 6], 1)]),
        case("custom", OpKind::Custom(Arc::new(Cube)), vec![random(&[2, 3], 1)]),
    ]
}

/// `Σ y ⊙ w` for a fixed random `w`, so every output coordinate matters.
pub fn weighted_sum(t: &Tape, y: Var) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let w = t.leaf(random(&shape, 99));
    let p = t.mul(y, w)?;
    t.sum(p)
}

pub fn check_op(case: &OpCase, tol: f64) -> GradCheckReport {
    grad_check_all(
        |t, v| weighted_sum(t, t.apply(case.kind.clone(), v)?),
        &case.inputs,
        1e-5,
        tol,
    )
    .unwrap()
}

/// Straight-line `û = Σ softmax(uᵀ A r_i) C r_i + u`.
pub fn memory_oracle(a: &Tensor, c: &Tensor, u: &[f64], bows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let (d, v) = (a.shape()[0], a.shape()[1]);
    let mat_vec = |m: &Tensor, r: &[f64]| -> Vec<f64> {
        (0..d).map(|i| (0..v).map(|j| m.at(i, j) * r[j]).sum()).collect()
    };
    let logits: Vec<f64> = bows
        .iter()
        .map(|r| mat_vec(a, r).iter().zip(u).map(|(x, y)| x * y).sum())
        .collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    let p: Vec<f64> = logits.iter().map(|l| (l - mx).exp() / z).collect();
    let mut out = u.to_vec();
    for (pi, r) in p.iter().zip(bows) {
        for (o, ci) in out.iter_mut().zip(mat_vec(c, r)) {
            *o += pi * ci;
        }
    }
    (out, p)
}

/// Every finished sequence of at most `max_len` tokens with its total
/// log-probability, best first. A sequence finishes at EOS or at `max_len`;
/// PAD and BOS are never emitted and EOS cannot come first.
pub fn enumerate(model: &GroundedModel, source: &[TokenId], facts: &[Vec<TokenId>], max_len: usize) -> Result<Vec<(Vec<TokenId>, f64)>> {
    fn walk(
        model: &GroundedModel,
        state: &DecoderState,
        prefix: &mut Vec<TokenId>,
        score: f64,
        max_len: usize,
        out: &mut Vec<(Vec<TokenId>, f64)>,
    ) -> Result<()> {
        let prev = prefix.last().copied().unwrap_or(BOS);
        let (logits, next) = model.decode_step(&[prev], state)?;
        let lp = log_softmax(logits.row(0));
        for (tok, &l) in lp.iter().enumerate() {
            if tok == PAD || tok == BOS || (tok == EOS && prefix.is_empty()) {
                continue;
            }
            prefix.push(tok);
            if tok == EOS || prefix.len() == max_len {
                out.push((prefix.clone(), score + l));
            } else {
                walk(model, &next, prefix, score + l, max_len, out)?;
            }
            prefix.pop();
        }
        Ok(())
    }
    let state = model.start_state(source, facts)?;
    let mut out = Vec::new();
    walk(model, &state, &mut Vec::new(), 0.0, max_len, &mut out)?;
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}

/// A small random grounded model with a random source and two facts: five
/// emittable tokens (UNK, EOS and three words).
pub fn beam_oracle_instance(seed: u64) -> (GroundedModel, Vec<TokenId>, Vec<Vec<TokenId>>) {
    let model = GroundedModel::new(toy_config(7, 4), seed).unwrap();
    let mut rng = seeded_rng(seed + 1000);
    let mut words = |n: usize| (0..n).map(|_| rng.random_range(4..7)).collect::<Vec<_>>();
    let source = words(3);
    let facts = vec![words(2), words(3)];
    (model, source, facts)
}

fn words(rng: &mut impl Rng, vocab: usize, len: usize) -> Vec<String> {
    (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
}

/// Lists of `n` candidates, each a noisy edit of the reference, with
/// features loosely tied to the number of edits.
pub fn synthetic_nbest(seed: u64, lists: usize, n: usize) -> (Vec<NBestList>, Vec<Vec<String>>) {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::new();
    let mut refs = Vec::new();
    for li in 0..lists {
        let len = rng.random_range(4..=10);
        let reference = words(&mut rng, 12, len);
        let candidates = (0..n)
            .map(|_| {
                let edits = rng.random_range(0..=4);
                let mut toks = reference.clone();
                for _ in 0..edits {
                    match rng.random_range(0..3) {
                        0 if !toks.is_empty() => {
                            let i = rng.random_range(0..toks.len());
                            toks[i] = words(&mut rng, 12, 1).remove(0);
                        }
                        1 if toks.len() > 1 => {
                            let i = rng.random_range(0..toks.len());
                            toks.remove(i);
                        }
                        _ => {
                            let i = rng.random_range(0..=toks.len());
                            let w = words(&mut rng, 12, 1).remove(0);
                            toks.insert(i, w);
                        }
                    }
                }
                let l = toks.len() as f64;
                Candidate {
                    features: Features {
                        forward: -0.4 * l - 0.3 * edits as f64 + rng.random_range(-1.0..1.0),
                        length: l,
                        reverse: Some(-0.5 * edits as f64 + rng.random_range(-1.5..1.5)),
                    },
                    tokens: toks,
                }
            })
            .collect();
        out.push(NBestList {
            source_id: format!("s{li}"),
            candidates,
        });
        refs.push(reference);
    }
    (out, refs)
}

/// Best corpus BLEU over the grid `{-range, -range + step, …, range}²`,
/// first maximum on ties.
pub fn grid_search(lists: &[NBestList], refs: &[Vec<String>], range: f64, step: f64) -> (f64, RerankWeights) {
    let stats: Vec<Vec<BleuStats>> = lists
        .iter()
        .zip(refs)
        .map(|(l, r)| l.candidates.iter().map(|c| BleuStats::sentence(&c.tokens, r)).collect())
        .collect();
    let steps = (2.0 * range / step).round() as i64;
    let mut best = (f64::NEG_INFINITY, RerankWeights::default());
    for i in 0..=steps {
        let lambda = -range + i as f64 * step;
        for j in 0..=steps {
            let gamma = -range + j as f64 * step;
            let mut total = BleuStats::default();
            for (l, s) in lists.iter().zip(&stats) {
                let mut top = 0;
                let mut top_score = f64::NEG_INFINITY;
                for (ci, c) in l.candidates.iter().enumerate() {
                    let f = &c.features;
                    let score = f.forward + lambda * f.reverse.unwrap() + gamma * f.length;
                    if score > top_score {
                        top = ci;
                        top_score = score;
                    }
                }
                total += s[top];
            }
            let bleu = total.bleu();
            if bleu > best.0 {
                best = (bleu, RerankWeights::new(lambda, gamma));
            }
        }
    }
    best
}

pub struct RetrievalCase {
    pub records: Vec<FactRecord>,
    pub input: Vec<String>,
    /// Fact ids in candidate order.
    pub candidates: Vec<usize>,
    pub k: usize,
}

pub fn retrieval_case(seed: u64) -> RetrievalCase {
    let mut rng = seeded_rng(seed);
    let entities = rng.random_range(1..=3);
    let mut records = Vec::new();
    for e in 0..entities {
        for _ in 0..rng.random_range(1..=6) {
            let len = rng.random_range(1..=5);
            records.push(FactRecord {
                entity: format!("e{e}"),
                text: words(&mut rng, 8, len).join(" "),
            });
        }
    }
    let input_len = rng.random_range(0..=6);
    let input = words(&mut rng, 10, input_len);
    let mut candidates: Vec<usize> = (0..records.len()).collect();
    candidates.shuffle(&mut rng);
    let keep = rng.random_range(1..=candidates.len());
    candidates.truncate(keep);
    RetrievalCase {
        records,
        input,
        candidates,
        k: rng.random_range(1..=8),
    }
}

/// Dense tf-idf cosine of `input` against every fact of the case, using
/// per-entity document frequencies.
pub fn brute_force_cosines(case: &RetrievalCase) -> (Vec<f64>, Vec<bool>) {
    let docs: Vec<Vec<&str>> = case.records.iter().map(|r| r.text.split_whitespace().collect()).collect();
    let mut by_entity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in case.records.iter().enumerate() {
        by_entity.entry(r.entity.as_str()).or_default().push(i);
    }
    let mut cos = vec![0.0; docs.len()];
    let mut query_nonzero = vec![false; docs.len()];
    for members in by_entity.values() {
        let terms: BTreeSet<&str> = members.iter().flat_map(|&i| docs[i].iter().copied()).collect();
        let terms: Vec<&str> = terms.into_iter().collect();
        let n = members.len() as f64;
        let idf: Vec<f64> = terms
            .iter()
            .map(|t| {
                let df = members.iter().filter(|&&i| docs[i].contains(t)).count() as f64;
                (n / df).ln()
            })
            .collect();
        let dense = |toks: &[&str]| -> Vec<f64> {
            terms
                .iter()
                .zip(&idf)
                .map(|(t, w)| toks.iter().filter(|x| *x == t).count() as f64 * w)
                .collect()
        };
        let input: Vec<&str> = case.input.iter().map(String::as_str).collect();
        let q = dense(&input);
        let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        for &i in members {
            let f = dense(&docs[i]);
            let fnorm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = q.iter().zip(&f).map(|(a, b)| a * b).sum();
            cos[i] = if qn == 0.0 || fnorm == 0.0 { 0.0 } else { dot / (qn * fnorm) };
            query_nonzero[i] = qn > 0.0;
        }
    }
    (cos, query_nonzero)
}

/// Compare `filter_top_k` with the brute-force ranking; near-ties within
/// `1e-12` may come in either order.
pub fn check_retrieval(case: &RetrievalCase) -> std::result::Result<(), String> {
    let collection = FactsCollection::index(case.records.clone());
    let facts = collection.facts();
    let candidates: Vec<_> = case.candidates.iter().map(|&i| &facts[i]).collect();
    let got: Vec<usize> = collection
        .filter_top_k(&case.input, &candidates, case.k)
        .iter()
        .map(|f| f.id)
        .collect();

    let (cos, nonzero) = brute_force_cosines(case);
    let mut order = case.candidates.clone();
    if case.candidates.iter().any(|&i| nonzero[i]) {
        order.sort_by(|&a, &b| cos[b].total_cmp(&cos[a]));
    }
    order.truncate(case.k);
    if got.len() != order.len() {
        return Err(format!("returned {} facts, expected {}", got.len(), order.len()));
    }
    for (g, e) in got.iter().zip(&order) {
        if g != e && (cos[*g] - cos[*e]).abs() > 1e-12 {
            return Err(format!("ranking {got:?} vs brute force {order:?}"));
        }
    }
    Ok(())
}
