//! Acceptance suite: one PASS/FAIL line per criterion, then a summary.
//! Exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{
    beam_oracle_instance, check_op, check_retrieval, enumerate, grid_search, memory_oracle, op_cases, op_slot,
    retrieval_case, synthetic_nbest, toy_config, OP_KINDS,
};
use groundchat::config::Profile;
use groundchat::corpus::Prepared;
use groundchat::decoding::{
    beam_search, best, greedy_decode, mert_tune, write_nbest, BeamConfig, MertConfig, NBestList,
};
use groundchat::experiment::{decode_nbest, DataDir, PreparedData};
use groundchat::metrics::{corpus_bleu, distinct_n, perplexity};
use groundchat::model::{CheckpointMeta, Example, GroundedModel, Net};
use groundchat::numeric::{grad_check_all, seeded_rng, Tensor};
use groundchat::synth::{generate, SynthConfig};
use groundchat::text::Vocabulary;
use groundchat::training::{
    build_examples, eval_examples, train, train_reverse, train_variant, Dataset, TaskKind, TaskSpec, TrainConfig,
    Variant,
};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> String {
    format!("{:.1}s (limit {limit_secs}s)", elapsed.as_secs_f64())
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst_op: (f64, &str) = (0.0, "");
    let mut covered = [false; OP_KINDS];
    for case in op_cases() {
        let r = check_op(&case, 1e-4);
        if r.max_rel_error >= worst_op.0 {
            worst_op = (r.max_rel_error, case.label);
        }
        covered[op_slot(&case.kind)] = true;
    }

    let cfg = toy_config(20, 8);
    let model = GroundedModel::new(cfg.clone(), 17).unwrap();
    // one NOFACTS(general) example and two FACTS(grounded) examples with 2 facts each
    let batch = vec![
        Example::new(vec![4, 5, 6], None, vec![7, 8]),
        Example::new(vec![9, 10], Some(vec![vec![11, 12], vec![13, 13, 14]]), vec![15, 16, 17]),
        Example::new(vec![18], Some(vec![vec![19, 4], vec![5]]), vec![6]),
    ];
    let layout = model.layout().clone();
    let report = grad_check_all(
        |tape, vars| {
            let net = Net::from_vars(tape, &cfg, &layout, vars.to_vec());
            Ok(net.batch_nll(&batch)?.0)
        },
        model.params(),
        1e-4,
        1e-4,
    )
    .unwrap();
    let elapsed = start.elapsed();
    ensure(
        worst_op.0 <= 1e-4 && covered.iter().all(|&c| c) && report.passed() && elapsed.as_secs() < 60,
        format!(
            "primitives: max rel error {:.2e} ({}), all {OP_KINDS} kinds covered: {}; MTASK-R loss: max rel error {:.2e} over {} coordinates (tol 1e-4); {}",
            worst_op.0,
            worst_op.1,
            covered.iter().all(|&c| c),
            report.max_rel_error,
            report.checked,
            within(elapsed, 60)
        ),
    )
}

fn memory_oracle_equivalence() -> Outcome {
    let mut max_diff: f64 = 0.0;
    let mut max_sum_err: f64 = 0.0;
    for seed in 0..10 {
        let m = GroundedModel::new(toy_config(30, 8), seed).unwrap();
        let mut rng = seeded_rng(seed + 500);
        let u = Tensor::vector((0..16).map(|_| rng.random_range(-1.0..1.0)).collect());
        let facts: Vec<Vec<usize>> = (0..3)
            .map(|_| (0..rng.random_range(1..6)).map(|_| rng.random_range(0..30)).collect())
            .collect();
        let read = m.memory_read(&u, &facts).unwrap();
        let bows: Vec<Vec<f64>> = facts
            .iter()
            .map(|f| {
                let mut r = vec![0.0; 30];
                f.iter().for_each(|&i| r[i] += 1.0);
                r
            })
            .collect();
        let (u_hat, p) = memory_oracle(m.param("memory.a").unwrap(), m.param("memory.c").unwrap(), u.data(), &bows);
        for (a, b) in read.u_hat.data().iter().zip(&u_hat).chain(read.weights.iter().zip(&p)) {
            max_diff = max_diff.max((a - b).abs());
        }
        max_sum_err = max_sum_err.max((read.weights.iter().sum::<f64>() - 1.0).abs());
    }
    let m = GroundedModel::new(toy_config(30, 8), 3).unwrap();
    let u = Tensor::vector((0..16).map(|i| (i as f64 - 7.5) / 8.0).collect());
    let single = m.memory_read(&u, &[vec![4, 9, 9]]).unwrap();
    let zeros = m.memory_read(&u, &[vec![], vec![], vec![]]).unwrap();
    let ok = max_diff <= 1e-12 && max_sum_err <= 1e-12 && single.weights == vec![1.0] && zeros.u_hat == u;
    ensure(
        ok,
        format!(
            "d=16 v=30 k=3 over 10 seeds: max |diff| {max_diff:.1e} (tol 1e-12), |Σp - 1| {max_sum_err:.1e}; k=1 gives p={:?}; zero facts give û=u: {}",
            single.weights,
            zeros.u_hat == u
        ),
    )
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let profile = Profile::desk();
    let corpus = generate(&SynthConfig {
        train_entities: 9,
        dev_entities: 0,
        test_entities: 0,
        general_train: 0,
        general_dev: 0,
        general_test: 0,
        mention_rate: 1.0,
        ..SynthConfig::default()
    });
    let mut data = DataDir {
        facts: corpus.facts,
        general: corpus.general,
        grounded: corpus.grounded,
    };
    data.grounded.train.truncate(50);
    let vocab = data.vocabulary(profile.vocab_capacity).unwrap();
    let prepared = data.prepare(&data.collection(), &vocab, profile.top_k).unwrap();
    let convs = &prepared.grounded.train;
    let examples = build_examples(TaskKind::Facts, convs).examples;
    let cfg = TrainConfig {
        max_steps: 2000,
        patience: usize::MAX,
        ..profile.train.clone()
    };
    let model = GroundedModel::new(profile.model.model_config(vocab.len(), true), cfg.seed).unwrap();
    let tasks = vec![(TaskSpec::new(TaskKind::Facts, Dataset::Grounded), examples.clone())];
    let out = train(model, tasks, &examples, &cfg, &mut |_, _| Ok(())).unwrap();
    let ppl = perplexity(&out.model, &examples).unwrap();
    let exact = convs
        .iter()
        .filter(|c| {
            let h = greedy_decode(&out.model, &c.source, &c.facts, profile.beam.max_len).unwrap();
            h.words() == c.response.as_slice()
        })
        .count();
    let elapsed = start.elapsed();
    ensure(
        convs.len() == 50 && ppl < 1.2 && exact >= 48 && elapsed.as_secs() < 600,
        format!(
            "{} pairs, {} steps: training perplexity {ppl:.4} (< 1.2), greedy exact {exact}/50 (>= 48); {}",
            convs.len(),
            out.steps,
            within(elapsed, 600)
        ),
    )
}

struct Desk {
    profile: Profile,
    vocab: Vocabulary,
    prepared: PreparedData,
}

fn desk_corpus() -> Desk {
    let profile = Profile::desk();
    let corpus = generate(&SynthConfig::default());
    let data = DataDir {
        facts: corpus.facts,
        general: corpus.general,
        grounded: corpus.grounded,
    };
    let vocab = data.vocabulary(profile.vocab_capacity).unwrap();
    let prepared = data.prepare(&data.collection(), &vocab, profile.top_k).unwrap();
    Desk {
        profile,
        vocab,
        prepared,
    }
}

fn train_desk(desk: &Desk, variant: Variant) -> GroundedModel {
    let mc = desk.profile.model.model_config(desk.vocab.len(), false);
    train_variant(variant, &mc, desk.prepared.train(), desk.prepared.dev(), &desk.profile.train, &mut |_, _| Ok(()))
        .unwrap()
        .model
}

fn grounding_effect(desk: &Desk) -> Outcome {
    let start = Instant::now();
    let seq2seq = train_desk(desk, Variant::Seq2Seq);
    let mtask_r = train_desk(desk, Variant::MtaskR);
    let grounded_dev = eval_examples(&desk.prepared.grounded.dev);
    let general_dev = eval_examples(&desk.prepared.general.dev);
    let (gs, gr) = (perplexity(&seq2seq, &grounded_dev).unwrap(), perplexity(&mtask_r, &grounded_dev).unwrap());
    let (cs, cr) = (perplexity(&seq2seq, &general_dev).unwrap(), perplexity(&mtask_r, &general_dev).unwrap());
    let reduction = 1.0 - gr / gs;
    let general_gap = (cs - cr).abs() / cs.min(cr);
    let elapsed = start.elapsed();
    ensure(
        reduction >= 0.2 && general_gap <= 0.1 && elapsed.as_secs() < 1800,
        format!(
            "grounded-dev perplexity SEQ2SEQ {gs:.3} vs MTASK-R {gr:.3}: {:.1}% lower (>= 20%); general-dev {cs:.3} vs {cr:.3}: gap {:.1}% (<= 10%); {}",
            100.0 * reduction,
            100.0 * general_gap,
            within(elapsed, 1800)
        ),
    )
}

fn test_distinct(desk: &Desk, model: &GroundedModel) -> f64 {
    let replies: Vec<Vec<String>> = desk
        .prepared
        .grounded
        .test
        .iter()
        .map(|c| {
            let hyps = beam_search(model, &c.source, &c.facts, &desk.profile.beam).unwrap();
            desk.vocab.decode(hyps[0].words()).unwrap()
        })
        .collect();
    distinct_n(&replies, 1).unwrap_or(0.0)
}

fn autoencoder_effect(desk: &Desk) -> Outcome {
    let start = Instant::now();
    let mtask = test_distinct(desk, &train_desk(desk, Variant::Mtask));
    let mtask_rf = test_distinct(desk, &train_desk(desk, Variant::MtaskRf));
    ensure(
        mtask_rf > mtask,
        format!(
            "distinct-1 on the grounded test set: MTASK-RF {:.2}% vs MTASK {:.2}% (must be strictly greater); {:.1}s",
            100.0 * mtask_rf,
            100.0 * mtask,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn beam_optimality() -> Outcome {
    let cfg = BeamConfig {
        beam: 125,
        max_len: 3,
        n_best: 1,
    };
    let mut exact = 0;
    for seed in 0..20 {
        let (model, source, facts) = beam_oracle_instance(seed);
        let all = enumerate(&model, &source, &facts, 3).unwrap();
        let hyps = beam_search(&model, &source, &facts, &cfg).unwrap();
        if hyps[0].tokens == all[0].0 && (hyps[0].log_prob - all[0].1).abs() < 1e-12 {
            exact += 1;
        }
    }
    ensure(
        exact == 20,
        format!("5 emittable tokens, max length 3, beam 125: exact argmax {exact}/20 (need 20/20)"),
    )
}

fn mert_soundness() -> Outcome {
    let (lists, refs) = synthetic_nbest(2024, 100, 10);
    let report = mert_tune(&lists, &refs, &MertConfig::default()).unwrap();
    let (grid, at) = grid_search(&lists, &refs, 1.0, 0.01);
    let monotone = report.trajectory.windows(2).all(|w| w[1] >= w[0]);
    ensure(
        report.bleu >= grid - 1e-9 && report.bleu >= report.baseline_bleu && monotone,
        format!(
            "100 lists: MERT BLEU {:.6} at (λ={:.3}, γ={:.3}); grid over [-1,1]² at 0.01: {grid:.6} at (λ={:.2}, γ={:.2}); at (0,0): {:.6}; trajectory of {} moves monotone: {monotone}",
            report.bleu,
            report.weights.lambda,
            report.weights.gamma,
            at.lambda,
            at.gamma,
            report.baseline_bleu,
            report.trajectory.len() - 1
        ),
    )
}

fn metrics_oracles() -> Outcome {
    let t = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let hand = corpus_bleu(&[t("a b c d e")], &[t("a b c d f")]).unwrap();
    let corpus = vec![t("the pizza is great here"), t("try the omakase tonight please")];
    let identity = corpus_bleu(&corpus, &corpus).unwrap();
    let vocab_size = 25;
    let mut uniform = GroundedModel::new(toy_config(vocab_size, 4), 0).unwrap();
    for p in uniform.params_mut() {
        *p = Tensor::zeros(p.shape());
    }
    let examples = vec![
        Example::new(vec![4, 5], None, vec![6, 7, 8]),
        Example::new(vec![9], Some(vec![vec![10, 11]]), vec![12]),
    ];
    let ppl = perplexity(&uniform, &examples).unwrap();
    let distinct = distinct_n(&[t("a b a")], 1).unwrap();
    let ok = (hand - 0.6687).abs() < 1e-4
        && (identity - 1.0).abs() < 1e-12
        && (ppl - vocab_size as f64).abs() < 1e-9
        && (distinct - 2.0 / 3.0).abs() < 1e-12;
    ensure(
        ok,
        format!(
            "BLEU hand example {hand:.4} (0.6687 ± 1e-4); identity {identity}; uniform perplexity {ppl} (V = {vocab_size}); distinct-1 of [\"a b a\"] {distinct:.6} (2/3)"
        ),
    )
}

fn retrieval_oracle() -> Outcome {
    let failures: Vec<String> = (0..1000u64)
        .filter_map(|seed| check_retrieval(&retrieval_case(seed)).err().map(|e| format!("case {seed}: {e}")))
        .collect();
    ensure(
        failures.is_empty(),
        format!(
            "filter_top_k vs brute-force dense tf-idf cosine: {}/1000 random candidate sets agree{}",
            1000 - failures.len(),
            failures.first().map(|f| format!("; first failure {f}")).unwrap_or_default()
        ),
    )
}

struct RunArtifacts {
    model: Vec<u8>,
    reverse: Vec<u8>,
    nbest: Vec<u8>,
    weights: String,
    bleu: f64,
}

fn end_to_end(desk: &Desk) -> RunArtifacts {
    let profile = &desk.profile;
    let cfg = TrainConfig {
        max_steps: 150,
        eval_every: 50,
        ..profile.train.clone()
    };
    let mc = profile.model.model_config(desk.vocab.len(), false);
    let p = &desk.prepared;
    let model = train_variant(Variant::MtaskR, &mc, p.train(), p.dev(), &cfg, &mut |_, _| Ok(())).unwrap().model;
    let reverse = train_reverse(&mc, p.train(), p.dev(), &cfg, &mut |_, _| Ok(())).unwrap().model;
    let dev: Vec<Prepared> = p.grounded.dev.iter().take(30).cloned().collect();
    let lists: Vec<NBestList> = decode_nbest(&model, Some(&reverse), &desk.vocab, &dev, &profile.beam).unwrap();
    let refs: Vec<Vec<String>> = dev.iter().map(|c| desk.vocab.decode(&c.response).unwrap()).collect();
    let report = mert_tune(&lists, &refs, &profile.mert).unwrap();
    let hyps: Vec<Vec<String>> = lists.iter().map(|l| best(l, &report.weights).unwrap().tokens.clone()).collect();
    let bleu = corpus_bleu(&hyps, &refs).unwrap();

    let bytes = |m: &GroundedModel| {
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf, &desk.vocab, &CheckpointMeta::default()).unwrap();
        buf
    };
    let mut nbest = Vec::new();
    write_nbest(&mut nbest, &lists).unwrap();
    RunArtifacts {
        model: bytes(&model),
        reverse: bytes(&reverse),
        nbest,
        weights: serde_json::to_string(&report.weights).unwrap(),
        bleu,
    }
}

fn determinism(desk: &Desk) -> Outcome {
    let a = end_to_end(desk);
    let b = end_to_end(desk);
    let same = [
        ("checkpoint", a.model == b.model),
        ("reverse checkpoint", a.reverse == b.reverse),
        ("n-best file", a.nbest == b.nbest),
        ("weights", a.weights == b.weights),
        ("BLEU", a.bleu.to_bits() == b.bleu.to_bits()),
    ];
    ensure(
        same.iter().all(|(_, s)| *s),
        format!(
            "two seeded train → decode → mert → eval runs: {}",
            same.iter()
                .map(|(what, s)| format!("{what} {}", if *s { "identical" } else { "DIFFERENT" }))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn main() {
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let desk = std::sync::OnceLock::new();
    let desk = || desk.get_or_init(desk_corpus);
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("gradient-correctness", Box::new(gradient_correctness)),
        ("memory-oracle", Box::new(memory_oracle_equivalence)),
        ("overfit", Box::new(overfit)),
        ("grounding-effect", Box::new(|| grounding_effect(desk()))),
        ("autoencoder-diversity", Box::new(|| autoencoder_effect(desk()))),
        ("beam-optimality", Box::new(beam_optimality)),
        ("mert-soundness", Box::new(mert_soundness)),
        ("metrics-oracles", Box::new(metrics_oracles)),
        ("retrieval-oracle", Box::new(retrieval_oracle)),
        ("determinism", Box::new(|| determinism(desk()))),
    ];
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, run) in &criteria {
        if !selected.is_empty() && !selected.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        ran += 1;
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(*name);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
