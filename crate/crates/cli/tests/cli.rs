use std::path::Path;

use clap::Parser;
use groundchat_cli::{load_artifacts, repl, run, ArtifactArgs, Cli};

const CONFIG: &str = r#"
[profiles.tiny]
base = "desk"
vocab_capacity = 500
model = { embed_dim = 8, hidden_dim = 6, memory_dim = 12 }
train = { max_steps = 30, eval_every = 10, batch_size = 8 }
beam = { beam = 3, n_best = 3, max_len = 6 }
mert = { restarts = 2 }
"#;

fn groundchat(config: &Path, args: &[&str]) {
    let mut argv = vec!["groundchat", "--profile", "tiny", "--config", config.to_str().unwrap()];
    argv.extend_from_slice(args);
    run(Cli::parse_from(argv)).unwrap_or_else(|e| panic!("{args:?}: {e:#}"));
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn full_workflow_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let config = d.join("profiles.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let g = |args: &[&str]| groundchat(&config, args);
    let data = p(d, "data");
    let vocab = p(d, "vocab.txt");

    g(&["synth", "--out", &data]);
    g(&["build-vocab", "--dir", &data, "--out", &vocab]);
    g(&["index-facts", "--facts", &p(d, "data/facts.jsonl")]);
    g(&[
        "make-splits",
        "--facts",
        &p(d, "data/facts.jsonl"),
        "--conversations",
        &p(d, "data/grounded.train.jsonl"),
        "--out",
        &p(d, "splits.jsonl"),
        "--write-dir",
        &p(d, "curated"),
    ]);
    assert!(d.join("curated/grounded.dev.jsonl").exists());

    for run in ["a", "b"] {
        let model = p(d, &format!("model-{run}.ckpt"));
        let reverse = p(d, &format!("reverse-{run}.ckpt"));
        let nbest = p(d, &format!("nbest-{run}.jsonl"));
        g(&["train", "--dir", &data, "--vocab", &vocab, "--variant", "MTASK-R", "--out", &model, "--log", &p(d, "log.jsonl")]);
        g(&["train", "--dir", &data, "--vocab", &vocab, "--reverse", "--out", &reverse]);
        g(&[
            "decode", "--dir", &data, "--vocab", &vocab, "--model", &model, "--reverse-model", &reverse,
            "--part", "dev", "--out", &nbest, "--refs-out", &p(d, "refs.jsonl"),
        ]);
        g(&["mert", "--nbest", &nbest, "--refs", &p(d, "refs.jsonl"), "--out", &p(d, &format!("weights-{run}.json"))]);
        g(&[
            "eval", "--nbest", &nbest, "--refs", &p(d, "refs.jsonl"), "--weights", &p(d, &format!("weights-{run}.json")),
            "--model", &model, "--vocab", &vocab, "--dir", &data, "--part", "dev",
        ]);
    }
    let read = |name: &str| std::fs::read(d.join(name)).unwrap();
    assert_eq!(read("model-a.ckpt"), read("model-b.ckpt"));
    assert_eq!(read("reverse-a.ckpt"), read("reverse-b.ckpt"));
    assert_eq!(read("nbest-a.jsonl"), read("nbest-b.jsonl"));
    assert_eq!(read("weights-a.json"), read("weights-b.json"));
    let log = String::from_utf8(read("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 30);

    let profile = groundchat::config::Profile::from_toml(CONFIG, "tiny").unwrap();
    let artifacts = ArtifactArgs {
        model: d.join("model-a.ckpt"),
        reverse_model: d.join("reverse-a.ckpt"),
        vocab: d.join("vocab.txt"),
        facts: d.join("data/facts.jsonl"),
        weights: Some(d.join("weights-a.json")),
    };
    let (models, hash) = load_artifacts(&artifacts, &profile).unwrap();
    assert_eq!(hash, groundchat::text::hex_digest(&read("model-a.ckpt")));
    let entity = models.facts.entity_keys().next().unwrap().to_string();
    let input = format!("hello\nwhere is @{entity} ?\n:reset\n:quit\nignored\n");
    let mut out = Vec::new();
    repl(&models, input.as_bytes(), &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.matches("> ").count(), 4, "{text}");
    assert!(text.contains(&format!("@{entity}: ")), "{text}");
}

#[test]
fn rejects_unknown_variant_and_profile() {
    assert!(Cli::try_parse_from(["groundchat", "train", "--dir", "d", "--vocab", "v", "--variant", "MTASK-X", "--out", "o"]).is_err());
    assert!(Cli::try_parse_from(["groundchat", "train", "--dir", "d", "--vocab", "v", "--out", "o"]).is_err());
    let cli = Cli::try_parse_from(["groundchat", "--profile", "nope", "index-facts", "--facts", "f"]).unwrap();
    assert!(run(cli).is_err());
}
