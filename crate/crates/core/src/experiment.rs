//! A corpus on disk and the steps shared by the CLI and the experiments:
//! vocabulary, preparation, training and N-best decoding.
//!
//! A data directory holds `facts.jsonl` and, for each dataset `general` and
//! `grounded`, the files `<dataset>.train.jsonl`, `<dataset>.dev.jsonl` and
//! `<dataset>.test.jsonl`. Missing conversation files count as empty.

use std::path::Path;

use crate::corpus::{load_conversations, prepare, save_conversations, Conversation, Prepared, SkippedLine, Split};
use crate::decoding::{beam_search, score_reverse, BeamConfig, NBestList};
use crate::error::{Error, Result};
use crate::facts::{read_fact_records, write_fact_records, FactRecord, FactsCollection};
use crate::model::GroundedModel;
use crate::text::{tokenize, Vocabulary};
use crate::training::VariantData;

pub const FACTS_FILE: &str = "facts.jsonl";
pub const DATASETS: [&str; 2] = ["general", "grounded"];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DataDir {
    pub facts: Vec<FactRecord>,
    pub general: Split,
    pub grounded: Split,
}

/// Conversations of a dataset part file that could not be read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedInFile {
    pub file: String,
    pub skipped: SkippedLine,
}

impl DataDir {
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, Vec<SkippedInFile>)> {
        let dir = dir.as_ref();
        let facts = read_fact_records(std::io::BufReader::new(std::fs::File::open(dir.join(FACTS_FILE))?))?;
        let mut data = DataDir {
            facts,
            ..Default::default()
        };
        let mut skipped = Vec::new();
        for name in DATASETS {
            for part in ["train", "dev", "test"] {
                let file = format!("{name}.{part}.jsonl");
                let path = dir.join(&file);
                if !path.exists() {
                    continue;
                }
                let (convs, bad) = load_conversations(&path)?;
                skipped.extend(bad.into_iter().map(|s| SkippedInFile {
                    file: file.clone(),
                    skipped: s,
                }));
                *data.part_mut(name, part) = convs;
            }
        }
        Ok((data, skipped))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let f = std::fs::File::create(dir.join(FACTS_FILE))?;
        write_fact_records(std::io::BufWriter::new(f), &self.facts)?;
        for (name, split) in [("general", &self.general), ("grounded", &self.grounded)] {
            for (part, convs) in split.parts() {
                save_conversations(dir.join(format!("{name}.{part}.jsonl")), convs)?;
            }
        }
        Ok(())
    }

    fn part_mut(&mut self, name: &str, part: &str) -> &mut Vec<Conversation> {
        let split = if name == "general" { &mut self.general } else { &mut self.grounded };
        match part {
            "train" => &mut split.train,
            "dev" => &mut split.dev,
            _ => &mut split.test,
        }
    }

    pub fn collection(&self) -> FactsCollection {
        FactsCollection::index(self.facts.clone())
    }

    /// Vocabulary over the training conversations of both datasets and the
    /// text of every fact.
    pub fn vocabulary(&self, capacity: usize) -> Result<Vocabulary> {
        let streams: Vec<Vec<String>> = self
            .general
            .train
            .iter()
            .chain(&self.grounded.train)
            .flat_map(|c| c.turns.iter().chain(std::iter::once(&c.response)))
            .chain(self.facts.iter().map(|f| &f.text))
            .map(|t| tokenize(t))
            .collect();
        Vocabulary::build(streams.iter().map(|t| t.iter().map(String::as_str)), capacity)
    }

    /// Encode every part and retrieve up to `k` facts per conversation.
    pub fn prepare(&self, facts: &FactsCollection, vocab: &Vocabulary, k: usize) -> Result<PreparedData> {
        let p = |convs: &[Conversation]| prepare(convs, facts, vocab, k);
        let split = |s: &Split| -> Result<PreparedSplit> {
            Ok(PreparedSplit {
                train: p(&s.train)?,
                dev: p(&s.dev)?,
                test: p(&s.test)?,
            })
        };
        Ok(PreparedData {
            general: split(&self.general)?,
            grounded: split(&self.grounded)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreparedSplit {
    pub train: Vec<Prepared>,
    pub dev: Vec<Prepared>,
    pub test: Vec<Prepared>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreparedData {
    pub general: PreparedSplit,
    pub grounded: PreparedSplit,
}

impl PreparedData {
    pub fn train(&self) -> VariantData<'_> {
        VariantData {
            general: &self.general.train,
            grounded: &self.grounded.train,
        }
    }

    pub fn dev(&self) -> VariantData<'_> {
        VariantData {
            general: &self.general.dev,
            grounded: &self.grounded.dev,
        }
    }

    pub fn test(&self) -> VariantData<'_> {
        VariantData {
            general: &self.general.test,
            grounded: &self.grounded.test,
        }
    }
}

/// Beam-search N-best lists for `convs`, with the reverse feature filled in
/// when a reverse model is given.
pub fn decode_nbest(
    model: &GroundedModel,
    reverse: Option<&GroundedModel>,
    vocab: &Vocabulary,
    convs: &[Prepared],
    beam: &BeamConfig,
) -> Result<Vec<NBestList>> {
    if model.config().vocab_size != vocab.len() {
        return Err(Error::VocabMismatch(format!(
            "model vocabulary size {} vs {}",
            model.config().vocab_size,
            vocab.len()
        )));
    }
    convs
        .iter()
        .map(|c| {
            let hyps = beam_search(model, &c.source, &c.facts, beam)?;
            let mut list = NBestList::from_hypotheses(c.id.clone(), &hyps, vocab)?;
            if let Some(r) = reverse {
                score_reverse(r, vocab, &c.source, &mut list)?;
            }
            Ok(list)
        })
        .collect()
}

/// One `{"source_id", "text"}` reference line per conversation.
pub fn write_references(mut w: impl std::io::Write, convs: &[Conversation]) -> Result<()> {
    for c in convs {
        serde_json::to_writer(&mut w, &serde_json::json!({"source_id": c.id, "text": c.response}))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
