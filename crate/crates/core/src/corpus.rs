//! Conversation records and their conversion to token ids.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facts::FactsCollection;
use crate::text::{tokenize, TokenId, Vocabulary, EOS};

/// A conversation: the history so far, the reply, and optionally the entity
/// it is about.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    /// Context turns, oldest first.
    pub turns: Vec<String>,
    pub response: String,
    pub entity: Option<String>,
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum SourceField {
    One(String),
    Turns(Vec<String>),
}

#[derive(Deserialize, Serialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    source: SourceField,
    response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entity: Option<String>,
}

impl Conversation {
    pub fn new(id: impl Into<String>, source: impl Into<String>, response: impl Into<String>, entity: Option<&str>) -> Self {
        Self {
            id: id.into(),
            turns: vec![source.into()],
            response: response.into(),
            entity: entity.map(String::from),
        }
    }

    /// Tokens of each context turn.
    pub fn history_tokens(&self) -> Vec<Vec<String>> {
        self.turns.iter().map(|t| tokenize(t)).collect()
    }
}

/// Train, dev and test conversations of one dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Conversation>,
    pub dev: Vec<Conversation>,
    pub test: Vec<Conversation>,
}

impl Split {
    pub fn parts(&self) -> [(&'static str, &[Conversation]); 3] {
        [("train", &self.train), ("dev", &self.dev), ("test", &self.test)]
    }
}

/// A line of a conversations file that could not be used.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

/// Parse conversations, one JSON object per line:
/// `{"id"?, "source": string | [string], "response", "entity"?}`.
/// Lines without an id get their 1-based line number. Malformed lines are
/// returned separately rather than failing the whole file.
pub fn read_conversations(r: impl BufRead) -> Result<(Vec<Conversation>, Vec<SkippedLine>)> {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                skipped.push(SkippedLine {
                    line: i + 1,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let turns = match rec.source {
            SourceField::One(s) => vec![s],
            SourceField::Turns(t) => t,
        };
        if turns.iter().all(|t| tokenize(t).is_empty()) || tokenize(&rec.response).is_empty() {
            skipped.push(SkippedLine {
                line: i + 1,
                reason: "empty source or response".into(),
            });
            continue;
        }
        out.push(Conversation {
            id: rec.id.unwrap_or_else(|| (i + 1).to_string()),
            turns,
            response: rec.response,
            entity: rec.entity,
        });
    }
    Ok((out, skipped))
}

pub fn load_conversations(path: impl AsRef<Path>) -> Result<(Vec<Conversation>, Vec<SkippedLine>)> {
    read_conversations(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn write_conversations(mut w: impl Write, convs: &[Conversation]) -> Result<()> {
    for c in convs {
        let rec = Record {
            id: Some(c.id.clone()),
            source: if c.turns.len() == 1 {
                SourceField::One(c.turns[0].clone())
            } else {
                SourceField::Turns(c.turns.clone())
            },
            response: c.response.clone(),
            entity: c.entity.clone(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_conversations(path: impl AsRef<Path>, convs: &[Conversation]) -> Result<()> {
    write_conversations(std::io::BufWriter::new(std::fs::File::create(path)?), convs)
}

/// Token ids of a history: the turns joined by EOS.
pub fn encode_history<S: AsRef<str>>(vocab: &Vocabulary, turns: &[Vec<S>]) -> Vec<TokenId> {
    let mut ids = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if i > 0 {
            ids.push(EOS);
        }
        ids.extend(vocab.encode(t));
    }
    ids
}

/// A conversation as token ids, with its retrieved facts.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub source: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub facts: Vec<Vec<TokenId>>,
}

/// Encode and retrieve up to `k` facts for every conversation.
pub fn prepare(convs: &[Conversation], facts: &FactsCollection, vocab: &Vocabulary, k: usize) -> Result<Vec<Prepared>> {
    convs
        .iter()
        .map(|c| {
            let history = c.history_tokens();
            let source = encode_history(vocab, &history);
            let response = vocab.encode_text(&c.response);
            if source.is_empty() || response.is_empty() {
                return Err(Error::InvalidArgument(format!("conversation {} is empty", c.id)));
            }
            let (_, top) = facts.facts_for_entity(&history, c.entity.as_deref(), k);
            Ok(Prepared {
                id: c.id.clone(),
                source,
                response,
                facts: top.iter().map(|f| vocab.encode(&f.tokens)).collect(),
            })
        })
        .collect()
}
