//! Tokenization and the shared vocabulary.
//!
//! A single normalization is used by every component (indexing, training,
//! metrics): lowercase, split on whitespace, split punctuation into separate
//! tokens, keep `@handle` and `#hashtag` whole.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const BOS: TokenId = 2;
pub const EOS: TokenId = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Default number of non-reserved types kept.
pub const DEFAULT_CAPACITY: usize = 50_000;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut cur = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let next_is_word = chars.get(i + 1).is_some_and(|&n| is_word_char(n));
            if is_word_char(c) {
                cur.push(c);
            } else if (c == '@' || c == '#') && cur.is_empty() && next_is_word {
                cur.push(c);
            } else if c == '\'' && !cur.is_empty() && next_is_word {
                cur.push(c);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Token ↔ id bijection. Ids `0..4` are the reserved tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Most frequent `capacity` types of the given token streams; ties go to
    /// the lexicographically smaller token.
    pub fn build<'a, I, S>(streams: I, capacity: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for stream in streams {
            for tok in stream {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(capacity);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Vocabulary from non-reserved tokens in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut ids = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens: all, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::IdOutOfRange {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(str::to_string)).collect()
    }

    /// Tokenize and encode in one go.
    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        self.encode(&tokenize(text))
    }

    /// Surface text of a response: tokens joined by single spaces, with
    /// reserved markers dropped.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.token(i))
            .collect::<Result<_>>()?;
        Ok(words.join(" "))
    }

    /// One token per line; line `i` (0-based) holds id `i`, so the reserved
    /// tokens occupy the first four lines.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        if lines.len() < RESERVED.len() {
            return Err(Error::Malformed {
                what: "vocabulary",
                line: lines.len() + 1,
                detail: "missing reserved tokens".into(),
            });
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if lines[i] != *r {
                return Err(Error::Malformed {
                    what: "vocabulary",
                    line: i + 1,
                    detail: format!("expected {r:?}, found {:?}", lines[i]),
                });
            }
        }
        Self::from_tokens(lines.into_iter().skip(RESERVED.len()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// SHA-256 of the vocabulary file contents, hex encoded.
    pub fn hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        hex_digest(&buf)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
