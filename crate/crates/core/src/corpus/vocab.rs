use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::types::Dialogue;
use crate::error::{Error, Result};
use crate::numerics::{glorot_uniform, Tensor};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Token ↔ index map with padding at 0 and unknown at 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its index-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD_TOKEN || tokens[UNK_INDEX] != UNK_TOKEN {
            return Err(Error::data("vocabulary must start with <pad>, <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::data(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

/// Indexes tokens of the training split with frequency ≥ `min_freq`, in
/// order of first occurrence.
pub fn build_vocab(train: &[Dialogue], min_freq: usize) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(Error::data("cannot build a vocabulary from an empty training set"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order = Vec::new();
    for d in train {
        for u in &d.utterances {
            for t in &u.tokens {
                let c = counts.entry(t.as_str()).or_insert(0);
                if *c == 0 {
                    order.push(t.as_str());
                }
                *c += 1;
            }
        }
    }
    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(
        order
            .into_iter()
            .filter(|t| counts[t] >= min_freq.max(1) && *t != PAD_TOKEN && *t != UNK_TOKEN)
            .map(str::to_owned),
    );
    Vocabulary::from_tokens(tokens)
}

/// `|V| x n` embedding matrix whose padding row is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    /// Fraction of regular (non-reserved) vocabulary tokens found in the source file.
    pub coverage: f64,
}

/// Glorot-initialized table with a zero padding row.
pub fn random_embeddings<R: Rng + ?Sized>(vocab_size: usize, dim: usize, rng: &mut R) -> Tensor {
    let mut m = glorot_uniform(vocab_size, dim, rng);
    m.row_mut(PAD_INDEX).iter_mut().for_each(|v| *v = 0.0);
    m
}

/// Loads word2vec text-format vectors for the tokens of `vocab`.
pub fn load_embeddings<R: Rng + ?Sized>(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    read_embeddings(reader, path, vocab, dim, rng)
}

pub fn read_embeddings<R: Rng + ?Sized>(
    reader: impl BufRead,
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    let mut matrix = random_embeddings(vocab.len(), dim, rng);
    let mut found = vec![false; vocab.len()];
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = reader.lines().enumerate();
    let mut header_seen = false;
    for (i, line) in &mut lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !header_seen {
            header_seen = true;
            if fields.len() != 2 {
                return Err(parse_err(i + 1, "expected header `count dim`".into()));
            }
            let file_dim: usize = fields[1]
                .parse()
                .map_err(|_| parse_err(i + 1, format!("bad dimension `{}`", fields[1])))?;
            if file_dim != dim {
                return Err(Error::data(format!(
                    "{}: embedding dimension {file_dim} does not match configured {dim}",
                    path.display()
                )));
            }
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(parse_err(
                i + 1,
                format!("expected token plus {dim} values, got {} fields", fields.len()),
            ));
        }
        let idx = vocab.lookup(fields[0]);
        if idx == UNK_INDEX && fields[0] != UNK_TOKEN {
            continue;
        }
        if idx == PAD_INDEX {
            continue;
        }
        let row = matrix.row_mut(idx);
        for (slot, f) in row.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse()
                .map_err(|_| parse_err(i + 1, format!("bad value `{f}`")))?;
        }
        found[idx] = true;
    }
    let regular = vocab.len().saturating_sub(2);
    let covered = found.iter().skip(2).filter(|f| **f).count();
    Ok(EmbeddingTable {
        matrix,
        coverage: if regular == 0 {
            0.0
        } else {
            covered as f64 / regular as f64
        },
    })
}
