//! Text ingestion and lane batching for the character-level language
//! modelling task.
//!
//! Text is treated as raw bytes (non-ASCII bytes are just rare symbols).
//! The vocabulary is built from the training split only; bytes unseen in
//! training map to a reserved unknown id in the other splits.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynsys::{ObservedStep, StepValue};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus file {0} is empty")]
    EmptyFile(String),
    #[error("vocabulary has a single symbol; a character model needs at least two")]
    DegenerateVocabulary,
    #[error("split ratios must be positive")]
    BadRatios,
    #[error("cannot form {lanes} lanes from {train_len} training characters")]
    TooManyLanes { lanes: usize, train_len: usize },
}

pub type TokenId = usize;

/// An ingested corpus: byte vocabulary, encoded train/valid/test splits,
/// and the source file hashes for provenance.
#[derive(Debug, Clone)]
pub struct CharCorpus {
    /// Sorted distinct byte values of the training split.
    vocabulary: Vec<u8>,
    /// Decoding target for the unknown id: the smallest byte absent from
    /// the vocabulary (None when the vocabulary has all 256 bytes, in
    /// which case no byte is ever unknown).
    unk_byte: Option<u8>,
    pub train: Vec<TokenId>,
    pub valid: Vec<TokenId>,
    pub test: Vec<TokenId>,
    /// SHA-256 hex digests of the source files, in ingestion order.
    pub source_hashes: Vec<String>,
}

/// B contiguous, non-overlapping, order-preserving chunks of the training
/// split; the tail that does not fill a full lane is dropped.
#[derive(Debug, Clone)]
pub struct BatchedStream {
    pub lanes: Vec<Vec<ObservedStep>>,
}

impl BatchedStream {
    pub fn lane_count(&self) -> usize {
        self.lanes.len()
    }

    pub fn lane_len(&self) -> usize {
        self.lanes.first().map(|l| l.len()).unwrap_or(0)
    }
}

fn read_bytes(path: &Path, lowercase: bool) -> Result<(Vec<u8>, String), CorpusError> {
    let mut data = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if data.is_empty() {
        return Err(CorpusError::EmptyFile(path.display().to_string()));
    }
    let hash = hex_digest(&data);
    if lowercase {
        for b in data.iter_mut() {
            *b = b.to_ascii_lowercase();
        }
    }
    Ok((data, hash))
}

fn hex_digest(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl CharCorpus {
    /// Ingests one file and splits it into train/valid/test by the given
    /// ratios (character counts proportional to `ratios`, in order).
    pub fn ingest(
        path: &Path,
        lowercase: bool,
        ratios: (f64, f64, f64),
    ) -> Result<Self, CorpusError> {
        let (data, hash) = read_bytes(path, lowercase)?;
        let (r_train, r_valid, r_test) = ratios;
        if r_train <= 0.0 || r_valid < 0.0 || r_test < 0.0 {
            return Err(CorpusError::BadRatios);
        }
        let total = r_train + r_valid + r_test;
        let n = data.len();
        let n_train = ((r_train / total) * n as f64).round() as usize;
        let n_valid = ((r_valid / total) * n as f64).round() as usize;
        let n_train = n_train.clamp(1, n);
        let n_valid = n_valid.min(n - n_train);
        let train_bytes = &data[..n_train];
        let valid_bytes = &data[n_train..n_train + n_valid];
        let test_bytes = &data[n_train + n_valid..];
        Self::from_split_bytes(train_bytes, valid_bytes, test_bytes, vec![hash])
    }

    /// Ingests three explicit split files.
    pub fn ingest_splits(
        train_path: &Path,
        valid_path: &Path,
        test_path: &Path,
        lowercase: bool,
    ) -> Result<Self, CorpusError> {
        let (train, h1) = read_bytes(train_path, lowercase)?;
        let (valid, h2) = read_bytes(valid_path, lowercase)?;
        let (test, h3) = read_bytes(test_path, lowercase)?;
        Self::from_split_bytes(&train, &valid, &test, vec![h1, h2, h3])
    }

    fn from_split_bytes(
        train: &[u8],
        valid: &[u8],
        test: &[u8],
        source_hashes: Vec<String>,
    ) -> Result<Self, CorpusError> {
        let distinct: BTreeSet<u8> = train.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(CorpusError::DegenerateVocabulary);
        }
        let vocabulary: Vec<u8> = distinct.into_iter().collect();
        let unk_byte = (0..=255u8).find(|b| vocabulary.binary_search(b).is_err());
        let corpus = CharCorpus {
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
            vocabulary,
            unk_byte,
            source_hashes,
        };
        Ok(CharCorpus {
            train: corpus.encode(train),
            valid: corpus.encode(valid),
            test: corpus.encode(test),
            ..corpus
        })
    }

    /// Number of token ids, including the reserved unknown id.
    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len() + usize::from(self.unk_byte.is_some())
    }

    /// The unknown id, when the vocabulary does not already cover every
    /// byte value.
    pub fn unk_id(&self) -> Option<TokenId> {
        self.unk_byte.map(|_| self.vocabulary.len())
    }

    /// Encodes bytes to token ids; unseen bytes map to the unknown id.
    pub fn encode(&self, bytes: &[u8]) -> Vec<TokenId> {
        bytes
            .iter()
            .map(|b| match self.vocabulary.binary_search(b) {
                Ok(i) => i,
                Err(_) => self.unk_id().expect("unknown byte with full vocabulary"),
            })
            .collect()
    }

    /// Decodes token ids back to bytes. The unknown id decodes to a byte
    /// outside the vocabulary, so decode-then-encode is the identity on
    /// every stored split.
    pub fn decode(&self, tokens: &[TokenId]) -> Vec<u8> {
        tokens
            .iter()
            .map(|&t| {
                if t < self.vocabulary.len() {
                    self.vocabulary[t]
                } else {
                    self.unk_byte.expect("unknown id without an unknown byte")
                }
            })
            .collect()
    }

    /// Next-character prediction pairs: the target at position t is the
    /// token at t+1, with the final position dropped.
    pub fn lm_steps(tokens: &[TokenId]) -> Vec<ObservedStep> {
        tokens
            .windows(2)
            .map(|w| ObservedStep {
                input: StepValue::Token(w[0]),
                target: StepValue::Token(w[1]),
            })
            .collect()
    }

    /// Splits the training split into `lanes` contiguous equal-length
    /// chunks of next-character steps.
    pub fn make_lanes(&self, lanes: usize) -> Result<BatchedStream, CorpusError> {
        if lanes == 0 || self.train.len() / lanes < 2 {
            return Err(CorpusError::TooManyLanes {
                lanes,
                train_len: self.train.len(),
            });
        }
        let chunk = self.train.len() / lanes;
        let built: Vec<Vec<ObservedStep>> = (0..lanes)
            .map(|k| Self::lm_steps(&self.train[k * chunk..(k + 1) * chunk]))
            .collect();
        Ok(BatchedStream { lanes: built })
    }
}
