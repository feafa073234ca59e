//! Pretrained word vectors in the GloVe text format.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, LineError, Result};
use crate::model::INIT_BOUND;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::text::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// `[vocab × dim]`, aligned with the vocabulary ids.
    pub matrix: Tensor,
    pub trainable: bool,
    /// Ordinary vocabulary entries that were found in the file.
    pub coverage: usize,
}

impl EmbeddingTable {
    /// Uniform `[-0.08, 0.08]` rows with zero special rows.
    pub fn random(vocab: &Vocabulary, dim: usize, rng: &mut Rng) -> Self {
        let mut matrix = rng.uniform_tensor(&[vocab.len(), dim], INIT_BOUND);
        matrix.data_mut()[..2 * dim].fill(0.0);
        Self {
            dim,
            matrix,
            trainable: true,
            coverage: 0,
        }
    }
}

/// Reads `token v1 v2 ... v_dim` lines. Every line with the wrong number of
/// values or an unparsable value is reported. Vocabulary entries absent from
/// the file keep their random initialization.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, expected_dim: usize, rng: &mut Rng) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::random(vocab, expected_dim, rng);
    let mut seen = vec![false; vocab.len()];
    let mut errors = Vec::new();

    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = n + 1;
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if values.len() != expected_dim {
            errors.push(LineError {
                line: lineno,
                message: format!("expected {expected_dim} values, found {}", values.len()),
            });
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = values.iter().map(|v| v.parse::<f64>()).collect();
        let row = match parsed {
            Ok(r) if r.iter().all(|v| v.is_finite()) => r,
            _ => {
                errors.push(LineError {
                    line: lineno,
                    message: "unparsable or non-finite value".into(),
                });
                continue;
            }
        };
        let id = vocab.id(token);
        if id < 2 || !vocab.contains(token) || seen[id] {
            continue;
        }
        seen[id] = true;
        table.matrix.data_mut()[id * expected_dim..(id + 1) * expected_dim].copy_from_slice(&row);
    }
    if !errors.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            errors,
        });
    }
    table.coverage = seen.iter().filter(|&&s| s).count();
    Ok(table)
}
