//! Labeled `label<TAB>text` files and deterministic splits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LineError, Result};
use crate::rng::Rng;

use super::text::{tokenize, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub token_ids: Vec<usize>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl LabeledSequence {
    pub fn new(token_ids: Vec<usize>, label: usize) -> Self {
        Self {
            token_ids,
            label,
            raw_text: None,
        }
    }
}

/// A parsed line before vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextExample {
    pub label: usize,
    pub text: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncateSide {
    /// Drop tokens from the start, keeping the end.
    Left,
    /// Drop tokens from the end.
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub max_tokens: usize,
    pub side: TruncateSide,
}

impl Truncation {
    pub fn apply<T>(&self, tokens: &mut Vec<T>) {
        if tokens.len() <= self.max_tokens {
            return;
        }
        match self.side {
            TruncateSide::Right => tokens.truncate(self.max_tokens),
            TruncateSide::Left => {
                tokens.drain(..tokens.len() - self.max_tokens);
            }
        }
    }
}

fn parse_line(line: &str, num_classes: usize) -> std::result::Result<TextExample, String> {
    let (label, text) = line.split_once('\t').ok_or("missing tab separator")?;
    let label: usize = label
        .trim()
        .parse()
        .map_err(|_| format!("label {label:?} is not a class index"))?;
    if label >= num_classes {
        return Err(format!("label {label} out of range for {num_classes} classes"));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err("text has no tokens".into());
    }
    Ok(TextExample {
        label,
        text: text.to_string(),
        tokens,
    })
}

/// Parses every line and reports all malformed ones together. Blank lines
/// are skipped.
pub fn load_dataset(path: &Path, num_classes: usize) -> Result<Vec<TextExample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    let mut errors = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, num_classes) {
            Ok(ex) => examples.push(ex),
            Err(message) => errors.push(LineError { line: n + 1, message }),
        }
    }
    if errors.is_empty() {
        Ok(examples)
    } else {
        Err(Error::Format {
            path: path.to_path_buf(),
            errors,
        })
    }
}

/// Maps examples to ids, optionally truncating.
pub fn encode(examples: &[TextExample], vocab: &Vocabulary, truncation: Option<Truncation>) -> Vec<LabeledSequence> {
    examples
        .iter()
        .map(|ex| {
            let mut ids = vocab.encode(&ex.tokens);
            if let Some(t) = truncation {
                t.apply(&mut ids);
            }
            LabeledSequence {
                token_ids: ids,
                label: ex.label,
                raw_text: Some(ex.text.clone()),
            }
        })
        .collect()
}

/// Writes `label<TAB>text` lines, rendering ids through `vocab`.
pub fn write_dataset(path: &Path, data: &[LabeledSequence], vocab: &Vocabulary) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in data {
        let text: Vec<&str> = ex
            .token_ids
            .iter()
            .map(|&id| vocab.token(id).ok_or(Error::Vocabulary { id, vocab_size: vocab.len() }))
            .collect::<Result<_>>()?;
        writeln!(w, "{}\t{}", ex.label, text.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Seeded shuffle, then the first `train_count` go to training.
pub fn split_dataset<T: Clone>(data: &[T], train_count: usize, valid_count: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if train_count + valid_count != data.len() {
        return Err(Error::Protocol(format!(
            "split sizes {train_count} + {valid_count} do not add up to {} examples",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    Rng::new(seed, 0x5_911).shuffle(&mut order);
    let pick = |ids: &[usize]| ids.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..train_count]), pick(&order[train_count..])))
}

/// Number of classes implied by the largest label.
pub fn class_count(data: &[LabeledSequence]) -> usize {
    data.iter().map(|e| e.label + 1).max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_single_line() {
        let f = file("3\tgreat fun\n");
        let d = load_dataset(f.path(), 5).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].label, 3);
        assert_eq!(d[0].tokens, ["great", "fun"]);
    }

    #[test]
    fn reports_every_bad_line() {
        let f = file("7\tx\n1\tok\nnotab\n2\t  \n");
        match load_dataset(f.path(), 5) {
            Err(Error::Format { errors, .. }) => {
                assert_eq!(errors.iter().map(|e| e.line).collect::<Vec<_>>(), vec![1, 3, 4]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_sides() {
        let mut v = vec![1, 2, 3, 4, 5];
        Truncation { max_tokens: 3, side: TruncateSide::Left }.apply(&mut v);
        assert_eq!(v, [3, 4, 5]);
        let mut v = vec![1, 2, 3, 4, 5];
        Truncation { max_tokens: 3, side: TruncateSide::Right }.apply(&mut v);
        assert_eq!(v, [1, 2, 3]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let data: Vec<usize> = (0..25_000).collect();
        let (a, b) = split_dataset(&data, 22_500, 2_500, 9).unwrap();
        assert_eq!((a.len(), b.len()), (22_500, 2_500));
        let (a2, b2) = split_dataset(&data, 22_500, 2_500, 9).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, data);
        assert!(split_dataset(&data, 10, 10, 0).is_err());
    }
}
