//! Synthetic classification tasks with known answers.
//!
//! Token ids `2..2 + C` are class markers; ids from `2 + C` up to the
//! vocabulary size are filler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::dataset::LabeledSequence;
use super::text::Vocabulary;

pub const FIRST_MARKER: usize = 2;
/// Window at the start of the sequence where the long-range flag may sit.
pub const FLAG_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticTask {
    /// The first token is the class marker; the rest is filler.
    FirstTokenClass,
    /// The label is the marker with a strict plurality.
    MajorityToken,
    /// One marker somewhere in the first positions, filler elsewhere.
    LongRangeFlag,
}

impl SyntheticTask {
    pub const ALL: [SyntheticTask; 3] = [Self::FirstTokenClass, Self::MajorityToken, Self::LongRangeFlag];

    pub fn name(self) -> &'static str {
        match self {
            Self::FirstTokenClass => "first_token_class",
            Self::MajorityToken => "majority_token",
            Self::LongRangeFlag => "long_range_flag",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s || t.name().replace('_', "-") == s)
    }
}

/// Vocabulary whose token for id `i >= 2` is `t{i}`.
pub fn synthetic_vocabulary(vocab_size: usize) -> Vocabulary {
    Vocabulary::from((2..vocab_size).map(|i| format!("t{i}")).collect::<Vec<_>>())
}

/// Class of the strict-plurality marker, if any.
pub fn majority_label(tokens: &[usize], num_classes: usize) -> Option<usize> {
    let mut counts = vec![0usize; num_classes];
    for &t in tokens {
        if (FIRST_MARKER..FIRST_MARKER + num_classes).contains(&t) {
            counts[t - FIRST_MARKER] += 1;
        }
    }
    let best = *counts.iter().max()?;
    let mut winners = counts.iter().enumerate().filter(|&(_, &c)| c == best);
    let (class, _) = winners.next()?;
    (best > 0 && winners.next().is_none()).then_some(class)
}

pub fn gen_synthetic(
    task: SyntheticTask,
    n_examples: usize,
    seq_len: usize,
    vocab_size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<LabeledSequence>> {
    if seq_len < 1 {
        return Err(Error::config("seq_len", "must be at least 1"));
    }
    if num_classes < 2 {
        return Err(Error::config("num_classes", "must be at least 2"));
    }
    let filler_start = FIRST_MARKER + num_classes;
    if vocab_size <= filler_start {
        return Err(Error::config(
            "vocab_size",
            format!("needs more than {filler_start} ids to hold markers and filler"),
        ));
    }
    let mut rng = Rng::new(seed, 0x5e_4e);
    // Cycle the labels then shuffle, so classes are balanced to within one.
    let mut labels: Vec<usize> = (0..n_examples).map(|i| i % num_classes).collect();
    rng.shuffle(&mut labels);

    let filler = |rng: &mut Rng| filler_start + rng.below(vocab_size - filler_start);
    let marker = |class: usize| FIRST_MARKER + class;

    let data = labels
        .into_iter()
        .map(|label| {
            let mut tokens: Vec<usize> = (0..seq_len).map(|_| filler(&mut rng)).collect();
            match task {
                SyntheticTask::FirstTokenClass => tokens[0] = marker(label),
                SyntheticTask::LongRangeFlag => {
                    let pos = rng.below(FLAG_WINDOW.min(seq_len));
                    tokens[pos] = marker(label);
                }
                SyntheticTask::MajorityToken => {
                    for t in tokens.iter_mut() {
                        if rng.uniform() < 0.6 {
                            *t = marker(rng.below(num_classes));
                        }
                    }
                    // Promote random non-label positions until the label has a
                    // strict plurality.
                    while majority_label(&tokens, num_classes) != Some(label) {
                        let pos = rng.below(seq_len);
                        tokens[pos] = marker(label);
                    }
                }
            }
            LabeledSequence::new(tokens, label)
        })
        .collect();
    Ok(data)
}
