//! Monte Carlo dropout inference: sampling, aggregation, and the
//! accuracy-versus-sample-count curve.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::LabeledSequence;
use crate::error::{Error, Result};
use crate::model::{Affine, Classifier, Mode};
use crate::rng::{derive_stream, Rng};
use crate::tensor::{argmax, Tensor};

const TAG_EXAMPLE: u64 = 0x6d63_6578;
const TAG_RESAMPLE: u64 = 0x6d63_7273;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationStrategy {
    /// Average the vectors entering the projection, then project.
    PreProjectionMean,
    LogitMean,
    ProbMean,
    #[default]
    MajorityVote,
}

impl AggregationStrategy {
    pub const ALL: [AggregationStrategy; 4] = [
        Self::PreProjectionMean,
        Self::LogitMean,
        Self::ProbMean,
        Self::MajorityVote,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::PreProjectionMean => "pre-projection-mean",
            Self::LogitMean => "logit-mean",
            Self::ProbMean => "prob-mean",
            Self::MajorityVote => "majority-vote",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl std::fmt::Display for AggregationStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One stochastic forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct McSample {
    pub pre_projection: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

/// The `k` samples drawn for a single example.
#[derive(Debug, Clone, PartialEq)]
pub struct McSampleSet {
    pub samples: Vec<McSample>,
}

impl McSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draws `k` dropout samples; sample `i` uses stream `(base_seed, i)`.
pub fn draw_samples(model: &Classifier, tokens: &[usize], k: usize, base_seed: u64) -> Result<McSampleSet> {
    if k == 0 {
        return Err(Error::Protocol("k must be at least 1".into()));
    }
    let samples = (0..k as u64)
        .into_par_iter()
        .map(|i| {
            let out = model.forward(tokens, Mode::McSample, &mut Rng::new(base_seed, i))?;
            Ok(McSample {
                pre_projection: out.pre_projection,
                logits: out.logits,
                probs: out.probs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McSampleSet { samples })
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a Tensor>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for v in vectors {
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, x) in acc.iter_mut().zip(v.data()) {
            *a += x;
        }
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// Combines the samples at `indices` into one class prediction.
///
/// Majority-vote ties go to the tied class with the largest summed
/// probability, then to the lowest class index.
pub fn aggregate(set: &McSampleSet, indices: &[usize], strategy: AggregationStrategy, projection: &Affine) -> Result<usize> {
    if indices.is_empty() {
        return Err(Error::Protocol("cannot aggregate an empty sample subset".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= set.len()) {
        return Err(Error::Index {
            index: bad,
            len: set.len(),
        });
    }
    let picked = || indices.iter().map(|&i| &set.samples[i]);
    let class = match strategy {
        AggregationStrategy::PreProjectionMean => {
            let mean = Tensor::vector(mean_of(picked().map(|s| &s.pre_projection)));
            let logits = mean.matmul(&projection.w)?.add(&projection.b)?;
            argmax(logits.data())
        }
        AggregationStrategy::LogitMean => argmax(&mean_of(picked().map(|s| &s.logits))),
        AggregationStrategy::ProbMean => argmax(&mean_of(picked().map(|s| &s.probs))),
        AggregationStrategy::MajorityVote => {
            let classes = set.samples[indices[0]].probs.len();
            let mut votes = vec![0usize; classes];
            let mut mass = vec![0.0; classes];
            for s in picked() {
                votes[argmax(s.probs.data())] += 1;
                for (m, p) in mass.iter_mut().zip(s.probs.data()) {
                    *m += p;
                }
            }
            let top = *votes.iter().max().expect("at least one class");
            let mut best: Option<usize> = None;
            for c in (0..classes).filter(|&c| votes[c] == top) {
                // Strict comparison keeps the lowest index on exact ties.
                if best.is_none_or(|b| mass[c] > mass[b]) {
                    best = Some(c);
                }
            }
            best.expect("some class has the top vote")
        }
    };
    Ok(class)
}

/// Per-example seed for the sample streams of `example`.
pub fn example_seed(seed: u64, example: usize) -> u64 {
    derive_stream(seed, TAG_EXAMPLE, example as u64)
}

/// Accuracy of `k`-sample MC inference over `data`.
pub fn mc_accuracy(
    model: &Classifier,
    data: &[LabeledSequence],
    k: usize,
    strategy: AggregationStrategy,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Protocol("empty dataset".into()));
    }
    let all: Vec<usize> = (0..k).collect();
    let correct = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let set = draw_samples(model, &ex.token_ids, k, example_seed(seed, i))?;
            Ok((aggregate(&set, &all, strategy, &model.params.projection)? == ex.label) as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / data.len() as f64)
}

/// Accuracy with all-ones dropout masks.
pub fn standard_accuracy(model: &Classifier, data: &[LabeledSequence]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Protocol("empty dataset".into()));
    }
    let correct = data
        .par_iter()
        .map(|ex| Ok((model.predict(&ex.token_ids)? == ex.label) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRunSpec {
    pub k: usize,
    pub p_values: Vec<usize>,
    /// Resamples per subset size.
    pub m: usize,
    pub strategy: AggregationStrategy,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for McRunSpec {
    fn default() -> Self {
        Self {
            k: 400,
            p_values: p_range(2, 200, 2),
            m: 20,
            strategy: AggregationStrategy::MajorityVote,
            confidence: 0.90,
            seed: 0,
        }
    }
}

/// `start, start + step, ...` up to and including `max`.
pub fn p_range(start: usize, max: usize, step: usize) -> Vec<usize> {
    (start..=max).step_by(step.max(1)).collect()
}

impl McRunSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.p_values.is_empty() {
            return Err(Error::config("p_values", "must not be empty"));
        }
        if let Some(&p) = self.p_values.iter().find(|&&p| p == 0 || p > self.k) {
            return Err(Error::Protocol(format!("subset size {p} must lie in 1..={}", self.k)));
        }
        if self.m < 2 {
            return Err(Error::config("m", "at least 2 resamples are needed for an interval"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::config("confidence", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    /// Two-sided normal quantile for the configured confidence.
    pub fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(0.5 + self.confidence / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub p: usize,
    pub mean_acc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Sample variance of the `m` resample accuracies.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCurve {
    pub points: Vec<CurvePoint>,
    pub baseline_acc: f64,
    pub strategy: AggregationStrategy,
    pub k: usize,
    pub m: usize,
}

/// Mean and sample variance of `counts / total`, computed on the integer
/// counts so identical resamples give exactly zero variance.
fn count_stats(counts: &[usize], total: usize) -> (f64, f64) {
    let m = counts.len() as u128;
    let sum: u128 = counts.iter().map(|&c| c as u128).sum();
    let sq: u128 = counts.iter().map(|&c| (c as u128) * (c as u128)).sum();
    let n = total as f64;
    let mean = sum as f64 / (m as f64 * n);
    let var = if m > 1 {
        (m * sq - sum * sum) as f64 / ((m * (m - 1)) as f64 * n * n)
    } else {
        0.0
    };
    (mean, var)
}

/// Draws `k` samples per example once, then for every `p` scores `m`
/// independent without-replacement subsets of size `p`.
pub fn mc_curve(model: &Classifier, data: &[LabeledSequence], spec: &McRunSpec) -> Result<McCurve> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::Protocol("empty dataset".into()));
    }
    let sets = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| draw_samples(model, &ex.token_ids, spec.k, example_seed(spec.seed, i)))
        .collect::<Result<Vec<_>>>()?;
    curve_from_samples(model, data, &sets, spec)
}

/// The curve over precomputed sample sets (one per example, each of size
/// `spec.k`).
pub fn curve_from_samples(
    model: &Classifier,
    data: &[LabeledSequence],
    sets: &[McSampleSet],
    spec: &McRunSpec,
) -> Result<McCurve> {
    spec.validate()?;
    if sets.len() != data.len() || sets.iter().any(|s| s.len() != spec.k) {
        return Err(Error::Protocol("sample sets do not match the dataset and k".into()));
    }
    let baseline_acc = standard_accuracy(model, data)?;
    let z = spec.z();
    let points = spec
        .p_values
        .par_iter()
        .enumerate()
        .map(|(pi, &p)| {
            let mut rng = Rng::new(spec.seed, derive_stream(spec.seed, TAG_RESAMPLE, pi as u64));
            let mut counts = Vec::with_capacity(spec.m);
            for _ in 0..spec.m {
                let mut correct = 0;
                for (set, ex) in sets.iter().zip(data) {
                    let subset = rng.sample_indices(spec.k, p);
                    if aggregate(set, &subset, spec.strategy, &model.params.projection)? == ex.label {
                        correct += 1;
                    }
                }
                counts.push(correct);
            }
            let (mean_acc, variance) = count_stats(&counts, data.len());
            let half = z * variance.sqrt();
            Ok(CurvePoint {
                p,
                mean_acc,
                ci_low: mean_acc - half,
                ci_high: mean_acc + half,
                variance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(McCurve {
        points,
        baseline_acc,
        strategy: spec.strategy,
        k: spec.k,
        m: spec.m,
    })
}

#[derive(Serialize)]
struct CurveRow {
    p: usize,
    mean_acc: f64,
    ci_low: f64,
    ci_high: f64,
    baseline_acc: f64,
}

impl McCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for pt in &self.points {
            w.serialize(CurveRow {
                p: pt.p,
                mean_acc: pt.mean_acc,
                ci_low: pt.ci_low,
                ci_high: pt.ci_high,
                baseline_acc: self.baseline_acc,
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
