//! Multi-run experiment suites: the compounding feature ladder and the
//! equal-budget depth sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{EmbeddingTable, LabeledSequence};
use crate::error::{Error, Result};
use crate::mc::AggregationStrategy;
use crate::model::{count_parameters, Direction, ModelConfig, ResidualMode};
use crate::rng::derive_stream;

use super::trainer::{evaluate, train, EpochMetrics, Inference, TrainSpec, DEFAULT_MC_SAMPLES};

const TAG_RUN: u64 = 0x0072_756e;

/// Optimization settings shared by every run of a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    #[serde(default)]
    pub freeze_embeddings: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let s = TrainSpec::new(ModelConfig::baseline(1, 1, 1, 2), 1, 0);
        Self {
            epochs: 20,
            batch_size: s.batch_size,
            learning_rate: s.learning_rate,
            early_stop_patience: s.early_stop_patience,
            freeze_embeddings: false,
        }
    }
}

impl TrainSettings {
    pub fn to_spec(&self, model: ModelConfig, seed: u64) -> TrainSpec {
        TrainSpec {
            model,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
            early_stop_patience: self.early_stop_patience,
            freeze_embeddings: self.freeze_embeddings,
        }
    }
}

/// Seed of run `run` within a suite; shared across rungs so runs are paired.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    derive_stream(seed, TAG_RUN, run as u64)
}

/// Evaluation mode of a rung.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RungInference {
    Standard,
    Mc { k: usize, strategy: AggregationStrategy },
}

impl RungInference {
    fn with_seed(self, seed: u64) -> Inference {
        match self {
            RungInference::Standard => Inference::Standard,
            RungInference::Mc { k, strategy } => Inference::Mc { k, strategy, seed },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub name: String,
    pub config: ModelConfig,
    pub inference: RungInference,
}

/// Dataset-level choices the compounding ladder is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderBase {
    pub num_layers: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub small_hidden: usize,
    pub large_hidden: usize,
    pub keep_prob: f64,
    pub mc_samples: usize,
    pub pooling_dim: usize,
}

impl LadderBase {
    /// Fine-grained sentiment sizes: hidden 170 growing to 800, keep 0.5.
    pub fn sst() -> Self {
        Self {
            num_layers: 2,
            embed_dim: 300,
            num_classes: 5,
            small_hidden: 170,
            large_hidden: 800,
            keep_prob: super::trainer::SST_KEEP_PROB,
            mc_samples: DEFAULT_MC_SAMPLES,
            pooling_dim: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLadder {
    pub rungs: Vec<Rung>,
}

/// Top-level fields of a rung that differ from another rung.
fn changed_fields(a: &Rung, b: &Rung) -> Vec<String> {
    let flat = |r: &Rung| {
        let mut v = serde_json::to_value(&r.config).expect("config serializes");
        let map = v.as_object_mut().expect("config is an object");
        map.insert(
            "inference".into(),
            serde_json::to_value(r.inference).expect("inference serializes"),
        );
        map.clone()
    };
    let (fa, fb) = (flat(a), flat(b));
    let mut keys: Vec<&String> = fa.keys().chain(fb.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .cloned()
        .collect()
}

impl FeatureLadder {
    /// baseline, +forget_bias, +dropout, +larger_hidden, +shared_bidir,
    /// +mc_eval, +pooling, +res_v1, +res_v2.
    pub fn compounding(base: &LadderBase) -> Self {
        let mut config = ModelConfig {
            pooling_dim: base.pooling_dim,
            ..ModelConfig::baseline(base.num_layers, base.small_hidden, base.embed_dim, base.num_classes)
        };
        let mut inference = RungInference::Standard;
        let mut rungs = vec![Rung {
            name: "baseline".into(),
            config: config.clone(),
            inference,
        }];
        let mut push = |name: &str, config: &ModelConfig, inference: RungInference| {
            rungs.push(Rung {
                name: name.into(),
                config: config.clone(),
                inference,
            })
        };
        config.forget_bias = 1.0;
        push("+forget_bias", &config, inference);
        config.input_keep_prob = base.keep_prob;
        push("+dropout", &config, inference);
        config.hidden_size = base.large_hidden;
        push("+larger_hidden", &config, inference);
        config.direction = Direction::SharedBidirectional;
        push("+shared_bidir", &config, inference);
        inference = RungInference::Mc {
            k: base.mc_samples,
            strategy: AggregationStrategy::MajorityVote,
        };
        push("+mc_eval", &config, inference);
        config.pooling = true;
        push("+pooling", &config, inference);
        config.residual_mode = ResidualMode::VerticalOnly;
        push("+res_v1", &config, inference);
        config.residual_mode = ResidualMode::VerticalAndLateral;
        push("+res_v2", &config, inference);
        Self { rungs }
    }

    /// Every rung must be valid and change exactly one feature relative to
    /// its predecessor.
    pub fn check_structure(&self) -> Result<()> {
        if self.rungs.is_empty() {
            return Err(Error::config("ladder", "has no rungs"));
        }
        for r in &self.rungs {
            r.config
                .validate()
                .map_err(|e| Error::config("ladder", format!("rung {}: {e}", r.name)))?;
        }
        for pair in self.rungs.windows(2) {
            let changed = changed_fields(&pair[0], &pair[1]);
            if changed.len() != 1 {
                return Err(Error::config(
                    "ladder",
                    format!(
                        "rung {} changes {} features relative to {} (expected exactly one): [{}]",
                        pair[1].name,
                        changed.len(),
                        pair[0].name,
                        changed.join(", ")
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Box-plot statistics. Quartiles use linear interpolation between order
/// statistics; outliers lie beyond 1.5 IQR from the quartiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Protocol("no samples for statistics".into()));
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q1 = quantile(&s, 0.25);
        let q3 = quantile(&s, 0.75);
        let iqr = q3 - q1;
        Ok(Self {
            n: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            median: quantile(&s, 0.5),
            q1,
            q3,
            min: s[0],
            max: s[s.len() - 1],
            outliers: s
                .iter()
                .copied()
                .filter(|&v| v < q1 - 1.5 * iqr || v > q3 + 1.5 * iqr)
                .collect(),
        })
    }
}

/// One training run inside a suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Rung name or depth-cell label.
    pub group: String,
    pub run: usize,
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
    /// Validation accuracy of the best checkpoint under the group's inference.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungSummary {
    pub name: String,
    pub accuracies: Vec<f64>,
    pub stats: BoxStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub rungs: Vec<RungSummary>,
    pub runs: Vec<RunRecord>,
}

/// Shared inputs of a suite.
#[derive(Debug, Clone, Copy)]
pub struct SuiteData<'a> {
    pub train: &'a [LabeledSequence],
    pub valid: &'a [LabeledSequence],
    pub vocab_size: usize,
    pub embeddings: Option<&'a EmbeddingTable>,
}

fn one_run(
    data: SuiteData<'_>,
    settings: &TrainSettings,
    config: &ModelConfig,
    inference: RungInference,
    group: String,
    run: usize,
    seed: u64,
) -> Result<RunRecord> {
    let s = run_seed(seed, run);
    let ckpt = train(settings.to_spec(config.clone(), s), data.train, data.valid, data.vocab_size, data.embeddings)?;
    let accuracy = evaluate(&ckpt.best_model(), data.valid, inference.with_seed(s))?;
    Ok(RunRecord {
        group,
        run,
        seed: s,
        history: ckpt.history,
        accuracy,
    })
}

/// Trains every rung `n_runs` times. The structure is checked before any
/// training starts.
pub fn run_feature_ladder(
    ladder: &FeatureLadder,
    data: SuiteData<'_>,
    settings: &TrainSettings,
    n_runs: usize,
    seed: u64,
) -> Result<LadderReport> {
    ladder.check_structure()?;
    if n_runs < 1 {
        return Err(Error::config("n_runs", "must be at least 1"));
    }
    let jobs: Vec<(usize, usize)> = (0..ladder.rungs.len())
        .flat_map(|r| (0..n_runs).map(move |k| (r, k)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(r, k)| {
            let rung = &ladder.rungs[r];
            one_run(data, settings, &rung.config, rung.inference, rung.name.clone(), k, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let rungs = ladder
        .rungs
        .iter()
        .enumerate()
        .map(|(r, rung)| {
            let accuracies: Vec<f64> = runs[r * n_runs..(r + 1) * n_runs].iter().map(|x| x.accuracy).collect();
            Ok(RungSummary {
                name: rung.name.clone(),
                stats: BoxStats::from_samples(&accuracies)?,
                accuracies,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LadderReport { rungs, runs })
}

/// `(layers, hidden)` pairs for the 550k-parameter depth comparison.
pub const REFERENCE_DEPTH_LADDER: [(usize, usize); 5] = [(1, 250), (2, 170), (4, 120), (6, 100), (8, 85)];
pub const REFERENCE_BUDGET: u64 = 550_000;
/// Relative tolerance when matching a parameter budget.
pub const BUDGET_TOLERANCE: f64 = 0.02;

fn with_shape(template: &ModelConfig, layers: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        num_layers: layers,
        hidden_size: hidden,
        ..template.clone()
    }
}

/// Hidden size for `depth` layers under `budget`. The reference ladder is
/// used for the 550k budget with 300-wide embeddings and five classes;
/// otherwise the closest integer hidden size is searched for.
pub fn hidden_for_budget(template: &ModelConfig, budget: u64, depth: usize) -> Result<usize> {
    if depth < 1 {
        return Err(Error::config("depths", "every depth must be at least 1"));
    }
    let reference = budget == REFERENCE_BUDGET
        && template.embed_dim == 300
        && template.num_classes == 5
        && template.direction == Direction::Unidirectional
        && !template.pooling;
    if reference {
        if let Some(&(_, h)) = REFERENCE_DEPTH_LADDER.iter().find(|(d, _)| *d == depth) {
            return Ok(h);
        }
    }
    let count = |h: usize| count_parameters(&with_shape(template, depth, h));
    let mut below = None;
    let mut above = None;
    for h in 1..=100_000usize {
        let c = count(h);
        if c <= budget {
            below = Some((h, c));
        } else {
            above = Some((h, c));
            break;
        }
    }
    let best = [below, above]
        .into_iter()
        .flatten()
        .min_by_key(|&(_, c)| c.abs_diff(budget))
        .ok_or_else(|| Error::config("budget", "no hidden size was tried"))?;
    if best.1.abs_diff(budget) as f64 > BUDGET_TOLERANCE * budget as f64 {
        let fmt = |o: Option<(usize, u64)>| o.map_or("none".to_string(), |(h, c)| format!("hidden {h} -> {c}"));
        return Err(Error::config(
            "budget",
            format!(
                "no hidden size puts {depth} layer(s) within 2% of {budget} parameters; nearest: {} / {}",
                fmt(below),
                fmt(above)
            ),
        ));
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSuiteSpec {
    pub budget: u64,
    pub depths: Vec<usize>,
    pub modes: Vec<ResidualMode>,
    pub n_runs: usize,
    /// Everything except depth, width and residual mode.
    pub template: ModelConfig,
    pub settings: TrainSettings,
    pub seed: u64,
    pub confidence: f64,
}

impl DepthSuiteSpec {
    pub fn reference(template: ModelConfig, settings: TrainSettings, n_runs: usize, seed: u64) -> Self {
        Self {
            budget: REFERENCE_BUDGET,
            depths: REFERENCE_DEPTH_LADDER.iter().map(|&(d, _)| d).collect(),
            modes: ResidualMode::ALL.to_vec(),
            n_runs,
            template,
            settings,
            seed,
            confidence: 0.90,
        }
    }

    /// `(depth, hidden, mode)` for every cell, resolved before training.
    pub fn cells(&self) -> Result<Vec<(usize, usize, ResidualMode)>> {
        if self.depths.is_empty() || self.modes.is_empty() {
            return Err(Error::config("depths", "depth and mode lists must be nonempty"));
        }
        let mut out = Vec::new();
        for &d in &self.depths {
            let h = hidden_for_budget(&self.template, self.budget, d)?;
            for &m in &self.modes {
                out.push((d, h, m));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthCell {
    pub depth: usize,
    pub hidden: usize,
    pub mode: ResidualMode,
    pub param_count: u64,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub cells: Vec<DepthCell>,
    pub runs: Vec<RunRecord>,
}

/// Mean with a normal-approximation interval for the mean.
pub fn mean_interval(samples: &[f64], confidence: f64) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, mean, mean);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let z = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    let half = z * (var / n).sqrt();
    (mean, mean - half, mean + half)
}

pub fn depth_cell_label(depth: usize, hidden: usize, mode: ResidualMode) -> String {
    format!("L{depth}-H{hidden}-{}", mode.name())
}

pub fn run_depth_suite(spec: &DepthSuiteSpec, data: SuiteData<'_>) -> Result<DepthReport> {
    let cells = spec.cells()?;
    if spec.n_runs < 1 {
        return Err(Error::config("n_runs", "must be at least 1"));
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.n_runs).map(move |k| (c, k)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(c, k)| {
            let (d, h, mode) = cells[c];
            let config = ModelConfig {
                residual_mode: mode,
                ..with_shape(&spec.template, d, h)
            };
            one_run(
                data,
                &spec.settings,
                &config,
                RungInference::Standard,
                depth_cell_label(d, h, mode),
                k,
                spec.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cells = cells
        .iter()
        .enumerate()
        .map(|(c, &(depth, hidden, mode))| {
            let accuracies: Vec<f64> = runs[c * spec.n_runs..(c + 1) * spec.n_runs]
                .iter()
                .map(|r| r.accuracy)
                .collect();
            let (mean, ci_low, ci_high) = mean_interval(&accuracies, spec.confidence);
            DepthCell {
                depth,
                hidden,
                mode,
                param_count: count_parameters(&with_shape(&spec.template, depth, hidden)),
                accuracies,
                mean,
                ci_low,
                ci_high,
            }
        })
        .collect();
    Ok(DepthReport { cells, runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compounding_ladder_is_one_change_per_rung() {
        let ladder = FeatureLadder::compounding(&LadderBase::sst());
        assert_eq!(ladder.rungs.len(), 9);
        ladder.check_structure().unwrap();
        let names: Vec<&str> = ladder.rungs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "baseline",
                "+forget_bias",
                "+dropout",
                "+larger_hidden",
                "+shared_bidir",
                "+mc_eval",
                "+pooling",
                "+res_v1",
                "+res_v2"
            ]
        );
    }

    #[test]
    fn two_changes_rejected() {
        let mut ladder = FeatureLadder::compounding(&LadderBase::sst());
        ladder.rungs[2].config.hidden_size = 10;
        let err = ladder.check_structure().unwrap_err().to_string();
        assert!(err.contains("+dropout") && err.contains("hidden_size"), "{err}");
    }

    #[test]
    fn box_stats_small_cases() {
        let s = BoxStats::from_samples(&[0.4]).unwrap();
        assert_eq!((s.q1, s.median, s.q3, s.min, s.max), (0.4, 0.4, 0.4, 0.4, 0.4));
        let s = BoxStats::from_samples(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        assert_eq!(s.outliers, vec![100.0]);
        assert_eq!(s.mean, 22.0);
    }

    #[test]
    fn reference_hidden_sizes() {
        let t = ModelConfig::baseline(1, 1, 300, 5);
        for (d, h) in REFERENCE_DEPTH_LADDER {
            assert_eq!(hidden_for_budget(&t, REFERENCE_BUDGET, d).unwrap(), h);
        }
    }

    #[test]
    fn searched_hidden_within_budget() {
        let t = ModelConfig::baseline(1, 1, 50, 3);
        for d in 1..=4 {
            let h = hidden_for_budget(&t, 200_000, d).unwrap();
            let c = count_parameters(&with_shape(&t, d, h));
            assert!((c as f64 - 200_000.0).abs() <= 4_000.0, "depth {d}: {c}");
        }
    }

    #[test]
    fn unsatisfiable_budget_lists_neighbours() {
        let t = ModelConfig::baseline(1, 1, 300, 5);
        let err = hidden_for_budget(&t, 100, 3).unwrap_err().to_string();
        assert!(err.contains("nearest"), "{err}");
    }

    #[test]
    fn interval_collapses_for_one_run() {
        assert_eq!(mean_interval(&[0.7], 0.9), (0.7, 0.7, 0.7));
        let (m, lo, hi) = mean_interval(&[0.5, 0.7], 0.9);
        assert!((m - 0.6).abs() < 1e-12 && lo < m && hi > m);
    }
}
