//! Run configuration: defaults, TOML files, presets and `--section.key value`
//! overrides, merged in that order.

use std::path::{Path, PathBuf};

use auglstm::data::{SyntheticTask, TruncateSide};
use auglstm::mc::{p_range, AggregationStrategy, McRunSpec};
use auglstm::model::{preset, ModelConfig, ResidualMode, PRESET_NAMES};
use auglstm::train::{DepthSuiteSpec, LadderBase, TrainSettings, DEFAULT_MC_SAMPLES, SST_KEEP_PROB};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

pub const CONFIG_HELP: &str = "\
CONFIGURATION
  --config takes a preset name, a TOML file, or a manifest.json from an
  earlier run. Values are resolved as: defaults < config < overrides.

  Any key can be overridden with a dotted flag, for example
      --model.hidden_size 170   --train.learning_rate=0.01   --mc.strategy prob-mean
  Named flags such as --epochs or --hidden-size are shorthands for these keys.

  Sections and keys (each run's manifest.json records every resolved value):
    seed
    [model]  num_layers hidden_size embed_dim num_classes residual_mode direction
             forget_bias input_keep_prob pooling pooling_dim output_gate
    [train]  epochs batch_size learning_rate early_stop_patience freeze_embeddings
    [data]   train valid test checkpoint embeddings min_count max_tokens
             truncate_side valid_fraction task n_train n_valid seq_len
             vocab_size synthetic_seed
    [mc]     k p_min p_max p_step m strategy confidence eval_samples
    [suite]  runs ladder large_hidden keep_prob budget depths modes confidence

  Presets: sst_baseline sst_large sst_bi sst_full sst_uni_full
           imdb_baseline imdb_large imdb_bi imdb_full";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// `label<TAB>text` training file; empty means generate synthetic data.
    pub train: String,
    /// Validation file; empty means hold out `valid_fraction` of training.
    pub valid: String,
    /// Evaluation file for `eval` and `mc-curve`.
    pub test: String,
    pub checkpoint: String,
    pub embeddings: String,
    pub min_count: usize,
    /// Zero disables truncation.
    pub max_tokens: usize,
    pub truncate_side: TruncateSide,
    pub valid_fraction: f64,
    pub task: SyntheticTask,
    pub n_train: usize,
    pub n_valid: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub synthetic_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: String::new(),
            valid: String::new(),
            test: String::new(),
            checkpoint: String::new(),
            embeddings: String::new(),
            min_count: 1,
            max_tokens: 0,
            truncate_side: TruncateSide::Right,
            valid_fraction: 0.1,
            task: SyntheticTask::MajorityToken,
            n_train: 200,
            n_valid: 100,
            seq_len: 8,
            vocab_size: 40,
            synthetic_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub k: usize,
    pub p_min: usize,
    pub p_max: usize,
    pub p_step: usize,
    pub m: usize,
    pub strategy: AggregationStrategy,
    pub confidence: f64,
    /// Samples per example for MC evaluation outside the curve protocol.
    pub eval_samples: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        let d = McRunSpec::default();
        Self {
            k: d.k,
            p_min: d.p_values[0],
            p_max: *d.p_values.last().expect("default p range is nonempty"),
            p_step: d.p_values[1] - d.p_values[0],
            m: d.m,
            strategy: d.strategy,
            confidence: d.confidence,
            eval_samples: DEFAULT_MC_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub runs: usize,
    /// JSON ladder description; empty means the compounding ladder.
    pub ladder: String,
    pub large_hidden: usize,
    pub keep_prob: f64,
    pub budget: u64,
    pub depths: Vec<usize>,
    pub modes: Vec<ResidualMode>,
    pub confidence: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let depth = DepthSuiteSpec::reference(default_model(), TrainSettings::default(), 7, 0);
        Self {
            runs: 7,
            ladder: String::new(),
            large_hidden: LadderBase::sst().large_hidden,
            keep_prob: SST_KEEP_PROB,
            budget: depth.budget,
            depths: depth.depths,
            modes: depth.modes,
            confidence: depth.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub data: DataConfig,
    pub mc: McConfig,
    pub suite: SuiteConfig,
}

fn default_model() -> ModelConfig {
    preset("sst_baseline").expect("built-in preset")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: default_model(),
            train: TrainSettings::default(),
            data: DataConfig::default(),
            mc: McConfig::default(),
            suite: SuiteConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn mc_spec(&self) -> McRunSpec {
        McRunSpec {
            k: self.mc.k,
            p_values: p_range(self.mc.p_min, self.mc.p_max, self.mc.p_step),
            m: self.mc.m,
            strategy: self.mc.strategy,
            confidence: self.mc.confidence,
            seed: self.seed,
        }
    }

    pub fn ladder_base(&self) -> LadderBase {
        LadderBase {
            num_layers: self.model.num_layers,
            embed_dim: self.model.embed_dim,
            num_classes: self.model.num_classes,
            small_hidden: self.model.hidden_size,
            large_hidden: self.suite.large_hidden,
            keep_prob: self.suite.keep_prob,
            mc_samples: self.mc.eval_samples,
            pooling_dim: self.model.pooling_dim,
        }
    }

    pub fn depth_spec(&self) -> DepthSuiteSpec {
        DepthSuiteSpec {
            budget: self.suite.budget,
            depths: self.suite.depths.clone(),
            modes: self.suite.modes.clone(),
            n_runs: self.suite.runs,
            template: self.model.clone(),
            settings: self.train.clone(),
            seed: self.seed,
            confidence: self.suite.confidence,
        }
    }

    /// Checks that apply to every command; failures name the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| prefixed("model", e))?;
        self.train.to_spec(self.model.clone(), self.seed).validate().map_err(|e| prefixed("train", e))?;
        if !(0.0..1.0).contains(&self.data.valid_fraction) {
            return Err(CliError::Config("data.valid_fraction: must lie in [0, 1)".into()));
        }
        if self.mc.p_step == 0 {
            return Err(CliError::Config("mc.p_step: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_table(&self) -> Table {
        Table::try_from(self).expect("config serializes to a TOML table")
    }
}

fn prefixed(section: &str, e: auglstm::Error) -> CliError {
    match e {
        auglstm::Error::Config { field, message } => CliError::Config(format!("{section}.{field}: {message}")),
        other => CliError::Config(format!("{section}: {other}")),
    }
}

/// Where the base configuration came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Defaults,
    Preset(String),
    File(PathBuf),
}

impl Source {
    pub fn parse(arg: Option<&str>) -> Result<Self, CliError> {
        match arg {
            None => Ok(Source::Defaults),
            Some(name) if preset(name).is_some() => Ok(Source::Preset(name.to_string())),
            Some(path) if Path::new(path).is_file() => Ok(Source::File(PathBuf::from(path))),
            Some(other) => Err(CliError::Config(format!(
                "--config {other:?} is neither a file nor a preset (presets: {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }
}

fn type_name(v: &Value) -> &'static str {
    v.type_str()
}

/// Overlays `overlay` onto `base`, rejecting unknown keys and type changes.
fn merge(base: &mut Table, overlay: Table, prefix: &str) -> Result<(), CliError> {
    for (key, value) in overlay {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        let Some(slot) = base.get_mut(&key) else {
            return Err(CliError::Config(format!("unknown config key `{path}`")));
        };
        match (slot, value) {
            (Value::Table(b), Value::Table(o)) => merge(b, o, &path)?,
            (Value::Table(_), v) => {
                return Err(CliError::Config(format!("`{path}` is a section, found {}", type_name(&v))));
            }
            (slot, v) => *slot = coerce(&path, slot, v)?,
        }
    }
    Ok(())
}

fn coerce(path: &str, current: &Value, new: Value) -> Result<Value, CliError> {
    match (current, new) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (c, n) if std::mem::discriminant(c) == std::mem::discriminant(&n) => Ok(n),
        (c, n) => Err(CliError::Config(format!(
            "`{path}`: expected {}, found {} ({n})",
            type_name(c),
            type_name(&n)
        ))),
    }
}

/// Applies one `section.key = raw` override. Strings are taken verbatim;
/// everything else is parsed as a TOML literal.
fn set(table: &mut Table, path: &str, raw: &str) -> Result<(), CliError> {
    let unknown = || CliError::Config(format!("unknown config key `{path}`"));
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().ok_or_else(unknown)?;
    let mut node = &mut *table;
    for part in parts {
        node = match node.get_mut(part) {
            Some(Value::Table(t)) => t,
            _ => return Err(unknown()),
        };
    }
    let slot = node.get_mut(last).ok_or_else(unknown)?;
    if let Value::Table(_) = slot {
        return Err(CliError::Config(format!("`{path}` is a section, not a value")));
    }
    let parsed = match slot {
        Value::String(_) => Value::String(raw.to_string()),
        _ => format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string())),
    };
    *slot = coerce(path, slot, parsed)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        // A manifest from an earlier run; its resolved config is reused.
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = v
            .get("config")
            .cloned()
            .ok_or_else(|| CliError::Config(format!("{}: no `config` field", path.display())))?;
        return serde_json::from_value(config).map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
    }
    text.parse::<Table>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Resolves the full configuration. Later overrides win over earlier ones.
pub fn resolve(source: &Source, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut base = RunConfig::default();
    if let Source::Preset(name) = source {
        base.model = preset(name).expect("checked by Source::parse");
    }
    let mut table = base.to_table();
    if let Source::File(path) = source {
        let file = read_file(path)?;
        // A file may name a preset as its starting model.
        let mut file = file;
        if let Some(p) = file.remove("preset") {
            let name = p.as_str().unwrap_or_default().to_string();
            let model = preset(&name).ok_or_else(|| CliError::Config(format!("preset: unknown preset {name:?}")))?;
            table.insert("model".into(), Value::try_from(&model).expect("model serializes"));
        }
        merge(&mut table, file, "")?;
    }
    for (key, raw) in overrides {
        set(&mut table, key, raw)?;
    }
    let config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string().trim().to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Remaining arguments and the extracted `(key, value)` overrides.
type Split = (Vec<String>, Vec<(String, String)>);

/// Pulls `--section.key value` and `--section.key=value` pairs out of the
/// raw arguments, returning them and the remaining arguments.
pub fn split_overrides(args: Vec<String>) -> Result<Split, CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => iter
                .next()
                .ok_or_else(|| CliError::Usage(format!("--{name} needs a value")))?,
        };
        overrides.push((name, value));
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = Value::Table(c.to_table()).try_into().unwrap();
        assert_eq!(back, c);
        assert_eq!(c.mc_spec(), McRunSpec::default());
    }

    #[test]
    fn default_depth_suite_has_every_cell() {
        let cells = RunConfig::default().depth_spec().cells().unwrap();
        assert_eq!(cells.len(), 5 * ResidualMode::ALL.len());
        let hidden: Vec<(usize, usize)> = cells.iter().step_by(4).map(|&(d, h, _)| (d, h)).collect();
        assert_eq!(hidden, [(1, 250), (2, 170), (4, 120), (6, 100), (8, 85)]);
    }

    #[test]
    fn overrides_replace_typed_values() {
        let c = resolve(
            &Source::Defaults,
            &ov(&[
                ("model.hidden_size", "12"),
                ("model.forget_bias", "1"),
                ("mc.strategy", "prob-mean"),
                ("suite.depths", "[1, 2]"),
                ("data.train", "x.tsv"),
            ]),
        )
        .unwrap();
        assert_eq!(c.model.hidden_size, 12);
        assert_eq!(c.model.forget_bias, 1.0);
        assert_eq!(c.mc.strategy, AggregationStrategy::ProbMean);
        assert_eq!(c.suite.depths, vec![1, 2]);
        assert_eq!(c.data.train, "x.tsv");
    }

    #[test]
    fn bad_keys_and_values_name_the_field() {
        let err = |pairs: &[(&str, &str)]| resolve(&Source::Defaults, &ov(pairs)).unwrap_err().to_string();
        assert!(err(&[("model.hiden_size", "3")]).contains("model.hiden_size"));
        assert!(err(&[("model.hidden_size", "abc")]).contains("model.hidden_size"));
        assert!(err(&[("model", "3")]).contains("section"));
        assert!(err(&[("model.num_layers", "0")]).contains("model.num_layers"));
        assert!(err(&[("train.batch_size", "0")]).contains("train.batch_size"));
        assert!(err(&[("mc.strategy", "loudest")]).contains("loudest"));
    }

    #[test]
    fn file_merges_over_preset_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "preset = \"imdb_large\"\nseed = 4\n[model]\nhidden_size = 50\n[train]\nepochs = 2\n").unwrap();
        let c = resolve(&Source::File(path.clone()), &ov(&[("train.epochs", "5")])).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.model.num_classes, 2);
        assert_eq!(c.model.hidden_size, 50);
        assert_eq!(c.model.input_keep_prob, 0.3);
        assert_eq!(c.train.epochs, 5);

        std::fs::write(&path, "[model]\nlayers = 2\n").unwrap();
        let e = resolve(&Source::File(path), &[]).unwrap_err().to_string();
        assert!(e.contains("model.layers"), "{e}");
    }

    #[test]
    fn dotted_flags_are_split_out() {
        let args = ["auglstm", "train", "--model.hidden_size", "5", "--epochs", "2", "--train.learning_rate=0.1"]
            .map(String::from)
            .to_vec();
        let (rest, o) = split_overrides(args).unwrap();
        assert_eq!(rest, ["auglstm", "train", "--epochs", "2"]);
        assert_eq!(o, ov(&[("model.hidden_size", "5"), ("train.learning_rate", "0.1")]));
        assert!(split_overrides(vec!["--model.pooling".into()]).is_err());
    }
}
