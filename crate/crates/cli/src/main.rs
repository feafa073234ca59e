mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;

use auglstm::model::ResidualMode;
use clap::{Args, Parser, Subcommand};

use crate::config::{resolve, split_overrides, Source, CONFIG_HELP};
use crate::error::CliError;
use crate::manifest::Run;

/// Augmented LSTM sequence classifiers: training, Monte Carlo dropout
/// evaluation, and multi-run experiment suites. Outputs are CSV/JSON files.
#[derive(Parser, Debug)]
#[command(name = "auglstm", version, after_long_help = CONFIG_HELP)]
struct Cli {
    /// Cap on worker threads used by sampling and suite runs.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Preset name, TOML file, or manifest.json of an earlier run.
    #[arg(long, short = 'c')]
    config: Option<String>,

    /// Directory for outputs and the run manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Default)]
struct ModelFlags {
    /// Number of stacked LSTM layers.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Probability of keeping a unit under dropout.
    #[arg(long)]
    keep_prob: Option<f64>,
    #[arg(long)]
    forget_bias: Option<f64>,
    /// none, vertical-only (res-v1), vertical-and-lateral (res-v2), horizontal-only.
    #[arg(long)]
    residual: Option<String>,
    /// unidirectional, shared-bidirectional, separate-bidirectional.
    #[arg(long)]
    direction: Option<String>,
    /// Enable the embedding average-pooling channel.
    #[arg(long)]
    pooling: bool,
}

#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
struct DataFlags {
    /// Training file (`label<TAB>text`); synthetic data when absent.
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    valid: Option<String>,
    /// Word vectors, one `token v1 ... vd` line each.
    #[arg(long)]
    embeddings: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
struct EvalInputs {
    #[arg(long)]
    checkpoint: Option<String>,
    /// Evaluation file (`label<TAB>text`).
    #[arg(long)]
    data: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model; writes checkpoint.bin and metrics.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        data: DataFlags,
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<String>,
    },
    /// Accuracy of a checkpoint on a dataset; writes eval.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: EvalInputs,
        /// Monte Carlo dropout averaging instead of standard inference.
        #[arg(long)]
        mc: bool,
        /// Samples per example with --mc.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Accuracy against MC sample size; writes curve.csv and curve.json.
    McCurve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: EvalInputs,
        /// Samples drawn per example.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        p_min: Option<usize>,
        #[arg(long)]
        p_max: Option<usize>,
        #[arg(long)]
        p_step: Option<usize>,
        /// Resamples per subset size.
        #[arg(long)]
        m: Option<usize>,
        /// majority-vote, prob-mean, logit-mean, pre-projection-mean.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        confidence: Option<f64>,
    },
    /// Compounding feature ladder; writes runs.csv and summary.json.
    Ladder {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        data: DataFlags,
        /// Runs per rung.
        #[arg(long)]
        runs: Option<usize>,
        /// JSON ladder description instead of the built-in ladder.
        #[arg(long)]
        ladder: Option<String>,
    },
    /// Equal-budget depth sweep; writes depth.csv, depth.json and runs.csv.
    Depth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        budget: Option<u64>,
        /// Comma-separated depths.
        #[arg(long, value_delimiter = ',')]
        depths: Vec<usize>,
        /// Comma-separated residual modes.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
    },
    /// Print the trainable parameter count, excluding embeddings.
    ParamCount {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Write synthetic train.tsv and valid.tsv.
    GenData {
        #[command(flatten)]
        common: Common,
        /// first_token_class, majority_token, long_range_flag.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_valid: Option<usize>,
        #[arg(long)]
        seq_len: Option<usize>,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
}

/// Collects `key = raw value` overrides from named flags.
#[derive(Default)]
struct Overrides(Vec<(String, String)>);

impl Overrides {
    fn put<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.push((key.to_string(), v.to_string()));
        }
    }

    fn model(&mut self, m: &ModelFlags) -> Result<(), CliError> {
        self.put("model.num_layers", m.layers);
        self.put("model.hidden_size", m.hidden_size);
        self.put("model.embed_dim", m.embed_dim);
        self.put("model.num_classes", m.classes);
        self.put("model.input_keep_prob", m.keep_prob);
        self.put("model.forget_bias", m.forget_bias);
        self.put("model.residual_mode", m.residual.as_deref().map(residual_name).transpose()?);
        self.put("model.direction", m.direction.as_ref());
        if m.pooling {
            self.put("model.pooling", Some(true));
        }
        Ok(())
    }

    fn train(&mut self, t: &TrainFlags) {
        self.put("train.epochs", t.epochs);
        self.put("train.batch_size", t.batch_size);
        self.put("train.learning_rate", t.lr);
        self.put("train.early_stop_patience", t.patience);
    }

    fn data(&mut self, d: &DataFlags) {
        self.put("data.train", d.train.as_ref());
        self.put("data.valid", d.valid.as_ref());
        self.put("data.embeddings", d.embeddings.as_ref());
    }

    fn eval_inputs(&mut self, i: &EvalInputs) {
        self.put("data.checkpoint", i.checkpoint.as_ref());
        self.put("data.test", i.data.as_ref());
    }
}

fn residual_name(s: &str) -> Result<&'static str, CliError> {
    ResidualMode::parse(s)
        .map(ResidualMode::name)
        .ok_or_else(|| CliError::Config(format!("model.residual_mode: unknown mode {s:?}")))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::McCurve { .. } => "mc-curve",
            Command::Ladder { .. } => "ladder",
            Command::Depth { .. } => "depth",
            Command::ParamCount { .. } => "param-count",
            Command::GenData { .. } => "gen-data",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::McCurve { common, .. }
            | Command::Ladder { common, .. }
            | Command::Depth { common, .. }
            | Command::ParamCount { common, .. }
            | Command::GenData { common, .. } => common,
        }
    }

    fn overrides(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut o = Overrides::default();
        o.put("seed", self.common().seed);
        match self {
            Command::Train {
                model,
                train,
                data,
                resume,
                ..
            } => {
                o.model(model)?;
                o.train(train);
                o.data(data);
                o.put("data.checkpoint", resume.as_ref());
            }
            Command::Eval {
                inputs,
                samples,
                strategy,
                ..
            } => {
                o.eval_inputs(inputs);
                o.put("mc.eval_samples", *samples);
                o.put("mc.strategy", strategy.as_ref());
            }
            Command::McCurve {
                inputs,
                k,
                p_min,
                p_max,
                p_step,
                m,
                strategy,
                confidence,
                ..
            } => {
                o.eval_inputs(inputs);
                o.put("mc.k", *k);
                o.put("mc.p_min", *p_min);
                o.put("mc.p_max", *p_max);
                o.put("mc.p_step", *p_step);
                o.put("mc.m", *m);
                o.put("mc.strategy", strategy.as_ref());
                o.put("mc.confidence", *confidence);
            }
            Command::Ladder {
                model,
                train,
                data,
                runs,
                ladder,
                ..
            } => {
                o.model(model)?;
                o.train(train);
                o.data(data);
                o.put("suite.runs", *runs);
                o.put("suite.ladder", ladder.as_ref());
            }
            Command::Depth {
                model,
                train,
                data,
                runs,
                budget,
                depths,
                modes,
                ..
            } => {
                o.model(model)?;
                o.train(train);
                o.data(data);
                o.put("suite.runs", *runs);
                o.put("suite.budget", *budget);
                if !depths.is_empty() {
                    let list: Vec<String> = depths.iter().map(|d| d.to_string()).collect();
                    o.put("suite.depths", Some(format!("[{}]", list.join(", "))));
                }
                if !modes.is_empty() {
                    let list = modes
                        .iter()
                        .map(|m| residual_name(m).map(|n| format!("\"{n}\"")))
                        .collect::<Result<Vec<_>, _>>()?;
                    o.put("suite.modes", Some(format!("[{}]", list.join(", "))));
                }
            }
            Command::ParamCount { model, .. } => o.model(model)?,
            Command::GenData {
                task,
                n_train,
                n_valid,
                seq_len,
                vocab_size,
                classes,
                ..
            } => {
                o.put("data.task", task.as_ref());
                o.put("data.n_train", *n_train);
                o.put("data.n_valid", *n_valid);
                o.put("data.seq_len", *seq_len);
                o.put("data.vocab_size", *vocab_size);
                o.put("model.num_classes", *classes);
            }
        }
        Ok(o.0)
    }
}

fn execute(run: &mut Run, cli: &Cli, dotted: &[(String, String)]) -> Result<(), CliError> {
    let common = cli.command.common();
    let source = Source::parse(common.config.as_deref())?;
    if let Source::File(path) = &source {
        run.input(path)?;
    }
    // Named flags are applied after dotted ones, so they win on conflict.
    let mut overrides = dotted.to_vec();
    overrides.extend(cli.command.overrides()?);
    let config = resolve(&source, &overrides)?;
    run.config = Some(config.clone());
    match &cli.command {
        Command::Train { .. } => commands::train(run, &config),
        Command::Eval { mc, .. } => commands::eval(run, &config, *mc),
        Command::McCurve { .. } => commands::mc_curve(run, &config),
        Command::Ladder { .. } => commands::ladder(run, &config),
        Command::Depth { .. } => commands::depth(run, &config),
        Command::ParamCount { .. } => commands::param_count(run, &config),
        Command::GenData { .. } => commands::gen_data(run, &config),
    }
}

fn real_main(argv: Vec<String>) -> i32 {
    let (rest, dotted) = match split_overrides(argv.clone()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&rest) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(jobs) = cli.jobs {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global();
        if let Err(e) = pool {
            eprintln!("error: cannot configure {jobs} worker threads: {e}");
            return 1;
        }
    }

    let mut run = Run::new(cli.command.name(), argv.into_iter().skip(1).collect(), cli.command.common().out.clone());
    let result = execute(&mut run, &cli, &dotted);
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    };
    match run.finish(&result) {
        Ok(_) => code,
        Err(e) => {
            eprintln!("{e}");
            if code == 0 {
                1
            } else {
                code
            }
        }
    }
}

fn main() {
    std::process::exit(real_main(std::env::args().collect()));
}
