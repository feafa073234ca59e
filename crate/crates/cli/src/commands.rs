use std::path::Path;

use auglstm::data::{
    encode, gen_synthetic, load_dataset, load_embeddings, split_dataset, synthetic_vocabulary, EmbeddingTable,
    LabeledSequence, Truncation, Vocabulary,
};
use auglstm::mc;
use auglstm::model::count_parameters;
use auglstm::train::{
    evaluate, load_checkpoint, run_depth_suite, run_epoch, run_feature_ladder, save_checkpoint, write_depth_csv,
    write_history_csv, write_json, write_ladder_summary, write_runs_csv, Checkpoint, FeatureLadder, Inference,
    SuiteData,
};
use auglstm::Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::Run;

const EMBEDDING_STREAM: u64 = 0xe4b;

fn path_of(s: &str) -> Option<&Path> {
    (!s.is_empty()).then(|| Path::new(s))
}

fn truncation(config: &RunConfig) -> Option<Truncation> {
    (config.data.max_tokens > 0).then_some(Truncation {
        max_tokens: config.data.max_tokens,
        side: config.data.truncate_side,
    })
}

struct Corpus {
    train: Vec<LabeledSequence>,
    valid: Vec<LabeledSequence>,
    vocab: Vocabulary,
    embeddings: Option<EmbeddingTable>,
}

impl Corpus {
    fn suite_data(&self) -> SuiteData<'_> {
        SuiteData {
            train: &self.train,
            valid: &self.valid,
            vocab_size: self.vocab.len(),
            embeddings: self.embeddings.as_ref(),
        }
    }
}

/// Train and validation sets generated from the `data` section; gen-data
/// writes exactly these.
fn synthetic_pair(config: &RunConfig) -> Result<(Vec<LabeledSequence>, Vec<LabeledSequence>), CliError> {
    let d = &config.data;
    let classes = config.model.num_classes;
    let gen = |n, seed| gen_synthetic(d.task, n, d.seq_len, d.vocab_size, classes, seed);
    let train = gen(d.n_train, d.synthetic_seed)?;
    let valid = gen(d.n_valid, d.synthetic_seed.wrapping_add(1))?;
    if train.is_empty() || valid.is_empty() {
        return Err(CliError::Config("data.n_train and data.n_valid must be at least 1".into()));
    }
    Ok((train, valid))
}

fn load_corpus(run: &mut Run, config: &RunConfig) -> Result<Corpus, CliError> {
    let classes = config.model.num_classes;
    let trunc = truncation(config);
    let (train, valid, vocab) = match path_of(&config.data.train) {
        Some(path) => {
            run.input(path)?;
            let text = load_dataset(path, classes)?;
            let vocab = Vocabulary::build(text.iter().map(|e| e.tokens.as_slice()), config.data.min_count);
            let train = encode(&text, &vocab, trunc);
            match path_of(&config.data.valid) {
                Some(vpath) => {
                    run.input(vpath)?;
                    let valid = encode(&load_dataset(vpath, classes)?, &vocab, trunc);
                    (train, valid, vocab)
                }
                None => {
                    let n_valid = (train.len() as f64 * config.data.valid_fraction).round() as usize;
                    if n_valid == 0 || n_valid == train.len() {
                        return Err(CliError::Config(format!(
                            "data.valid_fraction: holding out {n_valid} of {} examples leaves an empty split",
                            train.len()
                        )));
                    }
                    let (t, v) = split_dataset(&train, train.len() - n_valid, n_valid, config.seed)?;
                    (t, v, vocab)
                }
            }
        }
        None => {
            let (train, valid) = synthetic_pair(config)?;
            (train, valid, synthetic_vocabulary(config.data.vocab_size))
        }
    };
    let embeddings = match path_of(&config.data.embeddings) {
        Some(path) => {
            run.input(path)?;
            let mut rng = Rng::new(config.seed, EMBEDDING_STREAM);
            let table = load_embeddings(path, &vocab, config.model.embed_dim, &mut rng)?;
            eprintln!("embeddings cover {} of {} vocabulary entries", table.coverage, vocab.len().saturating_sub(2));
            Some(table)
        }
        None => None,
    };
    Ok(Corpus {
        train,
        valid,
        vocab,
        embeddings,
    })
}

pub fn train(run: &mut Run, config: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(run, config)?;
    let spec = config.train.to_spec(config.model.clone(), config.seed);
    let mut ckpt = match path_of(&config.data.checkpoint) {
        Some(path) => {
            run.input(path)?;
            let mut c = load_checkpoint(path)?;
            if c.spec.model != spec.model {
                return Err(CliError::Config(format!(
                    "data.checkpoint: {} was trained with a different model config",
                    path.display()
                )));
            }
            if c.vocabulary.as_ref().is_some_and(|v| v != &corpus.vocab) {
                return Err(CliError::Config(
                    "data.checkpoint: vocabulary differs from the one built from the training data".into(),
                ));
            }
            // Only the stopping rule may change on resume.
            c.spec.epochs = spec.epochs;
            c.spec.early_stop_patience = spec.early_stop_patience;
            if c.spec != spec {
                return Err(CliError::Config(
                    "data.checkpoint: training settings differ from the checkpoint's".into(),
                ));
            }
            c
        }
        None => Checkpoint::init(spec, corpus.vocab.len(), corpus.embeddings.as_ref())?,
    };
    ckpt.vocabulary = Some(corpus.vocab.clone());

    run.ensure_out_dir()?;
    let ckpt_path = run.output("checkpoint.bin");
    let metrics_path = run.output("metrics.csv");
    eprintln!(
        "training {} parameters on {} examples ({} validation)",
        count_parameters(&config.model),
        corpus.train.len(),
        corpus.valid.len()
    );
    let outcome = loop {
        if ckpt.finished() {
            break Ok(());
        }
        match run_epoch(&mut ckpt, &corpus.train, &corpus.valid) {
            Ok(m) => {
                eprintln!(
                    "epoch {:>4}  loss {:.5}  train_acc {:.4}  valid_acc {:.4}",
                    m.epoch, m.train_loss, m.train_acc, m.valid_acc
                );
                // Saved every epoch so an interrupted run can resume.
                save_checkpoint(&ckpt, &ckpt_path)?;
            }
            Err(e) => break Err(e),
        }
    };
    save_checkpoint(&ckpt, &ckpt_path)?;
    write_history_csv(&metrics_path, &ckpt.history)?;
    outcome?;
    println!(
        "best valid_acc {:.4} at epoch {} of {}",
        ckpt.best_valid_acc, ckpt.best_epoch, ckpt.epoch
    );
    Ok(())
}

/// Checkpoint plus the evaluation set encoded with its vocabulary.
fn eval_inputs(run: &mut Run, config: &RunConfig) -> Result<(Checkpoint, Vec<LabeledSequence>), CliError> {
    let ckpt_path =
        path_of(&config.data.checkpoint).ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
    let data_path = path_of(&config.data.test).ok_or_else(|| CliError::Usage("--data is required".into()))?;
    run.input(ckpt_path)?;
    run.input(data_path)?;
    let ckpt = load_checkpoint(ckpt_path)?;
    let vocab = ckpt
        .vocabulary
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{} stores no vocabulary", ckpt_path.display())))?;
    let text = load_dataset(data_path, ckpt.config().num_classes)?;
    let data = encode(&text, vocab, truncation(config));
    if let Some(c) = run.config.as_mut() {
        c.model = ckpt.config().clone();
    }
    Ok((ckpt, data))
}

#[derive(Serialize)]
struct EvalReport {
    accuracy: f64,
    examples: usize,
    inference: Inference,
}

pub fn eval(run: &mut Run, config: &RunConfig, mc: bool) -> Result<(), CliError> {
    let (ckpt, data) = eval_inputs(run, config)?;
    let inference = if mc {
        Inference::Mc {
            k: config.mc.eval_samples,
            strategy: config.mc.strategy,
            seed: config.seed,
        }
    } else {
        Inference::Standard
    };
    let accuracy = evaluate(&ckpt.best_model(), &data, inference)?;
    run.ensure_out_dir()?;
    write_json(
        &run.output("eval.json"),
        &EvalReport {
            accuracy,
            examples: data.len(),
            inference,
        },
    )?;
    println!("accuracy {accuracy:.4} on {} examples", data.len());
    Ok(())
}

pub fn mc_curve(run: &mut Run, config: &RunConfig) -> Result<(), CliError> {
    let spec = config.mc_spec();
    spec.validate().map_err(|e| CliError::Config(format!("mc: {e}")))?;
    let (ckpt, data) = eval_inputs(run, config)?;
    let curve = mc::mc_curve(&ckpt.best_model(), &data, &spec)?;
    run.ensure_out_dir()?;
    curve.write_csv(&run.output("curve.csv"))?;
    write_json(&run.output("curve.json"), &curve)?;
    let last = curve.points.last().expect("validated p range is nonempty");
    println!(
        "{} points; standard {:.4}; p={} mean {:.4} [{:.4}, {:.4}]",
        curve.points.len(),
        curve.baseline_acc,
        last.p,
        last.mean_acc,
        last.ci_low,
        last.ci_high
    );
    Ok(())
}

pub fn ladder(run: &mut Run, config: &RunConfig) -> Result<(), CliError> {
    let ladder = match path_of(&config.suite.ladder) {
        Some(path) => {
            run.input(path)?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<FeatureLadder>(&text)
                .map_err(|e| CliError::Config(format!("suite.ladder: {}: {e}", path.display())))?
        }
        None => FeatureLadder::compounding(&config.ladder_base()),
    };
    // Rejected before any data is loaded or any model trained.
    ladder
        .check_structure()
        .map_err(|e| CliError::Config(format!("suite.ladder: {e}")))?;
    let corpus = load_corpus(run, config)?;
    let report = run_feature_ladder(&ladder, corpus.suite_data(), &config.train, config.suite.runs, config.seed)?;
    run.ensure_out_dir()?;
    write_runs_csv(&run.output("runs.csv"), &report.runs)?;
    write_ladder_summary(&run.output("summary.json"), &report)?;
    println!("{:<16} {:>8} {:>8} {:>8} {:>8}", "rung", "mean", "median", "min", "max");
    for r in &report.rungs {
        let s = &r.stats;
        println!(
            "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.name, s.mean, s.median, s.min, s.max
        );
    }
    Ok(())
}

pub fn depth(run: &mut Run, config: &RunConfig) -> Result<(), CliError> {
    let spec = config.depth_spec();
    // Budget failures are configuration errors, reported before training.
    spec.cells().map_err(|e| CliError::Config(format!("suite: {e}")))?;
    let corpus = load_corpus(run, config)?;
    let report = run_depth_suite(&spec, corpus.suite_data())?;
    run.ensure_out_dir()?;
    write_depth_csv(&run.output("depth.csv"), &report)?;
    write_runs_csv(&run.output("runs.csv"), &report.runs)?;
    write_json(&run.output("depth.json"), &report)?;
    for c in &report.cells {
        println!(
            "L{:<2} H{:<4} {:<22} params {:>8}  mean {:.4} [{:.4}, {:.4}]",
            c.depth,
            c.hidden,
            c.mode.name(),
            c.param_count,
            c.mean,
            c.ci_low,
            c.ci_high
        );
    }
    Ok(())
}

pub fn param_count(_run: &mut Run, config: &RunConfig) -> Result<(), CliError> {
    let n = count_parameters(&config.model);
    println!("{n} ({:.3}M)", n as f64 / 1e6);
    Ok(())
}

pub fn gen_data(run: &mut Run, config: &RunConfig) -> Result<(), CliError> {
    let (train, valid) = synthetic_pair(config)?;
    let vocab = synthetic_vocabulary(config.data.vocab_size);
    run.ensure_out_dir()?;
    let train_path = run.output("train.tsv");
    let valid_path = run.output("valid.tsv");
    auglstm::data::write_dataset(&train_path, &train, &vocab)?;
    auglstm::data::write_dataset(&valid_path, &valid, &vocab)?;
    println!(
        "{} and {} ({} + {} examples, task {})",
        train_path.display(),
        valid_path.display(),
        train.len(),
        valid.len(),
        config.data.task.name()
    );
    Ok(())
}
