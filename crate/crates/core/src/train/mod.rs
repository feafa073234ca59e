//! Training, evaluation, checkpoints and experiment suites.

mod checkpoint;
mod report;
mod suites;
mod trainer;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use report::{write_depth_csv, write_history_csv, write_json, write_ladder_summary, write_runs_csv};
pub use suites::{
    depth_cell_label, hidden_for_budget, mean_interval, run_depth_suite, run_feature_ladder, run_seed, BoxStats,
    DepthCell, DepthReport, DepthSuiteSpec, FeatureLadder, LadderBase, LadderReport, Rung, RungInference, RungSummary,
    RunRecord, SuiteData, TrainSettings, BUDGET_TOLERANCE, REFERENCE_BUDGET, REFERENCE_DEPTH_LADDER,
};
pub use trainer::{
    evaluate, mean_loss, resume, run_epoch, train, Checkpoint, EpochMetrics, Inference, TrainSpec, DEFAULT_MC_SAMPLES,
    IMDB_KEEP_PROB, SST_KEEP_PROB,
};
