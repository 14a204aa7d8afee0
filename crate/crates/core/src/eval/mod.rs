//! Offline evaluation: metrics, baselines, a seeded synthetic usage stream,
//! replay against the portal or a baseline, and ablation runs.

mod baselines;
mod catalog;
mod metrics;
mod replay;
mod report;
mod synth;

pub use baselines::{baseline_bayes, baseline_mfu, baseline_mru, HistoryEvent};
pub use metrics::{metrics, rank_of, DayMetrics, MetricsReport, Trial};
pub use replay::{
    replay, run_ablation, BaselineKind, BaselineSystem, Predictor, PortalSystem, ReplayOutput, Served,
    StubSettings, Variant,
};
pub use report::{read_trials_jsonl, write_outputs, write_per_day_csv, write_report_json, write_timing_csv, write_trials_jsonl};
pub use synth::{synth_stream, StreamItem, SynthConfig, SynthStream, SynthUser};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no trials to score")]
    EmptyTrials,
    #[error("trial {index}: true function {truth} is not in the served ranking")]
    TruthNotRanked { index: usize, truth: String },
    #[error("trial {index}: ranking has {len} entries for {candidates} candidates")]
    RankingTooLong { index: usize, len: usize, candidates: usize },
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("invalid stream: {0}")]
    InvalidStream(String),
    #[error("system setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
