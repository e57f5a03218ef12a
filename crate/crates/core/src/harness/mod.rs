//! Experiment configuration, synthetic data, metrics, training runs,
//! sweeps and the invariant suite used by the command-line tool.

pub mod checks;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod sweep;
pub mod synthetic;

pub use checks::{run_checks, CheckResult};
pub use config::{ExperimentConfig, Method, MethodFlags, Task};
pub use experiment::{build_model, run_experiment, Experiment};
pub use metrics::{bpd, nelbo_uniform, nelbo_unigram, parse_csv, to_csv, MetricsRow, CSV_HEADER};
pub use sweep::{
    ablation_summary, median_final, run_ablation, scaling_sweep, spearman, sweep_csv, AblationRun,
    SweepRow, SWEEP_CSV_HEADER, SWEEP_SCALES,
};
pub use synthetic::{make_synthetic, Dataset, SyntheticData, SyntheticSpec};
