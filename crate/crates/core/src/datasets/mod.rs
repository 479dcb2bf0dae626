//! Data generators, file formats, holdout protocol and evaluation.

mod eval;
mod generators;
mod holdout;
mod io;
mod vdb;

pub use eval::{
    average_log_predictive, eval_row, evaluate, evaluate_repeat, fit, fit_baseline, heldout_log_predictive, mean_ari,
    mean_stderr, merge_traces, EvalRow, Fit, Method,
};
pub use generators::{
    default_ecs_schedule, gen_evolving_network, gen_gaussian_clusters, gen_multitask_t3, gen_se_surrogate,
    sample_observations, SurrogateConfig, CLUSTER_DIM, CLUSTER_OBJECTS, CLUSTER_OFFSET, DEFAULT_P_IN, DEFAULT_P_OUT,
};
pub use holdout::{HeldEntry, HoldoutPlan, HoldoutSplit};
pub use io::{
    labeled, load_manifest, load_multitask_csv, load_network_csv, read_labels_csv, read_matrix_csv, standardize,
    write_dataset, write_labels_csv, write_matrix_csv, LabeledMatrix, Manifest, ManifestKind,
};
pub use vdb::{load_vdb_dir, read_vdb_wave, vdb_preprocess, VdbCoding, VDB_SIZE, VDB_TIMES};

use crate::likelihoods::ObservationSet;

/// Observations plus the covariate of each source and optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: ObservationSet,
    /// Covariate location of each source (times for networks).
    pub locations: Vec<f64>,
    /// True labels per source, when known.
    pub truth: Option<Vec<Vec<usize>>>,
    /// Per-source, per-column (mean, sd) used to standardise, if applied.
    pub standardization: Option<Vec<Vec<(f64, f64)>>>,
}
