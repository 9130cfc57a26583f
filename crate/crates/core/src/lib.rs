//! Nuisance regression for resting-state fMRI.
//!
//! Residualizes regional BOLD timeseries against head-motion, ICA-AROMA and
//! physiological confound blocks, either one block at a time (sequential
//! pipelines) or all at once (concatenated pipeline), and scores what is left
//! of the motion artifact with QC-FC correlation and QC-FC distance
//! dependence. A seeded phantom cohort with known ground truth stands in for
//! real scans.

pub mod cli;
pub mod error;
pub mod io;
pub mod phantom;
pub mod pipeline;
pub mod qcmetrics;
pub mod regress;

pub use error::{Error, Result};
pub use phantom::{generate_cohort, truth_error, PhantomCohort, PhantomConfig};
pub use pipeline::{
    build_blocks, evaluate_pipeline, expand_hmp24, run_pipeline, HeadMotion, NuisanceBlocks, Pipeline, SubjectBundle,
};
pub use qcmetrics::{
    distance_dependence, edge_lengths, fc_matrix, framewise_displacement, mean_fd, pearson, qcfc,
    spearman, Correlation, FcMatrix, Parcellation, QcFcReport,
};
pub use regress::{
    concat_designs, max_abs_correlation, ols_residualize, sequential_residualize, DesignMatrix,
    LeastSquaresFit, SignalMatrix, Source,
};
