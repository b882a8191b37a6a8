//! Experiment drivers: synthetic data, rigid sweeps, α-sweeps, ablations and
//! benchmark tables.

mod experiments;
mod sweep;
mod synthetic;

pub use experiments::{
    alpha_grid, alpha_sweep, check_endpoint, compare_extractors, run_all, run_benchmark, run_case, score_case,
    upscale_ablation, AblationArm, AblationTable, AlphaSweepTable, BenchmarkMethod, BenchmarkReport, CaseOutcome,
    FeatureProvider, MeanSd, RegistrationCase, SummaryRow,
};
pub use sweep::{
    normalize_features, rigid_sweep, rotation_field, translation_field, SweepCurve, SweepKind, SweepSeries,
    ROTATION_STEPS, TRANSLATION_STEPS, TRANSLATION_STEP_MM,
};
pub use synthetic::{
    cardiac_phantom, endpoint_error, make_synthetic_pair, random_smooth_field, SyntheticPair, GT_LATTICE,
    MIN_SYNTHETIC_SIZE, SYNTHETIC_SPACING,
};
