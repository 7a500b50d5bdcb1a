//! Synthetic data, error metrics, the benchmark runner and the PSF model comparison.

pub mod benchmark;
pub mod compare;
pub mod scalar;
pub mod simulate;
pub mod zernike;

pub use benchmark::{
    retrieve, run_benchmark, simulate_realization, AlgorithmConfig, BenchmarkReport, ExperimentConfig, InitKind,
    ResolvedAlgorithm, Schedule,
};
pub use compare::{compare_psf_models, CompareOptions, ModelComparison};
pub use scalar::scalar_alternating_projections;
pub use simulate::{add_gaussian_noise, empirical_snr_db, relative_rms, simulate_defocus_stack, simulate_stack, wrap};
pub use zernike::{generate_phase, PhaseSpec};
