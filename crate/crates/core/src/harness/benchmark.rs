//! Experiment configuration, single retrievals and the seeded benchmark runner.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scalar::scalar_alternating_projections;
use super::simulate::{add_gaussian_noise, relative_rms, simulate_defocus_stack};
use super::zernike::{generate_phase, PhaseSpec};
use crate::error::{Error, Result};
use crate::field::io::{write_atomic, write_json};
use crate::field::RealImage;
use crate::projectors::Problem;
use crate::psf::{build_aperture, AmplitudeSpec, ApertureModel, ApertureParams, MeasurementSet};
use crate::solvers::{
    extract_phase, initial_iterate, schedule_extrapolate_then_average, Family, Model, OperatorSpec, RunTrace,
};

/// `k1` iterations of the chosen method followed by `k2` averaging iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Schedule {
    pub k1: usize,
    pub k2: usize,
}

impl Schedule {
    pub fn plain(k: usize) -> Self {
        Self { k1: k, k2: 0 }
    }

    pub fn total(self) -> usize {
        self.k1 + self.k2
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.k2 == 0 { write!(f, "{}", self.k1) } else { write!(f, "{}+{}", self.k1, self.k2) }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("iteration schedule '{s}' is not K or K1+K2"));
        let (k1, k2) = match s.trim().split_once('+') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 0),
        };
        if k1 + k2 == 0 {
            return Err(bad());
        }
        Ok(Self { k1, k2 })
    }
}

impl TryFrom<String> for Schedule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Schedule> for String {
    fn from(s: Schedule) -> String {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApertureConfig {
    pub n: usize,
    pub na: f64,
    pub wavelength: f64,
    pub pixel_size: f64,
    pub pupil_fraction: f64,
    /// `"gaussian"` (truncated at `edge` on the rim) or `"uniform"`.
    pub amplitude: String,
    pub edge: f64,
}

/// Aperture diameter as a grid fraction for image-plane sampling `pixel_size`:
/// the field bandwidth `2 NA / lambda` over the sampling rate `1 / pixel_size`.
pub fn sampled_pupil_fraction(na: f64, wavelength: f64, pixel_size: f64) -> f64 {
    2.0 * na * pixel_size / wavelength
}

impl Default for ApertureConfig {
    /// Reference optics (NA 0.95, 0.3 um, 0.06 um pixels) with the pupil
    /// fraction implied by the pixel size.
    fn default() -> Self {
        let p = ApertureParams::default();
        Self {
            n: p.n,
            na: p.na,
            wavelength: p.wavelength,
            pixel_size: p.pixel_size,
            pupil_fraction: sampled_pupil_fraction(p.na, p.wavelength, p.pixel_size),
            amplitude: "gaussian".into(),
            edge: 0.5,
        }
    }
}

impl ApertureConfig {
    pub fn params(&self) -> ApertureParams {
        ApertureParams {
            n: self.n,
            na: self.na,
            wavelength: self.wavelength,
            pixel_size: self.pixel_size,
            pupil_fraction: self.pupil_fraction,
        }
    }

    pub fn amplitude_spec(&self) -> Result<AmplitudeSpec> {
        match self.amplitude.as_str() {
            "gaussian" => Ok(AmplitudeSpec::TruncatedGaussian { edge: self.edge }),
            "uniform" => Ok(AmplitudeSpec::Uniform),
            other => Err(Error::Config(format!("unknown amplitude profile '{other}'"))),
        }
    }

    pub fn build(&self) -> Result<ApertureModel> {
        build_aperture(self.params(), self.amplitude_spec()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversityConfig {
    pub m: usize,
    /// Plane separation in depths of focus.
    pub spacing_dof: f64,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self { m: 7, spacing_dof: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// `"gaussian"` or `"none"`.
    pub model: String,
    pub snr_db: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { model: "gaussian".into(), snr_db: 30.0 }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self { model: "none".into(), snr_db: 30.0 }
    }

    /// Effective SNR, `+inf` when noise is disabled.
    pub fn effective_snr(&self) -> Result<f64> {
        match self.model.as_str() {
            "none" => Ok(f64::INFINITY),
            "gaussian" if self.snr_db.is_finite() => Ok(self.snr_db),
            "gaussian" => Err(Error::Config("snr_db must be finite".into())),
            other => Err(Error::Config(format!("unknown noise model '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    /// Flat phase with the known or assumed amplitude.
    #[default]
    Flat,
    /// Uniform random phase on the aperture.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// `SAM` for the scalar baseline, `VAM` as an alias of AP, or a family name.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub iterations: Schedule,
    /// Overrides the experiment-wide flag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_amplitude: Option<bool>,
    /// `pr1`, `pr3` or `pr4`; defaults to `pr3` (or `pr1` for cyclic families).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl AlgorithmConfig {
    pub fn new(name: &str, beta: Option<f64>, iterations: Schedule, known: bool) -> Self {
        Self { name: name.into(), beta, iterations, known_amplitude: Some(known), model: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Scalar,
    Vectorial { family: Family, beta: f64, model: Model },
}

/// An algorithm entry with defaults filled in and names checked.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedAlgorithm {
    pub label: String,
    pub method: Method,
    pub schedule: Schedule,
    pub known_amplitude: bool,
}

impl ResolvedAlgorithm {
    pub fn resolve(cfg: &AlgorithmConfig, default_known: bool) -> Result<Self> {
        let known = cfg.known_amplitude.unwrap_or(default_known);
        let upper = cfg.name.to_ascii_uppercase();
        if upper == "SAM" {
            if known {
                return Err(Error::Config("the scalar baseline has no known-amplitude variant".into()));
            }
            return Ok(Self { label: "SAM".into(), method: Method::Scalar, schedule: cfg.iterations, known_amplitude: false });
        }
        let family: Family = if upper == "VAM" { Family::Ap } else { cfg.name.parse().map_err(|e: Error| Error::Config(e.to_string()))? };
        let base = match cfg.model.as_deref() {
            Some(s) => s.parse::<Model>().map_err(|e| Error::Config(e.to_string()))?,
            None if family.is_cyclic() => Model::Pr1,
            None => Model::Pr3,
        };
        let model = base.with_known_amplitude(known || base.known_amplitude());
        let beta = cfg.beta.unwrap_or(family.default_beta());
        OperatorSpec::for_model(family, beta, model, 1).map_err(|e| Error::Config(e.to_string()))?;
        let name = match family {
            Family::Ap => "VAM".to_string(),
            f => f.to_string(),
        };
        let label = if model.known_amplitude() { format!("{name}+") } else { name };
        Ok(Self {
            label,
            method: Method::Vectorial { family, beta, model },
            schedule: cfg.iterations,
            known_amplitude: model.known_amplitude(),
        })
    }

    pub fn beta(&self) -> Option<f64> {
        match self.method {
            Method::Vectorial { family, beta, .. } if family.uses_beta() => Some(beta),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub aperture: ApertureConfig,
    pub diversity: DiversityConfig,
    pub noise: NoiseConfig,
    pub phase: PhaseSpec,
    pub init: InitKind,
    /// Default amplitude knowledge for algorithms that do not set their own.
    pub known_amplitude: bool,
    pub realizations: usize,
    pub seed: u64,
    pub algorithms: Vec<AlgorithmConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            aperture: ApertureConfig::default(),
            diversity: DiversityConfig::default(),
            noise: NoiseConfig::default(),
            phase: PhaseSpec::default(),
            init: InitKind::Flat,
            known_amplitude: false,
            realizations: 75,
            seed: 1,
            algorithms: table_algorithms(),
        }
    }
}

impl ExperimentConfig {
    /// The reduced benchmark: 64x64 images and 10 realizations, otherwise the reference setup.
    pub fn desk_scale() -> Self {
        let mut cfg = Self { realizations: 10, ..Self::default() };
        cfg.aperture.n = 64;
        cfg
    }
}

/// The seven columns of the reference comparison: scalar and vectorial AP,
/// DRAP and RAAR with 30+20 iterations, and the known-amplitude variants.
pub fn table_algorithms() -> Vec<AlgorithmConfig> {
    let hundred = Schedule::plain(100);
    let two_stage = Schedule { k1: 30, k2: 20 };
    vec![
        AlgorithmConfig::new("SAM", None, hundred, false),
        AlgorithmConfig::new("VAM", None, hundred, false),
        AlgorithmConfig::new("DRAP", Some(0.95), two_stage, false),
        AlgorithmConfig::new("RAAR", Some(0.95), two_stage, false),
        AlgorithmConfig::new("VAM", None, hundred, true),
        AlgorithmConfig::new("DRAP", Some(0.95), two_stage, true),
        AlgorithmConfig::new("RAAR", Some(0.95), two_stage, true),
    ]
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        if self.diversity.m == 0 {
            return Err(Error::Config("diversity.m must be at least 1".into()));
        }
        if !(self.phase.peak >= 0.0 && self.phase.peak <= std::f64::consts::PI) || self.phase.max_mode < 2 {
            return Err(Error::Config("phase.peak must lie in [0, pi] and phase.max_mode be at least 2".into()));
        }
        self.noise.effective_snr()?;
        self.aperture.amplitude_spec()?;
        build_aperture(self.aperture.params(), AmplitudeSpec::Uniform).map_err(|e| Error::Config(e.to_string()))?;
        self.resolved_algorithms()?;
        Ok(())
    }

    pub fn resolved_algorithms(&self) -> Result<Vec<ResolvedAlgorithm>> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms configured".into()));
        }
        self.algorithms.iter().map(|a| ResolvedAlgorithm::resolve(a, self.known_amplitude)).collect()
    }
}

/// Independent stream seed for `(base, realization, purpose)`.
pub fn derive_seed(base: u64, realization: usize, purpose: u64) -> u64 {
    let mut z = base
        .wrapping_add((realization as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(purpose.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One simulated realization: ground-truth phase plus clean and noisy stacks.
#[derive(Clone, Debug)]
pub struct Realization {
    pub index: usize,
    pub phase: RealImage,
    pub clean: MeasurementSet,
    pub measured: MeasurementSet,
}

pub fn simulate_realization(cfg: &ExperimentConfig, ap: &ApertureModel, index: usize) -> Result<Realization> {
    let phase = generate_phase(ap, &cfg.phase, derive_seed(cfg.seed, index, 0));
    let clean = simulate_defocus_stack(ap, &phase, cfg.diversity.m, cfg.diversity.spacing_dof)?;
    let measured = add_gaussian_noise(&clean, cfg.noise.effective_snr()?, derive_seed(cfg.seed, index, 1))?;
    Ok(Realization { index, phase, clean, measured })
}

/// Output of a single retrieval.
#[derive(Clone, Debug)]
pub struct Retrieval {
    pub phase: RealImage,
    pub flagged_pixels: usize,
    /// Vectorial runs only.
    pub trace: Option<RunTrace>,
    pub residuals: Vec<f64>,
}

fn start_phase(ap: &ApertureModel, init: InitKind, seed: u64) -> RealImage {
    match init {
        InitKind::Flat => RealImage::zeros(ap.n()),
        InitKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = ap.n();
            RealImage::from_fn(n, |i, j| {
                let v = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                if ap.mask()[i * n + j] { v } else { 0.0 }
            })
        }
    }
}

/// Mask-uniform amplitude with total `energy = scale * ||A||^2`.
fn uniform_amplitude(ap: &ApertureModel, energy: f64, scale: f64) -> RealImage {
    let a = (energy / (scale * ap.mask_count() as f64)).sqrt();
    RealImage::from_raw(ap.n(), ap.mask().iter().map(|&m| if m { a } else { 0.0 }).collect())
}

/// Runs `algo` on `ms` from the chosen start. Unknown-amplitude runs start
/// from a flat amplitude carrying the data energy.
pub fn retrieve(
    ap: &ApertureModel,
    ms: &MeasurementSet,
    algo: &ResolvedAlgorithm,
    init: InitKind,
    seed: u64,
) -> Result<Retrieval> {
    let phi0 = start_phase(ap, init, seed);
    let energy = ms.intensities.iter().map(RealImage::sum).sum::<f64>() / ms.m() as f64;
    match &algo.method {
        Method::Scalar => {
            let start = ap.pupil(&uniform_amplitude(ap, energy, 1.0), &phi0);
            let run = scalar_alternating_projections(ap, ms, &start, algo.schedule.total())?;
            Ok(Retrieval { phase: run.phase, flagged_pixels: 0, trace: None, residuals: run.residuals })
        }
        Method::Vectorial { family, beta, model } => {
            let problem = Problem::new(ap.clone(), ms)?;
            let amplitude = if model.known_amplitude() {
                problem.amplitude().clone()
            } else {
                uniform_amplitude(ap, energy, 2.0)
            };
            let spec = OperatorSpec::for_model(*family, *beta, *model, ms.m())?;
            let x0 = initial_iterate(ap, &amplitude, &phi0, model.block_count(ms.m()))?;
            let trace = schedule_extrapolate_then_average(&problem, &spec, &x0, algo.schedule.k1, algo.schedule.k2)?;
            let est = extract_phase(&trace.final_iterate, ap)?;
            Ok(Retrieval {
                phase: est.phase,
                flagged_pixels: est.flagged.len(),
                residuals: trace.residuals.clone(),
                trace: Some(trace),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub realization: usize,
    /// Relative RMS phase error (fraction, not percent); absent on failure.
    pub error: Option<f64>,
    pub iterations: usize,
    pub runtime_s: f64,
    pub failure: Option<String>,
    pub degenerate_pixels: usize,
    /// Distance to the data set when the averaging stage starts and at the end.
    pub gap_at_stage_boundary: Option<f64>,
    pub final_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub schedule: Schedule,
    pub beta: Option<f64>,
    pub known_amplitude: bool,
    /// Set for the scalar baseline, which fits vectorial data with the scalar model.
    pub model_mismatched: bool,
    pub runs: usize,
    pub failures: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: ExperimentConfig,
    pub phase_basis: String,
    pub records: Vec<RunRecord>,
    pub summaries: Vec<AlgorithmSummary>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(algo: &ResolvedAlgorithm, records: &[&RunRecord]) -> AlgorithmSummary {
    let mut errs: Vec<f64> = records.iter().filter_map(|r| r.error).collect();
    errs.sort_by(f64::total_cmp);
    let k = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / k;
    let variance = if errs.len() > 1 { errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    let (q1, median, q3) = (quantile(&errs, 0.25), quantile(&errs, 0.5), quantile(&errs, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = errs.iter().copied().filter(|&e| e >= lo_fence && e <= hi_fence).collect();
    AlgorithmSummary {
        algorithm: algo.label.clone(),
        schedule: algo.schedule,
        beta: algo.beta(),
        known_amplitude: algo.known_amplitude,
        model_mismatched: algo.method == Method::Scalar,
        runs: records.len(),
        failures: records.len() - errs.len(),
        mean,
        variance,
        min: errs.first().copied().unwrap_or(f64::NAN),
        q1,
        median,
        q3,
        max: errs.last().copied().unwrap_or(f64::NAN),
        whisker_low: inside.first().copied().unwrap_or(f64::NAN),
        whisker_high: inside.last().copied().unwrap_or(f64::NAN),
        outliers: errs.iter().copied().filter(|&e| e < lo_fence || e > hi_fence).collect(),
    }
}

fn run_one(ap: &ApertureModel, cfg: &ExperimentConfig, real: &Realization, algo: &ResolvedAlgorithm) -> RunRecord {
    let start = Instant::now();
    let outcome = retrieve(ap, &real.measured, algo, cfg.init, derive_seed(cfg.seed, real.index, 2))
        .and_then(|r| {
            let e = relative_rms(&r.phase, &real.phase, ap.mask())?;
            if e.is_finite() { Ok((e, r)) } else { Err(Error::NonFinite { iteration: 0 }) }
        });
    let runtime_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((error, r)) => {
            let (gap_at_stage_boundary, final_gap, degenerate) = match &r.trace {
                Some(t) => (
                    t.stage_boundary.and_then(|b| t.gaps.get(b).copied()),
                    t.gaps.last().copied(),
                    t.total_degenerate(),
                ),
                None => (None, None, 0),
            };
            RunRecord {
                algorithm: algo.label.clone(),
                realization: real.index,
                error: Some(error),
                iterations: r.residuals.len(),
                runtime_s,
                failure: None,
                degenerate_pixels: degenerate + r.flagged_pixels,
                gap_at_stage_boundary,
                final_gap,
            }
        }
        Err(e) => RunRecord {
            algorithm: algo.label.clone(),
            realization: real.index,
            error: None,
            iterations: 0,
            runtime_s,
            failure: Some(e.to_string()),
            degenerate_pixels: 0,
            gap_at_stage_boundary: None,
            final_gap: None,
        },
    }
}

/// Runs `f` on a pool capped by `VECPR_THREADS` when that is set.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var("VECPR_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// Simulates every realization and runs every configured algorithm on it.
/// Failed runs are recorded, not propagated.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let ap = cfg.aperture.build()?;
    let algos = cfg.resolved_algorithms()?;
    let per_realization: Vec<Vec<RunRecord>> = with_thread_cap(|| {
        (0..cfg.realizations)
            .into_par_iter()
            .map(|r| {
                let real = simulate_realization(cfg, &ap, r)?;
                Ok(algos.par_iter().map(|a| run_one(&ap, cfg, &real, a)).collect())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut records = Vec::with_capacity(cfg.realizations * algos.len());
    for a in 0..algos.len() {
        records.extend(per_realization.iter().map(|runs| runs[a].clone()));
    }
    let summaries = algos
        .iter()
        .map(|algo| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.algorithm == algo.label).collect();
            summarize(algo, &mine)
        })
        .collect();
    Ok(BenchmarkReport {
        config: cfg.clone(),
        phase_basis: format!("Zernike (Noll) modes 2..={}", cfg.phase.max_mode),
        records,
        summaries,
    })
}

impl BenchmarkReport {
    pub fn summary(&self, label: &str) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == label)
    }

    /// Mean relative RMS error in percent.
    pub fn mean_percent(&self, label: &str) -> Option<f64> {
        self.summary(label).map(|s| 100.0 * s.mean)
    }

    /// Rows `algorithm`, `iterations`, `beta`, `mean_error_percent`, one column per algorithm.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("algorithm");
        for s in &self.summaries {
            out.push(',');
            out.push_str(&s.algorithm);
        }
        out.push_str("\niterations");
        for s in &self.summaries {
            out.push_str(&format!(",{}", s.schedule));
        }
        out.push_str("\nbeta");
        for s in &self.summaries {
            match s.beta {
                Some(b) => out.push_str(&format!(",{b}")),
                None => out.push_str(",-"),
            }
        }
        out.push_str("\nmean_error_percent");
        for s in &self.summaries {
            out.push_str(&format!(",{:.2}", 100.0 * s.mean));
        }
        out.push('\n');
        out
    }

    /// One row per algorithm with box-plot statistics in percent; outliers `;`-separated.
    pub fn boxplot_csv(&self) -> String {
        let mut out = String::from("algorithm,runs,failures,mean,min,whisker_low,q1,median,q3,whisker_high,max,outliers\n");
        for s in &self.summaries {
            let outliers: Vec<String> = s.outliers.iter().map(|o| format!("{:.6}", 100.0 * o)).collect();
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                s.algorithm,
                s.runs,
                s.failures,
                100.0 * s.mean,
                100.0 * s.min,
                100.0 * s.whisker_low,
                100.0 * s.q1,
                100.0 * s.median,
                100.0 * s.q3,
                100.0 * s.whisker_high,
                100.0 * s.max,
                outliers.join(";"),
            ));
        }
        out
    }

    /// Writes `report.json`, `table.csv` and `boxplot.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        write_atomic(&dir.join("table.csv"), self.table_csv().as_bytes())?;
        write_atomic(&dir.join("boxplot.csv"), self.boxplot_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            aperture: ApertureConfig { n: 32, ..ApertureConfig::default() },
            diversity: DiversityConfig { m: 3, spacing_dof: 1.0 },
            realizations: 2,
            algorithms: vec![
                AlgorithmConfig::new("SAM", None, Schedule::plain(5), false),
                AlgorithmConfig::new("VAM", None, Schedule::plain(5), false),
                AlgorithmConfig::new("RAAR", Some(0.9), Schedule { k1: 3, k2: 2 }, true),
            ],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn schedule_parsing() {
        assert_eq!("30+20".parse::<Schedule>().unwrap(), Schedule { k1: 30, k2: 20 });
        assert_eq!("100".parse::<Schedule>().unwrap(), Schedule::plain(100));
        assert_eq!(Schedule { k1: 30, k2: 20 }.to_string(), "30+20");
        assert!("0".parse::<Schedule>().is_err());
        assert!("a+2".parse::<Schedule>().is_err());
    }

    #[test]
    fn labels_follow_the_table() {
        let labels: Vec<String> = ExperimentConfig::default()
            .resolved_algorithms()
            .unwrap()
            .into_iter()
            .map(|a| a.label)
            .collect();
        assert_eq!(labels, ["SAM", "VAM", "DRAP", "RAAR", "VAM+", "DRAP+", "RAAR+"]);
    }

    #[test]
    fn config_round_trips_through_toml_and_json() {
        let cfg = tiny_config();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
        let partial = ExperimentConfig::from_toml("realizations = 3\n[aperture]\nn = 64\n").unwrap();
        assert_eq!(partial.aperture.n, 64);
        assert_eq!(partial.diversity.m, 7);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny_config();
        cfg.realizations = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny_config();
        cfg.algorithms[0].name = "GS".into();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.algorithms[2].beta = Some(1.5);
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn benchmark_is_deterministic_and_consistent() {
        let cfg = tiny_config();
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        let errs = |r: &BenchmarkReport| r.records.iter().map(|x| x.error.unwrap().to_bits()).collect::<Vec<_>>();
        assert_eq!(errs(&a), errs(&b));
        assert_eq!(a.records.len(), 6);
        for s in &a.summaries {
            let mine: Vec<f64> = a.records.iter().filter(|r| r.algorithm == s.algorithm).map(|r| r.error.unwrap()).collect();
            assert!((s.mean - mine.iter().sum::<f64>() / mine.len() as f64).abs() < 1e-15);
            assert!(s.min >= 0.0);
        }
        assert!(a.summary("SAM").unwrap().model_mismatched);
        let table = a.table_csv();
        assert!(table.starts_with("algorithm,SAM,VAM,RAAR+\niterations,5,5,3+2\nbeta,-,-,0.9\n"));
    }
}
