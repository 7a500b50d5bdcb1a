//! The `vecpr` command line: simulate, retrieve, benchmark, psf-compare and diagnose.
//!
//! Every subcommand writes into `--out`; arrays use the flat binary format of
//! [`crate::field::io`], everything else is JSON or CSV. Failures print a JSON
//! record `{"error": kind, "message": ..., "exit_code": code}` to stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::io::{read_json, read_real_stack, write_atomic, write_complex_stack, write_json, write_real_stack};
use crate::harness::benchmark::{derive_seed, simulate_realization, AlgorithmConfig, Method, ResolvedAlgorithm, Schedule};
use crate::harness::compare::{compare_psf_models, cross_sections_csv, discrepancy_csv, CompareOptions};
use crate::harness::{relative_rms, retrieve, run_benchmark, ExperimentConfig};
use crate::projectors::{project_d, Problem};
use crate::psf::{ApertureModel, MeasurementSet};
use crate::solvers::{check_almost_averaged, check_operator_averaged, AveragednessCertificate, OperatorSpec, RateEstimate};

#[derive(Debug, Parser)]
#[command(name = "vecpr", version, about = "High-NA phase retrieval with a vectorial PSF model")]
pub struct Cli {
    /// Print nothing on success.
    #[arg(long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// Print per-algorithm details.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one realization: ground-truth phase, clean and noisy stacks.
    Simulate(SimulateArgs),
    /// Run one algorithm on a simulated or stored measurement set.
    Retrieve(RetrieveArgs),
    /// Run the configured algorithms over all realizations.
    Benchmark(CommonArgs),
    /// Scalar versus vectorial PSF cross-sections over a list of NA values.
    PsfCompare(PsfCompareArgs),
    /// Averagedness certificates and rate estimate for a retrieval.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML, or JSON with a .json extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated algorithm names (SAM, VAM, AP, DR, KMDR, HPR, RAAR, RRR, DRAP, CP, CDR, CRAAR).
    #[arg(long, value_delimiter = ',')]
    pub algo: Vec<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Iteration schedule `K` or `K1+K2`.
    #[arg(long)]
    pub iters: Option<Schedule>,
    #[arg(long)]
    pub known_amplitude: bool,
    /// Feasibility model: pr1, pr3, pr4, or the known-amplitude pr1p, pr3p, pr4p.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Realization index within the configured seed stream.
    #[arg(long, default_value_t = 0)]
    pub realization: usize,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory written by `simulate` (or laid out the same way).
    #[arg(long)]
    pub input: PathBuf,
    /// Also write the final iterate's first block.
    #[arg(long)]
    pub dump_iterate: bool,
}

#[derive(Debug, Args)]
pub struct PsfCompareArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.15, 0.55, 0.95])]
    pub na: Vec<f64>,
    #[arg(long, default_value_t = 128)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub input: PathBuf,
    /// Sampled pairs per certificate.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Ball radius relative to the norm of the final iterate.
    #[arg(long, default_value_t = 1e-3)]
    pub radius: f64,
}

/// Parses `args` (including the program name), runs the subcommand and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            report_error(&Error::Config(e.to_string().trim().to_string()));
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            e.exit_code()
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

fn report_error(e: &Error) {
    let rec = ErrorRecord { error: e.kind(), message: e.to_string(), exit_code: e.exit_code() };
    eprintln!("{}", serde_json::to_string(&rec).expect("error record serializes"));
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Retrieve(a) => retrieve_cmd(cli, a),
        Command::Benchmark(a) => benchmark(cli, a),
        Command::PsfCompare(a) => psf_compare(cli, a),
        Command::Diagnose(a) => diagnose(cli, a),
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) if !path.exists() => {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("config file {} not found", path.display()),
            )))
        }
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.known_amplitude {
        cfg.known_amplitude = true;
    }
    if !common.algo.is_empty() {
        cfg.algorithms = common
            .algo
            .iter()
            .map(|name| AlgorithmConfig {
                name: name.clone(),
                beta: None,
                iterations: default_schedule(name),
                known_amplitude: None,
                model: None,
            })
            .collect();
    }
    for a in &mut cfg.algorithms {
        if common.beta.is_some() {
            a.beta = common.beta;
        }
        if let Some(s) = common.iters {
            a.iterations = s;
        }
        if common.known_amplitude {
            a.known_amplitude = Some(true);
        }
        if let Some(m) = &common.model {
            a.model = Some(m.clone());
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// 100 plain iterations for projection methods, 30+20 for the relaxed ones.
fn default_schedule(name: &str) -> Schedule {
    match name.to_ascii_uppercase().as_str() {
        "SAM" | "VAM" | "AP" | "CP" => Schedule::plain(100),
        _ => Schedule { k1: 30, k2: 20 },
    }
}

fn say(cli: &Cli, msg: impl FnOnce() -> String) {
    if !cli.quiet {
        println!("{}", msg());
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let ap = cfg.aperture.build()?;
    let real = simulate_realization(&cfg, &ap, a.realization)?;
    let out = &a.common.out;
    write_json(&out.join("config.json"), &cfg)?;
    ap.save(&out.join("aperture"))?;
    real.measured.save(&out.join("measurement"))?;
    real.clean.save(&out.join("clean"))?;
    write_real_stack(&out.join("phase_truth"), std::slice::from_ref(&real.phase))?;
    write_json(&out.join("simulation.json"), &SimulationMeta { realization: a.realization, seed: cfg.seed })?;
    say(cli, || format!("simulated {} images of {}x{} into {}", real.measured.m(), ap.n(), ap.n(), out.display()));
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SimulationMeta {
    realization: usize,
    seed: u64,
}

struct Inputs {
    ap: ApertureModel,
    ms: MeasurementSet,
    truth: Option<crate::field::RealImage>,
    realization: usize,
}

fn load_inputs(dir: &Path) -> Result<Inputs> {
    let ap = ApertureModel::load(&dir.join("aperture"))?;
    let ms = MeasurementSet::load(&dir.join("measurement"))?;
    let truth_stem = dir.join("phase_truth");
    let truth = if crate::field::io::sidecar_path(&truth_stem).exists() {
        read_real_stack(&truth_stem)?.into_iter().next()
    } else {
        None
    };
    let sim = dir.join("simulation.json");
    let realization = if sim.exists() { read_json::<SimulationMeta>(&sim)?.realization } else { 0 };
    Ok(Inputs { ap, ms, truth, realization })
}

#[derive(Serialize)]
struct RetrievalSummary {
    algorithm: String,
    schedule: Schedule,
    beta: Option<f64>,
    known_amplitude: bool,
    iterations: usize,
    relative_rms_error: Option<f64>,
    flagged_pixels: usize,
    rate_estimate: Option<RateEstimate>,
}

fn first_algorithm(cfg: &ExperimentConfig) -> Result<ResolvedAlgorithm> {
    cfg.resolved_algorithms()?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config("no algorithm selected".into()))
}

fn retrieve_cmd(cli: &Cli, a: &RetrieveArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if a.common.algo.is_empty() && a.common.config.is_none() {
        cfg.algorithms = vec![AlgorithmConfig {
            name: "VAM".into(),
            beta: a.common.beta,
            iterations: a.common.iters.unwrap_or(Schedule::plain(100)),
            known_amplitude: Some(a.common.known_amplitude),
            model: a.common.model.clone(),
        }];
        cfg.validate()?;
    }
    let algo = first_algorithm(&cfg)?;
    let inputs = load_inputs(&a.input)?;
    let seed = derive_seed(cfg.seed, inputs.realization, 2);
    let r = retrieve(&inputs.ap, &inputs.ms, &algo, cfg.init, seed)?;
    let error = inputs.truth.as_ref().map(|t| relative_rms(&r.phase, t, inputs.ap.mask())).transpose()?;
    let out = &a.common.out;
    write_real_stack(&out.join("phase_estimate"), std::slice::from_ref(&r.phase))?;
    if let Some(trace) = &r.trace {
        write_json(&out.join("trace.json"), trace)?;
        if a.dump_iterate {
            write_complex_stack(&out.join("final_iterate"), trace.final_iterate.block(0).channels())?;
        }
    } else {
        write_json(&out.join("trace.json"), &serde_json::json!({ "label": algo.label, "residuals": r.residuals }))?;
    }
    let summary = RetrievalSummary {
        algorithm: algo.label.clone(),
        schedule: algo.schedule,
        beta: algo.beta(),
        known_amplitude: algo.known_amplitude,
        iterations: r.residuals.len(),
        relative_rms_error: error,
        flagged_pixels: r.flagged_pixels,
        rate_estimate: r.trace.as_ref().and_then(|t| t.rate_estimate),
    };
    write_json(&out.join("result.json"), &summary)?;
    say(cli, || match error {
        Some(e) => format!("{}: relative RMS error {:.3}%", algo.label, 100.0 * e),
        None => format!("{}: phase written to {}", algo.label, out.display()),
    });
    Ok(())
}

fn benchmark(cli: &Cli, a: &CommonArgs) -> Result<()> {
    let cfg = load_config(a)?;
    let report = run_benchmark(&cfg)?;
    report.write(&a.out)?;
    say(cli, || {
        let mut s = report.table_csv();
        if cli.verbose {
            for sum in &report.summaries {
                s.push_str(&format!(
                    "{}: median {:.2}% iqr [{:.2}, {:.2}] failures {}\n",
                    sum.algorithm,
                    100.0 * sum.median,
                    100.0 * sum.q1,
                    100.0 * sum.q3,
                    sum.failures
                ));
            }
        }
        s.trim_end().to_string()
    });
    Ok(())
}

fn psf_compare(cli: &Cli, a: &PsfCompareArgs) -> Result<()> {
    let opts = CompareOptions { n: a.n, ..CompareOptions::default() };
    let rows = compare_psf_models(&a.na, &opts)?;
    write_atomic(&a.out.join("cross_sections.csv"), cross_sections_csv(&rows).as_bytes())?;
    write_atomic(&a.out.join("discrepancy.csv"), discrepancy_csv(&rows).as_bytes())?;
    write_json(&a.out.join("comparison.json"), &rows)?;
    say(cli, || discrepancy_csv(&rows).trim_end().to_string());
    Ok(())
}

#[derive(Serialize)]
struct Diagnosis {
    algorithm: String,
    iterations: usize,
    rate_estimate: Option<RateEstimate>,
    final_residual: Option<f64>,
    operator_certificate: AveragednessCertificate,
    averaging_certificate: AveragednessCertificate,
}

fn diagnose(cli: &Cli, a: &DiagnoseArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if a.common.algo.is_empty() && a.common.config.is_none() {
        cfg.algorithms = vec![AlgorithmConfig::new("VAM", None, a.common.iters.unwrap_or(Schedule::plain(100)), a.common.known_amplitude)];
    }
    let algo = first_algorithm(&cfg)?;
    let Method::Vectorial { family, beta, model } = algo.method else {
        return Err(Error::Config("diagnose needs a vectorial algorithm".into()));
    };
    let inputs = load_inputs(&a.input)?;
    let r = retrieve(&inputs.ap, &inputs.ms, &algo, cfg.init, derive_seed(cfg.seed, inputs.realization, 2))?;
    let trace = r.trace.expect("vectorial runs carry a trace");
    let problem = Problem::new(inputs.ap.clone(), &inputs.ms)?;
    let center = &trace.final_iterate;
    let radius = a.radius * center.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, inputs.realization, 3));
    let spec = OperatorSpec::for_model(family, beta, model, inputs.ms.m())?.averaging_counterpart();
    let op_cert = check_operator_averaged(&problem, &spec, center, radius, a.samples, 2.0 / 3.0, &mut rng)?;
    let avg_cert = check_almost_averaged(|u| Ok(project_d(u)), center, radius, a.samples, 0.5, &mut rng)?;
    let diag = Diagnosis {
        algorithm: algo.label.clone(),
        iterations: trace.iterations(),
        rate_estimate: trace.rate_estimate,
        final_residual: trace.residuals.last().copied(),
        operator_certificate: op_cert,
        averaging_certificate: avg_cert,
    };
    write_json(&a.common.out.join("diagnose.json"), &diag)?;
    say(cli, || {
        format!(
            "{} certificate: epsilon {:.3e} (alpha 2/3, worst ratio {:.6}); rate {}",
            spec.family,
            diag.operator_certificate.epsilon,
            diag.operator_certificate.worst_ratio,
            diag.rate_estimate.map_or("n/a".to_string(), |r| format!("{:.4}", r.rate))
        )
    });
    Ok(())
}
