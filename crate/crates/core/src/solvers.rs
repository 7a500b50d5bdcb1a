//! Fixed-point operators built from projector pairs or cycles, the iteration
//! driver, phase read-out and convergence diagnostics.
//!
//! Two-set operators, with `P_B` evaluated once per step and reused:
//!
//! | family | operator |
//! |--------|----------|
//! | AP     | `P_A P_B` |
//! | DR     | `(R_A R_B + Id) / 2` |
//! | KM-DR  | `beta * DR + (1 - beta) * Id` |
//! | HPR    | `P_A((1 + beta) P_B - Id) - beta P_B + Id` |
//! | RAAR   | `beta/2 (R_A R_B + Id) + (1 - beta) P_B` |
//! | RRR    | `beta P_A(2 P_B - Id) - beta P_B + Id` |
//! | DRAP   | `P_A((1 + beta) P_B - beta Id) - beta (P_B - Id)` |
//!
//! Cyclic operators over `[S_0, ..., S_L-1]` compose right to left:
//! CP is `P_S0 P_S1 ... P_S(L-1)`, CDR and CRAAR chain the two-set
//! DR / RAAR operators on `(S_k, S_k+1)` with the last pair wrapping to `S_0`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{diagonal_average, duplicate, ComplexImage, ProductIterate, RealImage, SixChannelField};
use crate::projectors::{omega0_pupil, ConstraintSet, Problem};
use crate::psf::{embed_pupil, ApertureModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Ap,
    Dr,
    KmDr,
    Hpr,
    Raar,
    Rrr,
    Drap,
    Cp,
    Cdr,
    Craar,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Ap,
        Family::Dr,
        Family::KmDr,
        Family::Hpr,
        Family::Raar,
        Family::Rrr,
        Family::Drap,
        Family::Cp,
        Family::Cdr,
        Family::Craar,
    ];

    pub fn is_cyclic(self) -> bool {
        matches!(self, Family::Cp | Family::Cdr | Family::Craar)
    }

    pub fn uses_beta(self) -> bool {
        matches!(
            self,
            Family::KmDr | Family::Hpr | Family::Raar | Family::Rrr | Family::Drap | Family::Craar
        )
    }

    /// 0.95 for RAAR-type and DRAP; 0.75 where no benchmark value exists.
    pub fn default_beta(self) -> f64 {
        match self {
            Family::Raar | Family::Drap | Family::Craar => 0.95,
            Family::KmDr | Family::Hpr | Family::Rrr => 0.75,
            _ => 1.0,
        }
    }

    fn check_beta(self, beta: f64) -> Result<()> {
        if !self.uses_beta() {
            return Ok(());
        }
        let ok = if self == Family::Drap {
            (0.0..=1.0).contains(&beta)
        } else {
            beta > 0.0 && beta <= 1.0
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("beta = {beta} out of range for {self}")))
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Ap => "AP",
            Family::Dr => "DR",
            Family::KmDr => "KM-DR",
            Family::Hpr => "HPR",
            Family::Raar => "RAAR",
            Family::Rrr => "RRR",
            Family::Drap => "DRAP",
            Family::Cp => "CP",
            Family::Cdr => "CDR",
            Family::Craar => "CRAAR",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_uppercase();
        Family::ALL
            .into_iter()
            .find(|f| f.name().replace('-', "") == key)
            .ok_or_else(|| Error::param(format!("unknown algorithm family '{s}'")))
    }
}

/// Feasibility formulations. The `Known` variants use the amplitude set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Model {
    /// Cycle `Omega0, Omega_1, ..., Omega_m`.
    Pr1,
    /// Pair `(A, B)` in the m-fold product.
    Pr3,
    /// Pair `(D, BPlus)` in the (m+1)-fold product.
    Pr4,
    Pr1Known,
    Pr3Known,
    Pr4Known,
}

impl Model {
    pub fn known_amplitude(self) -> bool {
        matches!(self, Model::Pr1Known | Model::Pr3Known | Model::Pr4Known)
    }

    /// The known- or unknown-amplitude counterpart of this model.
    pub fn with_known_amplitude(self, known: bool) -> Self {
        use Model::*;
        match (self, known) {
            (Pr1 | Pr1Known, false) => Pr1,
            (Pr1 | Pr1Known, true) => Pr1Known,
            (Pr3 | Pr3Known, false) => Pr3,
            (Pr3 | Pr3Known, true) => Pr3Known,
            (Pr4 | Pr4Known, false) => Pr4,
            (Pr4 | Pr4Known, true) => Pr4Known,
        }
    }

    pub fn is_cyclic(self) -> bool {
        matches!(self, Model::Pr1 | Model::Pr1Known)
    }

    pub fn sets(self, m: usize) -> SetSystem {
        let data = (1..=m).map(ConstraintSet::OmegaD);
        match self {
            Model::Pr1 => SetSystem::Cycle(std::iter::once(ConstraintSet::Omega0).chain(data).collect()),
            Model::Pr1Known => SetSystem::Cycle(std::iter::once(ConstraintSet::Chi).chain(data).collect()),
            Model::Pr3 => SetSystem::Pair { a: ConstraintSet::A, b: ConstraintSet::B },
            Model::Pr3Known => SetSystem::Pair { a: ConstraintSet::AChi, b: ConstraintSet::B },
            Model::Pr4 => SetSystem::Pair { a: ConstraintSet::D, b: ConstraintSet::BPlus },
            Model::Pr4Known => SetSystem::Pair { a: ConstraintSet::D, b: ConstraintSet::BChi },
        }
    }

    pub fn block_count(self, m: usize) -> usize {
        match self {
            Model::Pr1 | Model::Pr1Known => 1,
            Model::Pr3 | Model::Pr3Known => m,
            Model::Pr4 | Model::Pr4Known => m + 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Model::Pr1 => "pr1",
            Model::Pr3 => "pr3",
            Model::Pr4 => "pr4",
            Model::Pr1Known => "pr1p",
            Model::Pr3Known => "pr3p",
            Model::Pr4Known => "pr4p",
        }
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pr1" => Ok(Model::Pr1),
            "pr3" => Ok(Model::Pr3),
            "pr4" => Ok(Model::Pr4),
            "pr1p" | "pr1'" => Ok(Model::Pr1Known),
            "pr3p" | "pr3'" => Ok(Model::Pr3Known),
            "pr4p" | "pr4'" => Ok(Model::Pr4Known),
            _ => Err(Error::param(format!("unknown model '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum SetSystem {
    Pair { a: ConstraintSet, b: ConstraintSet },
    Cycle(Vec<ConstraintSet>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorSpec {
    pub family: Family,
    pub beta: f64,
    pub sets: SetSystem,
}

impl OperatorSpec {
    pub fn new(family: Family, beta: f64, sets: SetSystem) -> Result<Self> {
        family.check_beta(beta)?;
        match (&sets, family.is_cyclic()) {
            (SetSystem::Pair { a, b }, false) => {
                if a.is_field_set() != b.is_field_set() {
                    return Err(Error::param("pair mixes field-level and product-level sets"));
                }
            }
            (SetSystem::Cycle(list), true) => {
                if list.len() < 2 || !list.iter().all(|s| s.is_field_set()) {
                    return Err(Error::param("cycles need at least two field-level sets"));
                }
            }
            (SetSystem::Pair { .. }, true) => {
                return Err(Error::param(format!("{family} needs a cyclic set list")));
            }
            (SetSystem::Cycle(_), false) => {
                return Err(Error::param(format!("{family} needs a two-set formulation")));
            }
        }
        Ok(Self { family, beta, sets })
    }

    pub fn for_model(family: Family, beta: f64, model: Model, m: usize) -> Result<Self> {
        Self::new(family, beta, model.sets(m))
    }

    /// The plain projection counterpart on the same sets (AP or CP).
    pub fn averaging_counterpart(&self) -> Self {
        let family = match self.sets {
            SetSystem::Pair { .. } => Family::Ap,
            SetSystem::Cycle(_) => Family::Cp,
        };
        Self { family, beta: 1.0, sets: self.sets.clone() }
    }

    pub fn block_count(&self, m: usize) -> usize {
        match &self.sets {
            SetSystem::Pair { a, .. } => a.block_count(m),
            SetSystem::Cycle(_) => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Step {
    pub next: ProductIterate,
    /// `||P_B(x) - x||` for the set applied first.
    pub gap: f64,
    /// Pixels where a projector made a selection during this step.
    pub degenerate: usize,
}

struct Projections<'a> {
    problem: &'a Problem,
    degenerate: usize,
}

impl Projections<'_> {
    fn project(&mut self, set: ConstraintSet, u: &ProductIterate) -> Result<ProductIterate> {
        let r = self.problem.project(set, u)?;
        self.degenerate += r.degenerate_pixels.len();
        Ok(r.point)
    }

    fn two_set(
        &mut self,
        family: Family,
        beta: f64,
        a: ConstraintSet,
        b: ConstraintSet,
        x: &ProductIterate,
    ) -> Result<(ProductIterate, f64)> {
        let comb = ProductIterate::combination;
        let pb = self.project(b, x)?;
        let gap = pb.distance(x);
        let next = match family {
            Family::Ap | Family::Cp => self.project(a, &pb)?,
            Family::Dr | Family::Cdr => {
                let rb = comb(&[(2.0, &pb), (-1.0, x)]);
                let pa = self.project(a, &rb)?;
                let ra = comb(&[(2.0, &pa), (-1.0, &rb)]);
                comb(&[(0.5, &ra), (0.5, x)])
            }
            Family::KmDr => {
                let rb = comb(&[(2.0, &pb), (-1.0, x)]);
                let pa = self.project(a, &rb)?;
                let dr = comb(&[(1.0, &pa), (-1.0, &pb), (1.0, x)]);
                comb(&[(beta, &dr), (1.0 - beta, x)])
            }
            Family::Hpr => {
                let y = comb(&[(1.0 + beta, &pb), (-1.0, x)]);
                let pa = self.project(a, &y)?;
                comb(&[(1.0, &pa), (-beta, &pb), (1.0, x)])
            }
            Family::Raar | Family::Craar => {
                let rb = comb(&[(2.0, &pb), (-1.0, x)]);
                let pa = self.project(a, &rb)?;
                let ra = comb(&[(2.0, &pa), (-1.0, &rb)]);
                comb(&[(0.5 * beta, &ra), (0.5 * beta, x), (1.0 - beta, &pb)])
            }
            Family::Rrr => {
                let rb = comb(&[(2.0, &pb), (-1.0, x)]);
                let pa = self.project(a, &rb)?;
                comb(&[(beta, &pa), (-beta, &pb), (1.0, x)])
            }
            Family::Drap => {
                let y = comb(&[(1.0 + beta, &pb), (-beta, x)]);
                let pa = self.project(a, &y)?;
                comb(&[(1.0, &pa), (-beta, &pb), (beta, x)])
            }
        };
        Ok((next, gap))
    }
}

/// One application of the operator described by `spec`.
pub fn step(problem: &Problem, spec: &OperatorSpec, x: &ProductIterate) -> Result<Step> {
    let want = spec.block_count(problem.m());
    if x.len() != want {
        return Err(Error::shape(format!("{} expects {want} blocks, iterate has {}", spec.family, x.len())));
    }
    let mut proj = Projections { problem, degenerate: 0 };
    let (next, gap) = match &spec.sets {
        SetSystem::Pair { a, b } => proj.two_set(spec.family, spec.beta, *a, *b, x)?,
        SetSystem::Cycle(sets) => {
            let len = sets.len();
            let mut cur = x.clone();
            let mut gap = None;
            for k in (0..len).rev() {
                let (next, g) = match spec.family {
                    Family::Cp => {
                        let p = proj.project(sets[k], &cur)?;
                        let g = p.distance(&cur);
                        (p, g)
                    }
                    fam => proj.two_set(fam, spec.beta, sets[k], sets[(k + 1) % len], &cur)?,
                };
                gap.get_or_insert(g);
                cur = next;
            }
            (cur, gap.unwrap_or(0.0))
        }
    };
    Ok(Step { next, gap, degenerate: proj.degenerate })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Fitted contraction factor `c` in `residual_k ~ gamma * c^k`.
    pub rate: f64,
    pub gamma: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunTrace {
    pub label: String,
    /// `||x_{k+1} - x_k||` per step.
    pub residuals: Vec<f64>,
    /// Distance to the first-applied set per step.
    pub gaps: Vec<f64>,
    pub degenerate_counts: Vec<usize>,
    /// Index of the first averaging step in a two-stage schedule.
    pub stage_boundary: Option<usize>,
    pub rate_estimate: Option<RateEstimate>,
    #[serde(skip)]
    pub final_iterate: ProductIterate,
    #[serde(skip)]
    pub iterates: Option<Vec<ProductIterate>>,
}

impl RunTrace {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    pub fn total_degenerate(&self) -> usize {
        self.degenerate_counts.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterateOptions {
    pub max_iter: usize,
    pub tol_residual: Option<f64>,
    pub store_iterates: bool,
}

impl IterateOptions {
    pub fn fixed(max_iter: usize) -> Self {
        Self { max_iter, tol_residual: None, store_iterates: false }
    }
}

/// Repeats [`step`] until the residual drops to `tol_residual` or `max_iter` is reached.
pub fn iterate(problem: &Problem, spec: &OperatorSpec, x0: &ProductIterate, opts: IterateOptions) -> Result<RunTrace> {
    if opts.max_iter == 0 {
        return Err(Error::param("max_iter must be at least 1"));
    }
    let mut trace = RunTrace {
        label: spec.family.to_string(),
        residuals: Vec::with_capacity(opts.max_iter),
        gaps: Vec::with_capacity(opts.max_iter),
        degenerate_counts: Vec::with_capacity(opts.max_iter),
        stage_boundary: None,
        rate_estimate: None,
        final_iterate: x0.clone(),
        iterates: opts.store_iterates.then(|| vec![x0.clone()]),
    };
    run_steps(problem, spec, &mut trace, opts)?;
    trace.rate_estimate = fit_linear_rate(&trace.residuals);
    Ok(trace)
}

fn run_steps(problem: &Problem, spec: &OperatorSpec, trace: &mut RunTrace, opts: IterateOptions) -> Result<()> {
    for _ in 0..opts.max_iter {
        let s = step(problem, spec, &trace.final_iterate)?;
        if !s.next.is_finite() {
            return Err(Error::NonFinite { iteration: trace.residuals.len() + 1 });
        }
        let residual = s.next.distance(&trace.final_iterate);
        trace.residuals.push(residual);
        trace.gaps.push(s.gap);
        trace.degenerate_counts.push(s.degenerate);
        if let Some(list) = trace.iterates.as_mut() {
            list.push(s.next.clone());
        }
        trace.final_iterate = s.next;
        if opts.tol_residual.is_some_and(|tol| residual <= tol) {
            break;
        }
    }
    Ok(())
}

/// `k1` steps of `spec` followed by `k2` steps of the plain projection
/// method (AP or CP) on the same sets, in one trace.
pub fn schedule_extrapolate_then_average(
    problem: &Problem,
    spec: &OperatorSpec,
    x0: &ProductIterate,
    k1: usize,
    k2: usize,
) -> Result<RunTrace> {
    if k1 + k2 == 0 {
        return Err(Error::param("schedule needs at least one iteration"));
    }
    let mut trace = RunTrace {
        label: if k2 > 0 { format!("{}({k1}+{k2})", spec.family) } else { spec.family.to_string() },
        residuals: Vec::new(),
        gaps: Vec::new(),
        degenerate_counts: Vec::new(),
        stage_boundary: None,
        rate_estimate: None,
        final_iterate: x0.clone(),
        iterates: None,
    };
    if k1 > 0 {
        run_steps(problem, spec, &mut trace, IterateOptions::fixed(k1))?;
    }
    if k2 > 0 {
        trace.stage_boundary = Some(trace.residuals.len());
        run_steps(problem, &spec.averaging_counterpart(), &mut trace, IterateOptions::fixed(k2))?;
    }
    trace.rate_estimate = fit_linear_rate(&trace.residuals);
    Ok(trace)
}

/// Least-squares fit of `ln residual_k = ln gamma + k ln c`. Needs at least
/// ten positive residuals, `R^2 >= 0.9` and `0 < c < 1`.
pub fn fit_linear_rate(residuals: &[f64]) -> Option<RateEstimate> {
    let pts: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0.0 && r.is_finite())
        .map(|(k, &r)| (k as f64, r.ln()))
        .collect();
    if pts.len() < 10 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if syy <= 1e-24 * n || sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = sxy * sxy / (sxx * syy);
    let rate = slope.exp();
    (r_squared >= 0.9 && rate > 0.0 && rate < 1.0).then_some(RateEstimate {
        rate,
        gamma: intercept.exp(),
        r_squared,
    })
}

pub fn estimate_linear_rate(trace: &RunTrace) -> Option<RateEstimate> {
    fit_linear_rate(&trace.residuals)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseEstimate {
    pub phase: RealImage,
    /// Aperture pixels where the pupil vanished and phase 0 was assigned.
    pub flagged: Vec<(usize, usize)>,
}

/// Reads the pupil phase `arg(1/2 sum_c E_c xbar_c)` off an iterate, with
/// `xbar` the block average. Values lie in `(-pi, pi]`, zero off the aperture.
pub fn extract_phase(x: &ProductIterate, ap: &ApertureModel) -> Result<PhaseEstimate> {
    if x.n() != ap.n() {
        return Err(Error::shape("iterate and aperture grid sizes differ"));
    }
    let pupil = omega0_pupil(ap, &diagonal_average(x));
    let n = ap.n();
    let mut flagged = Vec::new();
    let data = pupil
        .data()
        .iter()
        .enumerate()
        .map(|(idx, z)| {
            if !ap.mask()[idx] {
                0.0
            } else if z.norm() == 0.0 {
                flagged.push((idx / n, idx % n));
                0.0
            } else {
                let a = z.arg();
                if a <= -std::f64::consts::PI { std::f64::consts::PI } else { a }
            }
        })
        .collect();
    Ok(PhaseEstimate { phase: RealImage::from_raw(n, data), flagged })
}

/// Lifted starting point `[embed(amplitude * e^{j phase})]_p`.
pub fn initial_iterate(ap: &ApertureModel, amplitude: &RealImage, phase: &RealImage, blocks: usize) -> Result<ProductIterate> {
    let x = embed_pupil(ap, &ap.pupil(amplitude, phase))?;
    duplicate(&x, blocks)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AveragednessCertificate {
    /// Smallest violation making every sampled pair satisfy the inequality.
    pub epsilon: f64,
    pub alpha: f64,
    pub sample_count: usize,
    /// Largest `lhs / rhs` over the samples at the reported `epsilon`.
    pub worst_ratio: f64,
    pub radius: f64,
}

/// A point drawn uniformly in direction and in distance within `radius` of `center`.
fn sample_in_ball(center: &ProductIterate, radius: f64, rng: &mut impl Rng) -> ProductIterate {
    let n = center.n();
    let mut blocks: Vec<SixChannelField> = (0..center.len())
        .map(|_| {
            SixChannelField::from_raw(std::array::from_fn(|_| {
                ComplexImage::from_fn(n, |_, _| {
                    num_complex::Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                })
            }))
        })
        .collect();
    let norm = blocks.iter().map(SixChannelField::norm_sqr).sum::<f64>().sqrt();
    let scale = radius * rng.random::<f64>() / norm;
    for (block, c) in blocks.iter_mut().zip(center.blocks()) {
        for (ch, cc) in block.channels_mut().iter_mut().zip(c.channels()) {
            for (v, w) in ch.data_mut().iter_mut().zip(cc.data()) {
                *v = w + *v * scale;
            }
        }
    }
    ProductIterate::from_raw(blocks)
}

/// Samples `samples` pairs `(y, z)` in the ball of `radius` around `center`
/// and returns the smallest violation `epsilon` such that
///
/// `||Tz - Ty||^2 <= (1 + epsilon) ||z - y||^2 - (1 - alpha)/alpha ||(Tz - z) - (Ty - y)||^2`
///
/// holds on every sampled pair.
pub fn check_almost_averaged(
    operator: impl Fn(&ProductIterate) -> Result<ProductIterate> + Sync,
    center: &ProductIterate,
    radius: f64,
    samples: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<AveragednessCertificate> {
    if samples < 2 {
        return Err(Error::param("need at least two samples"));
    }
    if !(alpha > 0.0) || !(radius >= 0.0) {
        return Err(Error::param("alpha must be positive and radius nonnegative"));
    }
    let penalty = (1.0 - alpha) / alpha;
    // One seed per pair keeps the result independent of the thread count.
    let seeds: Vec<u64> = if radius > 0.0 { (0..samples).map(|_| rng.random()).collect() } else { Vec::new() };
    let sampled: Vec<Option<(f64, f64)>> = seeds
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = sample_in_ball(center, radius, &mut rng);
            let z = sample_in_ball(center, radius, &mut rng);
            let ty = operator(&y)?;
            let tz = operator(&z)?;
            let base = z.distance(&y).powi(2);
            if base == 0.0 {
                return Ok(None);
            }
            let lhs = tz.distance(&ty).powi(2);
            let moved = ProductIterate::combination(&[(1.0, &tz), (-1.0, &z), (-1.0, &ty), (1.0, &y)]);
            Ok(Some((lhs + penalty * moved.norm_sqr(), base)))
        })
        .collect::<Result<_>>()?;
    let terms: Vec<(f64, f64)> = sampled.into_iter().flatten().collect();
    let mut epsilon = terms
        .iter()
        .map(|&(num, base)| num / base - 1.0)
        .fold(0.0, f64::max);
    let worst = |eps: f64| terms.iter().map(|&(num, base)| num / ((1.0 + eps) * base)).fold(0.0, f64::max);
    let mut worst_ratio = worst(epsilon);
    while worst_ratio > 1.0 {
        epsilon = epsilon * (1.0 + 4.0 * f64::EPSILON) + f64::EPSILON;
        worst_ratio = worst(epsilon);
    }
    Ok(AveragednessCertificate {
        epsilon,
        alpha,
        sample_count: terms.len(),
        worst_ratio,
        radius,
    })
}

/// Certificate for the operator of `spec` on `problem` around `center`.
pub fn check_operator_averaged(
    problem: &Problem,
    spec: &OperatorSpec,
    center: &ProductIterate,
    radius: f64,
    samples: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<AveragednessCertificate> {
    check_almost_averaged(|x| Ok(step(problem, spec, x)?.next), center, radius, samples, alpha, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::field::frobenius_norm;
    use crate::projectors::project_d;
    use crate::testutil::{random_field, small_phase, small_problem};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_iterate(blocks: usize, seed: u64) -> ProductIterate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProductIterate::new((0..blocks).map(|_| random_field(8, &mut rng)).collect()).unwrap()
    }

    fn apply(problem: &Problem, family: Family, beta: f64, model: Model, x: &ProductIterate) -> ProductIterate {
        let spec = OperatorSpec::for_model(family, beta, model, problem.m()).unwrap();
        step(problem, &spec, x).unwrap().next
    }

    fn truth(problem: &Problem, blocks: usize) -> ProductIterate {
        let ap = problem.aperture();
        initial_iterate(ap, ap.amplitude(), &small_phase(), blocks).unwrap()
    }

    #[test]
    fn drap_endpoints_are_ap_and_dr() {
        let p = small_problem(3);
        for model in [Model::Pr3, Model::Pr4Known] {
            let x = random_iterate(model.block_count(3), 1);
            let ap = apply(&p, Family::Ap, 1.0, model, &x);
            let dr = apply(&p, Family::Dr, 1.0, model, &x);
            assert!(apply(&p, Family::Drap, 0.0, model, &x).distance(&ap) < 1e-12 * x.norm());
            assert!(apply(&p, Family::Drap, 1.0, model, &x).distance(&dr) < 1e-12 * x.norm());
        }
    }

    #[test]
    fn raar_is_a_blend_of_dr_and_pb() {
        let p = small_problem(2);
        let x = random_iterate(2, 2);
        let beta = 0.7;
        let dr = apply(&p, Family::Dr, 1.0, Model::Pr3, &x);
        let pb = p.project(ConstraintSet::B, &x).unwrap().point;
        let expected = ProductIterate::combination(&[(beta, &dr), (1.0 - beta, &pb)]);
        let raar = apply(&p, Family::Raar, beta, Model::Pr3, &x);
        assert!(raar.distance(&expected) < 1e-12 * x.norm());
    }

    #[test]
    fn relaxations_at_beta_one_reduce_to_dr() {
        let p = small_problem(2);
        let x = random_iterate(3, 3);
        let dr = apply(&p, Family::Dr, 1.0, Model::Pr4, &x);
        for fam in [Family::KmDr, Family::Hpr, Family::Rrr, Family::Raar] {
            let y = apply(&p, fam, 1.0, Model::Pr4, &x);
            assert!(y.distance(&dr) < 1e-12 * x.norm(), "{fam}");
        }
        let km = apply(&p, Family::KmDr, 0.4, Model::Pr4, &x);
        let expected = ProductIterate::combination(&[(0.4, &dr), (0.6, &x)]);
        assert!(km.distance(&expected) < 1e-12 * x.norm());
    }

    #[test]
    fn ap_iterates_stay_in_the_consistency_set() {
        let p = small_problem(3);
        let x = random_iterate(3, 4);
        let y = apply(&p, Family::Ap, 1.0, Model::Pr3, &x);
        assert!(y.is_diagonal(1e-12 * y.norm()));
        let b0 = y.block(0);
        assert!(b0.distance(&p.project_omega0(b0).unwrap()) < 1e-12 * b0.norm());
    }

    #[test]
    fn true_field_is_fixed_by_every_operator() {
        let p = small_problem(3);
        for model in [Model::Pr3, Model::Pr3Known, Model::Pr4, Model::Pr4Known] {
            let x = truth(&p, model.block_count(3));
            for fam in [Family::Ap, Family::Dr, Family::KmDr, Family::Hpr, Family::Raar, Family::Rrr, Family::Drap] {
                // HPR evaluates P_A(beta x) there, which only returns beta x on a cone
                if fam == Family::Hpr && model == Model::Pr3Known {
                    continue;
                }
                let y = apply(&p, fam, fam.default_beta(), model, &x);
                assert!(y.distance(&x) < 1e-9 * x.norm(), "{fam} {}", model.name());
            }
        }
        for model in [Model::Pr1, Model::Pr1Known] {
            let x = truth(&p, 1);
            for fam in [Family::Cp, Family::Cdr, Family::Craar] {
                let y = apply(&p, fam, fam.default_beta(), model, &x);
                assert!(y.distance(&x) < 1e-9 * x.norm(), "{fam} {}", model.name());
            }
        }
    }

    #[test]
    fn two_set_cycles_match_their_pair_compositions() {
        let p = small_problem(1);
        let x = random_iterate(1, 5);
        let (o0, o1) = (ConstraintSet::Omega0, ConstraintSet::OmegaD(1));
        let pair = |fam, a, b, x: &ProductIterate| {
            let spec = OperatorSpec::new(fam, 0.8, SetSystem::Pair { a, b }).unwrap();
            step(&p, &spec, x).unwrap().next
        };
        let cp = apply(&p, Family::Cp, 1.0, Model::Pr1, &x);
        assert!(cp.distance(&pair(Family::Ap, o0, o1, &x)) < 1e-12 * x.norm());
        for (cyc, two) in [(Family::Cdr, Family::Dr), (Family::Craar, Family::Raar)] {
            let y = apply(&p, cyc, 0.8, Model::Pr1, &x);
            let expected = pair(two, o0, o1, &pair(two, o1, o0, &x));
            assert!(y.distance(&expected) < 1e-12 * x.norm(), "{cyc}");
        }
    }

    #[test]
    fn block_count_mismatch_is_a_shape_error() {
        let p = small_problem(2);
        let spec = OperatorSpec::for_model(Family::Ap, 1.0, Model::Pr4, 2).unwrap();
        assert!(matches!(step(&p, &spec, &random_iterate(2, 6)), Err(Error::Shape(_))));
    }

    #[test]
    fn iterate_rejects_zero_budget_and_non_finite_input() {
        let p = small_problem(2);
        let spec = OperatorSpec::for_model(Family::Raar, 0.9, Model::Pr3, 2).unwrap();
        let x = random_iterate(2, 7);
        assert!(iterate(&p, &spec, &x, IterateOptions::fixed(0)).is_err());
        let mut blocks = x.into_blocks();
        blocks[0].channel_mut(crate::field::Channel::XY).set(0, 0, num_complex::Complex64::new(f64::NAN, 0.0));
        let bad = ProductIterate::from_raw(blocks);
        assert!(matches!(
            iterate(&p, &spec, &bad, IterateOptions::fixed(3)),
            Err(Error::NonFinite { iteration: 1 })
        ));
    }

    #[test]
    fn schedule_records_both_stages() {
        let p = small_problem(2);
        let spec = OperatorSpec::for_model(Family::Drap, 0.95, Model::Pr3, 2).unwrap();
        let x = truth(&p, 2);
        let noisy = ProductIterate::combination(&[(1.0, &x), (0.1, &random_iterate(2, 8))]);
        let t = schedule_extrapolate_then_average(&p, &spec, &noisy, 6, 4).unwrap();
        assert_eq!(t.iterations(), 10);
        assert_eq!(t.stage_boundary, Some(6));
        assert_eq!(t.label, "DRAP(6+4)");
        assert!(t.final_iterate.is_diagonal(1e-12 * x.norm()));
        let t = iterate(&p, &spec, &noisy, IterateOptions { max_iter: 50, tol_residual: Some(1e300), store_iterates: true }).unwrap();
        assert_eq!(t.iterations(), 1);
        assert_eq!(t.iterates.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn phase_read_out_recovers_the_true_phase() {
        let p = small_problem(2);
        let est = extract_phase(&truth(&p, 2), p.aperture()).unwrap();
        assert!(est.flagged.is_empty());
        let phase = small_phase();
        for (idx, &inside) in p.aperture().mask().iter().enumerate() {
            let got = est.phase.data()[idx];
            if inside {
                let d = got - phase.data()[idx];
                assert!((d - (d / std::f64::consts::TAU).round() * std::f64::consts::TAU).abs() < 1e-10);
                assert!(got > -std::f64::consts::PI && got <= std::f64::consts::PI);
            } else {
                assert_eq!(got, 0.0);
            }
        }
    }

    #[test]
    fn averaging_projection_is_firmly_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let center = random_iterate(3, 10);
        let cert = check_almost_averaged(|u| Ok(project_d(u)), &center, 2.0, 200, 0.5, &mut rng).unwrap();
        assert!(cert.epsilon <= 1e-10, "{cert:?}");
        assert!(cert.worst_ratio <= 1.0);
        assert_eq!(cert.sample_count, 200);
        // a reflection is not 1/2-averaged
        let reflect = |u: &ProductIterate| Ok(ProductIterate::combination(&[(2.0, &project_d(u)), (-1.0, u)]));
        let cert = check_almost_averaged(reflect, &center, 2.0, 50, 0.5, &mut rng).unwrap();
        assert!(cert.epsilon > 0.1);
        assert!(frobenius_norm(center.block(0)) > 0.0);
    }

    #[test]
    fn geometric_residuals_give_the_rate() {
        let r: Vec<f64> = (0..40).map(|k| 3.0 * 0.5f64.powi(k)).collect();
        let est = fit_linear_rate(&r).unwrap();
        assert!((est.rate - 0.5).abs() < 1e-6);
        assert!((est.gamma - 3.0).abs() < 1e-6);
        assert!(est.r_squared > 0.999_999);
    }

    #[test]
    fn constant_or_short_residuals_give_none() {
        assert!(fit_linear_rate(&[1.0; 30]).is_none());
        assert!(fit_linear_rate(&[1.0, 0.5, 0.25]).is_none());
        let growing: Vec<f64> = (0..20).map(|k| 1.1f64.powi(k)).collect();
        assert!(fit_linear_rate(&growing).is_none());
    }

    #[test]
    fn family_and_model_parsing() {
        assert_eq!("km-dr".parse::<Family>().unwrap(), Family::KmDr);
        assert_eq!("RAAR".parse::<Family>().unwrap(), Family::Raar);
        assert_eq!("craar".parse::<Family>().unwrap(), Family::Craar);
        assert!("GS".parse::<Family>().is_err());
        assert_eq!("pr3p".parse::<Model>().unwrap(), Model::Pr3Known);
        assert_eq!(Model::Pr3.with_known_amplitude(true), Model::Pr3Known);
    }

    #[test]
    fn beta_ranges() {
        let pair = Model::Pr3.sets(2);
        assert!(OperatorSpec::new(Family::Drap, 0.0, pair.clone()).is_ok());
        assert!(OperatorSpec::new(Family::Raar, 0.0, pair.clone()).is_err());
        assert!(OperatorSpec::new(Family::Hpr, 1.2, pair.clone()).is_err());
        assert!(OperatorSpec::new(Family::Ap, 7.0, pair.clone()).is_ok());
        assert!(OperatorSpec::new(Family::Cp, 1.0, pair).is_err());
        assert!(OperatorSpec::new(Family::Ap, 1.0, Model::Pr1.sets(2)).is_err());
    }
}
