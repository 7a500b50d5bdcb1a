//! Closed-form projectors onto the constraint sets of the feasibility models.
//!
//! Field-level sets live in the six-channel space:
//!
//! * `Omega0` - fields of the form `(E_c * z)_c` for some pupil `z`,
//! * `OmegaD(d)` - fields whose diversity-`d` image matches intensity `r_d`,
//! * `Chi` - fields `(E_c * A * e^{j psi})_c` with the known amplitude `A`.
//!
//! Product-level sets act on stacks of fields: the diagonals `A`, `AChi`
//! and `D`, and the products `B = Omega_1 x ... x Omega_m`,
//! `BPlus = Omega0 x B` and `BChi = Chi x B`.
//!
//! `OmegaD` and `Chi` projections are set-valued at isolated points. The
//! selection made there is deterministic and reported through
//! [`ProjectionResult::degenerate_pixels`].

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{
    diagonal_average, duplicate, fft2_centered_in_place, ifft2_centered_in_place, Channel,
    ComplexImage, ProductIterate, RealImage, SixChannelField,
};
use crate::psf::{embed_pupil, ApertureModel, MeasurementSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct DegeneratePixel {
    pub block: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionResult<T> {
    pub point: T,
    /// `false` when a selection rule fired somewhere.
    pub unique: bool,
    pub degenerate_pixels: Vec<DegeneratePixel>,
}

impl<T> ProjectionResult<T> {
    fn new(point: T, degenerate_pixels: Vec<DegeneratePixel>) -> Self {
        Self {
            point,
            unique: degenerate_pixels.is_empty(),
            degenerate_pixels,
        }
    }

    fn single(point: T) -> Self {
        Self::new(point, Vec::new())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ConstraintSet {
    Omega0,
    /// Intensity set for diversity index `d` (1-based, `1..=m`).
    OmegaD(usize),
    Chi,
    A,
    AChi,
    D,
    B,
    BPlus,
    BChi,
}

impl ConstraintSet {
    /// Whether the set lives in the six-channel space rather than a product space.
    pub fn is_field_set(self) -> bool {
        matches!(self, ConstraintSet::Omega0 | ConstraintSet::OmegaD(_) | ConstraintSet::Chi)
    }

    /// Number of blocks an iterate must have for this set, given `m` images.
    pub fn block_count(self, m: usize) -> usize {
        match self {
            ConstraintSet::Omega0 | ConstraintSet::OmegaD(_) | ConstraintSet::Chi => 1,
            ConstraintSet::A | ConstraintSet::AChi | ConstraintSet::B => m,
            ConstraintSet::D | ConstraintSet::BPlus | ConstraintSet::BChi => m + 1,
        }
    }
}

/// `P_Omega0(x) = (E_c * z)_c` with `z = 1/2 * sum_c E_c * x_c`.
pub fn project_omega0(ap: &ApertureModel, x: &SixChannelField) -> SixChannelField {
    embed_pupil(ap, &omega0_pupil(ap, x)).expect("aperture and field share the grid")
}

/// The pupil `1/2 * sum_c E_c * x_c` read out of a six-channel field.
pub fn omega0_pupil(ap: &ApertureModel, x: &SixChannelField) -> ComplexImage {
    let n = ap.n();
    let mut z = vec![Complex64::new(0.0, 0.0); n * n];
    for c in Channel::ALL {
        let e = ap.polarisation(c).data();
        for ((zi, xi), &ei) in z.iter_mut().zip(x.channel(c).data()).zip(e) {
            *zi += xi * ei;
        }
    }
    for v in &mut z {
        *v *= 0.5;
    }
    ComplexImage::from_raw(n, z)
}

/// Projection onto `Chi` for amplitude `amplitude`. Where `sum_c E_c A x_c`
/// vanishes on a pixel with `A > 0` the phase is set to 0 and the pixel flagged.
pub fn project_chi(
    ap: &ApertureModel,
    amplitude: &RealImage,
    x: &SixChannelField,
) -> ProjectionResult<SixChannelField> {
    let n = ap.n();
    let mut phasor = vec![Complex64::new(0.0, 0.0); n * n];
    let mut degenerate = Vec::new();
    for idx in 0..n * n {
        let a = amplitude.data()[idx];
        if !ap.mask()[idx] || a == 0.0 {
            continue;
        }
        let s: Complex64 = Channel::ALL
            .iter()
            .map(|&c| x.channel(c).data()[idx] * ap.polarisation(c).data()[idx])
            .sum::<Complex64>()
            * a;
        let norm = s.norm();
        phasor[idx] = if norm > 0.0 {
            Complex64::new(a, 0.0) * (s / norm)
        } else {
            degenerate.push(DegeneratePixel { block: 0, row: idx / n, col: idx % n });
            Complex64::new(a, 0.0)
        };
    }
    let pupil = ComplexImage::from_raw(n, phasor);
    ProjectionResult::new(
        embed_pupil(ap, &pupil).expect("aperture and field share the grid"),
        degenerate,
    )
}

/// Per-pixel projection onto the product of spheres `sum_c |z_c|^2 = r`,
/// with `radius = sqrt(r)`. Zero pixels receive all energy in `XX` at phase 0.
pub fn project_sphere(radius: &RealImage, z: &SixChannelField) -> ProjectionResult<SixChannelField> {
    let n = z.n();
    let mut out = SixChannelField::zeros(n);
    let mut degenerate = Vec::new();
    for idx in 0..n * n {
        let v = z.pixel(idx);
        let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let rho = radius.data()[idx];
        if norm != 0.0 {
            let k = rho / norm;
            out.set_pixel(idx, v.map(|c| c * k));
        } else {
            let mut s = [Complex64::new(0.0, 0.0); 6];
            s[Channel::XX.index()] = Complex64::new(rho, 0.0);
            out.set_pixel(idx, s);
            degenerate.push(DegeneratePixel { block: 0, row: idx / n, col: idx % n });
        }
    }
    ProjectionResult::new(out, degenerate)
}

/// Data of a phase-retrieval instance: aperture, measured intensities,
/// diversity phasors and the amplitude used by the known-amplitude sets.
#[derive(Clone, Debug)]
pub struct Problem {
    aperture: ApertureModel,
    intensities: Vec<RealImage>,
    radii: Vec<RealImage>,
    phasors: Vec<ComplexImage>,
    amplitude: RealImage,
}

impl Problem {
    /// Builds the projector data. The known amplitude is the aperture
    /// amplitude rescaled so that `2 * ||A||^2` equals the mean image energy.
    pub fn new(aperture: ApertureModel, ms: &MeasurementSet) -> Result<Self> {
        ms.validate(&aperture)?;
        let mean_energy = ms.intensities.iter().map(RealImage::sum).sum::<f64>() / ms.m() as f64;
        let a2: f64 = aperture.amplitude().data().iter().map(|a| a * a).sum();
        if a2 == 0.0 {
            return Err(Error::param("aperture amplitude is identically zero"));
        }
        let amplitude = aperture.amplitude().scaled((mean_energy / (2.0 * a2)).sqrt());
        Ok(Self {
            intensities: ms.intensities.clone(),
            radii: ms.intensities.iter().map(|r| r.map(f64::sqrt)).collect(),
            phasors: ms.diversities.iter().map(RealImage::phasor).collect(),
            amplitude,
            aperture,
        })
    }

    /// Replaces the amplitude used by `Chi`, `AChi` and `BChi`.
    pub fn with_known_amplitude(mut self, amplitude: RealImage) -> Result<Self> {
        if amplitude.n() != self.aperture.n() {
            return Err(Error::shape("amplitude grid differs from aperture grid"));
        }
        if amplitude.data().iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::param("amplitude must be nonnegative"));
        }
        self.amplitude = amplitude;
        Ok(self)
    }

    pub fn aperture(&self) -> &ApertureModel {
        &self.aperture
    }

    pub fn m(&self) -> usize {
        self.intensities.len()
    }

    pub fn n(&self) -> usize {
        self.aperture.n()
    }

    pub fn amplitude(&self) -> &RealImage {
        &self.amplitude
    }

    pub fn intensity(&self, d: usize) -> &RealImage {
        &self.intensities[d - 1]
    }

    fn check_d(&self, d: usize) -> Result<()> {
        if d == 0 || d > self.m() {
            return Err(Error::param(format!("diversity index {d} outside 1..={}", self.m())));
        }
        Ok(())
    }

    fn check_field(&self, x: &SixChannelField) -> Result<()> {
        if x.n() != self.n() {
            return Err(Error::shape(format!("field is {0}x{0}, problem grid is {1}x{1}", x.n(), self.n())));
        }
        Ok(())
    }

    /// `M_d(x)_c = F(x_c * e^{j phi_d})`.
    pub fn apply_m(&self, d: usize, x: &SixChannelField) -> Result<SixChannelField> {
        self.check_d(d)?;
        self.check_field(x)?;
        Ok(self.apply_m_unchecked(d, x))
    }

    /// `M_d^{-1}(x)_c = F^{-1}(x_c) * e^{-j phi_d}`.
    pub fn apply_m_inv(&self, d: usize, x: &SixChannelField) -> Result<SixChannelField> {
        self.check_d(d)?;
        self.check_field(x)?;
        Ok(self.apply_m_inv_unchecked(d, x))
    }

    fn apply_m_unchecked(&self, d: usize, x: &SixChannelField) -> SixChannelField {
        let ph = &self.phasors[d - 1];
        x.map_channels(|_, ch| {
            let mut out = ComplexImage::from_raw(
                ch.n(),
                ch.data().iter().zip(ph.data()).map(|(a, b)| a * b).collect(),
            );
            fft2_centered_in_place(&mut out);
            out
        })
    }

    fn apply_m_inv_unchecked(&self, d: usize, x: &SixChannelField) -> SixChannelField {
        let ph = &self.phasors[d - 1];
        x.map_channels(|_, ch| {
            let mut out = ch.clone();
            ifft2_centered_in_place(&mut out);
            for (v, p) in out.data_mut().iter_mut().zip(ph.data()) {
                *v *= p.conj();
            }
            out
        })
    }

    /// Pixelwise `sqrt(sum_c |M_d(x)_c|^2)`.
    pub fn gauge(&self, d: usize, x: &SixChannelField) -> Result<RealImage> {
        let y = self.apply_m(d, x)?;
        let n = self.n();
        Ok(RealImage::from_raw(
            n,
            (0..n * n)
                .map(|idx| y.pixel(idx).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
                .collect(),
        ))
    }

    /// Projection onto the sphere product `S_d` in the transformed domain.
    pub fn project_s(&self, d: usize, z: &SixChannelField) -> Result<ProjectionResult<SixChannelField>> {
        self.check_d(d)?;
        self.check_field(z)?;
        Ok(project_sphere(&self.radii[d - 1], z))
    }

    pub fn project_omega_d(&self, d: usize, x: &SixChannelField) -> Result<ProjectionResult<SixChannelField>> {
        self.check_d(d)?;
        self.check_field(x)?;
        let y = project_sphere(&self.radii[d - 1], &self.apply_m_unchecked(d, x));
        Ok(ProjectionResult::new(self.apply_m_inv_unchecked(d, &y.point), y.degenerate_pixels))
    }

    pub fn project_omega0(&self, x: &SixChannelField) -> Result<SixChannelField> {
        self.check_field(x)?;
        Ok(project_omega0(&self.aperture, x))
    }

    pub fn project_chi(&self, x: &SixChannelField) -> Result<ProjectionResult<SixChannelField>> {
        self.check_field(x)?;
        Ok(project_chi(&self.aperture, &self.amplitude, x))
    }

    fn project_field_set(&self, set: ConstraintSet, x: &SixChannelField) -> Result<ProjectionResult<SixChannelField>> {
        match set {
            ConstraintSet::Omega0 => Ok(ProjectionResult::single(self.project_omega0(x)?)),
            ConstraintSet::OmegaD(d) => self.project_omega_d(d, x),
            ConstraintSet::Chi => self.project_chi(x),
            _ => unreachable!("product set passed as field set"),
        }
    }

    fn check_blocks(&self, set: ConstraintSet, u: &ProductIterate) -> Result<()> {
        let want = set.block_count(self.m());
        if u.len() != want {
            return Err(Error::shape(format!(
                "{set:?} expects {want} blocks, iterate has {}",
                u.len()
            )));
        }
        if u.n() != self.n() {
            return Err(Error::shape("iterate grid differs from problem grid"));
        }
        Ok(())
    }

    /// Projects a product iterate onto `set`. Field-level sets take a
    /// single-block iterate.
    pub fn project(&self, set: ConstraintSet, u: &ProductIterate) -> Result<ProjectionResult<ProductIterate>> {
        self.check_blocks(set, u)?;
        let m = self.m();
        match set {
            ConstraintSet::Omega0 | ConstraintSet::OmegaD(_) | ConstraintSet::Chi => {
                let r = self.project_field_set(set, u.block(0))?;
                Ok(ProjectionResult::new(ProductIterate::from_raw(vec![r.point]), r.degenerate_pixels))
            }
            ConstraintSet::A => Ok(ProjectionResult::single(self.project_a(u)?)),
            ConstraintSet::AChi => self.project_a_chi(u),
            ConstraintSet::D => Ok(ProjectionResult::single(project_d(u))),
            ConstraintSet::B => self.blockwise(u, |d| ConstraintSet::OmegaD(d + 1)),
            ConstraintSet::BPlus => self.blockwise(u, |d| {
                if d == 0 { ConstraintSet::Omega0 } else { ConstraintSet::OmegaD(d) }
            }),
            ConstraintSet::BChi => self.blockwise(u, |d| {
                if d == 0 { ConstraintSet::Chi } else { ConstraintSet::OmegaD(d) }
            }),
        }
        .inspect(|r| debug_assert_eq!(r.point.len(), set.block_count(m)))
    }

    pub fn project_a(&self, u: &ProductIterate) -> Result<ProductIterate> {
        self.check_blocks(ConstraintSet::A, u)?;
        let p = project_omega0(&self.aperture, &diagonal_average(u));
        duplicate(&p, u.len())
    }

    pub fn project_a_chi(&self, u: &ProductIterate) -> Result<ProjectionResult<ProductIterate>> {
        self.check_blocks(ConstraintSet::AChi, u)?;
        let r = project_chi(&self.aperture, &self.amplitude, &diagonal_average(u));
        Ok(ProjectionResult::new(duplicate(&r.point, u.len())?, r.degenerate_pixels))
    }

    fn blockwise(
        &self,
        u: &ProductIterate,
        set_for_block: impl Fn(usize) -> ConstraintSet,
    ) -> Result<ProjectionResult<ProductIterate>> {
        let mut blocks = Vec::with_capacity(u.len());
        let mut degenerate = Vec::new();
        for (k, block) in u.blocks().iter().enumerate() {
            let r = self.project_field_set(set_for_block(k), block)?;
            degenerate.extend(r.degenerate_pixels.into_iter().map(|p| DegeneratePixel { block: k, ..p }));
            blocks.push(r.point);
        }
        Ok(ProjectionResult::new(ProductIterate::from_raw(blocks), degenerate))
    }

    /// Set-specific feasibility residual of `u` for `set` (0 on the set).
    ///
    /// Intensity sets report `max |G_d^2 - r_d| / max r_d`; `Omega0`, `Chi`
    /// and the diagonals report the distance to their (unique) projection.
    pub fn feasibility_residual(&self, set: ConstraintSet, u: &ProductIterate) -> Result<f64> {
        self.check_blocks(set, u)?;
        let intensity_residual = |d: usize, x: &SixChannelField| -> Result<f64> {
            let g = self.gauge(d, x)?;
            let r = self.intensity(d);
            let scale = r.max().max(f64::MIN_POSITIVE);
            Ok(g.data()
                .iter()
                .zip(r.data())
                .map(|(g, r)| (g * g - r).abs())
                .fold(0.0, f64::max)
                / scale)
        };
        let chi_residual = |x: &SixChannelField| -> f64 {
            let p = project_chi(&self.aperture, &self.amplitude, x).point;
            SixChannelField::combination(&[(1.0, x), (-1.0, &p)]).norm()
        };
        let omega0_residual = |x: &SixChannelField| -> f64 {
            let p = project_omega0(&self.aperture, x);
            SixChannelField::combination(&[(1.0, x), (-1.0, &p)]).norm()
        };
        let diag = |u: &ProductIterate| -> f64 { u.distance(&project_d(u)) };
        Ok(match set {
            ConstraintSet::Omega0 => omega0_residual(u.block(0)),
            ConstraintSet::OmegaD(d) => intensity_residual(d, u.block(0))?,
            ConstraintSet::Chi => chi_residual(u.block(0)),
            ConstraintSet::D => diag(u),
            ConstraintSet::A => diag(u) + omega0_residual(u.block(0)),
            ConstraintSet::AChi => diag(u) + chi_residual(u.block(0)),
            ConstraintSet::B => {
                let mut worst: f64 = 0.0;
                for (k, x) in u.blocks().iter().enumerate() {
                    worst = worst.max(intensity_residual(k + 1, x)?);
                }
                worst
            }
            ConstraintSet::BPlus | ConstraintSet::BChi => {
                let first = if set == ConstraintSet::BPlus {
                    omega0_residual(u.block(0))
                } else {
                    chi_residual(u.block(0))
                };
                let mut worst = first;
                for (k, x) in u.blocks().iter().enumerate().skip(1) {
                    worst = worst.max(intensity_residual(k, x)?);
                }
                worst
            }
        })
    }
}

/// `P_D(u) = [mean(u)]_p`.
pub fn project_d(u: &ProductIterate) -> ProductIterate {
    duplicate(&diagonal_average(u), u.len()).expect("iterate has at least one block")
}
