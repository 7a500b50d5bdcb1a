//! Pupil geometry, polarisation maps and the vectorial / scalar imaging models.
//!
//! The pupil grid uses normalised coordinates: pixel `(i, j)` sits at
//! `y = (i - n/2) * spacing`, `x = (j - n/2) * spacing`, and the aperture is
//! the disk `x^2 + y^2 <= NA^2`. `spacing` is chosen so the disk diameter
//! covers `pupil_fraction * n` pixels.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::io::{read_json, read_real_stack, write_json, write_real_stack};
use crate::field::{fft2_centered_in_place, Channel, ComplexImage, RealImage, SixChannelField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApertureParams {
    /// Grid size in pixels.
    pub n: usize,
    pub na: f64,
    /// Illumination wavelength in micrometres.
    pub wavelength: f64,
    /// Image-plane pixel size in micrometres. Reporting only.
    pub pixel_size: f64,
    /// Fraction of the grid width covered by the aperture diameter.
    pub pupil_fraction: f64,
}

impl Default for ApertureParams {
    fn default() -> Self {
        Self {
            n: 128,
            na: 0.95,
            wavelength: 0.3,
            pixel_size: 0.06,
            pupil_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AmplitudeSpec {
    Uniform,
    /// Isotropic Gaussian equal to 1 at the centre and `edge` on the aperture rim.
    TruncatedGaussian { edge: f64 },
    Custom(RealImage),
}

impl AmplitudeSpec {
    pub fn truncated_gaussian() -> Self {
        AmplitudeSpec::TruncatedGaussian { edge: 0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct ApertureModel {
    params: ApertureParams,
    spacing: f64,
    mask: Vec<bool>,
    kx: RealImage,
    ky: RealImage,
    kz: RealImage,
    polarisation: [RealImage; 6],
    amplitude: RealImage,
}

pub fn build_aperture(params: ApertureParams, amplitude: AmplitudeSpec) -> Result<ApertureModel> {
    let ApertureParams { n, na, wavelength, pixel_size, pupil_fraction } = params;
    if n < 8 {
        return Err(Error::param(format!("grid size must be at least 8, got {n}")));
    }
    if !(na > 0.0 && na < 1.0) {
        return Err(Error::param(format!("numerical aperture must lie in (0, 1), got {na}")));
    }
    if !(wavelength > 0.0 && wavelength.is_finite()) || !(pixel_size > 0.0 && pixel_size.is_finite()) {
        return Err(Error::param("wavelength and pixel size must be positive"));
    }
    if !(pupil_fraction > 0.0 && pupil_fraction <= 1.0) {
        return Err(Error::param(format!("pupil fraction must lie in (0, 1], got {pupil_fraction}")));
    }

    let c = (n / 2) as f64;
    let radius_px = pupil_fraction * n as f64 / 2.0;
    let spacing = na / radius_px;
    let na2 = na * na;

    let mut mask = vec![false; n * n];
    let mut kx = RealImage::zeros(n);
    let mut ky = RealImage::zeros(n);
    let mut kz = RealImage::zeros(n);
    let mut pol: [RealImage; 6] = std::array::from_fn(|_| RealImage::zeros(n));

    for i in 0..n {
        for j in 0..n {
            let y = (i as f64 - c) * spacing;
            let x = (j as f64 - c) * spacing;
            let rho2 = x * x + y * y;
            if rho2 > na2 * (1.0 + 1e-12) {
                continue;
            }
            let idx = i * n + j;
            mask[idx] = true;
            let z = (1.0 - rho2).max(0.0).sqrt();
            kx.data_mut()[idx] = x;
            ky.data_mut()[idx] = y;
            kz.data_mut()[idx] = z;
            for (ch, v) in Channel::ALL.iter().zip(polarisation_at(x, y, z)) {
                pol[ch.index()].data_mut()[idx] = v;
            }
        }
    }

    let amplitude = match amplitude {
        AmplitudeSpec::Uniform => {
            RealImage::from_raw(n, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
        }
        AmplitudeSpec::TruncatedGaussian { edge } => {
            if !(edge > 0.0 && edge < 1.0) {
                return Err(Error::param(format!("gaussian edge value must lie in (0, 1), got {edge}")));
            }
            let two_sigma2 = na2 / (1.0 / edge).ln();
            let data = (0..n * n)
                .map(|idx| {
                    if mask[idx] {
                        let r2 = kx.data()[idx].powi(2) + ky.data()[idx].powi(2);
                        (-r2 / two_sigma2).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            RealImage::from_raw(n, data)
        }
        AmplitudeSpec::Custom(img) => {
            if img.n() != n {
                return Err(Error::shape(format!("amplitude is {0}x{0}, grid is {n}x{n}", img.n())));
            }
            if img.data().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::param("amplitude must be finite and nonnegative"));
            }
            let data = img
                .data()
                .iter()
                .zip(&mask)
                .map(|(&v, &m)| if m { v } else { 0.0 })
                .collect();
            RealImage::from_raw(n, data)
        }
    };

    Ok(ApertureModel {
        params,
        spacing,
        mask,
        kx,
        ky,
        kz,
        polarisation: pol,
        amplitude,
    })
}

/// Polarisation weights `(XX, XY, XZ, YX, YY, YZ)` for unit wave vector `(kx, ky, kz)`.
pub fn polarisation_at(kx: f64, ky: f64, kz: f64) -> [f64; 6] {
    let d = 1.0 + kz;
    [
        1.0 - kx * kx / d,
        -kx * ky / d,
        -kx,
        -ky * kx / d,
        1.0 - ky * ky / d,
        -ky,
    ]
}

impl ApertureModel {
    pub fn params(&self) -> &ApertureParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn na(&self) -> f64 {
        self.params.na
    }

    pub fn wavelength(&self) -> f64 {
        self.params.wavelength
    }

    /// Normalised pupil-coordinate step per pixel.
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_image(&self) -> RealImage {
        RealImage::from_raw(self.n(), self.mask.iter().map(|&m| f64::from(u8::from(m))).collect())
    }

    pub fn mask_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn kx(&self) -> &RealImage {
        &self.kx
    }

    pub fn ky(&self) -> &RealImage {
        &self.ky
    }

    pub fn kz(&self) -> &RealImage {
        &self.kz
    }

    pub fn polarisation(&self, c: Channel) -> &RealImage {
        &self.polarisation[c.index()]
    }

    pub fn polarisation_maps(&self) -> &[RealImage; 6] {
        &self.polarisation
    }

    pub fn amplitude(&self) -> &RealImage {
        &self.amplitude
    }

    /// Same geometry with a different amplitude (masked, must be nonnegative).
    pub fn with_amplitude(&self, amplitude: RealImage) -> Result<Self> {
        build_aperture(self.params.clone(), AmplitudeSpec::Custom(amplitude))
    }

    /// Axial depth-of-focus unit `lambda / NA^2`, micrometres.
    pub fn depth_of_focus(&self) -> f64 {
        self.params.wavelength / (self.params.na * self.params.na)
    }

    /// Radial pupil coordinate normalised to the aperture rim (1 at `rho = NA`),
    /// and the azimuth angle.
    pub fn polar_coords(&self, idx: usize) -> (f64, f64) {
        let x = self.kx.data()[idx];
        let y = self.ky.data()[idx];
        ((x * x + y * y).sqrt() / self.params.na, y.atan2(x))
    }

    /// `amplitude * e^{j phase}`, zero off the aperture.
    pub fn pupil(&self, amplitude: &RealImage, phase: &RealImage) -> ComplexImage {
        let n = self.n();
        let data = (0..n * n)
            .map(|idx| {
                if self.mask[idx] {
                    Complex64::from_polar(amplitude.data()[idx], phase.data()[idx])
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        ComplexImage::from_raw(n, data)
    }

    fn check_shape(&self, img: &RealImage, what: &str) -> Result<()> {
        if img.n() != self.n() {
            return Err(Error::shape(format!(
                "{what} is {0}x{0}, aperture grid is {1}x{1}",
                img.n(),
                self.n()
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("aperture.json"), &ApertureMeta {
            params: self.params.clone(),
            spacing: self.spacing,
            mask_pixels: self.mask_count(),
            depth_of_focus: self.depth_of_focus(),
            channels: Channel::ALL.iter().map(|c| c.name().to_string()).collect(),
        })?;
        write_real_stack(&dir.join("aperture_mask"), &[self.mask_image()])?;
        write_real_stack(&dir.join("aperture_k"), &[self.kx.clone(), self.ky.clone(), self.kz.clone()])?;
        write_real_stack(&dir.join("aperture_polarisation"), &self.polarisation)?;
        write_real_stack(&dir.join("aperture_amplitude"), std::slice::from_ref(&self.amplitude))
    }

    /// Rebuilds a saved aperture from its parameters and stored amplitude.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ApertureMeta = read_json(&dir.join("aperture.json"))?;
        let amplitude = read_real_stack(&dir.join("aperture_amplitude"))?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Format("empty amplitude file".into()))?;
        build_aperture(meta.params, AmplitudeSpec::Custom(amplitude))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ApertureMeta {
    params: ApertureParams,
    spacing: f64,
    mask_pixels: usize,
    depth_of_focus: f64,
    channels: Vec<String>,
}

/// Incoherent sum of the six channel PSFs for phase `phase` plus diversity `diversity`.
pub fn vectorial_psf(ap: &ApertureModel, phase: &RealImage, diversity: &RealImage) -> Result<RealImage> {
    ap.check_shape(phase, "phase")?;
    ap.check_shape(diversity, "diversity")?;
    let total = RealImage::from_fn(ap.n(), |i, j| phase.get(i, j) + diversity.get(i, j));
    let pupil = ap.pupil(ap.amplitude(), &total);
    let mut out = vec![0.0; ap.n() * ap.n()];
    for c in Channel::ALL {
        let mut ch = pupil.mul_real(ap.polarisation(c));
        fft2_centered_in_place(&mut ch);
        for (o, v) in out.iter_mut().zip(ch.data()) {
            *o += v.norm_sqr();
        }
    }
    Ok(RealImage::from_raw(ap.n(), out))
}

/// Single-channel Fourier model `|F(A e^{j(phase + diversity)})|^2`.
pub fn scalar_psf(ap: &ApertureModel, phase: &RealImage, diversity: &RealImage) -> Result<RealImage> {
    ap.check_shape(phase, "phase")?;
    ap.check_shape(diversity, "diversity")?;
    let total = RealImage::from_fn(ap.n(), |i, j| phase.get(i, j) + diversity.get(i, j));
    let mut pupil = ap.pupil(ap.amplitude(), &total);
    fft2_centered_in_place(&mut pupil);
    Ok(RealImage::from_raw(ap.n(), pupil.data().iter().map(|v| v.norm_sqr()).collect()))
}

/// Defocus phase `(2 pi / lambda) * z * kz` on the aperture, `z` in micrometres.
pub fn defocus_diversity(ap: &ApertureModel, z: f64) -> RealImage {
    let k = 2.0 * PI / ap.wavelength() * z;
    RealImage::from_raw(
        ap.n(),
        ap.kz()
            .data()
            .iter()
            .zip(ap.mask())
            .map(|(&kz, &m)| if m { k * kz } else { 0.0 })
            .collect(),
    )
}

/// Axial positions of `m` planes centred on focus, `spacing_dof` depths of focus apart.
pub fn defocus_positions(ap: &ApertureModel, m: usize, spacing_dof: f64) -> Vec<f64> {
    let mid = (m as f64 - 1.0) / 2.0;
    (0..m)
        .map(|d| (d as f64 - mid) * spacing_dof * ap.depth_of_focus())
        .collect()
}

/// Lifts a pupil field to the six channels: channel `c` is `E_c * pupil`.
pub fn embed_pupil(ap: &ApertureModel, pupil: &ComplexImage) -> Result<SixChannelField> {
    if pupil.n() != ap.n() {
        return Err(Error::shape("pupil and aperture grid sizes differ"));
    }
    Ok(SixChannelField::from_raw(
        Channel::ALL.map(|c| pupil.mul_real(ap.polarisation(c))),
    ))
}

/// Measured intensity stack with its phase diversities.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub intensities: Vec<RealImage>,
    pub diversities: Vec<RealImage>,
    /// Axial defocus of each plane in micrometres, when known.
    pub defocus: Vec<f64>,
    /// Raw additive noise per image, before clipping.
    pub noise_record: Option<Vec<RealImage>>,
}

impl MeasurementSet {
    pub fn new(intensities: Vec<RealImage>, diversities: Vec<RealImage>) -> Result<Self> {
        let ms = Self {
            defocus: vec![f64::NAN; intensities.len()],
            intensities,
            diversities,
            noise_record: None,
        };
        ms.check()?;
        Ok(ms)
    }

    pub fn m(&self) -> usize {
        self.intensities.len()
    }

    pub fn n(&self) -> usize {
        self.intensities[0].n()
    }

    fn check(&self) -> Result<()> {
        if self.intensities.is_empty() {
            return Err(Error::param("measurement set needs at least one image"));
        }
        if self.diversities.len() != self.intensities.len() {
            return Err(Error::shape("one diversity map is required per intensity image"));
        }
        let n = self.intensities[0].n();
        if self.intensities.iter().chain(&self.diversities).any(|i| i.n() != n) {
            return Err(Error::shape("all images must share the grid size"));
        }
        if self.intensities.iter().any(|r| r.data().iter().any(|&v| !(v >= 0.0))) {
            return Err(Error::param("intensities must be nonnegative"));
        }
        Ok(())
    }

    /// Checks grid size against the aperture and that diversities vanish off the aperture.
    pub fn validate(&self, ap: &ApertureModel) -> Result<()> {
        self.check()?;
        if self.n() != ap.n() {
            return Err(Error::shape("measurement and aperture grid sizes differ"));
        }
        for phi in &self.diversities {
            if phi.data().iter().zip(ap.mask()).any(|(&v, &m)| !m && v != 0.0) {
                return Err(Error::param("diversity maps must be zero off the aperture"));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_real_stack(&dir.join("intensities"), &self.intensities)?;
        write_real_stack(&dir.join("diversities"), &self.diversities)?;
        if let Some(noise) = &self.noise_record {
            write_real_stack(&dir.join("noise"), noise)?;
        }
        write_json(&dir.join("measurement.json"), &MeasurementMeta {
            m: self.m(),
            n: self.n(),
            defocus_um: self.defocus.iter().map(|z| z.is_finite().then_some(*z)).collect(),
            has_noise_record: self.noise_record.is_some(),
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: MeasurementMeta = read_json(&dir.join("measurement.json"))?;
        let intensities = read_real_stack(&dir.join("intensities"))?;
        let diversities = read_real_stack(&dir.join("diversities"))?;
        let noise_record = if meta.has_noise_record {
            Some(read_real_stack(&dir.join("noise"))?)
        } else {
            None
        };
        let ms = Self {
            intensities,
            diversities,
            defocus: meta.defocus_um.iter().map(|z| z.unwrap_or(f64::NAN)).collect(),
            noise_record,
        };
        ms.check()?;
        if ms.m() != meta.m || ms.defocus.len() != meta.m {
            return Err(Error::Format("measurement metadata disagrees with stored stacks".into()));
        }
        Ok(ms)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementMeta {
    m: usize,
    n: usize,
    defocus_um: Vec<Option<f64>>,
    has_noise_record: bool,
}
