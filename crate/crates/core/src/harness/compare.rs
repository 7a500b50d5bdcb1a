//! Scalar versus vectorial PSF cross-sections across numerical apertures.

use serde::Serialize;

use super::zernike::zernike_map;
use crate::error::Result;
use crate::field::RealImage;
use crate::psf::{build_aperture, scalar_psf, vectorial_psf, AmplitudeSpec, ApertureParams};

#[derive(Clone, Debug, Serialize)]
pub struct CrossSections {
    /// Pixel offset from the image centre along the row through it.
    pub offsets: Vec<i64>,
    /// Divided by the image peak.
    pub scalar: Vec<f64>,
    pub vectorial: Vec<f64>,
    /// Divided by the total image energy.
    pub scalar_energy: Vec<f64>,
    pub vectorial_energy: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelComparison {
    pub na: f64,
    /// Relative L2 distance between the peak-normalised cross-sections, unaberrated.
    pub discrepancy: f64,
    pub discrepancy_aberrated: f64,
    /// Same distance for the energy-normalised sections.
    pub discrepancy_energy: f64,
    pub unaberrated: CrossSections,
    pub aberrated: CrossSections,
}

#[derive(Clone, Debug)]
pub struct CompareOptions {
    pub n: usize,
    pub pupil_fraction: f64,
    /// Coefficients (radians, orthonormal modes) of the aberration, by Noll index from 2.
    pub aberration: Vec<(usize, f64)>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { n: 128, pupil_fraction: 0.5, aberration: vec![(5, 0.4), (8, 0.3)] }
    }
}

fn centre_row(img: &RealImage, scale: f64) -> Vec<f64> {
    let n = img.n();
    img.data()[(n / 2) * n..(n / 2 + 1) * n].iter().map(|v| v / scale).collect()
}

fn relative_l2(reference: &[f64], other: &[f64]) -> f64 {
    let num: f64 = reference.iter().zip(other).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = reference.iter().map(|a| a * a).sum();
    (num / den).sqrt()
}

/// Peak-normalised centre-row cross-sections of both models for each NA,
/// on the same pupil sampling so that the pixel scale tracks the diffraction limit.
pub fn compare_psf_models(na_list: &[f64], opts: &CompareOptions) -> Result<Vec<ModelComparison>> {
    na_list
        .iter()
        .map(|&na| {
            let params = ApertureParams { n: opts.n, na, pupil_fraction: opts.pupil_fraction, ..ApertureParams::default() };
            let ap = build_aperture(params, AmplitudeSpec::Uniform)?;
            let flat = RealImage::zeros(opts.n);
            let mut aberration = RealImage::zeros(opts.n);
            for &(j, c) in &opts.aberration {
                let z = zernike_map(&ap, j);
                for (a, v) in aberration.data_mut().iter_mut().zip(z.data()) {
                    *a += c * v;
                }
            }
            let sections = |phase: &RealImage| -> Result<CrossSections> {
                let c = (opts.n / 2) as i64;
                let s = scalar_psf(&ap, phase, &flat)?;
                let v = vectorial_psf(&ap, phase, &flat)?;
                Ok(CrossSections {
                    offsets: (0..opts.n as i64).map(|j| j - c).collect(),
                    scalar: centre_row(&s, s.max()),
                    vectorial: centre_row(&v, v.max()),
                    scalar_energy: centre_row(&s, s.sum()),
                    vectorial_energy: centre_row(&v, v.sum()),
                })
            };
            let unaberrated = sections(&flat)?;
            let aberrated = sections(&aberration)?;
            Ok(ModelComparison {
                na,
                discrepancy: relative_l2(&unaberrated.scalar, &unaberrated.vectorial),
                discrepancy_aberrated: relative_l2(&aberrated.scalar, &aberrated.vectorial),
                discrepancy_energy: relative_l2(&unaberrated.scalar_energy, &unaberrated.vectorial_energy),
                unaberrated,
                aberrated,
            })
        })
        .collect()
}

/// Long-format CSV: `na,case,offset,scalar,vectorial,scalar_energy,vectorial_energy`.
pub fn cross_sections_csv(rows: &[ModelComparison]) -> String {
    let mut out = String::from("na,case,offset,scalar,vectorial,scalar_energy,vectorial_energy\n");
    for r in rows {
        for (case, s) in [("unaberrated", &r.unaberrated), ("aberrated", &r.aberrated)] {
            for (k, o) in s.offsets.iter().enumerate() {
                out.push_str(&format!(
                    "{},{case},{o},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                    r.na, s.scalar[k], s.vectorial[k], s.scalar_energy[k], s.vectorial_energy[k]
                ));
            }
        }
    }
    out
}

pub fn discrepancy_csv(rows: &[ModelComparison]) -> String {
    let mut out = String::from("na,discrepancy,discrepancy_aberrated,discrepancy_energy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e}\n",
            r.na, r.discrepancy, r.discrepancy_aberrated, r.discrepancy_energy
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrepancy_grows_with_na_and_vanishes_at_low_na() {
        let opts = CompareOptions { n: 64, ..CompareOptions::default() };
        let rows = compare_psf_models(&[0.05, 0.15, 0.55, 0.95], &opts).unwrap();
        let d: Vec<f64> = rows.iter().map(|r| r.discrepancy).collect();
        assert!(d.windows(2).all(|w| w[0] < w[1]), "{d:?}");
        let da: Vec<f64> = rows.iter().map(|r| r.discrepancy_aberrated).collect();
        assert!(da.windows(2).all(|w| w[0] < w[1]), "{da:?}");
        assert!(d[0] < 0.2 * d[1]);
        for r in &rows {
            assert!((r.unaberrated.scalar.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
        }
    }
}
