//! Scalar-model alternating projections, the model-mismatched baseline.
//!
//! Each image constrains a single pupil field through `|F(x e^{j phi_d})| = sqrt(r_d)`.
//! One step projects a copy of the pupil onto every image's magnitude set,
//! averages the copies and restricts the result to the aperture.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{fft2_centered_in_place, ifft2_centered_in_place, ComplexImage, RealImage};
use crate::psf::{ApertureModel, MeasurementSet};

#[derive(Clone, Debug)]
pub struct ScalarRun {
    pub pupil: ComplexImage,
    pub phase: RealImage,
    pub residuals: Vec<f64>,
}

fn magnitude_projection(z: &mut ComplexImage, radius: &RealImage) {
    for (v, &r) in z.data_mut().iter_mut().zip(radius.data()) {
        let a = v.norm();
        *v = if a > 0.0 { *v * (r / a) } else { Complex64::new(r, 0.0) };
    }
}

/// Runs `iterations` scalar AP steps from `start` (a pupil field on the aperture).
pub fn scalar_alternating_projections(
    ap: &ApertureModel,
    ms: &MeasurementSet,
    start: &ComplexImage,
    iterations: usize,
) -> Result<ScalarRun> {
    ms.validate(ap)?;
    if start.n() != ap.n() {
        return Err(Error::shape("start pupil and aperture grid differ"));
    }
    if iterations == 0 {
        return Err(Error::param("iterations must be at least 1"));
    }
    let n = ap.n();
    let radii: Vec<RealImage> = ms.intensities.iter().map(|r| r.map(f64::sqrt)).collect();
    let phasors: Vec<ComplexImage> = ms.diversities.iter().map(RealImage::phasor).collect();
    let mut x = start.clone();
    let mut residuals = Vec::with_capacity(iterations);
    let inv_m = 1.0 / ms.m() as f64;
    for k in 0..iterations {
        let mut acc = vec![Complex64::new(0.0, 0.0); n * n];
        for (radius, ph) in radii.iter().zip(&phasors) {
            let mut z = ComplexImage::from_raw(n, x.data().iter().zip(ph.data()).map(|(a, b)| a * b).collect());
            fft2_centered_in_place(&mut z);
            magnitude_projection(&mut z, radius);
            ifft2_centered_in_place(&mut z);
            for ((a, v), p) in acc.iter_mut().zip(z.data()).zip(ph.data()) {
                *a += v * p.conj() * inv_m;
            }
        }
        for (a, &inside) in acc.iter_mut().zip(ap.mask()) {
            if !inside {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        let next = ComplexImage::from_raw(n, acc);
        if !next.is_finite() {
            return Err(Error::NonFinite { iteration: k + 1 });
        }
        residuals.push(ComplexImage::combination(&[(1.0, &next), (-1.0, &x)]).norm());
        x = next;
    }
    let phase = RealImage::from_raw(
        n,
        x.data()
            .iter()
            .zip(ap.mask())
            .map(|(v, &inside)| if inside && v.norm() > 0.0 { v.arg() } else { 0.0 })
            .collect(),
    );
    Ok(ScalarRun { pupil: x, phase, residuals })
}
