//! Synthetic measurement stacks, additive Gaussian noise and the phase error metric.

use std::f64::consts::{PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::RealImage;
use crate::psf::{defocus_diversity, defocus_positions, vectorial_psf, ApertureModel, MeasurementSet};

/// Vectorial PSF stack for `phase` at each diversity, every image scaled to unit energy.
pub fn simulate_stack(ap: &ApertureModel, phase: &RealImage, diversities: &[RealImage]) -> Result<MeasurementSet> {
    let intensities = diversities
        .iter()
        .map(|div| {
            let img = vectorial_psf(ap, phase, div)?;
            let e = img.sum();
            if !(e > 0.0) {
                return Err(Error::ZeroNorm);
            }
            Ok(img.scaled(1.0 / e))
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurementSet::new(intensities, diversities.to_vec())
}

/// `m` defocus planes centred on focus, `spacing_dof` depths of focus apart.
pub fn simulate_defocus_stack(
    ap: &ApertureModel,
    phase: &RealImage,
    m: usize,
    spacing_dof: f64,
) -> Result<MeasurementSet> {
    let z = defocus_positions(ap, m, spacing_dof);
    let div: Vec<RealImage> = z.iter().map(|&z| defocus_diversity(ap, z)).collect();
    let mut ms = simulate_stack(ap, phase, &div)?;
    ms.defocus = z;
    Ok(ms)
}

/// Adds i.i.d. Gaussian noise of power `P * 10^(-snr_db / 10)` to each image,
/// where `P` is the image's mean square value, then clips at zero. The raw
/// noise goes to `noise_record`. An infinite SNR returns the input unchanged.
pub fn add_gaussian_noise(ms: &MeasurementSet, snr_db: f64, seed: u64) -> Result<MeasurementSet> {
    if snr_db == f64::INFINITY {
        return Ok(ms.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::param("SNR must be finite or +inf"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = Vec::with_capacity(ms.m());
    let mut record = Vec::with_capacity(ms.m());
    for img in &ms.intensities {
        let power = img.data().iter().map(|v| v * v).sum::<f64>() / img.data().len() as f64;
        let sigma = (power * 10f64.powf(-snr_db / 10.0)).sqrt();
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
        let w = RealImage::from_fn(img.n(), |_, _| normal.sample(&mut rng));
        noisy.push(RealImage::from_fn(img.n(), |i, j| (img.get(i, j) + w.get(i, j)).max(0.0)));
        record.push(w);
    }
    Ok(MeasurementSet {
        intensities: noisy,
        diversities: ms.diversities.clone(),
        defocus: ms.defocus.clone(),
        noise_record: Some(record),
    })
}

/// `10 log10(P / P0)` from a clean image and its recorded noise.
pub fn empirical_snr_db(clean: &RealImage, noise: &RealImage) -> f64 {
    let p: f64 = clean.data().iter().map(|v| v * v).sum();
    let p0: f64 = noise.data().iter().map(|v| v * v).sum();
    10.0 * (p / p0).log10()
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap(a: f64) -> f64 {
    let w = a - TAU * ((a + PI) / TAU).floor();
    if w <= -PI { w + TAU } else { w }
}

/// Relative RMS phase error over the aperture with piston removed.
///
/// The difference is wrapped, its circular mean is taken out, the result
/// wrapped again and its mean subtracted, then normalised by the
/// piston-free norm of `truth`. A pure piston offset therefore scores zero
/// even when it wraps.
pub fn relative_rms(estimate: &RealImage, truth: &RealImage, mask: &[bool]) -> Result<f64> {
    if estimate.n() != truth.n() || mask.len() != truth.data().len() {
        return Err(Error::shape("phase maps and mask must share the grid"));
    }
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::ZeroNorm);
    }
    let count = idx.len() as f64;
    let t_mean = idx.iter().map(|&i| truth.data()[i]).sum::<f64>() / count;
    let denom = idx.iter().map(|&i| (truth.data()[i] - t_mean).powi(2)).sum::<f64>().sqrt();
    if !(denom > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let diff: Vec<f64> = idx.iter().map(|&i| wrap(estimate.data()[i] - truth.data()[i])).collect();
    let (s, c) = diff.iter().fold((0.0, 0.0), |(s, c), d| (s + d.sin(), c + d.cos()));
    let piston = if s == 0.0 && c == 0.0 { 0.0 } else { s.atan2(c) };
    let diff: Vec<f64> = diff.iter().map(|d| wrap(d - piston)).collect();
    let mean = diff.iter().sum::<f64>() / count;
    let num = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>().sqrt();
    Ok(num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::zernike::{generate_phase, PhaseSpec};
    use crate::psf::{build_aperture, AmplitudeSpec, ApertureParams};

    fn aperture(n: usize) -> ApertureModel {
        build_aperture(ApertureParams { n, ..ApertureParams::default() }, AmplitudeSpec::truncated_gaussian()).unwrap()
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap(0.0), 0.0);
        assert!((wrap(PI) - PI).abs() < 1e-15);
        assert!((wrap(-PI) - PI).abs() < 1e-15);
        assert!((wrap(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-14);
        assert!((wrap(7.0) - (7.0 - TAU)).abs() < 1e-14);
    }

    #[test]
    fn flat_in_focus_image_has_unit_energy() {
        let ap = aperture(32);
        let ms = simulate_stack(&ap, &RealImage::zeros(32), &[RealImage::zeros(32)]).unwrap();
        assert_eq!(ms.m(), 1);
        assert!((ms.intensities[0].sum() - 1.0).abs() < 1e-12);
        assert!(ms.intensities[0].data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn table_configuration_shape() {
        let ap = aperture(128);
        let phase = generate_phase(&ap, &PhaseSpec::default(), 1);
        let ms = simulate_defocus_stack(&ap, &phase, 7, 1.0).unwrap();
        assert_eq!(ms.m(), 7);
        assert_eq!(ms.n(), 128);
        for img in &ms.intensities {
            assert!((img.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn infinite_snr_is_identity_and_noise_is_seeded() {
        let ap = aperture(32);
        let ms = simulate_defocus_stack(&ap, &RealImage::zeros(32), 3, 1.0).unwrap();
        assert_eq!(add_gaussian_noise(&ms, f64::INFINITY, 1).unwrap(), ms);
        let a = add_gaussian_noise(&ms, 30.0, 5).unwrap();
        let b = add_gaussian_noise(&ms, 30.0, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.intensities.iter().all(|r| r.data().iter().all(|&v| v >= 0.0)));
        assert!(add_gaussian_noise(&ms, f64::NAN, 1).is_err());
    }

    #[test]
    fn relative_rms_examples() {
        let ap = aperture(32);
        let phase = generate_phase(&ap, &PhaseSpec::default(), 3);
        let mask = ap.mask();
        assert_eq!(relative_rms(&phase, &phase, mask).unwrap(), 0.0);
        for c in [0.5, 3.0, -2.5] {
            let shifted = phase.map(|v| wrap(v + c));
            assert!(relative_rms(&shifted, &phase, mask).unwrap() < 1e-12);
        }
        assert!(matches!(relative_rms(&phase, &RealImage::zeros(32), mask), Err(Error::ZeroNorm)));
    }

    #[test]
    fn negated_phase_against_direct_oracle() {
        let ap = aperture(32);
        let phase = generate_phase(&ap, &PhaseSpec { peak: 1.0, ..PhaseSpec::default() }, 11);
        let neg = phase.map(|v| -v);
        // no wrapping occurs when |2 phase| < pi, so the score is the plain ratio
        let idx: Vec<usize> = (0..32 * 32).filter(|&i| ap.mask()[i]).collect();
        let mean = idx.iter().map(|&i| phase.data()[i]).sum::<f64>() / idx.len() as f64;
        let num: f64 = idx.iter().map(|&i| (2.0 * (phase.data()[i] - mean)).powi(2)).sum::<f64>().sqrt();
        let den: f64 = idx.iter().map(|&i| (phase.data()[i] - mean).powi(2)).sum::<f64>().sqrt();
        let got = relative_rms(&neg, &phase, ap.mask()).unwrap();
        assert!((got - num / den).abs() < 1e-12, "{got} vs {}", num / den);
    }
}
