//! Random smooth aberrations from Noll-indexed Zernike modes.

use serde::{Deserialize, Serialize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::field::RealImage;
use crate::psf::ApertureModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseSpec {
    /// Highest Noll index used; modes `2..=max_mode` (piston excluded).
    pub max_mode: usize,
    /// Peak `|phase|` over the aperture after rescaling, radians.
    pub peak: f64,
    /// Standard deviation of each coefficient before rescaling. Zero gives a flat phase.
    pub coefficient_scale: f64,
}

impl Default for PhaseSpec {
    fn default() -> Self {
        Self { max_mode: 15, peak: std::f64::consts::PI, coefficient_scale: 1.0 }
    }
}

/// Radial order and signed azimuthal frequency of Noll index `j >= 1`.
pub fn noll_to_nm(j: usize) -> (usize, i64) {
    assert!(j >= 1, "Noll indices start at 1");
    let mut n = 0usize;
    let mut j1 = j - 1;
    while j1 > n {
        n += 1;
        j1 -= n;
    }
    let parity = (n % 2) + 2 * ((j1 + (n + 1) % 2) / 2);
    let m = parity as i64;
    if j % 2 == 0 { (n, m) } else { (n, -m) }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn radial(n: usize, m: usize, rho: f64) -> f64 {
    (0..=(n - m) / 2)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * factorial(n - k)
                / (factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k))
                * rho.powi((n - 2 * k) as i32)
        })
        .sum()
}

/// Orthonormal Zernike mode `j` at normalised radius `rho` and azimuth `theta`.
pub fn zernike(j: usize, rho: f64, theta: f64) -> f64 {
    let (n, m) = noll_to_nm(j);
    let ma = m.unsigned_abs() as usize;
    let r = radial(n, ma, rho);
    if m == 0 {
        ((n + 1) as f64).sqrt() * r
    } else if m > 0 {
        (2.0 * (n + 1) as f64).sqrt() * r * (ma as f64 * theta).cos()
    } else {
        (2.0 * (n + 1) as f64).sqrt() * r * (ma as f64 * theta).sin()
    }
}

/// Mode `j` sampled on the aperture, zero outside.
pub fn zernike_map(ap: &ApertureModel, j: usize) -> RealImage {
    let n = ap.n();
    RealImage::from_fn(n, |i, k| {
        let idx = i * n + k;
        if ap.mask()[idx] {
            let (rho, theta) = ap.polar_coords(idx);
            zernike(j, rho, theta)
        } else {
            0.0
        }
    })
}

/// Seeded random phase: Gaussian coefficients on modes `2..=max_mode`,
/// mask mean removed, then scaled so the largest `|phase|` equals `peak`.
pub fn generate_phase(ap: &ApertureModel, spec: &PhaseSpec, seed: u64) -> RealImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ap.n();
    let mut phase = RealImage::zeros(n);
    for j in 2..=spec.max_mode {
        let c: f64 = StandardNormal.sample(&mut rng);
        let c = c * spec.coefficient_scale;
        if c == 0.0 {
            continue;
        }
        let mode = zernike_map(ap, j);
        for (p, z) in phase.data_mut().iter_mut().zip(mode.data()) {
            *p += c * z;
        }
    }
    let count = ap.mask_count() as f64;
    let mean = phase.data().iter().sum::<f64>() / count;
    for (p, &inside) in phase.data_mut().iter_mut().zip(ap.mask()) {
        *p = if inside { *p - mean } else { 0.0 };
    }
    let peak = phase.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        let s = spec.peak / peak;
        phase.data_mut().iter_mut().for_each(|p| *p *= s);
    }
    phase
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psf::{build_aperture, AmplitudeSpec, ApertureParams};

    fn aperture(n: usize) -> ApertureModel {
        build_aperture(ApertureParams { n, ..ApertureParams::default() }, AmplitudeSpec::Uniform).unwrap()
    }

    #[test]
    fn noll_ordering() {
        let expected = [(0, 0), (1, 1), (1, -1), (2, 0), (2, -2), (2, 2), (3, -1), (3, 1), (3, -3), (3, 3), (4, 0)];
        for (j, nm) in expected.iter().enumerate() {
            assert_eq!(noll_to_nm(j + 1), *nm, "j = {}", j + 1);
        }
    }

    #[test]
    fn low_order_modes_in_closed_form() {
        let (rho, th) = (0.7f64, 0.4f64);
        assert!((zernike(1, rho, th) - 1.0).abs() < 1e-14);
        assert!((zernike(2, rho, th) - 2.0 * rho * th.cos()).abs() < 1e-14);
        assert!((zernike(4, rho, th) - 3f64.sqrt() * (2.0 * rho * rho - 1.0)).abs() < 1e-14);
        assert!((zernike(11, rho, th) - 5f64.sqrt() * (6.0 * rho.powi(4) - 6.0 * rho * rho + 1.0)).abs() < 1e-13);
    }

    #[test]
    fn modes_are_nearly_orthonormal_on_the_grid() {
        let ap = aperture(128);
        let count = ap.mask_count() as f64;
        let maps: Vec<RealImage> = (2..=8).map(|j| zernike_map(&ap, j)).collect();
        for (a, za) in maps.iter().enumerate() {
            for (b, zb) in maps.iter().enumerate() {
                let ip: f64 = za.data().iter().zip(zb.data()).map(|(x, y)| x * y).sum::<f64>() / count;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 0.05, "<Z{}, Z{}> = {ip}", a + 2, b + 2);
            }
        }
    }

    #[test]
    fn generated_phase_is_bounded_piston_free_and_deterministic() {
        let ap = aperture(32);
        let spec = PhaseSpec::default();
        for seed in 0..100 {
            let p = generate_phase(&ap, &spec, seed);
            let max = p.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(max <= std::f64::consts::PI + 1e-12);
            let mean: f64 = p.data().iter().sum::<f64>() / ap.mask_count() as f64;
            assert!(mean.abs() < 1e-12);
        }
        assert_eq!(generate_phase(&ap, &spec, 7), generate_phase(&ap, &spec, 7));
        assert_ne!(generate_phase(&ap, &spec, 7), generate_phase(&ap, &spec, 8));
        let flat = PhaseSpec { coefficient_scale: 0.0, ..spec };
        assert!(generate_phase(&ap, &flat, 3).data().iter().all(|&v| v == 0.0));
    }
}
