use num_complex::Complex64;
use rand::Rng;

use crate::field::{ComplexImage, SixChannelField};

pub(crate) fn random_field(n: usize, rng: &mut impl Rng) -> SixChannelField {
    SixChannelField::from_raw(std::array::from_fn(|_| {
        ComplexImage::from_fn(n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }))
}

use crate::projectors::Problem;
use crate::psf::{build_aperture, defocus_diversity, vectorial_psf, AmplitudeSpec, ApertureParams, MeasurementSet};
use crate::field::RealImage;

pub(crate) fn small_phase() -> RealImage {
    RealImage::from_fn(8, |i, j| 0.3 * i as f64 - 0.2 * j as f64)
}

/// Noise-free 8x8 problem with `m` defocused images of [`small_phase`].
pub(crate) fn small_problem(m: usize) -> Problem {
    let ap = build_aperture(
        ApertureParams { n: 8, na: 0.9, pupil_fraction: 0.75, ..ApertureParams::default() },
        AmplitudeSpec::truncated_gaussian(),
    )
    .unwrap();
    let phase = small_phase();
    let div: Vec<RealImage> = (0..m).map(|d| defocus_diversity(&ap, 0.2 * d as f64)).collect();
    let ints = div.iter().map(|p| vectorial_psf(&ap, &phase, p).unwrap()).collect();
    let ms = MeasurementSet::new(ints, div).unwrap();
    Problem::new(ap, &ms).unwrap()
}
