//! Centered, unitary 2-D DFT.
//!
//! Zero frequency sits at pixel `(n/2, n/2)` (integer division) and both
//! directions carry a `1/n` factor, so the transform is unitary:
//!
//! `X[k, l] = 1/n * sum_{i,j} x[i, j] * exp(-2 pi j ((i - c)(k - c) + (j - c)(l - c)) / n)`
//!
//! with `c = n/2`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use super::ComplexImage;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction))
}

fn transform_in_place(img: &mut ComplexImage, direction: FftDirection) {
    let n = img.n();
    let c = n / 2;
    let fft = plan(n, direction);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    // move the centre pixel to the origin
    let src = img.data();
    let mut rows = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let si = (i + c) % n;
        for j in 0..n {
            rows[i * n + j] = src[si * n + (j + c) % n];
        }
    }
    fft.process_with_scratch(&mut rows, &mut scratch);

    let mut cols = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            cols[j * n + i] = rows[i * n + j];
        }
    }
    fft.process_with_scratch(&mut cols, &mut scratch);

    // cols[b * n + a] holds frequency (a, b); shift the origin back to the centre
    let scale = 1.0 / n as f64;
    let shift = n - c;
    let dst = img.data_mut();
    for k in 0..n {
        let a = (k + shift) % n;
        for l in 0..n {
            let b = (l + shift) % n;
            dst[k * n + l] = cols[b * n + a] * scale;
        }
    }
}

pub fn fft2_centered_in_place(img: &mut ComplexImage) {
    transform_in_place(img, FftDirection::Forward);
}

pub fn ifft2_centered_in_place(img: &mut ComplexImage) {
    transform_in_place(img, FftDirection::Inverse);
}

pub fn fft2_centered(img: &ComplexImage) -> ComplexImage {
    let mut out = img.clone();
    fft2_centered_in_place(&mut out);
    out
}

pub fn ifft2_centered(img: &ComplexImage) -> ComplexImage {
    let mut out = img.clone();
    ifft2_centered_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Direct O(n^4) evaluation of the centered unitary DFT.
    fn dft_oracle(x: &ComplexImage, sign: f64) -> ComplexImage {
        let n = x.n();
        let c = (n / 2) as f64;
        ComplexImage::from_fn(n, |k, l| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let arg = sign * 2.0 * PI
                        * ((i as f64 - c) * (k as f64 - c) + (j as f64 - c) * (l as f64 - c))
                        / n as f64;
                    acc += x.get(i, j) * Complex64::from_polar(1.0, arg);
                }
            }
            acc / n as f64
        })
    }

    fn random_image(n: usize, seed: u64) -> ComplexImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexImage::from_fn(n, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn max_diff(a: &ComplexImage, b: &ComplexImage) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn centered_delta_maps_to_constant() {
        let mut x = ComplexImage::zeros(4);
        x.set(2, 2, Complex64::new(1.0, 0.0));
        let y = fft2_centered(&x);
        for v in y.data() {
            assert!((v.norm() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_maps_back_to_centered_delta() {
        let x = ComplexImage::from_fn(4, |_, _| Complex64::new(0.25, 0.0));
        let y = ifft2_centered(&x);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if (i, j) == (2, 2) { 1.0 } else { 0.0 };
                assert!((y.get(i, j) - Complex64::new(expected, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn forward_matches_direct_sum() {
        for (n, seed) in [(8, 1), (7, 2), (6, 3)] {
            let x = random_image(n, seed);
            assert!(max_diff(&fft2_centered(&x), &dft_oracle(&x, -1.0)) < 1e-12);
        }
    }

    #[test]
    fn inverse_matches_direct_sum() {
        for (n, seed) in [(8, 4), (5, 5)] {
            let x = random_image(n, seed);
            assert!(max_diff(&ifft2_centered(&x), &dft_oracle(&x, 1.0)) < 1e-10);
        }
    }

    #[test]
    fn round_trip_against_oracle() {
        let x = random_image(8, 9);
        let back = dft_oracle(&fft2_centered(&x), 1.0);
        assert!(max_diff(&back, &x) < 1e-12);
        assert!(max_diff(&ifft2_centered(&fft2_centered(&x)), &x) < 1e-12);
    }

    #[test]
    fn unitary() {
        let x = random_image(16, 10);
        let y = fft2_centered(&x);
        assert!((y.norm() - x.norm()).abs() < 1e-12 * x.norm());
    }
}
