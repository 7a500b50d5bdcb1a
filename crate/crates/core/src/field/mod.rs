//! Complex grids, six-channel fields and product-space iterates.
//!
//! Everything downstream is built from [`ComplexImage`]: a square `n x n`
//! grid of double-precision complex values stored row-major. A
//! [`SixChannelField`] holds one image per polarisation channel and a
//! [`ProductIterate`] stacks several fields for the lifted (product-space)
//! formulations.

mod fft;
pub mod io;

pub use fft::{fft2_centered, fft2_centered_in_place, ifft2_centered, ifft2_centered_in_place};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Square complex grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    n: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    /// Validating constructor: `n >= 2`, `data.len() == n * n`, all entries finite.
    pub fn new(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::shape(format!("grid size must be at least 2, got {n}")));
        }
        if data.len() != n * n {
            return Err(Error::shape(format!(
                "expected {} values for a {n}x{n} grid, got {}",
                n * n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::param("complex image contains non-finite entries"));
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub(crate) fn from_raw(n: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.n + col] = value;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Real part of the Hermitian inner product, i.e. the inner product of
    /// the underlying real vector space.
    pub fn inner_re(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Elementwise product with a real map.
    pub fn mul_real(&self, weights: &RealImage) -> Self {
        debug_assert_eq!(self.n, weights.n());
        let data = self
            .data
            .iter()
            .zip(weights.data())
            .map(|(v, w)| v * w)
            .collect();
        Self { n: self.n, data }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `sum_k a_k * x_k` over the given terms. All terms must share `n`.
    pub fn combination(terms: &[(f64, &ComplexImage)]) -> Self {
        let n = terms.first().map(|t| t.1.n).expect("at least one term");
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for &(a, img) in terms {
            debug_assert_eq!(img.n, n);
            for (o, v) in out.iter_mut().zip(&img.data) {
                *o += v * a;
            }
        }
        Self { n, data: out }
    }

    pub fn abs(&self) -> RealImage {
        RealImage::from_raw(self.n, self.data.iter().map(|v| v.norm()).collect())
    }

    pub fn arg(&self) -> RealImage {
        RealImage::from_raw(self.n, self.data.iter().map(|v| v.arg()).collect())
    }
}

/// Square real grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    n: usize,
    data: Vec<f64>,
}

impl RealImage {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::shape(format!("grid size must be at least 2, got {n}")));
        }
        if data.len() != n * n {
            return Err(Error::shape(format!(
                "expected {} values for a {n}x{n} grid, got {}",
                n * n,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::param("real image contains non-finite entries"));
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub(crate) fn from_raw(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.n + col] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn to_complex(&self) -> ComplexImage {
        ComplexImage::from_raw(
            self.n,
            self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    /// `e^{j * self}` elementwise.
    pub fn phasor(&self) -> ComplexImage {
        ComplexImage::from_raw(
            self.n,
            self.data.iter().map(|&v| Complex64::from_polar(1.0, v)).collect(),
        )
    }
}

/// Polarisation channel index. The order is fixed and used for storage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    XX,
    XY,
    XZ,
    YX,
    YY,
    YZ,
}

impl Channel {
    pub const ALL: [Channel; 6] = [
        Channel::XX,
        Channel::XY,
        Channel::XZ,
        Channel::YX,
        Channel::YY,
        Channel::YZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::XX => "XX",
            Channel::XY => "XY",
            Channel::XZ => "XZ",
            Channel::YX => "YX",
            Channel::YY => "YY",
            Channel::YZ => "YZ",
        }
    }
}

/// One element of the six-channel field space.
#[derive(Clone, Debug, PartialEq)]
pub struct SixChannelField {
    channels: [ComplexImage; 6],
}

impl SixChannelField {
    pub fn new(channels: [ComplexImage; 6]) -> Result<Self> {
        let n = channels[0].n();
        if channels.iter().any(|c| c.n() != n) {
            return Err(Error::shape("all six channels must share the grid size"));
        }
        Ok(Self { channels })
    }

    pub(crate) fn from_raw(channels: [ComplexImage; 6]) -> Self {
        Self { channels }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            channels: std::array::from_fn(|_| ComplexImage::zeros(n)),
        }
    }

    pub fn from_fn(mut f: impl FnMut(Channel) -> ComplexImage) -> Result<Self> {
        Self::new(Channel::ALL.map(&mut f))
    }

    pub fn n(&self) -> usize {
        self.channels[0].n()
    }

    pub fn channel(&self, c: Channel) -> &ComplexImage {
        &self.channels[c.index()]
    }

    pub fn channel_mut(&mut self, c: Channel) -> &mut ComplexImage {
        &mut self.channels[c.index()]
    }

    pub fn channels(&self) -> &[ComplexImage; 6] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [ComplexImage; 6] {
        &mut self.channels
    }

    pub fn into_channels(self) -> [ComplexImage; 6] {
        self.channels
    }

    /// The six channel values at flat pixel index `idx`.
    pub fn pixel(&self, idx: usize) -> [Complex64; 6] {
        std::array::from_fn(|c| self.channels[c].data()[idx])
    }

    pub fn set_pixel(&mut self, idx: usize, values: [Complex64; 6]) {
        for (ch, v) in self.channels.iter_mut().zip(values) {
            ch.data_mut()[idx] = v;
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.channels.iter().map(ComplexImage::norm_sqr).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner_re(&self, other: &Self) -> f64 {
        self.channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| a.inner_re(b))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.channels.iter().all(ComplexImage::is_finite)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        SixChannelField::combination(&[(1.0, self), (-1.0, other)]).norm()
    }

    pub fn map_channels(&self, mut f: impl FnMut(Channel, &ComplexImage) -> ComplexImage) -> Self {
        Self {
            channels: Channel::ALL.map(|c| f(c, &self.channels[c.index()])),
        }
    }

    pub fn combination(terms: &[(f64, &SixChannelField)]) -> Self {
        Self {
            channels: std::array::from_fn(|c| {
                let per: Vec<(f64, &ComplexImage)> =
                    terms.iter().map(|&(a, f)| (a, &f.channels[c])).collect();
                ComplexImage::combination(&per)
            }),
        }
    }
}

/// Frobenius norm over all channels and pixels.
pub fn frobenius_norm(x: &SixChannelField) -> f64 {
    x.norm()
}

/// A point of the product space: an ordered list of same-size fields.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductIterate {
    blocks: Vec<SixChannelField>,
}

impl ProductIterate {
    pub fn new(blocks: Vec<SixChannelField>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::shape("product iterate needs at least one block"));
        };
        let n = first.n();
        if blocks.iter().any(|b| b.n() != n) {
            return Err(Error::shape("all blocks must share the grid size"));
        }
        Ok(Self { blocks })
    }

    pub(crate) fn from_raw(blocks: Vec<SixChannelField>) -> Self {
        debug_assert!(!blocks.is_empty());
        Self { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn n(&self) -> usize {
        self.blocks[0].n()
    }

    pub fn blocks(&self) -> &[SixChannelField] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &SixChannelField {
        &self.blocks[i]
    }

    pub fn into_blocks(self) -> Vec<SixChannelField> {
        self.blocks
    }

    pub fn norm_sqr(&self) -> f64 {
        self.blocks.iter().map(SixChannelField::norm_sqr).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner_re(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.inner_re(b))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(SixChannelField::is_finite)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        ProductIterate::combination(&[(1.0, self), (-1.0, other)]).norm()
    }

    /// Whether every block equals the first one within `tol` (Frobenius).
    pub fn is_diagonal(&self, tol: f64) -> bool {
        let first = &self.blocks[0];
        self.blocks[1..].iter().all(|b| {
            SixChannelField::combination(&[(1.0, b), (-1.0, first)]).norm() <= tol
        })
    }

    pub fn combination(terms: &[(f64, &ProductIterate)]) -> Self {
        let len = terms[0].1.len();
        debug_assert!(terms.iter().all(|t| t.1.len() == len));
        let blocks = (0..len)
            .map(|k| {
                let per: Vec<(f64, &SixChannelField)> =
                    terms.iter().map(|&(a, u)| (a, &u.blocks[k])).collect();
                SixChannelField::combination(&per)
            })
            .collect();
        Self { blocks }
    }
}

/// Arithmetic mean of the blocks.
pub fn diagonal_average(u: &ProductIterate) -> SixChannelField {
    let w = 1.0 / u.len() as f64;
    let terms: Vec<(f64, &SixChannelField)> = u.blocks().iter().map(|b| (w, b)).collect();
    SixChannelField::combination(&terms)
}

/// `p` identical copies of `x`.
pub fn duplicate(x: &SixChannelField, p: usize) -> Result<ProductIterate> {
    if p == 0 {
        return Err(Error::param("duplicate needs at least one block"));
    }
    Ok(ProductIterate::from_raw(vec![x.clone(); p]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_field;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(ComplexImage::new(1, vec![Complex64::new(0.0, 0.0)]).is_err());
        assert!(ComplexImage::new(3, vec![Complex64::new(0.0, 0.0); 8]).is_err());
        assert!(ComplexImage::new(2, vec![Complex64::new(f64::NAN, 0.0); 4]).is_err());
        assert!(ComplexImage::new(2, vec![Complex64::new(1.0, 0.0); 4]).is_ok());
    }

    #[test]
    fn frobenius_norm_examples() {
        assert_eq!(frobenius_norm(&SixChannelField::zeros(4)), 0.0);

        let mut x = SixChannelField::zeros(2);
        *x.channel_mut(Channel::XY) = ComplexImage::from_fn(2, |_, _| Complex64::new(1.0, 0.0));
        assert_eq!(frobenius_norm(&x), 2.0);
    }

    #[test]
    fn frobenius_norm_matches_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_field(5, &mut rng);
        let mut acc = 0.0;
        for c in Channel::ALL {
            for i in 0..5 {
                for j in 0..5 {
                    let v = x.channel(c).get(i, j);
                    acc += v.re * v.re + v.im * v.im;
                }
            }
        }
        assert!((frobenius_norm(&x) - acc.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn diagonal_average_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_field(4, &mut rng);
        let same = duplicate(&x, 3).unwrap();
        let avg = diagonal_average(&same);
        assert!(SixChannelField::combination(&[(1.0, &avg), (-1.0, &x)]).norm() < 1e-14);

        let neg = SixChannelField::combination(&[(-1.0, &x)]);
        let pair = ProductIterate::new(vec![x.clone(), neg]).unwrap();
        assert!(diagonal_average(&pair).norm() < 1e-15);

        let blocks: Vec<_> = (0..3).map(|_| random_field(4, &mut rng)).collect();
        let u = ProductIterate::new(blocks.clone()).unwrap();
        let avg = diagonal_average(&u);
        for c in Channel::ALL {
            for idx in 0..16 {
                let mean = (blocks[0].channel(c).data()[idx]
                    + blocks[1].channel(c).data()[idx]
                    + blocks[2].channel(c).data()[idx])
                    / 3.0;
                assert!((avg.channel(c).data()[idx] - mean).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn duplicate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_field(4, &mut rng);
        let one = duplicate(&x, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.block(0), &x);
        let five = duplicate(&x, 5).unwrap();
        assert_eq!(five.len(), 5);
        assert!(five.is_diagonal(0.0));
        assert!(diagonal_average(&five).distance(&x) < 1e-15);
        assert!(duplicate(&x, 0).is_err());
    }

    #[test]
    fn mixed_blocks_are_not_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = ProductIterate::new(vec![random_field(4, &mut rng), random_field(4, &mut rng)])
            .unwrap();
        assert!(!u.is_diagonal(1e-6));
        assert!(ProductIterate::new(vec![]).is_err());
        assert!(ProductIterate::new(vec![SixChannelField::zeros(4), SixChannelField::zeros(6)])
            .is_err());
    }
}
