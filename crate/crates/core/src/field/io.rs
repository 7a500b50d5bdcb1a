//! Flat binary array files with a JSON sidecar.
//!
//! An array stack named `stem` is stored as `stem.bin` (little-endian f64,
//! row-major; complex values as interleaved `(re, im)` pairs, one image
//! after another) plus `stem.json`:
//!
//! ```json
//! {"n": 64, "channels": 7, "dtype": "c128", "layout": "row-major"}
//! ```
//!
//! Real stacks use `"dtype": "f64"`. All writes go to a temporary file that
//! is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ComplexImage, RealImage, SixChannelField};
use crate::error::{Error, Result};

pub const DTYPE_COMPLEX: &str = "c128";
pub const DTYPE_REAL: &str = "f64";
pub const LAYOUT: &str = "row-major";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayHeader {
    pub n: usize,
    pub channels: usize,
    pub dtype: String,
    pub layout: String,
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn bin_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "bin")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    with_suffix(stem, "json")
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_stack(stem: &Path, header: &ArrayHeader, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&bin_path(stem), &bytes)?;
    write_json(&sidecar_path(stem), header)
}

fn read_stack(stem: &Path, dtype: &str) -> Result<(ArrayHeader, Vec<f64>)> {
    let header: ArrayHeader = read_json(&sidecar_path(stem))?;
    if header.dtype != dtype {
        return Err(Error::Format(format!(
            "{}: expected dtype {dtype}, found {}",
            sidecar_path(stem).display(),
            header.dtype
        )));
    }
    if header.layout != LAYOUT {
        return Err(Error::Format(format!("unsupported layout {}", header.layout)));
    }
    let per_value = if dtype == DTYPE_COMPLEX { 2 } else { 1 };
    let expected = header.n * header.n * header.channels * per_value * 8;
    let bytes = fs::read(bin_path(stem))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes, found {}",
            bin_path(stem).display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, values))
}

pub fn write_complex_stack(stem: &Path, images: &[ComplexImage]) -> Result<()> {
    let n = images.first().map(ComplexImage::n).ok_or_else(|| Error::shape("empty stack"))?;
    if images.iter().any(|i| i.n() != n) {
        return Err(Error::shape("stack images must share the grid size"));
    }
    let header = ArrayHeader {
        n,
        channels: images.len(),
        dtype: DTYPE_COMPLEX.into(),
        layout: LAYOUT.into(),
    };
    let values = images
        .iter()
        .flat_map(|img| img.data().iter().flat_map(|v| [v.re, v.im]));
    write_stack(stem, &header, values)
}

pub fn read_complex_stack(stem: &Path) -> Result<Vec<ComplexImage>> {
    let (header, values) = read_stack(stem, DTYPE_COMPLEX)?;
    let nn = header.n * header.n;
    values
        .chunks_exact(2 * nn)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(2)
                .map(|p| Complex64::new(p[0], p[1]))
                .collect();
            ComplexImage::new(header.n, data)
        })
        .collect()
}

pub fn write_real_stack(stem: &Path, images: &[RealImage]) -> Result<()> {
    let n = images.first().map(RealImage::n).ok_or_else(|| Error::shape("empty stack"))?;
    if images.iter().any(|i| i.n() != n) {
        return Err(Error::shape("stack images must share the grid size"));
    }
    let header = ArrayHeader {
        n,
        channels: images.len(),
        dtype: DTYPE_REAL.into(),
        layout: LAYOUT.into(),
    };
    write_stack(stem, &header, images.iter().flat_map(|i| i.data().iter().copied()))
}

pub fn read_real_stack(stem: &Path) -> Result<Vec<RealImage>> {
    let (header, values) = read_stack(stem, DTYPE_REAL)?;
    let nn = header.n * header.n;
    values
        .chunks_exact(nn)
        .map(|chunk| RealImage::new(header.n, chunk.to_vec()))
        .collect()
}

pub fn write_field(stem: &Path, field: &SixChannelField) -> Result<()> {
    write_complex_stack(stem, field.channels())
}

pub fn read_field(stem: &Path) -> Result<SixChannelField> {
    let images = read_complex_stack(stem)?;
    let channels: [ComplexImage; 6] = images
        .try_into()
        .map_err(|v: Vec<ComplexImage>| Error::Format(format!("expected 6 channels, found {}", v.len())))?;
    SixChannelField::new(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn complex_stack_round_trip_is_bit_exact(
            n in 2usize..6,
            count in 1usize..4,
            seed in any::<u64>(),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let stem = dir.path().join("stack");
            let mut state = seed;
            let mut next = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits((state >> 12) | 0x3ff0_0000_0000_0000) - 1.5
            };
            let images: Vec<ComplexImage> = (0..count)
                .map(|_| ComplexImage::from_fn(n, |_, _| Complex64::new(next(), next())))
                .collect();
            write_complex_stack(&stem, &images).unwrap();
            let back = read_complex_stack(&stem).unwrap();
            prop_assert_eq!(back, images);
        }
    }

    #[test]
    fn real_stack_round_trip_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("r");
        let img = RealImage::from_fn(3, |i, j| (i * 3 + j) as f64 * 0.1 - 0.3);
        write_real_stack(&stem, &[img.clone(), img.scaled(2.0)]).unwrap();
        let header: ArrayHeader = read_json(&sidecar_path(&stem)).unwrap();
        assert_eq!(
            header,
            ArrayHeader { n: 3, channels: 2, dtype: "f64".into(), layout: "row-major".into() }
        );
        let back = read_real_stack(&stem).unwrap();
        assert_eq!(back[0], img);
        assert_eq!(fs::metadata(bin_path(&stem)).unwrap().len(), 2 * 9 * 8);
    }

    #[test]
    fn first_bytes_are_little_endian_re_im() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("c");
        let img = ComplexImage::from_fn(2, |i, j| Complex64::new(i as f64, j as f64 + 0.5));
        write_complex_stack(&stem, &[img]).unwrap();
        let bytes = fs::read(bin_path(&stem)).unwrap();
        assert_eq!(&bytes[0..8], &0.0f64.to_le_bytes());
        assert_eq!(&bytes[8..16], &0.5f64.to_le_bytes());
        assert_eq!(&bytes[16..24], &0.0f64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1.5f64.to_le_bytes());
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("x");
        write_real_stack(&stem, &[RealImage::zeros(2)]).unwrap();
        assert!(read_complex_stack(&stem).is_err());
    }
}
