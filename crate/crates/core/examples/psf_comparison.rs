//! Scalar versus vectorial PSF across numerical apertures.
//!
//! Prints the polarisation energy check and the relative discrepancy between
//! the two models' central cross-sections, then the cross-sections at the
//! largest NA as CSV.
//!
//! `cargo run --release --example psf_comparison -- [n]`

use vecpr::harness::compare::cross_sections_csv;
use vecpr::harness::{compare_psf_models, CompareOptions};
use vecpr::psf::{build_aperture, AmplitudeSpec, ApertureParams};

fn main() -> vecpr::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(128);
    let nas = [0.05, 0.15, 0.35, 0.55, 0.75, 0.95];

    for &na in &nas {
        let ap = build_aperture(ApertureParams { n, na, ..Default::default() }, AmplitudeSpec::Uniform)?;
        let worst = (0..n * n)
            .filter(|&i| ap.mask()[i])
            .map(|i| {
                let e2: f64 = ap.polarisation_maps().iter().map(|m| m.data()[i].powi(2)).sum();
                (e2 - 2.0).abs()
            })
            .fold(0.0, f64::max);
        println!("NA {na:.2}: max |sum E^2 - 2| = {worst:.1e} over {} pupil pixels", ap.mask_count());
    }

    let rows = compare_psf_models(&nas, &CompareOptions { n, ..Default::default() })?;
    println!("\n  NA   discrepancy  (aberrated)  (energy-normalised)");
    for r in &rows {
        println!(
            "{:5.2}   {:9.4}    {:9.4}    {:9.4}",
            r.na, r.discrepancy, r.discrepancy_aberrated, r.discrepancy_energy
        );
    }
    let last = rows.len() - 1;
    println!("\ncross-sections at NA {:.2}:", rows[last].na);
    print!("{}", cross_sections_csv(&rows[last..]));
    Ok(())
}
