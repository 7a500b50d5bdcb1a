//! All operator families on the same noiseless problem, on every model
//! that suits them. Reports the read-out phase error, the last residual and
//! the fitted linear rate.
//!
//! `cargo run --release --example operator_zoo -- [iterations]`

use vecpr::harness::{generate_phase, relative_rms, simulate_defocus_stack, PhaseSpec};
use vecpr::projectors::Problem;
use vecpr::psf::{build_aperture, AmplitudeSpec, ApertureParams};
use vecpr::solvers::{extract_phase, initial_iterate, iterate, Family, IterateOptions, Model, OperatorSpec};
use vecpr::field::RealImage;

fn main() -> vecpr::Result<()> {
    let iters = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(150);
    let params = ApertureParams { n: 32, pupil_fraction: 0.5, ..Default::default() };
    let ap = build_aperture(params, AmplitudeSpec::truncated_gaussian())?;
    let truth = generate_phase(&ap, &PhaseSpec::default(), 11);
    let ms = simulate_defocus_stack(&ap, &truth, 5, 1.0)?;
    let problem = Problem::new(ap.clone(), &ms)?;
    let flat = RealImage::zeros(ap.n());

    println!("{:6} {:5} {:6} {:>9} {:>11} {:>8}", "family", "beta", "model", "error %", "residual", "rate");
    for family in Family::ALL {
        let models: &[Model] = if family.is_cyclic() {
            &[Model::Pr1, Model::Pr1Known]
        } else {
            &[Model::Pr3, Model::Pr4, Model::Pr3Known, Model::Pr4Known]
        };
        for &model in models {
            let beta = family.default_beta();
            let spec = OperatorSpec::for_model(family, beta, model, ms.m())?;
            let amplitude = if model.known_amplitude() { problem.amplitude().clone() } else { ap.mask_image() };
            let x0 = initial_iterate(&ap, &amplitude, &flat, spec.block_count(ms.m()))?;
            let trace = iterate(&problem, &spec, &x0, IterateOptions::fixed(iters))?;
            let est = extract_phase(&trace.final_iterate, &ap)?;
            let err = relative_rms(&est.phase, &truth, ap.mask())?;
            println!(
                "{:6} {:5.2} {:6} {:9.3} {:11.3e} {:>8}",
                family.name(),
                beta,
                model.name(),
                100.0 * err,
                trace.residuals.last().copied().unwrap_or(f64::NAN),
                trace.rate_estimate.map_or("-".into(), |r| format!("{:.4}", r.rate))
            );
        }
    }
    Ok(())
}
