//! Local averagedness certificates: the diagonal projector is exactly
//! 1/2-averaged, a reflection is not, and the alternating-projection
//! operator is almost 2/3-averaged near a solution.
//!
//! `cargo run --release --example averagedness -- [samples]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vecpr::field::{ProductIterate, RealImage};
use vecpr::harness::{generate_phase, simulate_defocus_stack, PhaseSpec};
use vecpr::projectors::{project_d, Problem};
use vecpr::psf::{build_aperture, AmplitudeSpec, ApertureParams};
use vecpr::solvers::{
    check_almost_averaged, check_operator_averaged, initial_iterate, iterate, Family, IterateOptions, Model,
    OperatorSpec,
};

fn main() -> vecpr::Result<()> {
    let samples = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1000);
    let params = ApertureParams { n: 16, pupil_fraction: 0.5, ..Default::default() };
    let ap = build_aperture(params, AmplitudeSpec::truncated_gaussian())?;
    let truth = generate_phase(&ap, &PhaseSpec::default(), 2);
    let ms = simulate_defocus_stack(&ap, &truth, 3, 1.0)?;
    let problem = Problem::new(ap.clone(), &ms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    let spec = OperatorSpec::for_model(Family::Ap, 1.0, Model::Pr3, ms.m())?;
    let x0 = initial_iterate(&ap, &ap.mask_image(), &RealImage::zeros(ap.n()), ms.m())?;
    let trace = iterate(&problem, &spec, &x0, IterateOptions::fixed(300))?;
    let center = &trace.final_iterate;
    println!("AP reached residual {:.2e} after {} steps", trace.residuals.last().unwrap(), trace.iterations());

    let report = |name: &str, c: vecpr::solvers::AveragednessCertificate| {
        println!(
            "{name:28} alpha {:.3}  epsilon {:.3e}  worst ratio {:.6}  ({} pairs, radius {:.2e})",
            c.alpha, c.epsilon, c.worst_ratio, c.sample_count, c.radius
        )
    };
    let r = 0.05 * center.norm();
    report("diagonal projector", check_almost_averaged(|u| Ok(project_d(u)), center, r, samples, 0.5, &mut rng)?);
    let reflect = |u: &ProductIterate| Ok(ProductIterate::combination(&[(2.0, &project_d(u)), (-1.0, u)]));
    report("diagonal reflection", check_almost_averaged(reflect, center, r, samples, 0.5, &mut rng)?);
    for scale in [1e-3, 1e-2, 1e-1] {
        let c = check_operator_averaged(&problem, &spec, center, scale * center.norm(), samples, 2.0 / 3.0, &mut rng)?;
        report(&format!("AP, radius {scale:.0e}·|x|"), c);
    }
    Ok(())
}
