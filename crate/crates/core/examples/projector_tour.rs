//! Every constraint-set projector on a small consistent problem: distance
//! moved, feasibility residual after projecting, and idempotence.
//!
//! `cargo run --release --example projector_tour`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vecpr::field::{ComplexImage, ProductIterate, SixChannelField};
use vecpr::harness::{generate_phase, simulate_defocus_stack, PhaseSpec};
use vecpr::projectors::{ConstraintSet, Problem};
use vecpr::psf::{build_aperture, AmplitudeSpec, ApertureParams};
use num_complex::Complex64;

fn random_field(n: usize, rng: &mut impl Rng) -> SixChannelField {
    SixChannelField::from_fn(|_| {
        ComplexImage::from_fn(n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    })
    .expect("channels share the grid")
}

fn main() -> vecpr::Result<()> {
    let params = ApertureParams { n: 16, pupil_fraction: 0.75, ..Default::default() };
    let ap = build_aperture(params, AmplitudeSpec::truncated_gaussian())?;
    let phase = generate_phase(&ap, &PhaseSpec::default(), 1);
    let ms = simulate_defocus_stack(&ap, &phase, 3, 1.0)?;
    let problem = Problem::new(ap, &ms)?;
    let m = problem.m();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut sets = vec![ConstraintSet::Omega0, ConstraintSet::Chi];
    sets.extend((1..=m).map(ConstraintSet::OmegaD));
    sets.extend([
        ConstraintSet::A,
        ConstraintSet::AChi,
        ConstraintSet::B,
        ConstraintSet::D,
        ConstraintSet::BPlus,
        ConstraintSet::BChi,
    ]);

    println!("{:10} {:>10} {:>12} {:>12} {:>6}", "set", "moved", "residual", "idempotence", "unique");
    for set in sets {
        let blocks = set.block_count(m);
        let u = ProductIterate::new((0..blocks).map(|_| random_field(problem.n(), &mut rng)).collect())?;
        let p = problem.project(set, &u)?;
        let pp = problem.project(set, &p.point)?;
        println!(
            "{:10} {:10.4} {:12.2e} {:12.2e} {:>6}",
            format!("{set:?}"),
            u.distance(&p.point),
            problem.feasibility_residual(set, &p.point)?,
            pp.point.distance(&p.point),
            p.unique
        );
    }
    Ok(())
}
