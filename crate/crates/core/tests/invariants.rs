use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use vecpr::field::{ComplexImage, ProductIterate, RealImage, SixChannelField};
use vecpr::harness::{generate_phase, relative_rms, simulate_defocus_stack, wrap, PhaseSpec};
use vecpr::projectors::{project_d, project_sphere, ConstraintSet, Problem};
use vecpr::psf::{build_aperture, polarisation_at, AmplitudeSpec, ApertureParams};

fn field(n: usize, seed: u64) -> SixChannelField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(-1.0, 1.0).unwrap();
    SixChannelField::from_fn(|_| ComplexImage::from_fn(n, |_, _| Complex64::new(u.sample(&mut rng), u.sample(&mut rng))))
        .unwrap()
}

fn iterate(n: usize, blocks: usize, seed: u64) -> ProductIterate {
    ProductIterate::new((0..blocks as u64).map(|b| field(n, seed * 31 + b)).collect()).unwrap()
}

fn problem(m: usize, seed: u64) -> Problem {
    let params = ApertureParams { n: 8, pupil_fraction: 0.75, ..Default::default() };
    let ap = build_aperture(params, AmplitudeSpec::truncated_gaussian()).unwrap();
    let phase = generate_phase(&ap, &PhaseSpec::default(), seed);
    let ms = simulate_defocus_stack(&ap, &phase, m, 1.0).unwrap();
    Problem::new(ap, &ms).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn polarisation_energy_is_two(theta in 0.0f64..1.5, az in -3.2f64..3.2) {
        let (s, c) = theta.sin_cos();
        let e = polarisation_at(s * az.cos(), s * az.sin(), c);
        prop_assert!((e.iter().map(|v| v * v).sum::<f64>() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_lands_in_half_open_interval(a in -100.0f64..100.0) {
        let w = wrap(a);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        let turns = (a - w) / std::f64::consts::TAU;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn diagonal_projection_is_nonexpansive(a in 0u64..1000, b in 0u64..1000, blocks in 1usize..5) {
        let (x, y) = (iterate(4, blocks, a), iterate(4, blocks, b + 7919));
        let (px, py) = (project_d(&x), project_d(&y));
        prop_assert!(px.distance(&py) <= x.distance(&y) + 1e-12);
        prop_assert!(project_d(&px).distance(&px) < 1e-12);
    }

    #[test]
    fn sphere_projection_hits_the_radius(seed in 0u64..1000, r in 0.0f64..3.0) {
        let z = field(4, seed);
        let radius = RealImage::from_fn(4, |i, j| r * (1.0 + (i + j) as f64 / 8.0));
        let p = project_sphere(&radius, &z).point;
        for idx in 0..16 {
            let norm = p.pixel(idx).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            prop_assert!((norm - radius.data()[idx]).abs() < 1e-12);
        }
    }

    #[test]
    fn projections_are_idempotent_and_feasible(seed in 0u64..200, m in 1usize..4) {
        let p = problem(m, seed);
        for set in [ConstraintSet::A, ConstraintSet::AChi, ConstraintSet::B, ConstraintSet::BPlus, ConstraintSet::BChi] {
            let u = iterate(8, set.block_count(m), seed + 1);
            let once = p.project(set, &u).unwrap().point;
            let twice = p.project(set, &once).unwrap().point;
            prop_assert!(once.distance(&twice) < 1e-9);
            prop_assert!(p.feasibility_residual(set, &once).unwrap() < 1e-9);
        }
    }

    #[test]
    fn relative_rms_ignores_piston(seed in 0u64..500, piston in -10.0f64..10.0) {
        let params = ApertureParams { n: 16, ..Default::default() };
        let ap = build_aperture(params, AmplitudeSpec::Uniform).unwrap();
        let truth = generate_phase(&ap, &PhaseSpec::default(), seed);
        let shifted = RealImage::from_fn(16, |i, j| if ap.mask()[i * 16 + j] { wrap(truth.get(i, j) + piston) } else { 0.0 });
        prop_assert!(relative_rms(&shifted, &truth, ap.mask()).unwrap() < 1e-9);
    }
}
