//! Checks the additive Gaussian noise model: the empirical SNR computed
//! from the recorded noise matches the requested one, and reports how much
//! the clipping at zero shifts the effective SNR.
//!
//! `cargo run --release --example noise_calibration -- [seeds]`

use vecpr::harness::benchmark::ApertureConfig;
use vecpr::harness::{add_gaussian_noise, empirical_snr_db, generate_phase, simulate_defocus_stack, PhaseSpec};

fn main() -> vecpr::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let ap = ApertureConfig::default().build()?;
    let phase = generate_phase(&ap, &PhaseSpec::default(), 4);
    let clean = simulate_defocus_stack(&ap, &phase, 7, 1.0)?;

    println!("target   empirical (recorded)   worst deviation   after clipping");
    for target in [10.0, 20.0, 30.0, 40.0] {
        let (mut sum, mut worst, mut clipped, mut count) = (0.0, 0.0f64, 0.0, 0.0);
        for seed in 0..seeds {
            let noisy = add_gaussian_noise(&clean, target, seed)?;
            let record = noisy.noise_record.as_ref().expect("noise record is kept");
            for (d, (c, w)) in clean.intensities.iter().zip(record).enumerate() {
                let snr = empirical_snr_db(c, w);
                sum += snr;
                worst = worst.max((snr - target).abs());
                let diff = vecpr::field::RealImage::from_fn(c.n(), |i, j| noisy.intensities[d].get(i, j) - c.get(i, j));
                clipped += empirical_snr_db(c, &diff);
                count += 1.0;
            }
        }
        println!(
            "{target:5.1} dB   {:8.3} dB            {:6.3} dB         {:8.3} dB",
            sum / count,
            worst,
            clipped / count
        );
    }
    Ok(())
}
