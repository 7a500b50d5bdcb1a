//! Desk-scale benchmark of the seven reference algorithms
//! (64x64 grid, 10 realizations unless overridden).
//!
//! `cargo run --release --example benchmark -- [realizations] [n] [snr_db]`

use vecpr::harness::{run_benchmark, ExperimentConfig};

fn main() -> vecpr::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::desk_scale();
    if let Some(r) = args.next().and_then(|a| a.parse().ok()) {
        cfg.realizations = r;
    }
    if let Some(n) = args.next().and_then(|a| a.parse().ok()) {
        cfg.aperture.n = n;
    }
    if let Some(snr) = args.next().and_then(|a| a.parse().ok()) {
        cfg.noise.snr_db = snr;
    }
    let start = std::time::Instant::now();
    let report = run_benchmark(&cfg)?;
    print!("{}", report.table_csv());
    for s in &report.summaries {
        println!(
            "{:6} mean {:6.2}%  median {:6.2}%  iqr [{:.2}, {:.2}]  failures {}",
            s.algorithm,
            100.0 * s.mean,
            100.0 * s.median,
            100.0 * s.q1,
            100.0 * s.q3,
            s.failures
        );
    }
    println!("elapsed {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
