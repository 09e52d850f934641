//! Split R-hat and effective sample size on autoregressive chains.

use psurv::sampler::{effective_sample_size, split_rhat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn ar1(rho: f64, n: usize, start: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = start;
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            x = rho * x + (1.0 - rho * rho).sqrt() * e;
            x
        })
        .collect()
}

fn main() -> psurv::Result<()> {
    for rho in [0.0, 0.5, 0.9, 0.99] {
        let chains: Vec<Vec<f64>> = (0..4).map(|c| ar1(rho, 1000, 0.0, c)).collect();
        let theory = 4000.0 * (1.0 - rho) / (1.0 + rho);
        println!(
            "rho {rho:<4}  R-hat {:.4}  ESS {:>7.1}  (asymptotic {theory:.1})",
            split_rhat(&chains)?,
            effective_sample_size(&chains)?
        );
    }
    let stuck: Vec<Vec<f64>> = (0..4).map(|c| ar1(0.99, 1000, 10.0 * c as f64, c)).collect();
    println!("chains started far apart: R-hat {:.3}", split_rhat(&stuck)?);
    Ok(())
}
