//! Sample a correlated Gaussian with the adaptive HMC sampler through the
//! `LogDensity` trait.

use psurv::sampler::{sample, HmcConfig, LogDensity};

/// Bivariate normal with unit variances and correlation `rho`.
struct Correlated {
    rho: f64,
}

impl LogDensity for Correlated {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, th: &[f64], grad: &mut [f64]) -> psurv::Result<f64> {
        let c = 1.0 / (1.0 - self.rho * self.rho);
        let (x, y) = (th[0], th[1]);
        grad[0] = -c * (x - self.rho * y);
        grad[1] = -c * (y - self.rho * x);
        Ok(-0.5 * c * (x * x - 2.0 * self.rho * x * y + y * y))
    }
}

fn main() -> psurv::Result<()> {
    let target = Correlated { rho: 0.8 };
    let cfg = HmcConfig {
        chains: 4,
        iterations: 2000,
        warmup: 1000,
        seed: 2024,
        ..HmcConfig::default()
    };
    let draws = sample(&target, &cfg)?;
    let n = draws.total_draws() as f64;
    let mean = |j: usize| draws.iter_draws().map(|d| d[j]).sum::<f64>() / n;
    let (mx, my) = (mean(0), mean(1));
    let cov = draws.iter_draws().map(|d| (d[0] - mx) * (d[1] - my)).sum::<f64>() / (n - 1.0);
    let diag = draws.diagnostics()?;
    println!("means ({mx:.3}, {my:.3}), covariance {cov:.3} (target 0.8)");
    println!("step sizes {:?}", draws.step_sizes);
    println!("max R-hat {:.4}, min ESS {:.0}", diag.max_rhat(), diag.min_ess());
    Ok(())
}
