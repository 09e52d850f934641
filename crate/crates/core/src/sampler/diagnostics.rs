//! Split R-hat and multi-chain effective sample size.

use serde::{Deserialize, Serialize};

use super::PosteriorDraws;
use crate::error::{Error, Result};

fn split_chains(chains: &[Vec<f64>]) -> Result<Vec<&[f64]>> {
    if chains.is_empty() {
        return Err(Error::Domain("convergence diagnostics need at least one chain".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Shape("chains must have equal length".into()));
    }
    if n < 4 {
        return Err(Error::Domain("convergence diagnostics need at least 4 draws per chain".into()));
    }
    if chains.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Domain("draws must be finite".into()));
    }
    let half = n / 2;
    Ok(chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split R-hat: every chain is cut in half and the halves are compared.
/// Identical constant chains give 1; constant but different chains give infinity.
/// Values below 1 from sampling noise are reported as 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let parts = split_chains(chains)?;
    let m = parts.len() as f64;
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let grand = mean(&means);
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = parts
        .iter()
        .zip(&means)
        .map(|(p, &mu)| sample_var(p, mu))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt().max(1.0))
}

/// Effective sample size from split chains using Geyer's initial positive
/// sequence with monotone smoothing, capped at 1.5 times the draw count.
/// A series with no variation at all returns the draw count.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Result<f64> {
    let parts = split_chains(chains)?;
    let m = parts.len();
    let n = parts[0].len();
    let total = (m * n) as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    // biased autocovariance of each part at a given lag
    let acov = |lag: usize| -> f64 {
        parts
            .iter()
            .zip(&means)
            .map(|(p, &mu)| {
                (0..n - lag).map(|i| (p[i] - mu) * (p[i + lag] - mu)).sum::<f64>() / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let nf = n as f64;
    let mean_var = acov(0) * nf / (nf - 1.0);
    let grand = mean(&means);
    let between = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    let var_plus = mean_var * (nf - 1.0) / nf + between;
    if var_plus == 0.0 {
        return Ok(total);
    }
    let rho_at = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut rho = vec![0.0; n + 1];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho_at(1);
    rho[1] = odd;
    let mut t = 1;
    while t + 2 < n && even + odd > 0.0 {
        even = rho_at(t + 1);
        odd = rho_at(t + 2);
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 {
        rho[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho[t - 1] + rho[t];
        if rho[t + 1] + rho[t + 2] > prev {
            rho[t + 1] = prev / 2.0;
            rho[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let tau = -1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t + 1];
    let tau = tau.max(1.0 / total.log10());
    Ok((total / tau).min(1.5 * total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub param_names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub divergences: Vec<usize>,
    pub accept_stats: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

impl ChainDiagnostics {
    pub fn compute(draws: &PosteriorDraws) -> Result<Self> {
        let mut rhat = Vec::with_capacity(draws.dim());
        let mut ess = Vec::with_capacity(draws.dim());
        for j in 0..draws.dim() {
            let s = draws.series(j);
            rhat.push(split_rhat(&s)?);
            ess.push(effective_sample_size(&s)?);
        }
        Ok(Self {
            param_names: draws.param_names.clone(),
            rhat,
            ess,
            divergences: draws.divergence_count.clone(),
            accept_stats: draws.accept_stats.clone(),
            step_sizes: draws.step_sizes.clone(),
        })
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn total_divergences(&self) -> usize {
        self.divergences.iter().sum()
    }
}
