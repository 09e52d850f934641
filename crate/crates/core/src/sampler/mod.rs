//! Hamiltonian Monte Carlo over an unconstrained parameter vector.
//!
//! Each iteration draws a fresh momentum, integrates a jittered number of
//! leapfrog steps (uniform on `1..=max_leapfrog_steps`) and applies a
//! Metropolis correction. Warmup adapts the step size by dual averaging and a
//! diagonal metric from the draws of two expanding windows.
//!
//! Random numbers come from a ChaCha stream keyed by `(seed, chain)` and
//! positioned by iteration, so results do not depend on how chains are
//! scheduled across threads.

mod adapt;
mod diagnostics;

pub use diagnostics::{effective_sample_size, split_rhat, ChainDiagnostics};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use adapt::{DualAveraging, WindowSchedule};

/// Environment variable that caps the number of worker threads used for chains.
pub const WORKERS_ENV: &str = "PSURV_WORKERS";

const MAX_INIT_TRIES: usize = 100;
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// Unnormalized log density with gradient.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Write the gradient into `grad` and return the log density. Errors are
    /// treated as divergent proposals by the sampler.
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("theta[{i}]")).collect()
    }

    /// Half-width of the uniform initialization box for each coordinate.
    fn init_half_widths(&self, jitter: f64) -> Vec<f64> {
        vec![jitter; self.dim()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub chains: usize,
    /// Iterations per chain including warmup.
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_leapfrog_steps: usize,
    pub seed: u64,
    pub init_jitter: f64,
    /// Fixed step size; disables step-size adaptation when set.
    pub step_size: Option<f64>,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            chains: 6,
            iterations: 1000,
            warmup: 500,
            target_accept: 0.8,
            max_leapfrog_steps: 64,
            seed: 0,
            init_jitter: 2.0,
            step_size: None,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.chains == 0 {
            return bad("chains must be positive");
        }
        if self.warmup == 0 || self.warmup >= self.iterations {
            return bad("warmup must be positive and smaller than iterations");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if self.max_leapfrog_steps == 0 {
            return bad("max_leapfrog_steps must be positive");
        }
        if !(self.init_jitter > 0.0) {
            return bad("init_jitter must be positive");
        }
        if let Some(e) = self.step_size {
            if !(e > 0.0) || !e.is_finite() {
                return bad("step_size must be positive");
            }
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        self.iterations - self.warmup
    }
}

/// Post-warmup draws of every chain plus adaptation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    /// `[chain][iteration][parameter]`, post-warmup only.
    pub draws: Vec<Vec<Vec<f64>>>,
    /// `[chain][iteration]`.
    pub log_posterior: Vec<Vec<f64>>,
    /// Mean Metropolis acceptance probability per chain (post-warmup).
    pub accept_stats: Vec<f64>,
    /// Post-warmup divergent iterations per chain.
    pub divergence_count: Vec<usize>,
    pub warmup_divergences: Vec<usize>,
    pub step_sizes: Vec<f64>,
    /// Adapted inverse metric (posterior variance estimate) per chain.
    pub inv_metric: Vec<Vec<f64>>,
    /// Iterations spent in warmup, as counted by the chain loop.
    pub warmup_iterations: Vec<usize>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn total_draws(&self) -> usize {
        self.draws.iter().map(Vec::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    /// Per-chain series of one parameter.
    pub fn series(&self, param: usize) -> Vec<Vec<f64>> {
        self.draws
            .iter()
            .map(|c| c.iter().map(|d| d[param]).collect())
            .collect()
    }

    /// All draws in chain-major order.
    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.iter().flat_map(|c| c.iter().map(Vec::as_slice))
    }

    pub fn total_divergences(&self) -> usize {
        self.divergence_count.iter().sum()
    }

    pub fn diagnostics(&self) -> Result<ChainDiagnostics> {
        ChainDiagnostics::compute(self)
    }
}

/// Result of a leapfrog trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
    /// `H(end) - H(start)`; `NaN` when divergent.
    pub energy_error: f64,
    pub divergent: bool,
}

#[inline]
fn kinetic(momentum: &[f64], mass: &[f64]) -> f64 {
    0.5 * momentum.iter().zip(mass).map(|(p, m)| p * p / m).sum::<f64>()
}

/// Leapfrog integration with a diagonal mass matrix.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    theta: &[f64],
    momentum: &[f64],
    step_size: f64,
    steps: usize,
    mass_diag: &[f64],
) -> Result<Trajectory> {
    let d = target.dim();
    if theta.len() != d || momentum.len() != d || mass_diag.len() != d {
        return Err(Error::Shape("leapfrog inputs must match the target dimension".into()));
    }
    if steps == 0 {
        return Err(Error::Domain("leapfrog needs at least one step".into()));
    }
    if !(step_size > 0.0) {
        return Err(Error::Domain("step size must be positive".into()));
    }
    if mass_diag.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Domain("mass matrix must be positive".into()));
    }
    let mut grad = vec![0.0; d];
    let lp = target.log_density_and_grad(theta, &mut grad)?;
    Ok(integrate(target, theta, momentum, &grad, lp, step_size, steps, mass_diag))
}

#[allow(clippy::too_many_arguments)]
fn integrate<T: LogDensity + ?Sized>(
    target: &T,
    theta: &[f64],
    momentum: &[f64],
    grad0: &[f64],
    lp0: f64,
    eps: f64,
    steps: usize,
    mass: &[f64],
) -> Trajectory {
    let h0 = -lp0 + kinetic(momentum, mass);
    let mut q = theta.to_vec();
    let mut p = momentum.to_vec();
    let mut g = grad0.to_vec();
    let mut lp = lp0;
    let diverged = |q: Vec<f64>, p: Vec<f64>, g: Vec<f64>| Trajectory {
        theta: q,
        momentum: p,
        grad: g,
        log_density: f64::NAN,
        energy_error: f64::NAN,
        divergent: true,
    };
    for (pi, gi) in p.iter_mut().zip(&g) {
        *pi += 0.5 * eps * gi;
    }
    for step in 0..steps {
        for ((qi, pi), mi) in q.iter_mut().zip(&p).zip(mass) {
            *qi += eps * pi / mi;
        }
        match target.log_density_and_grad(&q, &mut g) {
            Ok(v) if v.is_finite() => lp = v,
            _ => return diverged(q, p, g),
        }
        let scale = if step + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += scale * eps * gi;
        }
    }
    let h1 = -lp + kinetic(&p, mass);
    let err = h1 - h0;
    let divergent = !err.is_finite() || err > DIVERGENCE_THRESHOLD;
    Trajectory {
        theta: q,
        momentum: p,
        grad: g,
        log_density: lp,
        energy_error: if err.is_finite() { err } else { f64::NAN },
        divergent,
    }
}

// Purpose tags mixed into the stream key.
const TAG_INIT: u64 = 0x696e_6974;
const TAG_ITER: u64 = 0x6974_6572;
const TAG_STEP: u64 = 0x7374_6570;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a sub-seed from a top-level seed and a purpose tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix(splitmix(seed) ^ tag)
}

/// Counter-based stream: key `(seed, tag)`, stream `chain`, positioned at `counter`.
pub(crate) fn keyed_rng(seed: u64, tag: u64, chain: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    rng.set_stream(chain);
    rng.set_word_pos((counter as u128) << 24);
    rng
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    log_posterior: Vec<f64>,
    accept_mean: f64,
    divergences: usize,
    warmup_divergences: usize,
    step_size: f64,
    inv_metric: Vec<f64>,
    warmup_iterations: usize,
}

fn initialize<T: LogDensity + ?Sized>(
    target: &T,
    cfg: &HmcConfig,
    chain: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let widths = target.init_half_widths(cfg.init_jitter);
    let mut grad = vec![0.0; target.dim()];
    for attempt in 0..MAX_INIT_TRIES {
        let mut rng = keyed_rng(cfg.seed, TAG_INIT, chain as u64, attempt as u64);
        let theta: Vec<f64> = widths.iter().map(|w| rng.random_range(-*w..=*w)).collect();
        if let Ok(lp) = target.log_density_and_grad(&theta, &mut grad) {
            if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
                return Ok((theta, grad, lp));
            }
        }
    }
    Err(Error::Sampler(format!(
        "chain {chain}: no finite log posterior after {MAX_INIT_TRIES} initializations"
    )))
}

/// Heuristic initial step size: double or halve until a one-step proposal's
/// acceptance probability crosses 1/2.
fn initial_step_size<T: LogDensity + ?Sized>(
    target: &T,
    theta: &[f64],
    grad: &[f64],
    lp: f64,
    mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let p: Vec<f64> = mass
        .iter()
        .map(|m| m.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let log_accept = |eps: f64| {
        let tr = integrate(target, theta, &p, grad, lp, eps, 1, mass);
        if tr.divergent {
            f64::NEG_INFINITY
        } else {
            -tr.energy_error
        }
    };
    let mut eps = 1.0;
    let mut la = log_accept(eps);
    let dir: f64 = if la > 0.5f64.ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        if dir * la <= dir * 0.5f64.ln() {
            break;
        }
        eps *= 2f64.powf(dir);
        la = log_accept(eps);
    }
    eps.clamp(1e-8, 1e3)
}

fn run_chain<T: LogDensity + ?Sized>(target: &T, cfg: &HmcConfig, chain: usize) -> Result<ChainOutput> {
    let d = target.dim();
    let (mut theta, mut grad, mut lp) = initialize(target, cfg, chain)?;
    let mut inv_metric = vec![1.0; d];
    let mut mass = vec![1.0; d];

    let mut step_rng = keyed_rng(cfg.seed, TAG_STEP, chain as u64, 0);
    let mut eps = match cfg.step_size {
        Some(e) => e,
        None => initial_step_size(target, &theta, &grad, lp, &mass, &mut step_rng),
    };
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let schedule = WindowSchedule::new(cfg.warmup);
    let mut window = adapt::Welford::new(d);

    let n_keep = cfg.draws_per_chain();
    let mut out = ChainOutput {
        draws: Vec::with_capacity(n_keep),
        log_posterior: Vec::with_capacity(n_keep),
        accept_mean: 0.0,
        divergences: 0,
        warmup_divergences: 0,
        step_size: eps,
        inv_metric: Vec::new(),
        warmup_iterations: 0,
    };
    let mut accept_sum = 0.0;

    for it in 0..cfg.iterations {
        let warming = it < cfg.warmup;
        let mut rng = keyed_rng(cfg.seed, TAG_ITER, chain as u64, it as u64 + 1);
        let p0: Vec<f64> = mass
            .iter()
            .map(|m| m.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let steps = rng.random_range(1..=cfg.max_leapfrog_steps);
        let tr = integrate(target, &theta, &p0, &grad, lp, eps, steps, &mass);
        let accept_prob = if tr.divergent {
            0.0
        } else {
            (-tr.energy_error).exp().min(1.0)
        };
        let u: f64 = rng.random();
        if !tr.divergent && u < accept_prob {
            theta = tr.theta;
            grad = tr.grad;
            lp = tr.log_density;
        }
        if tr.divergent {
            if warming {
                out.warmup_divergences += 1;
            } else {
                out.divergences += 1;
            }
        }

        if warming {
            out.warmup_iterations += 1;
            if cfg.step_size.is_none() {
                eps = da.update(accept_prob);
            }
            if let Some(w) = schedule.window_of(it) {
                window.push(&theta);
                if schedule.is_window_end(it) {
                    debug_assert!(w < 2);
                    inv_metric = window.regularized_variance();
                    mass = inv_metric.iter().map(|v| 1.0 / v).collect();
                    window = adapt::Welford::new(d);
                    if cfg.step_size.is_none() {
                        let e0 = initial_step_size(target, &theta, &grad, lp, &mass, &mut step_rng);
                        da = DualAveraging::new(e0, cfg.target_accept);
                        eps = e0;
                    }
                }
            }
            if it + 1 == cfg.warmup && cfg.step_size.is_none() {
                eps = da.final_step_size();
            }
        } else {
            accept_sum += accept_prob;
            out.draws.push(theta.clone());
            out.log_posterior.push(lp);
        }
    }
    out.accept_mean = accept_sum / n_keep as f64;
    out.step_size = eps;
    out.inv_metric = inv_metric;
    Ok(out)
}

fn worker_pool() -> Option<rayon::ThreadPool> {
    let n: usize = std::env::var(WORKERS_ENV).ok()?.parse().ok()?;
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().ok()
}

/// Run all chains and collect post-warmup draws.
pub fn sample<T: LogDensity + ?Sized>(target: &T, cfg: &HmcConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let run = || -> Vec<Result<ChainOutput>> {
        (0..cfg.chains)
            .into_par_iter()
            .map(|c| run_chain(target, cfg, c))
            .collect()
    };
    let results = match worker_pool() {
        Some(pool) => pool.install(run),
        None => run(),
    };
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = PosteriorDraws {
        param_names: target.param_names(),
        draws: Vec::new(),
        log_posterior: Vec::new(),
        accept_stats: Vec::new(),
        divergence_count: Vec::new(),
        warmup_divergences: Vec::new(),
        step_sizes: Vec::new(),
        inv_metric: Vec::new(),
        warmup_iterations: Vec::new(),
    };
    for c in chains {
        out.draws.push(c.draws);
        out.log_posterior.push(c.log_posterior);
        out.accept_stats.push(c.accept_mean);
        out.divergence_count.push(c.divergences);
        out.warmup_divergences.push(c.warmup_divergences);
        out.step_sizes.push(c.step_size);
        out.inv_metric.push(c.inv_metric);
        out.warmup_iterations.push(c.warmup_iterations);
    }
    Ok(out)
}

/// Fit the principal-stratification model: validate the data against the
/// configuration, then sample the posterior.
pub fn run_chains(
    data: &crate::data::Dataset,
    model: &crate::model::Model,
    prior: &crate::model::PriorSpec,
    hmc: &HmcConfig,
) -> Result<(PosteriorDraws, ChainDiagnostics)> {
    let problems: Vec<String> = crate::data::validate_consistency(data, model.config())
        .into_iter()
        .filter(|d| d.severity == crate::data::Severity::Error)
        .map(|d| d.message)
        .collect();
    if !problems.is_empty() {
        return Err(Error::InvalidData(problems.join("; ")));
    }
    prior.validate()?;
    let target = crate::likelihood::Posterior::new(data, model, *prior);
    let draws = sample(&target, hmc)?;
    let diag = draws.diagnostics()?;
    Ok((draws, diag))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) struct Gaussian {
        pub mean: Vec<f64>,
        pub sd: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.mean.len()
        }

        fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
            let mut lp = 0.0;
            for i in 0..theta.len() {
                let z = (theta[i] - self.mean[i]) / self.sd[i];
                lp -= 0.5 * z * z;
                grad[i] = -z / self.sd[i];
            }
            Ok(lp)
        }
    }

    fn std_normal(d: usize) -> Gaussian {
        Gaussian {
            mean: vec![0.0; d],
            sd: vec![1.0; d],
        }
    }

    #[test]
    fn leapfrog_energy_error_is_second_order() {
        let g = std_normal(1);
        let e1 = leapfrog(&g, &[1.0], &[0.5], 0.1, 10, &[1.0]).unwrap().energy_error;
        let e2 = leapfrog(&g, &[1.0], &[0.5], 0.05, 20, &[1.0]).unwrap().energy_error;
        let ratio = e1.abs() / e2.abs();
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn leapfrog_is_reversible() {
        let g = Gaussian {
            mean: vec![0.3, -1.0, 2.0],
            sd: vec![0.5, 1.0, 3.0],
        };
        let mass = [2.0, 1.0, 0.3];
        let q0 = [0.1, 0.2, -0.4];
        let p0 = [1.0, -0.5, 0.25];
        let fwd = leapfrog(&g, &q0, &p0, 0.07, 25, &mass).unwrap();
        let neg: Vec<f64> = fwd.momentum.iter().map(|p| -p).collect();
        let back = leapfrog(&g, &fwd.theta, &neg, 0.07, 25, &mass).unwrap();
        for i in 0..3 {
            assert!((back.theta[i] - q0[i]).abs() < 1e-8);
            assert!((back.momentum[i] + p0[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn leapfrog_tiny_step_stays_put_and_rejects_zero_steps() {
        let g = std_normal(2);
        let tr = leapfrog(&g, &[0.4, -0.2], &[1.0, 1.0], 1e-12, 1, &[1.0, 1.0]).unwrap();
        assert!((tr.theta[0] - 0.4).abs() < 1e-10);
        assert!(leapfrog(&g, &[0.4, -0.2], &[1.0, 1.0], 0.1, 0, &[1.0, 1.0]).is_err());
        assert!(leapfrog(&g, &[0.4, -0.2], &[1.0, 1.0], 0.1, 1, &[1.0, 0.0]).is_err());
    }

    struct Wall;
    impl LogDensity for Wall {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
            if theta[0].abs() > 1.0 {
                return Err(Error::NonFinite { unit: None, what: "outside".into() });
            }
            grad[0] = 0.0;
            Ok(0.0)
        }
    }

    #[test]
    fn failures_are_divergent_and_draws_stay_finite() {
        let cfg = HmcConfig {
            chains: 2,
            iterations: 300,
            warmup: 100,
            seed: 3,
            init_jitter: 0.5,
            step_size: Some(0.7),
            ..HmcConfig::default()
        };
        let d = sample(&Wall, &cfg).unwrap();
        assert!(d.total_divergences() > 0);
        assert!(d.iter_draws().all(|x| x[0].abs() <= 1.0));
    }

    #[test]
    fn determinism_and_warmup_exclusion() {
        let cfg = HmcConfig {
            chains: 3,
            iterations: 200,
            warmup: 80,
            seed: 11,
            ..HmcConfig::default()
        };
        let g = std_normal(3);
        let a = sample(&g, &cfg).unwrap();
        let b = sample(&g, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_draws(), 3 * 120);
        assert!(a.warmup_iterations.iter().all(|&w| w == 80));
        let c = sample(&g, &HmcConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn init_failure_aborts() {
        struct Nowhere;
        impl LogDensity for Nowhere {
            fn dim(&self) -> usize {
                1
            }
            fn log_density_and_grad(&self, _: &[f64], _: &mut [f64]) -> Result<f64> {
                Ok(f64::NAN)
            }
        }
        let cfg = HmcConfig {
            chains: 1,
            iterations: 10,
            warmup: 5,
            ..HmcConfig::default()
        };
        assert!(matches!(sample(&Nowhere, &cfg), Err(Error::Sampler(_))));
    }

    #[test]
    fn config_validation() {
        assert!(HmcConfig { warmup: 1000, ..HmcConfig::default() }.validate().is_err());
        assert!(HmcConfig { target_accept: 1.0, ..HmcConfig::default() }.validate().is_err());
        assert!(HmcConfig::default().validate().is_ok());
        assert_eq!(HmcConfig::default().chains * HmcConfig::default().draws_per_chain(), 3000);
    }

    #[test]
    fn recovers_scaled_gaussian() {
        let g = Gaussian {
            mean: vec![5.0, -3.0],
            sd: vec![10.0, 0.1],
        };
        let cfg = HmcConfig {
            chains: 4,
            iterations: 1500,
            warmup: 500,
            seed: 5,
            ..HmcConfig::default()
        };
        let d = sample(&g, &cfg).unwrap();
        for (j, (m, s)) in [(5.0, 10.0), (-3.0, 0.1)].into_iter().enumerate() {
            let xs: Vec<f64> = d.iter_draws().map(|x| x[j]).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((mean - m).abs() < 0.1 * s, "mean {mean}");
            assert!((sd / s - 1.0).abs() < 0.1, "sd {sd}");
        }
        // adapted inverse metric tracks the variances
        let im = &d.inv_metric[0];
        assert!(im[0] > 30.0 && im[1] < 0.1);
    }

    #[test]
    fn correlated_gaussian_chi_square() {
        // x ~ N(0, [[1, .8], [.8, 1]]); r^2 = x' S^-1 x ~ chi2(2), so
        // P(r^2 <= c) = 1 - exp(-c / 2). Ten equiprobable bins.
        struct Corr;
        impl LogDensity for Corr {
            fn dim(&self) -> usize {
                2
            }
            fn log_density_and_grad(&self, t: &[f64], g: &mut [f64]) -> Result<f64> {
                let det = 1.0 - 0.64;
                let (a, b) = (t[0], t[1]);
                let q = (a * a - 1.6 * a * b + b * b) / det;
                g[0] = -(a - 0.8 * b) / det;
                g[1] = -(b - 0.8 * a) / det;
                Ok(-0.5 * q)
            }
        }
        let cfg = HmcConfig {
            chains: 5,
            iterations: 10_500,
            warmup: 500,
            seed: 99,
            ..HmcConfig::default()
        };
        let d = sample(&Corr, &cfg).unwrap();
        let mut counts = [0usize; 10];
        let mut n = 0;
        for (i, x) in d.iter_draws().enumerate() {
            if i % 5 != 0 {
                continue;
            }
            let r2 = (x[0] * x[0] - 1.6 * x[0] * x[1] + x[1] * x[1]) / 0.36;
            let q = 1.0 - (-r2 / 2.0).exp();
            counts[((q * 10.0) as usize).min(9)] += 1;
            n += 1;
        }
        let e = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // chi-square(9) upper 0.001 quantile
        assert!(chi2 < 27.877, "chi2 = {chi2}, counts {counts:?}");
    }
}
