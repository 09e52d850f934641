//! Synthetic randomized trials with noncompliance and right censoring.

use std::path::Path;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ObservedUnit, Stratum};
use crate::error::{Error, Result};
use crate::model::{dot, Family};
use crate::sampler::derive_seed;
use crate::special::{simpson, QuadratureGrid};

const TAG_SIMULATE: u64 = 0x7369_6d75;
const SMOOTHING: f64 = 8.0;

/// Built-in scenarios, by name.
pub const PRESETS: [(&str, &str); 4] = [
    ("sim1_er", include_str!("../presets/sim1_er.toml")),
    ("sim2_noer", include_str!("../presets/sim2_noer.toml")),
    ("sim3_aft_noer", include_str!("../presets/sim3_aft_noer.toml")),
    ("perf_n12600", include_str!("../presets/perf_n12600.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumTruth {
    pub stratum: Stratum,
    /// Logit relative to the stratum listed first.
    pub eta: f64,
    #[serde(default)]
    pub xi: Vec<f64>,
}

/// Outcome law of one stratum-arm cell. For Weibull cells `shape` is `φ` and
/// the hazard is `t^(φ-1) exp(intercept + x'coef)`; for lognormal cells
/// `log T ~ Normal(intercept + x'coef, shape)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTruth {
    pub stratum: Stratum,
    pub arm: u8,
    pub intercept: f64,
    #[serde(default)]
    pub coef: Vec<f64>,
    pub shape: f64,
}

impl CellTruth {
    fn lin(&self, x: &[f64]) -> f64 {
        self.intercept + dot(&self.coef, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    #[serde(default = "half")]
    pub assignment_prob: f64,
    /// Independent standard normal covariates per unit.
    #[serde(default)]
    pub n_covariates: usize,
    pub strata: Vec<StratumTruth>,
    #[serde(default)]
    pub family: Family,
    pub cells: Vec<CellTruth>,
    pub censoring_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn half() -> f64 {
    0.5
}

/// Latent quantities behind one simulated unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub stratum: Stratum,
    pub failure_time: f64,
    pub censoring_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub records: Vec<TruthRecord>,
}

impl GroundTruth {
    pub fn stratum_shares(&self, strata: &[Stratum]) -> Vec<f64> {
        let n = self.records.len() as f64;
        strata
            .iter()
            .map(|s| self.records.iter().filter(|r| r.stratum == *s).count() as f64 / n)
            .collect()
    }
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn preset(name: &str) -> Result<SimScenario> {
    let text = PRESETS
        .iter()
        .find(|p| p.0 == name)
        .map(|p| p.1)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown preset `{name}`; available presets: {}",
                preset_names().join(", ")
            ))
        })?;
    let s: SimScenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("scenario needs n > 0".into());
        }
        if !(self.assignment_prob > 0.0 && self.assignment_prob < 1.0) {
            return bad("assignment_prob must lie in (0, 1)".into());
        }
        if !(self.censoring_rate > 0.0) || !self.censoring_rate.is_finite() {
            return bad("censoring_rate must be positive".into());
        }
        if self.strata.is_empty() {
            return bad("scenario needs at least one stratum".into());
        }
        for (i, st) in self.strata.iter().enumerate() {
            if self.strata[..i].iter().any(|o| o.stratum == st.stratum) {
                return bad(format!("stratum {} listed twice", st.stratum));
            }
            if st.xi.len() != self.n_covariates || !st.eta.is_finite() {
                return bad(format!("stratum {}: xi must have {} entries", st.stratum, self.n_covariates));
            }
            for z in 0..2u8 {
                let found: Vec<&CellTruth> =
                    self.cells.iter().filter(|c| c.stratum == st.stratum && c.arm == z).collect();
                if found.len() != 1 {
                    return bad(format!("stratum {} arm {z}: exactly one outcome cell required", st.stratum));
                }
            }
        }
        for c in &self.cells {
            if c.arm > 1 {
                return bad("cell arm must be 0 or 1".into());
            }
            if !self.strata.iter().any(|s| s.stratum == c.stratum) {
                return bad(format!("cell for stratum {} which has no truth", c.stratum));
            }
            if !(c.shape > 0.0) || !c.shape.is_finite() || !c.intercept.is_finite() {
                return bad(format!("cell {} arm {}: shape must be positive", c.stratum, c.arm));
            }
            if c.coef.len() != self.n_covariates {
                return bad(format!("cell {} arm {}: coef must have {} entries", c.stratum, c.arm, self.n_covariates));
            }
        }
        Ok(())
    }

    pub fn cell(&self, s: Stratum, z: u8) -> Result<&CellTruth> {
        self.cells
            .iter()
            .find(|c| c.stratum == s && c.arm == z)
            .ok_or_else(|| Error::Config(format!("no outcome cell for {s} arm {z}")))
    }

    pub fn strata_order(&self) -> Vec<Stratum> {
        self.strata.iter().map(|s| s.stratum).collect()
    }

    /// True `Pr(S = s | x)` in the order of `strata`.
    pub fn strata_probs(&self, x: &[f64]) -> Vec<f64> {
        let lin: Vec<f64> = self.strata.iter().map(|s| s.eta + dot(&s.xi, x)).collect();
        let max = lin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = lin.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = e.iter().sum();
        e.into_iter().map(|v| v / sum).collect()
    }

    /// True survival of one cell at covariates `x`.
    pub fn survival(&self, s: Stratum, z: u8, x: &[f64], t: f64) -> Result<f64> {
        let c = self.cell(s, z)?;
        Ok(self.family.log_survival(t, c.lin(x), c.shape.ln()).exp())
    }

    /// True `G(t; s, z)`, averaging over the covariate rows of `data` with
    /// the true stratum probabilities as weights.
    pub fn stratum_survival(&self, data: &Dataset, s: Stratum, z: u8, times: &[f64]) -> Result<Vec<f64>> {
        let k = self
            .strata
            .iter()
            .position(|st| st.stratum == s)
            .ok_or_else(|| Error::Config(format!("stratum {s} has no truth")))?;
        if self.n_covariates == 0 {
            return times.iter().map(|&t| self.survival(s, z, &[], t)).collect();
        }
        let mut num = vec![0.0; times.len()];
        let mut den = 0.0;
        for u in data.units() {
            let a = self.strata_probs(&u.x)[k];
            den += a;
            for (o, &t) in num.iter_mut().zip(times) {
                *o += a * self.survival(s, z, &u.x, t)?;
            }
        }
        Ok(num.into_iter().map(|v| v / den).collect())
    }
}

/// Inverse-CDF Weibull draw from a uniform `u` in (0, 1).
pub fn weibull_from_uniform(u: f64, phi: f64, alpha: f64, x: &[f64], beta: &[f64]) -> f64 {
    (-phi * u.ln() * (-alpha - dot(x, beta)).exp()).powf(1.0 / phi)
}

/// Failure time with hazard `t^(φ-1) exp(α + x'β)`.
pub fn weibull_sample<R: Rng + ?Sized>(phi: f64, alpha: f64, x: &[f64], beta: &[f64], rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    weibull_from_uniform(u, phi, alpha, x, beta)
}

/// `exp(μ + σ N)` with `N` standard normal.
pub fn aft_sample<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    (mu + sigma * n).exp()
}

/// Draw a trial. Per unit the stream yields covariates, assignment,
/// stratum, failure time and censoring time, in that order.
pub fn generate(scenario: &SimScenario) -> Result<(Dataset, GroundTruth)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, TAG_SIMULATE));
    let censor = Exp::new(scenario.censoring_rate).map_err(|e| Error::Config(e.to_string()))?;
    let p = scenario.n_covariates;
    let width = scenario.n.to_string().len();
    let mut units = Vec::with_capacity(scenario.n);
    let mut records = Vec::with_capacity(scenario.n);
    for i in 0..scenario.n {
        let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let z = u8::from(rng.random::<f64>() < scenario.assignment_prob);
        let probs = scenario.strata_probs(&x);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = probs.len() - 1;
        for (j, pr) in probs.iter().enumerate() {
            acc += pr;
            if u < acc {
                k = j;
                break;
            }
        }
        let s = scenario.strata[k].stratum;
        let cell = scenario.cell(s, z)?;
        let t = match scenario.family {
            Family::Weibull => weibull_sample(cell.shape, cell.intercept, &x, &cell.coef, &mut rng),
            Family::LogNormal => aft_sample(cell.lin(&x), cell.shape, &mut rng),
        };
        let c: f64 = censor.sample(&mut rng);
        let y = t.min(c).max(f64::MIN_POSITIVE);
        let id = format!("{i:0width$}");
        units.push(ObservedUnit {
            id: id.clone(),
            x,
            z,
            d: s.d_at(z),
            y,
            censored: t >= c,
        });
        records.push(TruthRecord {
            id,
            stratum: s,
            failure_time: t,
            censoring_time: c,
        });
    }
    let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
    Ok((Dataset::new(units, names)?, GroundTruth { records }))
}

/// Expected share of observed failures under exponential censoring at `rate`.
/// Uses `Pr(T < C) = 1 - ∫_0^1 S(-ln(1-u) / rate) du`. Covariate-free scenarios only.
pub fn expected_event_rate(scenario: &SimScenario, rate: f64) -> Result<f64> {
    if scenario.n_covariates > 0 {
        return Err(Error::Config("expected event rate needs a covariate-free scenario".into()));
    }
    if !(rate > 0.0) {
        return Err(Error::Domain("censoring rate must be positive".into()));
    }
    let grid = QuadratureGrid::new(1.0, 20_000)?;
    let probs = scenario.strata_probs(&[]);
    let mut total = 0.0;
    for (st, pr) in scenario.strata.iter().zip(probs) {
        for z in 0..2u8 {
            let pz = if z == 1 { scenario.assignment_prob } else { 1.0 - scenario.assignment_prob };
            // 1 - u = w^m flattens the endpoint behaviour at u = 1
            let vals: Vec<f64> = grid
                .nodes()
                .into_iter()
                .map(|w| {
                    if w <= 0.0 {
                        0.0
                    } else {
                        let t = -SMOOTHING * w.ln() / rate;
                        let surv = scenario.survival(st.stratum, z, &[], t).unwrap_or(0.0);
                        surv * SMOOTHING * w.powf(SMOOTHING - 1.0)
                    }
                })
                .collect();
            total += pr * pz * (1.0 - simpson(&vals, &grid)?);
        }
    }
    Ok(total)
}

/// Censoring rate giving the requested expected event share, by bisection.
pub fn calibrate_censoring_rate(scenario: &SimScenario, target_event_rate: f64) -> Result<f64> {
    if !(target_event_rate > 0.0 && target_event_rate < 1.0) {
        return Err(Error::Domain("target event rate must lie in (0, 1)".into()));
    }
    let (mut lo, mut hi) = (1e-8f64, 1e4f64);
    let f = |r: f64| expected_event_rate(scenario, r).map(|v| v - target_event_rate);
    if f(lo)? < 0.0 || f(hi)? > 0.0 {
        return Err(Error::Domain("target event rate is out of reach for this scenario".into()));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if f(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-10 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

pub fn write_truth_csv(truth: &GroundTruth, path: &Path, header: &[String]) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for h in header {
        writeln!(w, "# {h}").map_err(io)?;
    }
    writeln!(w, "id,stratum,failure_time,censoring_time").map_err(io)?;
    for r in &truth.records {
        writeln!(w, "{},{},{},{}", r.id, r.stratum.name(), r.failure_time, r.censoring_time).map_err(io)?;
    }
    w.flush().map_err(io)
}
