//! Posterior summaries of stratum-specific survival: curves, survival
//! probability causal effects (SPCE), restricted average causal effects
//! (RACE), their intention-to-treat aggregates, and Kaplan-Meier estimates.
//!
//! Curves average over the covariate rows of all units:
//! `G(t; s, z) = Σ_i A_i B_i(t) / Σ_i A_i` with `A_i = Pr(S = s | x_i)` and
//! `B_i(t)` the stratum-arm survival at `x_i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Stratum};
use crate::error::{Error, Result};
use crate::model::{Family, Model};
use crate::sampler::PosteriorDraws;
use crate::special::{ln_gamma_unchecked, ln_reg_lower_inc_gamma_unchecked, QuadratureGrid, Rule};

/// Draws whose stratum weight `Σ_i A_i` falls below this are excluded.
pub const MIN_STRATUM_WEIGHT: f64 = 1e-300;
pub const DEFAULT_GRID_POINTS: usize = 101;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Pointwise posterior mean and equal-tailed credible interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub stratum: Stratum,
    pub arm: u8,
    pub times: Vec<f64>,
    /// `[draw][time]`; excluded draws hold `NaN`.
    pub values: Vec<Vec<f64>>,
    pub excluded: Vec<usize>,
    pub summary: CurveSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Spce,
    Race,
}

impl EffectKind {
    pub fn name(self) -> &'static str {
        match self {
            EffectKind::Spce => "spce",
            EffectKind::Race => "race",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCurve {
    /// `None` for the intention-to-treat aggregate.
    pub stratum: Option<Stratum>,
    pub kind: EffectKind,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub excluded: Vec<usize>,
    pub summary: CurveSummary,
}

/// `points` equally spaced times on `[0, t_max]`.
pub fn time_grid(t_max: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::Domain("a time grid needs at least 2 points".into()));
    }
    Ok(QuadratureGrid::new(t_max, points - 1)?.nodes())
}

/// The default grid: 101 points up to the largest observed time.
pub fn default_grid(data: &Dataset) -> Result<Vec<f64>> {
    time_grid(data.max_time(), DEFAULT_GRID_POINTS)
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summarize per-draw curves, skipping non-finite entries.
pub fn summarize(values: &[Vec<f64>], n_times: usize, level: f64) -> CurveSummary {
    let a = (1.0 - level) / 2.0;
    let mut out = CurveSummary {
        mean: Vec::with_capacity(n_times),
        lo: Vec::with_capacity(n_times),
        hi: Vec::with_capacity(n_times),
        level,
    };
    for j in 0..n_times {
        let mut col: Vec<f64> = values.iter().map(|v| v[j]).filter(|x| x.is_finite()).collect();
        if col.is_empty() {
            out.mean.push(f64::NAN);
            out.lo.push(f64::NAN);
            out.hi.push(f64::NAN);
            continue;
        }
        col.sort_by(f64::total_cmp);
        out.mean.push(col.iter().sum::<f64>() / col.len() as f64);
        out.lo.push(quantile_sorted(&col, a));
        out.hi.push(quantile_sorted(&col, 1.0 - a));
    }
    out
}

/// Distinct covariate rows with multiplicities, in first-seen order.
fn covariate_rows(data: &Dataset) -> Vec<(Vec<f64>, f64)> {
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    for u in data.units() {
        let key: Vec<u64> = u.x.iter().map(|v| v.to_bits()).collect();
        match index.get(&key) {
            Some(&i) => rows[i].1 += 1.0,
            None => {
                index.insert(key, rows.len());
                rows.push((u.x.clone(), 1.0));
            }
        }
    }
    if rows.is_empty() {
        rows.push((vec![0.0; data.n_covariates()], 1.0));
    }
    rows
}

fn check_inputs(data: &Dataset, draws: &PosteriorDraws, model: &Model, s: Stratum) -> Result<usize> {
    if draws.dim() != model.dim() {
        return Err(Error::Shape(format!(
            "draws have {} parameters, the model expects {}",
            draws.dim(),
            model.dim()
        )));
    }
    if data.n_covariates() != model.n_covariates() {
        return Err(Error::Shape("dataset covariates do not match the model".into()));
    }
    model
        .config()
        .index_of(s)
        .ok_or_else(|| Error::Config(format!("stratum {s} is not active")))
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Domain("empty time grid".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::Domain("times must be finite and nonnegative".into()));
    }
    Ok(())
}

/// Per-row stratum probabilities `A_i` for one draw.
fn row_weights(model: &Model, theta: &[f64], rows: &[(Vec<f64>, f64)], k: usize) -> Vec<f64> {
    let n_active = model.config().active().len();
    let mut lin = vec![0.0; n_active];
    rows.iter()
        .map(|(x, _)| {
            model.strata_linear(theta, x, &mut lin);
            let max = lin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = lin.iter().map(|l| (l - max).exp()).sum();
            (lin[k] - max).exp() / denom
        })
        .collect()
}

/// Survival of every row at every time for one draw: `B[row][time]`.
fn row_survival(model: &Model, theta: &[f64], rows: &[(Vec<f64>, f64)], g: usize, times: &[f64]) -> Vec<Vec<f64>> {
    let fam = model.family();
    rows.iter()
        .map(|(x, _)| {
            let (lin, ls) = model.outcome_linear(theta, g, x);
            times.iter().map(|&t| fam.log_survival(t, lin, ls).exp()).collect()
        })
        .collect()
}

/// Weighted average of per-row curves; `None` when the weight vanishes.
fn weighted_curve(a: &[f64], rows: &[(Vec<f64>, f64)], b: &[Vec<f64>], n_times: usize) -> Option<Vec<f64>> {
    if rows.len() == 1 {
        return (a[0] >= MIN_STRATUM_WEIGHT).then(|| b[0].clone());
    }
    let total: f64 = a.iter().zip(rows).map(|(ai, r)| ai * r.1).sum();
    if !(total >= MIN_STRATUM_WEIGHT) {
        return None;
    }
    let mut out = vec![0.0; n_times];
    for ((ai, r), bi) in a.iter().zip(rows).zip(b) {
        let w = ai * r.1;
        for (o, v) in out.iter_mut().zip(bi) {
            *o += w * v;
        }
    }
    for o in &mut out {
        *o /= total;
    }
    Some(out)
}

fn collect_draws<F>(draws: &PosteriorDraws, n_times: usize, f: F) -> (Vec<Vec<f64>>, Vec<usize>)
where
    F: Fn(&[f64]) -> Option<Vec<f64>> + Sync,
{
    let thetas: Vec<&[f64]> = draws.iter_draws().collect();
    let per: Vec<Option<Vec<f64>>> = thetas.par_iter().map(|th| f(th)).collect();
    let mut excluded = Vec::new();
    let values = per
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.unwrap_or_else(|| {
                excluded.push(i);
                vec![f64::NAN; n_times]
            })
        })
        .collect();
    (values, excluded)
}

/// Posterior of the stratum-arm survival curve `G(t; s, z)`.
pub fn survival_posterior(
    data: &Dataset,
    draws: &PosteriorDraws,
    model: &Model,
    s: Stratum,
    z: u8,
    times: &[f64],
) -> Result<SurvivalCurve> {
    let k = check_inputs(data, draws, model, s)?;
    check_times(times)?;
    if z > 1 {
        return Err(Error::Domain("arm must be 0 or 1".into()));
    }
    let g = model.group_index(k, z);
    let rows = covariate_rows(data);
    let n_times = times.len();
    let (values, excluded) = collect_draws(draws, n_times, |theta| {
        let a = row_weights(model, theta, &rows, k);
        let b = row_survival(model, theta, &rows, g, times);
        weighted_curve(&a, &rows, &b, n_times)
    });
    let summary = summarize(&values, n_times, DEFAULT_LEVEL);
    Ok(SurvivalCurve {
        stratum: s,
        arm: z,
        times: times.to_vec(),
        values,
        excluded,
        summary,
    })
}

fn merged_exclusions(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// `G(t; s, 1) - G(t; s, 0)` per draw.
pub fn spce(curve1: &SurvivalCurve, curve0: &SurvivalCurve) -> Result<EffectCurve> {
    if curve1.stratum != curve0.stratum {
        return Err(Error::Shape("SPCE needs curves of the same stratum".into()));
    }
    if curve1.arm != 1 || curve0.arm != 0 {
        return Err(Error::Shape("SPCE needs the treated curve first and the control curve second".into()));
    }
    if curve1.times != curve0.times || curve1.values.len() != curve0.values.len() {
        return Err(Error::Shape("SPCE curves must share the time grid and draws".into()));
    }
    let values: Vec<Vec<f64>> = curve1
        .values
        .iter()
        .zip(&curve0.values)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    let summary = summarize(&values, curve1.times.len(), DEFAULT_LEVEL);
    Ok(EffectCurve {
        stratum: Some(curve1.stratum),
        kind: EffectKind::Spce,
        times: curve1.times.clone(),
        values,
        excluded: merged_exclusions(&curve1.excluded, &curve0.excluded),
        summary,
    })
}

/// `∫_0^t exp(-c u^φ) du` for a Weibull survival with rate `c = e^λ / φ`.
pub fn weibull_restricted_mean(t: f64, lin: f64, log_shape: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let phi = log_shape.exp();
    let ln_c = lin - log_shape;
    let a = 1.0 / phi;
    let x = (ln_c + phi * t.ln()).exp();
    (-log_shape - a * ln_c + ln_gamma_unchecked(a) + ln_reg_lower_inc_gamma_unchecked(a, x)).exp()
}

/// Posterior of the restricted mean survival `∫_0^t G(u; s, z) du` using the
/// incomplete-gamma closed form. Weibull only.
pub fn restricted_mean_closed_form(
    data: &Dataset,
    draws: &PosteriorDraws,
    model: &Model,
    s: Stratum,
    z: u8,
    times: &[f64],
) -> Result<SurvivalCurve> {
    if model.family() != Family::Weibull {
        return Err(Error::UnsupportedFamily(format!(
            "closed-form restricted means need the Weibull family, not {}; use the numerical route",
            model.family().name()
        )));
    }
    let k = check_inputs(data, draws, model, s)?;
    check_times(times)?;
    let g = model.group_index(k, z);
    let rows = covariate_rows(data);
    let n_times = times.len();
    let (values, excluded) = collect_draws(draws, n_times, |theta| {
        let a = row_weights(model, theta, &rows, k);
        let b: Vec<Vec<f64>> = rows
            .iter()
            .map(|(x, _)| {
                let (lin, ls) = model.outcome_linear(theta, g, x);
                times.iter().map(|&t| weibull_restricted_mean(t, lin, ls)).collect()
            })
            .collect();
        weighted_curve(&a, &rows, &b, n_times)
    });
    let summary = summarize(&values, n_times, DEFAULT_LEVEL);
    Ok(SurvivalCurve {
        stratum: s,
        arm: z,
        times: times.to_vec(),
        values,
        excluded,
        summary,
    })
}

fn difference_effect(one: SurvivalCurve, zero: SurvivalCurve, kind: EffectKind) -> EffectCurve {
    let values: Vec<Vec<f64>> = one
        .values
        .iter()
        .zip(&zero.values)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    let summary = summarize(&values, one.times.len(), DEFAULT_LEVEL);
    EffectCurve {
        stratum: Some(one.stratum),
        kind,
        times: one.times,
        excluded: merged_exclusions(&one.excluded, &zero.excluded),
        values,
        summary,
    }
}

/// RACE at each requested time through the incomplete-gamma closed form.
pub fn race_closed_form(
    data: &Dataset,
    draws: &PosteriorDraws,
    model: &Model,
    s: Stratum,
    times: &[f64],
) -> Result<EffectCurve> {
    let one = restricted_mean_closed_form(data, draws, model, s, 1, times)?;
    let zero = restricted_mean_closed_form(data, draws, model, s, 0, times)?;
    Ok(difference_effect(one, zero, EffectKind::Race))
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 || times[0] != 0.0 {
        return Err(Error::Domain("integration grid must start at 0 and have at least 2 points".into()));
    }
    let h = times[1] - times[0];
    let tol = 1e-9 * times[times.len() - 1].max(1.0);
    if !(h > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > tol) {
        return Err(Error::Domain("integration grid must be uniformly spaced".into()));
    }
    Ok(h)
}

/// Cumulative integral of `values` sampled on a uniform grid with step `h`,
/// reported at node indices `at`. Simpson needs even indices.
fn cumulative(values: &[f64], h: f64, rule: Rule, at: &[usize]) -> Vec<f64> {
    let last = at.iter().copied().max().unwrap_or(0);
    let mut acc = vec![0.0; last + 1];
    match rule {
        Rule::Trapezoid => {
            for i in 1..=last {
                acc[i] = acc[i - 1] + 0.5 * h * (values[i - 1] + values[i]);
            }
        }
        Rule::Simpson => {
            let mut i = 2;
            while i <= last {
                acc[i] = acc[i - 2] + h / 3.0 * (values[i - 2] + 4.0 * values[i - 1] + values[i]);
                i += 2;
            }
        }
    }
    at.iter().map(|&i| acc[i]).collect()
}

fn node_indices(grid: &[f64], h: f64, targets: &[f64], rule: Rule) -> Result<Vec<usize>> {
    targets
        .iter()
        .map(|&t| {
            let i = (t / h).round() as usize;
            if i >= grid.len() || (grid[i] - t).abs() > 1e-9 * t.max(1.0) {
                return Err(Error::Domain(format!("time {t} is not a node of the integration grid")));
            }
            if rule == Rule::Simpson && i % 2 == 1 {
                return Err(Error::Domain(format!("time {t} falls on an odd Simpson node")));
            }
            Ok(i)
        })
        .collect()
}

/// Restricted mean `∫_0^t G` per draw from a curve on a uniform grid.
/// Every `t` must be a grid node (an even one for Simpson).
pub fn restricted_mean_numerical(curve: &SurvivalCurve, at: &[f64], rule: Rule) -> Result<SurvivalCurve> {
    let h = uniform_step(&curve.times)?;
    let idx = node_indices(&curve.times, h, at, rule)?;
    let values: Vec<Vec<f64>> = curve.values.iter().map(|v| cumulative(v, h, rule, &idx)).collect();
    let summary = summarize(&values, at.len(), DEFAULT_LEVEL);
    Ok(SurvivalCurve {
        stratum: curve.stratum,
        arm: curve.arm,
        times: at.to_vec(),
        values,
        excluded: curve.excluded.clone(),
        summary,
    })
}

/// RACE at the requested times by integrating the two arm curves.
pub fn race_numerical(curve1: &SurvivalCurve, curve0: &SurvivalCurve, at: &[f64], rule: Rule) -> Result<EffectCurve> {
    if curve1.stratum != curve0.stratum || curve1.times != curve0.times || curve1.arm != 1 || curve0.arm != 0 {
        return Err(Error::Shape("RACE needs treated and control curves of one stratum on one grid".into()));
    }
    let one = restricted_mean_numerical(curve1, at, rule)?;
    let zero = restricted_mean_numerical(curve0, at, rule)?;
    Ok(difference_effect(one, zero, EffectKind::Race))
}

/// A fine integration grid on `[0, t_end]` whose node set contains every
/// point of the `points`-point output grid. `k` is rounded up to a multiple
/// of `2 (points - 1)` so the output times are even nodes.
pub fn integration_grid(t_end: f64, points: usize, k: usize) -> Result<QuadratureGrid> {
    if points < 2 {
        return Err(Error::Domain("output grid needs at least 2 points".into()));
    }
    if k < 2 {
        return Err(Error::Domain("integration grid needs k >= 2".into()));
    }
    let block = 2 * (points - 1);
    QuadratureGrid::new(t_end, k.div_ceil(block) * block)
}

/// RACE on a `points`-point output grid over `[0, t_end]`, evaluating the
/// survival curves on a fine grid of about `k` intervals.
#[allow(clippy::too_many_arguments)]
pub fn race_from_draws(
    data: &Dataset,
    draws: &PosteriorDraws,
    model: &Model,
    s: Stratum,
    t_end: f64,
    points: usize,
    k: usize,
    rule: Rule,
) -> Result<EffectCurve> {
    let grid = integration_grid(t_end, points, k)?;
    let fine = grid.nodes();
    let out = time_grid(t_end, points)?;
    let stride = grid.k() / (points - 1);
    let out_snapped: Vec<f64> = (0..points).map(|i| fine[i * stride]).collect();
    let c1 = survival_posterior(data, draws, model, s, 1, &fine)?;
    let c0 = survival_posterior(data, draws, model, s, 0, &fine)?;
    let mut eff = race_numerical(&c1, &c0, &out_snapped, rule)?;
    eff.times = out;
    Ok(eff)
}

/// Population share of each active stratum per draw, `π_s = mean_i A_i`.
pub fn strata_proportions(data: &Dataset, draws: &PosteriorDraws, model: &Model) -> Result<Vec<Vec<f64>>> {
    if draws.dim() != model.dim() {
        return Err(Error::Shape("draws do not match the model".into()));
    }
    let rows = covariate_rows(data);
    let n: f64 = rows.iter().map(|r| r.1).sum();
    let k = model.config().active().len();
    let thetas: Vec<&[f64]> = draws.iter_draws().collect();
    Ok(thetas
        .par_iter()
        .map(|theta| {
            (0..k)
                .map(|s| {
                    row_weights(model, theta, &rows, s)
                        .iter()
                        .zip(&rows)
                        .map(|(a, r)| a * r.1)
                        .sum::<f64>()
                        / n
                })
                .collect()
        })
        .collect())
}

/// `τ(t) = Σ_s π_s τ_s(t)` per draw. `effects` follow the weight columns.
pub fn itt_aggregate(effects: &[EffectCurve], weights: &[Vec<f64>]) -> Result<EffectCurve> {
    let first = effects
        .first()
        .ok_or_else(|| Error::Shape("ITT aggregate needs at least one stratum effect".into()))?;
    let n_draws = first.values.len();
    if effects
        .iter()
        .any(|e| e.times != first.times || e.kind != first.kind || e.values.len() != n_draws)
    {
        return Err(Error::Shape("stratum effects must share kind, grid and draws".into()));
    }
    if weights.len() != n_draws || weights.iter().any(|w| w.len() != effects.len()) {
        return Err(Error::Shape("weights must be [draw][stratum] matching the effects".into()));
    }
    for (i, w) in weights.iter().enumerate() {
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || w.iter().any(|x| *x < 0.0) {
            return Err(Error::Domain(format!("stratum weights of draw {i} sum to {sum}, not 1")));
        }
    }
    let n_times = first.times.len();
    let values: Vec<Vec<f64>> = (0..n_draws)
        .map(|d| {
            let mut out = vec![0.0; n_times];
            for (e, &w) in effects.iter().zip(&weights[d]) {
                // a stratum excluded for vanishing weight contributes nothing
                if w < MIN_STRATUM_WEIGHT && e.values[d].iter().any(|v| !v.is_finite()) {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(&e.values[d]) {
                    *o += w * v;
                }
            }
            out
        })
        .collect();
    let summary = summarize(&values, n_times, DEFAULT_LEVEL);
    Ok(EffectCurve {
        stratum: None,
        kind: first.kind,
        times: first.times.clone(),
        values,
        excluded: Vec::new(),
        summary,
    })
}

/// Population survival in arm `z` per draw: `(1/N) Σ_i Σ_s A_is B_is(t)`.
pub fn population_survival(
    data: &Dataset,
    draws: &PosteriorDraws,
    model: &Model,
    z: u8,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_times(times)?;
    if draws.dim() != model.dim() {
        return Err(Error::Shape("draws do not match the model".into()));
    }
    let rows = covariate_rows(data);
    let n: f64 = rows.iter().map(|r| r.1).sum();
    let k = model.config().active().len();
    let fam = model.family();
    let thetas: Vec<&[f64]> = draws.iter_draws().collect();
    Ok(thetas
        .par_iter()
        .map(|theta| {
            let mut out = vec![0.0; times.len()];
            let mut lin = vec![0.0; k];
            for (x, m) in &rows {
                model.strata_linear(theta, x, &mut lin);
                let max = lin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = lin.iter().map(|l| (l - max).exp()).sum();
                for s in 0..k {
                    let a = (lin[s] - max).exp() / denom * m / n;
                    let (l, ls) = model.outcome_linear(theta, model.group_index(s, z), x);
                    for (o, &t) in out.iter_mut().zip(times) {
                        *o += a * fam.log_survival(t, l, ls).exp();
                    }
                }
            }
            out
        })
        .collect())
}

/// Intention-to-treat SPCE computed directly as the difference of the two
/// population survival curves, without passing through stratum effects.
pub fn itt_spce_direct(data: &Dataset, draws: &PosteriorDraws, model: &Model, times: &[f64]) -> Result<EffectCurve> {
    let one = population_survival(data, draws, model, 1, times)?;
    let zero = population_survival(data, draws, model, 0, times)?;
    let values: Vec<Vec<f64>> = one
        .iter()
        .zip(&zero)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    let summary = summarize(&values, times.len(), DEFAULT_LEVEL);
    Ok(EffectCurve {
        stratum: None,
        kind: EffectKind::Spce,
        times: times.to_vec(),
        values,
        excluded: Vec::new(),
        summary,
    })
}

/// Product-limit estimate for one arm. Units with `censored == false` are events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub arm: u8,
    /// Distinct event times, increasing.
    pub times: Vec<f64>,
    /// Survival just after each event time.
    pub survival: Vec<f64>,
    /// Greenwood variance at each event time.
    pub variance: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KmCurve {
    /// Right-continuous evaluation.
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&e| e <= t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }
}

pub fn kaplan_meier(data: &Dataset, arm: u8) -> Result<KmCurve> {
    let mut obs: Vec<(f64, bool)> = data
        .units()
        .iter()
        .filter(|u| u.z == arm)
        .map(|u| (u.y, !u.censored))
        .collect();
    if obs.is_empty() {
        return Err(Error::InvalidData(format!("arm z={arm} has no units")));
    }
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut curve = KmCurve {
        arm,
        times: Vec::new(),
        survival: Vec::new(),
        variance: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut at_risk = obs.len();
    let mut s = 1.0;
    let mut green = 0.0;
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let mut d = 0;
        let mut leaving = 0;
        while i < obs.len() && obs[i].0 == t {
            d += obs[i].1 as usize;
            leaving += 1;
            i += 1;
        }
        if d > 0 {
            let n = at_risk as f64;
            let df = d as f64;
            s *= 1.0 - df / n;
            if d < at_risk {
                green += df / (n * (n - df));
            }
            curve.times.push(t);
            curve.survival.push(s);
            curve.variance.push(if s > 0.0 { s * s * green } else { 0.0 });
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
        at_risk -= leaving;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ObservedUnit, StrataConfig};
    use proptest::prelude::*;

    fn unit(id: usize, x: Vec<f64>, z: u8, d: u8, y: f64, censored: bool) -> ObservedUnit {
        ObservedUnit {
            id: id.to_string(),
            x,
            z,
            d,
            y,
            censored,
        }
    }

    fn single_draw(theta: Vec<f64>, names: Vec<String>) -> PosteriorDraws {
        PosteriorDraws {
            param_names: names,
            draws: vec![vec![theta]],
            log_posterior: vec![vec![0.0]],
            accept_stats: vec![1.0],
            divergence_count: vec![0],
            warmup_divergences: vec![0],
            step_sizes: vec![0.1],
            inv_metric: vec![vec![]],
            warmup_iterations: vec![0],
        }
    }

    fn many_draws(thetas: Vec<Vec<f64>>, names: Vec<String>) -> PosteriorDraws {
        let n = thetas.len();
        PosteriorDraws {
            param_names: names,
            draws: vec![thetas],
            log_posterior: vec![vec![0.0; n]],
            accept_stats: vec![1.0],
            divergence_count: vec![0],
            warmup_divergences: vec![0],
            step_sizes: vec![0.1],
            inv_metric: vec![vec![]],
            warmup_iterations: vec![0],
        }
    }

    fn no_cov_data() -> Dataset {
        Dataset::new(
            vec![
                unit(0, vec![], 0, 0, 1.0, false),
                unit(1, vec![], 0, 1, 2.0, true),
                unit(2, vec![], 1, 1, 0.5, false),
                unit(3, vec![], 1, 0, 3.0, false),
            ],
            vec![],
        )
        .unwrap()
    }

    /// ER model, no covariates: layout is eta_c, eta_a, then groups
    /// n, c0, c1, a each with (alpha, log_phi).
    fn er_theta() -> (Model, Vec<f64>) {
        let m = Model::new(StrataConfig::standard(true, true), Family::Weibull, vec![]);
        let th = vec![
            0.87,
            -0.51,
            -3.0,
            2f64.ln(),
            -2.4,
            1.5f64.ln(),
            -1.8,
            1.5f64.ln(),
            -1.2,
            0.0,
        ];
        assert_eq!(m.dim(), th.len());
        (m, th)
    }

    fn weib_s(t: f64, phi: f64, alpha: f64) -> f64 {
        (-(t.powf(phi)) * alpha.exp() / phi).exp()
    }

    #[test]
    fn no_covariates_equals_stratum_survival() {
        let (m, th) = er_theta();
        let d = no_cov_data();
        let draws = single_draw(th, m.param_names());
        let times = [0.0, 0.5, 1.0, 2.0];
        let c = survival_posterior(&d, &draws, &m, Stratum::Complier, 1, &times).unwrap();
        for (j, &t) in times.iter().enumerate() {
            let expect = weib_s(t, 1.5, -1.8);
            assert!((c.values[0][j] - expect).abs() < 1e-14);
        }
        assert_eq!(c.values[0][0], 1.0);
        let n0 = survival_posterior(&d, &draws, &m, Stratum::NeverTaker, 0, &times).unwrap();
        assert!((n0.values[0][2] - 0.975413754721786465).abs() < 1e-14);
    }

    #[test]
    fn complier_spce_matches_truth() {
        let (m, th) = er_theta();
        let d = no_cov_data();
        let draws = single_draw(th, m.param_names());
        let c1 = survival_posterior(&d, &draws, &m, Stratum::Complier, 1, &[0.0, 1.0]).unwrap();
        let c0 = survival_posterior(&d, &draws, &m, Stratum::Complier, 0, &[0.0, 1.0]).unwrap();
        let e = spce(&c1, &c0).unwrap();
        assert_eq!(e.values[0][0], 0.0);
        assert!((e.values[0][1] - -0.0456582292474354736).abs() < 1e-12);
        assert!(spce(&c0, &c1).is_err());
    }

    #[test]
    fn er_tied_spce_is_exactly_zero() {
        let (m, th) = er_theta();
        let d = no_cov_data();
        let draws = single_draw(th, m.param_names());
        let times = time_grid(4.0, 11).unwrap();
        for s in [Stratum::NeverTaker, Stratum::AlwaysTaker] {
            let c1 = survival_posterior(&d, &draws, &m, s, 1, &times).unwrap();
            let c0 = survival_posterior(&d, &draws, &m, s, 0, &times).unwrap();
            assert!(spce(&c1, &c0).unwrap().values[0].iter().all(|v| *v == 0.0));
            assert!(race_closed_form(&d, &draws, &m, s, &times[1..]).unwrap().values[0]
                .iter()
                .all(|v| *v == 0.0));
        }
    }

    #[test]
    fn two_row_weighted_average() {
        // one covariate; eta/xi: complier (0.2, 0.5), always (-0.3, -1.0)
        let m = Model::new(StrataConfig::standard(true, true), Family::Weibull, vec!["x".into()]);
        let d = Dataset::new(
            vec![
                unit(0, vec![-1.0], 0, 0, 1.0, false),
                unit(1, vec![1.0], 1, 1, 1.0, false),
                unit(2, vec![1.0], 0, 0, 2.0, true),
            ],
            vec!["x".into()],
        )
        .unwrap();
        let mut th = vec![0.0; m.dim()];
        // strata: eta_c, xi_c, eta_a, xi_a
        th[0] = 0.2;
        th[1] = 0.5;
        th[2] = -0.3;
        th[3] = -1.0;
        // group c1 = index 2 in (n, c0, c1, a): alpha, beta, log_phi
        let o = 4 + 2 * 3;
        th[o] = -1.0;
        th[o + 1] = 0.7;
        th[o + 2] = 0.3;
        let draws = single_draw(th, m.param_names());
        let t = 1.3;
        let c = survival_posterior(&d, &draws, &m, Stratum::Complier, 1, &[t]).unwrap();
        let a = |x: f64| {
            let e = [0.0, 0.2 + 0.5 * x, -0.3 - 1.0 * x].map(f64::exp);
            e[1] / (e[0] + e[1] + e[2])
        };
        let b = |x: f64| weib_s(t, 0.3f64.exp(), -1.0 + 0.7 * x);
        let expect = (a(-1.0) * b(-1.0) + 2.0 * a(1.0) * b(1.0)) / (a(-1.0) + 2.0 * a(1.0));
        assert!((c.values[0][0] - expect).abs() < 1e-14);
    }

    #[test]
    fn restricted_mean_oracles() {
        // unit exponential: 1 - e^{-1}
        assert!((weibull_restricted_mean(1.0, 0.0, 0.0) - 0.6321205588285577).abs() < 1e-13);
        // quadrature value of ∫_0^2 exp(-u^2 e^{-3} / 2) du
        assert!((weibull_restricted_mean(2.0, -3.0, 2f64.ln()) - 1.93555412628660263).abs() < 1e-12);
        assert_eq!(weibull_restricted_mean(0.0, -3.0, 0.1), 0.0);
    }

    #[test]
    fn closed_form_rejects_lognormal() {
        let m = Model::new(StrataConfig::standard(true, false), Family::LogNormal, vec![]);
        let d = no_cov_data();
        let draws = single_draw(vec![0.0; m.dim()], m.param_names());
        assert!(matches!(
            race_closed_form(&d, &draws, &m, Stratum::Complier, &[1.0]),
            Err(Error::UnsupportedFamily(_))
        ));
    }

    fn exp_curve(times: Vec<f64>) -> SurvivalCurve {
        let v: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        SurvivalCurve {
            stratum: Stratum::Complier,
            arm: 1,
            summary: summarize(&[v.clone()], times.len(), 0.95),
            times,
            values: vec![v],
            excluded: vec![],
        }
    }

    #[test]
    fn numerical_restricted_mean() {
        let c = exp_curve(time_grid(1.0, 10_001).unwrap());
        let r = restricted_mean_numerical(&c, &[1.0], Rule::Trapezoid).unwrap();
        assert!((r.values[0][0] - 0.6321205588285577).abs() < 5e-5);
        let ones = SurvivalCurve {
            values: vec![vec![1.0; 5]],
            ..exp_curve(time_grid(2.0, 5).unwrap())
        };
        let r = restricted_mean_numerical(&ones, &[0.0, 1.0, 2.0], Rule::Simpson).unwrap();
        assert_eq!(r.values[0], vec![0.0, 1.0, 2.0]);
        assert!(restricted_mean_numerical(&ones, &[0.5], Rule::Simpson).is_err());
        assert!(restricted_mean_numerical(&ones, &[0.3], Rule::Trapezoid).is_err());
    }

    #[test]
    fn simpson_beats_trapezoid_on_exponential() {
        let c = exp_curve(time_grid(1.0, 1001).unwrap());
        let exact = 0.6321205588285577;
        let t = restricted_mean_numerical(&c, &[1.0], Rule::Trapezoid).unwrap().values[0][0];
        let s = restricted_mean_numerical(&c, &[1.0], Rule::Simpson).unwrap().values[0][0];
        assert!((s - exact).abs() <= (t - exact).abs());
    }

    #[test]
    fn integration_grid_contains_output_nodes() {
        let g = integration_grid(4.0, 101, 10_000).unwrap();
        assert_eq!(g.k(), 10_000);
        let g = integration_grid(4.0, 7, 1000).unwrap();
        assert_eq!(g.k() % 12, 0);
        assert!(g.k() >= 1000);
        assert!(integration_grid(4.0, 7, 1).is_err());
    }

    #[test]
    fn closed_and_numerical_race_agree() {
        let (m, th) = er_theta();
        let d = no_cov_data();
        let draws = single_draw(th, m.param_names());
        let num = race_from_draws(&d, &draws, &m, Stratum::Complier, 4.0, 9, 10_000, Rule::Trapezoid).unwrap();
        let closed = race_closed_form(&d, &draws, &m, Stratum::Complier, &num.times).unwrap();
        for (a, b) in num.values[0].iter().zip(&closed.values[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn itt_identity_and_special_cases() {
        let (m, th) = er_theta();
        let d = no_cov_data();
        let mut th2 = th.clone();
        th2[0] = -0.2;
        th2[6] = -1.1;
        let draws = many_draws(vec![th, th2], m.param_names());
        let times = time_grid(3.0, 31).unwrap();
        let effects: Vec<EffectCurve> = m
            .config()
            .active()
            .iter()
            .map(|&s| {
                let c1 = survival_posterior(&d, &draws, &m, s, 1, &times).unwrap();
                let c0 = survival_posterior(&d, &draws, &m, s, 0, &times).unwrap();
                spce(&c1, &c0).unwrap()
            })
            .collect();
        let w = strata_proportions(&d, &draws, &m).unwrap();
        let agg = itt_aggregate(&effects, &w).unwrap();
        let direct = itt_spce_direct(&d, &draws, &m, &times).unwrap();
        for (a, b) in agg.values.iter().flatten().zip(direct.values.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        // a single stratum with weight 1 passes through
        let one = itt_aggregate(&effects[1..2], &[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(one.values, effects[1].values);
        assert!(itt_aggregate(&effects, &vec![vec![0.5, 0.4, 0.2]; 2]).is_err());
    }

    #[test]
    fn vanishing_stratum_is_excluded() {
        let (m, mut th) = er_theta();
        th[0] = -800.0;
        let d = no_cov_data();
        let draws = single_draw(th, m.param_names());
        let c = survival_posterior(&d, &draws, &m, Stratum::Complier, 1, &[0.0, 1.0]).unwrap();
        assert_eq!(c.excluded, vec![0]);
        assert!(c.summary.mean[0].is_nan());
    }

    #[test]
    fn summary_quantiles() {
        let values: Vec<Vec<f64>> = (0..=100).map(|i| vec![i as f64]).collect();
        let s = summarize(&values, 1, 0.95);
        assert!((s.mean[0] - 50.0).abs() < 1e-12);
        assert!((s.lo[0] - 2.5).abs() < 1e-12);
        assert!((s.hi[0] - 97.5).abs() < 1e-12);
    }

    fn km_data(obs: &[(f64, bool)]) -> Dataset {
        let units = obs
            .iter()
            .enumerate()
            .map(|(i, &(y, c))| unit(i, vec![], 0, 0, y, c))
            .collect();
        Dataset::new(units, vec![]).unwrap()
    }

    #[test]
    fn kaplan_meier_examples() {
        let km = kaplan_meier(&km_data(&[(1.0, false), (2.0, false), (3.0, false)]), 0).unwrap();
        assert_eq!(km.times, vec![1.0, 2.0, 3.0]);
        assert!((km.survival[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.survival[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival[2], 0.0);
        // Greenwood at first step: S^2 * 1/(3*2)
        assert!((km.variance[0] - (4.0 / 9.0) / 6.0).abs() < 1e-15);

        let km = kaplan_meier(&km_data(&[(1.0, true), (2.0, true)]), 0).unwrap();
        assert!(km.times.is_empty());
        assert_eq!(km.eval(5.0), 1.0);

        let km = kaplan_meier(&km_data(&[(1.0, false), (2.0, true)]), 0).unwrap();
        assert_eq!(km.eval(0.999), 1.0);
        assert_eq!(km.eval(1.0), 0.5);
        assert_eq!(km.eval(10.0), 0.5);

        assert!(kaplan_meier(&km_data(&[(1.0, false)]), 1).is_err());
    }

    proptest! {
        #[test]
        fn km_without_censoring_is_empirical(ys in proptest::collection::vec(1u8..6, 1..=6)) {
            let obs: Vec<(f64, bool)> = ys.iter().map(|&y| (y as f64, false)).collect();
            let km = kaplan_meier(&km_data(&obs), 0).unwrap();
            let n = ys.len() as f64;
            for t in 0..7 {
                let t = t as f64 + 0.5;
                let emp = ys.iter().filter(|&&y| y as f64 > t).count() as f64 / n;
                prop_assert!((km.eval(t) - emp).abs() < 1e-12);
            }
        }

        #[test]
        fn curves_are_nonincreasing(
            a in -2.0f64..2.0, ls in -1.0f64..1.0, eta in -2.0f64..2.0, x0 in -1.0f64..1.0,
        ) {
            let m = Model::new(StrataConfig::standard(true, false), Family::Weibull, vec!["x".into()]);
            let d = Dataset::new(
                vec![unit(0, vec![x0], 0, 0, 1.0, false), unit(1, vec![1.5], 1, 1, 2.0, true)],
                vec!["x".into()],
            ).unwrap();
            let mut th: Vec<f64> = (0..m.dim()).map(|i| 0.1 * (i as f64).sin()).collect();
            th[0] = eta;
            let o = m.group_offset(m.group_of(Stratum::Complier, 1).unwrap());
            th[o] = a;
            th[o + 2] = ls;
            let draws = single_draw(th, m.param_names());
            let times = time_grid(5.0, 51).unwrap();
            for s in m.config().active().to_vec() {
                for z in 0..2 {
                    let c = survival_posterior(&d, &draws, &m, s, z, &times).unwrap();
                    prop_assert_eq!(c.values[0][0], 1.0);
                    prop_assert!(c.values[0].windows(2).all(|w| w[1] <= w[0] + 1e-15));
                }
            }
            let w = strata_proportions(&d, &draws, &m).unwrap();
            prop_assert!((w[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
