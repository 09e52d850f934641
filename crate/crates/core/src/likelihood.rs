//! Observed-data log posterior: a mixture over the strata compatible with each
//! unit's `(z, d)` cell, with censored units contributing survival terms and
//! observed failures contributing density terms.
//!
//! The log posterior is defined up to an additive constant (the censoring
//! density, `Pr(X)` and `Pr(Z | X)` are dropped). Gradients are exact: the
//! mixture gradient is the responsibility-weighted sum of per-component
//! gradients.

use crate::data::{Dataset, ObservedUnit};
use crate::error::{Error, Result};
use crate::model::{log_prior_with_grad, Model, PriorSpec, MAX_LINEAR_PREDICTOR};
use crate::special::log_sum_exp_unchecked;

const MAX_STRATA: usize = 4;
// Leaves of the summation tree hold at most this many units.
const LEAF: usize = 128;
// Ranges larger than this are split across threads.
const PAR_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct LogPosteriorValue {
    pub value: f64,
    pub gradient: Vec<f64>,
}

struct UnitEval {
    ll: f64,
    // log P(S = s | x) for every active stratum
    log_pi: [f64; MAX_STRATA],
    // per compatible stratum: active index, log joint term, outcome partials
    comp: [(usize, f64, f64, f64); MAX_STRATA],
    n_comp: usize,
}

fn eval_unit(unit: &ObservedUnit, theta: &[f64], model: &Model) -> Result<UnitEval> {
    let active = model.config().active();
    let k = active.len();
    let mut lin = [0.0; MAX_STRATA];
    model.strata_linear(theta, &unit.x, &mut lin[..k]);
    if lin[..k].iter().any(|v| !(v.abs() <= MAX_LINEAR_PREDICTOR)) {
        return Err(Error::NonFinite {
            unit: None,
            what: "strata linear predictor out of range".into(),
        });
    }
    let lse = log_sum_exp_unchecked(&lin[..k]);
    let mut log_pi = [f64::NEG_INFINITY; MAX_STRATA];
    for i in 0..k {
        log_pi[i] = lin[i] - lse;
    }

    let mut comp = [(0usize, 0.0, 0.0, 0.0); MAX_STRATA];
    let mut terms = [f64::NEG_INFINITY; MAX_STRATA];
    let mut n_comp = 0;
    for (i, s) in active.iter().enumerate() {
        if s.d_at(unit.z) != unit.d {
            continue;
        }
        let g = model.group_index(i, unit.z);
        let (tl, ls) = model.outcome_linear(theta, g, &unit.x);
        if !(tl.abs() <= MAX_LINEAR_PREDICTOR) || !ls.is_finite() {
            return Err(Error::NonFinite {
                unit: None,
                what: "outcome linear predictor out of range".into(),
            });
        }
        let (v, dl, ds) = model.family().term_with_grad(unit.y, tl, ls, unit.censored);
        terms[n_comp] = log_pi[i] + v;
        comp[n_comp] = (i, terms[n_comp], dl, ds);
        n_comp += 1;
    }
    if n_comp == 0 {
        return Err(Error::EmptyCell { z: unit.z, d: unit.d });
    }
    let ll = log_sum_exp_unchecked(&terms[..n_comp]);
    if !ll.is_finite() {
        return Err(Error::NonFinite {
            unit: None,
            what: "unit log likelihood".into(),
        });
    }
    Ok(UnitEval {
        ll,
        log_pi,
        comp,
        n_comp,
    })
}

fn add_unit_grad(ev: &UnitEval, unit: &ObservedUnit, model: &Model, grad: &mut [f64]) {
    let k = model.config().active().len();
    let p = unit.x.len();
    let mut resp = [0.0; MAX_STRATA];
    for &(i, term, _, _) in &ev.comp[..ev.n_comp] {
        resp[i] = (term - ev.ll).exp();
    }
    for i in 0..k {
        if let Some(o) = model.strata_offset(i) {
            let c = resp[i] - ev.log_pi[i].exp();
            grad[o] += c;
            for j in 0..p {
                grad[o + 1 + j] += c * unit.x[j];
            }
        }
    }
    for &(i, _, dl, ds) in &ev.comp[..ev.n_comp] {
        let r = resp[i];
        let o = model.group_offset(model.group_index(i, unit.z));
        let c = r * dl;
        grad[o] += c;
        for j in 0..p {
            grad[o + 1 + j] += c * unit.x[j];
        }
        grad[o + 1 + p] += r * ds;
    }
}

fn check_theta(theta: &[f64], model: &Model) -> Result<()> {
    if theta.len() != model.dim() {
        return Err(Error::Shape(format!(
            "theta has length {}, layout expects {}",
            theta.len(),
            model.dim()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            unit: None,
            what: "theta has non-finite entries".into(),
        });
    }
    Ok(())
}

/// Log-likelihood of one unit, marginalized over its compatible strata.
pub fn unit_log_lik(unit: &ObservedUnit, theta: &[f64], model: &Model) -> Result<f64> {
    check_theta(theta, model)?;
    if unit.x.len() != model.n_covariates() {
        return Err(Error::Shape("unit covariates do not match the model".into()));
    }
    eval_unit(unit, theta, model).map(|ev| ev.ll)
}

/// Mixture responsibilities over the active strata (zero outside the unit's
/// compatible set).
pub fn posterior_strata_probs(unit: &ObservedUnit, theta: &[f64], model: &Model) -> Result<Vec<f64>> {
    check_theta(theta, model)?;
    let ev = eval_unit(unit, theta, model)?;
    let mut out = vec![0.0; model.config().active().len()];
    for &(i, term, _, _) in &ev.comp[..ev.n_comp] {
        out[i] = (term - ev.ll).exp();
    }
    Ok(out)
}

fn tree_sum(
    units: &[ObservedUnit],
    base: usize,
    theta: &[f64],
    model: &Model,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if units.len() <= LEAF {
        let mut grad = if with_grad { vec![0.0; theta.len()] } else { Vec::new() };
        let mut value = 0.0;
        for (i, u) in units.iter().enumerate() {
            let ev = eval_unit(u, theta, model).map_err(|e| match e {
                Error::NonFinite { what, .. } => Error::NonFinite {
                    unit: Some(base + i),
                    what,
                },
                other => other,
            })?;
            value += ev.ll;
            if with_grad {
                add_unit_grad(&ev, u, model, &mut grad);
            }
        }
        return Ok((value, grad));
    }
    // split on a LEAF boundary so the tree shape depends only on the length
    let mid = (units.len() / LEAF).div_ceil(2) * LEAF;
    let (lo, hi) = units.split_at(mid);
    let (a, b) = if units.len() > PAR_THRESHOLD {
        rayon::join(
            || tree_sum(lo, base, theta, model, with_grad),
            || tree_sum(hi, base + mid, theta, model, with_grad),
        )
    } else {
        (
            tree_sum(lo, base, theta, model, with_grad),
            tree_sum(hi, base + mid, theta, model, with_grad),
        )
    };
    let (va, mut ga) = a?;
    let (vb, gb) = b?;
    for (x, y) in ga.iter_mut().zip(&gb) {
        *x += y;
    }
    Ok((va + vb, ga))
}

/// Log posterior (up to a constant) and its gradient.
pub fn log_posterior(
    data: &Dataset,
    theta: &[f64],
    model: &Model,
    prior: &PriorSpec,
) -> Result<LogPosteriorValue> {
    check_theta(theta, model)?;
    if data.n_covariates() != model.n_covariates() {
        return Err(Error::Shape("dataset covariates do not match the model".into()));
    }
    let (ll, mut gradient) = if data.is_empty() {
        (0.0, vec![0.0; theta.len()])
    } else {
        tree_sum(data.units(), 0, theta, model, true)?
    };
    let lp = log_prior_with_grad(theta, model, prior, Some(&mut gradient));
    let value = ll + lp;
    if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            unit: None,
            what: "log posterior or gradient".into(),
        });
    }
    Ok(LogPosteriorValue { value, gradient })
}

/// Log posterior value only.
pub fn log_posterior_value(data: &Dataset, theta: &[f64], model: &Model, prior: &PriorSpec) -> Result<f64> {
    check_theta(theta, model)?;
    let ll = if data.is_empty() {
        0.0
    } else {
        tree_sum(data.units(), 0, theta, model, false)?.0
    };
    Ok(ll + crate::model::log_prior(theta, model, prior))
}

/// Dataset, model and prior bundled as a sampling target.
#[derive(Debug, Clone)]
pub struct Posterior<'a> {
    pub data: &'a Dataset,
    pub model: &'a Model,
    pub prior: PriorSpec,
}

impl<'a> Posterior<'a> {
    pub fn new(data: &'a Dataset, model: &'a Model, prior: PriorSpec) -> Self {
        Self { data, model, prior }
    }
}

impl crate::sampler::LogDensity for Posterior<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let v = log_posterior(self.data, theta, self.model, &self.prior)?;
        grad.copy_from_slice(&v.gradient);
        Ok(v.value)
    }

    fn param_names(&self) -> Vec<String> {
        self.model.param_names()
    }

    fn init_half_widths(&self, jitter: f64) -> Vec<f64> {
        self.model
            .params()
            .iter()
            .map(|p| match p.role {
                crate::model::Role::LogShape => jitter * 0.5,
                _ => jitter,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{StrataConfig, Stratum};
    use crate::model::{Family, Model};

    fn weibull_surv(t: f64, phi: f64, alpha: f64) -> f64 {
        (-(t.powf(phi)) * alpha.exp() / phi).exp()
    }

    fn weibull_dens(t: f64, phi: f64, alpha: f64) -> f64 {
        t.powf(phi - 1.0) * alpha.exp() * weibull_surv(t, phi, alpha)
    }

    fn er_model() -> Model {
        Model::new(StrataConfig::standard(true, true), Family::Weibull, vec![])
    }

    // theta for the ER model without covariates:
    // eta_c, eta_a, [alpha, logphi] x {n, c0, c1, a}
    fn er_theta() -> Vec<f64> {
        vec![0.87, -0.51, -3.0, 2f64.ln(), -2.4, 1.5f64.ln(), -1.8, 1.5f64.ln(), -1.2, 0.0]
    }

    fn unit(z: u8, d: u8, y: f64, censored: bool) -> ObservedUnit {
        ObservedUnit {
            id: String::new(),
            x: vec![],
            z,
            d,
            y,
            censored,
        }
    }

    fn probs() -> [f64; 3] {
        let den = 1.0 + 0.87f64.exp() + (-0.51f64).exp();
        [1.0 / den, 0.87f64.exp() / den, (-0.51f64).exp() / den]
    }

    #[test]
    fn singleton_cell_collapses() {
        let m = er_model();
        let th = er_theta();
        let u = unit(0, 1, 1.7, true);
        let got = unit_log_lik(&u, &th, &m).unwrap();
        let expected = probs()[2].ln() + weibull_surv(1.7, 1.0, -1.2).ln();
        assert!((got - expected).abs() < 1e-13);
    }

    #[test]
    fn two_component_brute_force() {
        let m = er_model();
        let th = er_theta();
        let u = unit(1, 1, 2.3, false);
        let pr = probs();
        let brute = pr[1] * weibull_dens(2.3, 1.5, -1.8) + pr[2] * weibull_dens(2.3, 1.0, -1.2);
        assert!((unit_log_lik(&u, &th, &m).unwrap() - brute.ln()).abs() < 1e-12);
    }

    #[test]
    fn censored_at_zero_is_log_mass_of_cell() {
        let m = er_model();
        let u = unit(1, 1, 0.0, true);
        let pr = probs();
        let got = unit_log_lik(&u, &er_theta(), &m).unwrap();
        assert!((got - (pr[1] + pr[2]).ln()).abs() < 1e-14);
    }

    #[test]
    fn responsibilities() {
        let m = er_model();
        let th = er_theta();
        let r = posterior_strata_probs(&unit(0, 1, 1.0, false), &th, &m).unwrap();
        assert_eq!(r, vec![0.0, 0.0, 1.0]);

        // equal strata probabilities and identical outcome params -> (1/2, 1/2)
        let mut sym = vec![0.0, 0.0];
        sym.extend([-1.0, 0.2].repeat(4));
        let r = posterior_strata_probs(&unit(1, 1, 1.3, false), &sym, &m).unwrap();
        assert!((r[1] - 0.5).abs() < 1e-15 && (r[2] - 0.5).abs() < 1e-15);

        let u = unit(0, 0, 0.8, false);
        let r = posterior_strata_probs(&u, &th, &m).unwrap();
        let pr = probs();
        let wn = pr[0] * weibull_dens(0.8, 2.0, -3.0);
        let wc = pr[1] * weibull_dens(0.8, 1.5, -2.4);
        assert!((r[0] - wn / (wn + wc)).abs() < 1e-13);
        assert!((r[1] - wc / (wn + wc)).abs() < 1e-13);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_prior() {
        let m = Model::new(StrataConfig::standard(true, false), Family::Weibull, vec!["x".into()]);
        let data = Dataset::new(vec![], vec!["x".into()]).unwrap();
        let th: Vec<f64> = (0..m.dim()).map(|i| i as f64 * 0.1).collect();
        let prior = PriorSpec::default();
        let v = log_posterior(&data, &th, &m, &prior).unwrap();
        assert_eq!(v.value, crate::model::log_prior(&th, &m, &prior));
        let mut g = vec![0.0; m.dim()];
        log_prior_with_grad(&th, &m, &prior, Some(&mut g));
        assert_eq!(v.gradient, g);
    }

    #[test]
    fn empty_cell_and_overflow_errors() {
        let cfg = StrataConfig::new(
            vec![Stratum::NeverTaker, Stratum::Complier],
            Stratum::NeverTaker,
            true,
            true,
        )
        .unwrap();
        let m = Model::new(cfg, Family::Weibull, vec![]);
        let th = vec![0.0; m.dim()];
        assert!(matches!(
            unit_log_lik(&unit(0, 1, 1.0, false), &th, &m),
            Err(Error::EmptyCell { z: 0, d: 1 })
        ));
        let m = er_model();
        let mut th = er_theta();
        th[2] = 800.0;
        let data = Dataset::new(vec![unit(1, 0, 1.0, false)], vec![]).unwrap();
        match log_posterior(&data, &th, &m, &PriorSpec::default()) {
            Err(Error::NonFinite { unit: Some(0), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mixture_collapse_with_degenerate_strata_model() {
        let m = er_model();
        // complier probability ~ 1, identical outcome parameters everywhere
        let mut th = vec![40.0, -40.0];
        th.extend([-0.7, 0.3].repeat(4));
        let u = unit(1, 1, 1.9, false);
        let single = weibull_dens(1.9, 0.3f64.exp(), -0.7).ln();
        assert!((unit_log_lik(&u, &th, &m).unwrap() - single).abs() < 1e-12);
    }

    #[test]
    fn censored_term_nonincreasing_in_time() {
        let m = er_model();
        let th = er_theta();
        let mut prev = f64::INFINITY;
        for i in 1..50 {
            let y = i as f64 * 0.3;
            let v = unit_log_lik(&unit(0, 0, y, true), &th, &m).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn large_dataset_parallel_matches_sequential_sum() {
        let m = Model::new(StrataConfig::standard(true, false), Family::Weibull, vec!["x".into()]);
        let units: Vec<ObservedUnit> = (0..10_000)
            .map(|i| ObservedUnit {
                id: i.to_string(),
                x: vec![((i * 7919) % 97) as f64 / 50.0 - 1.0],
                z: (i % 2) as u8,
                d: ((i / 2) % 2) as u8,
                y: 0.1 + ((i * 104_729) % 1000) as f64 / 200.0,
                censored: i % 3 == 0,
            })
            .collect();
        let data = Dataset::new(units, vec!["x".into()]).unwrap();
        let th: Vec<f64> = (0..m.dim()).map(|i| ((i as f64) * 1.3).sin() * 0.5).collect();
        let v = log_posterior(&data, &th, &m, &PriorSpec::default()).unwrap();
        let seq: f64 = data.units().iter().map(|u| unit_log_lik(u, &th, &m).unwrap()).sum::<f64>()
            + crate::model::log_prior(&th, &m, &PriorSpec::default());
        assert!((v.value - seq).abs() < 1e-8 * seq.abs());
        let again = log_posterior(&data, &th, &m, &PriorSpec::default()).unwrap();
        assert_eq!(v, again);
        let value_only = log_posterior_value(&data, &th, &m, &PriorSpec::default()).unwrap();
        assert_eq!(value_only.to_bits(), v.value.to_bits());
    }
}
