//! Strata model (multinomial logit over principal strata), outcome model
//! families, priors and the packing of every parameter into one flat
//! unconstrained vector.
//!
//! Layout of `theta`:
//!
//! ```text
//! for each active stratum s != reference (config order):  eta_s, xi_s[0..p]
//! for each outcome group g (see build_groups):           intercept_g, beta_g[0..p], log_shape_g
//! ```
//!
//! For the Weibull-Cox family the outcome intercept is `alpha` and the last
//! entry is `log phi`; for the lognormal AFT family they are `mu` and
//! `log sigma`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{StrataConfig, Stratum};
use crate::error::{Error, Result};
use crate::special::{ln_normal_pdf, ln_normal_sf, log_sum_exp_unchecked, normal_hazard};

/// Largest absolute linear predictor accepted before an evaluation is rejected.
pub const MAX_LINEAR_PREDICTOR: f64 = 700.0;

/// Outcome (T-model) family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Hazard `t^(phi-1) exp(alpha + x'beta)`.
    #[default]
    Weibull,
    /// `log T ~ Normal(mu + x'beta, sigma)`.
    LogNormal,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Weibull => "weibull",
            Family::LogNormal => "lognormal",
        }
    }

    fn intercept_name(self) -> &'static str {
        match self {
            Family::Weibull => "alpha",
            Family::LogNormal => "mu",
        }
    }

    fn shape_name(self) -> &'static str {
        match self {
            Family::Weibull => "log_phi",
            Family::LogNormal => "log_sigma",
        }
    }

    /// `log Pr(T >= t)` given the linear predictor and log-shape.
    #[inline]
    pub fn log_survival(self, t: f64, lin: f64, log_shape: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        match self {
            Family::Weibull => {
                let phi = log_shape.exp();
                -(lin + phi * t.ln() - log_shape).exp()
            }
            Family::LogNormal => ln_normal_sf((t.ln() - lin) / log_shape.exp()),
        }
    }

    /// Log density at `t > 0`.
    #[inline]
    pub fn log_density(self, t: f64, lin: f64, log_shape: f64) -> f64 {
        match self {
            Family::Weibull => {
                let phi = log_shape.exp();
                let ln_t = t.ln();
                (phi - 1.0) * ln_t + lin - (lin + phi * ln_t - log_shape).exp()
            }
            Family::LogNormal => {
                let ln_t = t.ln();
                let z = (ln_t - lin) / log_shape.exp();
                ln_normal_pdf(z) - log_shape - ln_t
            }
        }
    }

    /// Log-likelihood contribution of one observed time and its partial
    /// derivatives with respect to the linear predictor and the log-shape.
    ///
    /// Censored units contribute `log S(t)`, observed failures `log f(t)`.
    #[inline]
    pub(crate) fn term_with_grad(self, t: f64, lin: f64, log_shape: f64, censored: bool) -> (f64, f64, f64) {
        match self {
            Family::Weibull => {
                if t == 0.0 {
                    debug_assert!(censored);
                    return (0.0, 0.0, 0.0);
                }
                let phi = log_shape.exp();
                let ln_t = t.ln();
                // cumulative hazard H = t^phi e^lin / phi
                let h = (lin + phi * ln_t - log_shape).exp();
                let dh_dls = h * (phi * ln_t - 1.0);
                if censored {
                    (-h, -h, -dh_dls)
                } else {
                    ((phi - 1.0) * ln_t + lin - h, 1.0 - h, phi * ln_t - dh_dls)
                }
            }
            Family::LogNormal => {
                if t == 0.0 {
                    debug_assert!(censored);
                    return (0.0, 0.0, 0.0);
                }
                let sigma = log_shape.exp();
                let ln_t = t.ln();
                let z = (ln_t - lin) / sigma;
                if censored {
                    let m = normal_hazard(z);
                    (ln_normal_sf(z), m / sigma, m * z)
                } else {
                    (ln_normal_pdf(z) - log_shape - ln_t, z / sigma, z * z - 1.0)
                }
            }
        }
    }

    /// Draw a failure time by inverting the survival function at `u ~ U(0,1)`.
    pub fn quantile_from_survival(self, u: f64, lin: f64, log_shape: f64) -> f64 {
        match self {
            Family::Weibull => {
                let phi = log_shape.exp();
                (-phi * u.ln() * (-lin).exp()).powf(1.0 / phi)
            }
            Family::LogNormal => {
                use statrs::distribution::{ContinuousCDF, Normal};
                let n = Normal::standard();
                (lin + log_shape.exp() * n.inverse_cdf(1.0 - u)).exp()
            }
        }
    }
}

/// A set of `(stratum, arm)` cells sharing one set of outcome parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub cells: Vec<(Stratum, u8)>,
}

impl Group {
    pub fn label(&self) -> String {
        if self.cells.len() == 2 {
            self.cells[0].0.name().to_string()
        } else {
            let (s, z) = self.cells[0];
            format!("{}_z{z}", s.name())
        }
    }
}

/// Outcome parameter groups. With the exclusion restriction the two arms of
/// every stratum whose receipt ignores assignment share one group.
pub fn build_groups(config: &StrataConfig) -> Vec<Group> {
    let mut out = Vec::new();
    for &s in config.active() {
        if config.exclusion_restriction() && s.is_unaffected() {
            out.push(Group {
                cells: vec![(s, 0), (s, 1)],
            });
        } else {
            out.push(Group { cells: vec![(s, 0)] });
            out.push(Group { cells: vec![(s, 1)] });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPart {
    Strata,
    Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Intercept,
    Coefficient(usize),
    LogShape,
}

/// Describes one entry of `theta`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub part: ModelPart,
    /// Stratum name (strata model) or group label (outcome model).
    pub owner: String,
    pub role: Role,
}

/// Strata configuration, outcome family and covariates, plus the derived
/// parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: StrataConfig,
    family: Family,
    covariate_names: Vec<String>,
    groups: Vec<Group>,
    params: Vec<ParamInfo>,
    // per active stratum: offset of eta, None for the reference
    s_offset: Vec<Option<usize>>,
    g_offset: Vec<usize>,
    // per active stratum: group index for z = 0 and z = 1
    group_of: Vec<[usize; 2]>,
}

impl Model {
    pub fn new(config: StrataConfig, family: Family, covariate_names: Vec<String>) -> Self {
        let p = covariate_names.len();
        let groups = build_groups(&config);
        let mut params = Vec::new();
        let mut s_offset = Vec::new();
        for &s in config.active() {
            if s == config.reference() {
                s_offset.push(None);
                continue;
            }
            s_offset.push(Some(params.len()));
            params.push(ParamInfo {
                name: format!("eta[{s}]"),
                part: ModelPart::Strata,
                owner: s.name().into(),
                role: Role::Intercept,
            });
            for (j, c) in covariate_names.iter().enumerate() {
                params.push(ParamInfo {
                    name: format!("xi[{s},{c}]"),
                    part: ModelPart::Strata,
                    owner: s.name().into(),
                    role: Role::Coefficient(j),
                });
            }
        }
        let mut g_offset = Vec::new();
        for g in &groups {
            let label = g.label();
            g_offset.push(params.len());
            params.push(ParamInfo {
                name: format!("{}[{label}]", family.intercept_name()),
                part: ModelPart::Outcome,
                owner: label.clone(),
                role: Role::Intercept,
            });
            for (j, c) in covariate_names.iter().enumerate() {
                params.push(ParamInfo {
                    name: format!("beta[{label},{c}]"),
                    part: ModelPart::Outcome,
                    owner: label.clone(),
                    role: Role::Coefficient(j),
                });
            }
            params.push(ParamInfo {
                name: format!("{}[{label}]", family.shape_name()),
                part: ModelPart::Outcome,
                owner: label,
                role: Role::LogShape,
            });
        }
        let group_of = config
            .active()
            .iter()
            .map(|&s| {
                let find = |z: u8| {
                    groups
                        .iter()
                        .position(|g| g.cells.contains(&(s, z)))
                        .expect("every active cell has a group")
                };
                [find(0), find(1)]
            })
            .collect();
        debug_assert_eq!(params.len(), (config.active().len() - 1) * (1 + p) + groups.len() * (2 + p));
        Self {
            config,
            family,
            covariate_names,
            groups,
            params,
            s_offset,
            g_offset,
            group_of,
        }
    }

    pub fn config(&self) -> &StrataConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn params(&self) -> &[ParamInfo] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Stable fingerprint of the layout (family and ordered parameter names).
    pub fn layout_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.family.name().as_bytes());
        for p in &self.params {
            h.update([0u8]);
            h.update(p.name.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub(crate) fn strata_offset(&self, stratum_idx: usize) -> Option<usize> {
        self.s_offset[stratum_idx]
    }

    pub(crate) fn group_offset(&self, group: usize) -> usize {
        self.g_offset[group]
    }

    pub(crate) fn group_index(&self, stratum_idx: usize, z: u8) -> usize {
        self.group_of[stratum_idx][z as usize]
    }

    pub fn group_of(&self, s: Stratum, z: u8) -> Option<usize> {
        self.config.index_of(s).map(|i| self.group_index(i, z))
    }

    /// Linear predictors of the strata model for every active stratum
    /// (0 for the reference), written into `out`.
    #[inline]
    pub(crate) fn strata_linear(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let p = x.len();
        for (k, off) in self.s_offset.iter().enumerate() {
            out[k] = match *off {
                None => 0.0,
                Some(o) => theta[o] + dot(&theta[o + 1..o + 1 + p], x),
            };
        }
    }

    /// `(linear predictor, log-shape)` of outcome group `g`.
    #[inline]
    pub(crate) fn outcome_linear(&self, theta: &[f64], g: usize, x: &[f64]) -> (f64, f64) {
        let p = x.len();
        let o = self.g_offset[g];
        (theta[o] + dot(&theta[o + 1..o + 1 + p], x), theta[o + 1 + p])
    }

    pub fn unpack(&self, theta: &[f64]) -> Result<Params> {
        if theta.len() != self.dim() {
            return Err(Error::Shape(format!(
                "theta has length {}, layout expects {}",
                theta.len(),
                self.dim()
            )));
        }
        let p = self.n_covariates();
        let k = self.config.active().len();
        let mut eta = vec![0.0; k];
        let mut xi = vec![vec![0.0; p]; k];
        for (i, off) in self.s_offset.iter().enumerate() {
            if let Some(o) = *off {
                eta[i] = theta[o];
                xi[i].copy_from_slice(&theta[o + 1..o + 1 + p]);
            }
        }
        let groups = self
            .g_offset
            .iter()
            .map(|&o| GroupParams {
                intercept: theta[o],
                coef: theta[o + 1..o + 1 + p].to_vec(),
                log_shape: theta[o + 1 + p],
            })
            .collect();
        Ok(Params {
            strata: SModelParams { eta, xi },
            outcome: TModelParams {
                family: self.family,
                groups,
                group_of: self.group_of.clone(),
                strata: self.config.active().to_vec(),
            },
        })
    }

    pub fn pack(&self, params: &Params) -> Result<Vec<f64>> {
        let p = self.n_covariates();
        let mut theta = vec![0.0; self.dim()];
        if params.strata.eta.len() != self.config.active().len()
            || params.outcome.groups.len() != self.groups.len()
        {
            return Err(Error::Shape("parameter structure does not match the layout".into()));
        }
        for (i, off) in self.s_offset.iter().enumerate() {
            if let Some(o) = *off {
                theta[o] = params.strata.eta[i];
                theta[o + 1..o + 1 + p].copy_from_slice(&params.strata.xi[i]);
            }
        }
        for (g, &o) in self.g_offset.iter().enumerate() {
            let gp = &params.outcome.groups[g];
            theta[o] = gp.intercept;
            theta[o + 1..o + 1 + p].copy_from_slice(&gp.coef);
            theta[o + 1 + p] = gp.log_shape;
        }
        Ok(theta)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Strata-model parameters, one entry per active stratum (config order).
/// The reference stratum's entries are identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SModelParams {
    pub eta: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupParams {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub log_shape: f64,
}

impl GroupParams {
    pub fn shape(&self) -> f64 {
        self.log_shape.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TModelParams {
    pub family: Family,
    pub groups: Vec<GroupParams>,
    group_of: Vec<[usize; 2]>,
    strata: Vec<Stratum>,
}

impl TModelParams {
    pub fn group(&self, s: Stratum, z: u8) -> Result<&GroupParams> {
        let i = self
            .strata
            .iter()
            .position(|&a| a == s)
            .ok_or_else(|| Error::Config(format!("stratum {s} is not active")))?;
        Ok(&self.groups[self.group_of[i][z as usize]])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub strata: SModelParams,
    pub outcome: TModelParams,
}

/// `Pr(S = s | x)` for every active stratum, in config order.
pub fn strata_probs(x: &[f64], params: &SModelParams, config: &StrataConfig) -> Result<Vec<f64>> {
    let k = config.active().len();
    if params.eta.len() != k {
        return Err(Error::Shape("strata parameters do not match the configuration".into()));
    }
    let lin: Vec<f64> = (0..k)
        .map(|i| {
            if config.active()[i] == config.reference() {
                0.0
            } else {
                params.eta[i] + dot(&params.xi[i], x)
            }
        })
        .collect();
    if lin.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            unit: None,
            what: "strata linear predictor".into(),
        });
    }
    let lse = log_sum_exp_unchecked(&lin);
    Ok(lin.iter().map(|l| (l - lse).exp()).collect())
}

fn outcome_lin(t: f64, x: &[f64], gp: &GroupParams) -> Result<f64> {
    let lin = gp.intercept + dot(&gp.coef, x);
    if !lin.is_finite() || !gp.log_shape.is_finite() || t.is_nan() {
        return Err(Error::NonFinite {
            unit: None,
            what: "outcome linear predictor".into(),
        });
    }
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    Ok(lin)
}

/// `log Pr(T >= t | S = s, Z = z, x)`.
pub fn log_survival(t: f64, s: Stratum, z: u8, x: &[f64], params: &TModelParams) -> Result<f64> {
    let gp = params.group(s, z)?;
    let lin = outcome_lin(t, x, gp)?;
    Ok(params.family.log_survival(t, lin, gp.log_shape))
}

/// `log Pr(T = t | S = s, Z = z, x)`.
pub fn log_density(t: f64, s: Stratum, z: u8, x: &[f64], params: &TModelParams) -> Result<f64> {
    let gp = params.group(s, z)?;
    let lin = outcome_lin(t, x, gp)?;
    if t == 0.0 {
        return match params.family {
            Family::Weibull if gp.log_shape < 0.0 => {
                Err(Error::Domain("Weibull density diverges at t = 0 when phi < 1".into()))
            }
            Family::Weibull if gp.log_shape == 0.0 => Ok(lin),
            _ => Ok(f64::NEG_INFINITY),
        };
    }
    Ok(params.family.log_density(t, lin, gp.log_shape))
}

/// Gaussian prior scales for the regression coefficients. Intercepts and
/// log-shapes carry flat priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub coefficient_sd: f64,
    pub outcome_coefficient_sd: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            coefficient_sd: 100.0,
            outcome_coefficient_sd: 100.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.coefficient_sd > 0.0) || !(self.outcome_coefficient_sd > 0.0) {
            return Err(Error::Config("prior standard deviations must be positive".into()));
        }
        Ok(())
    }
}

/// Log prior density up to an additive constant.
pub fn log_prior(theta: &[f64], model: &Model, prior: &PriorSpec) -> f64 {
    log_prior_with_grad(theta, model, prior, None)
}

pub(crate) fn log_prior_with_grad(
    theta: &[f64],
    model: &Model,
    prior: &PriorSpec,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let mut lp = 0.0;
    for (i, info) in model.params().iter().enumerate() {
        if let Role::Coefficient(_) = info.role {
            let sd = match info.part {
                ModelPart::Strata => prior.coefficient_sd,
                ModelPart::Outcome => prior.outcome_coefficient_sd,
            };
            let v = theta[i];
            lp -= 0.5 * (v / sd) * (v / sd);
            if let Some(g) = grad.as_deref_mut() {
                g[i] -= v / (sd * sd);
            }
        }
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Stratum::*;

    fn scalar_params(family: Family, intercept: f64, log_shape: f64) -> TModelParams {
        let model = Model::new(StrataConfig::standard(true, true), family, vec![]);
        let mut theta = vec![0.0; model.dim()];
        for g in 0..model.groups().len() {
            let o = model.group_offset(g);
            theta[o] = intercept;
            theta[o + 1] = log_shape;
        }
        model.unpack(&theta).unwrap().outcome
    }

    #[test]
    fn strata_probs_reference_values() {
        let cfg = StrataConfig::standard(true, true);
        let params = SModelParams {
            eta: vec![0.0, 0.87, -0.51],
            xi: vec![vec![]; 3],
        };
        let pr = strata_probs(&[], &params, &cfg).unwrap();
        assert!((pr[0] - 0.2508).abs() < 5e-5);
        assert!((pr[1] - 0.5986).abs() < 5e-5);
        assert!((pr[2] - 0.1506).abs() < 5e-5);
        assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strata_probs_symmetry_and_saturation() {
        let cfg = StrataConfig::standard(true, true);
        let flat = SModelParams {
            eta: vec![0.0; 3],
            xi: vec![vec![0.0]; 3],
        };
        for p in strata_probs(&[2.0], &flat, &cfg).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let sat = SModelParams {
            eta: vec![0.0, 50.0, 0.0],
            xi: vec![vec![]; 3],
        };
        assert!(strata_probs(&[], &sat, &cfg).unwrap()[1] >= 1.0 - 1e-15);
        let bad = SModelParams {
            eta: vec![0.0, f64::NAN, 0.0],
            xi: vec![vec![]; 3],
        };
        assert!(strata_probs(&[], &bad, &cfg).is_err());
    }

    #[test]
    fn weibull_survival_and_density_examples() {
        let tp = scalar_params(Family::Weibull, -3.0, 2f64.ln());
        assert_eq!(log_survival(0.0, Complier, 1, &[], &tp).unwrap(), 0.0);
        let ls = log_survival(1.0, Complier, 1, &[], &tp).unwrap();
        assert!((ls - -0.024_893_534_183_931_97).abs() < 1e-15);
        assert!((ls.exp() - 0.975_413_754_721_786_5).abs() < 1e-15);
        let ld = log_density(1.0, Complier, 1, &[], &tp).unwrap();
        assert!((ld - -3.024_893_534_183_932).abs() < 1e-14);

        let exp1 = scalar_params(Family::Weibull, 0.0, 0.0);
        assert!((log_survival(2.0, NeverTaker, 0, &[], &exp1).unwrap() + 2.0).abs() < 1e-15);
        assert!((log_density(1.0, NeverTaker, 0, &[], &exp1).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn density_at_zero() {
        let sub = scalar_params(Family::Weibull, 0.0, -0.5);
        assert!(log_density(0.0, Complier, 0, &[], &sub).is_err());
        let exp1 = scalar_params(Family::Weibull, 0.3, 0.0);
        assert_eq!(log_density(0.0, Complier, 0, &[], &exp1).unwrap(), 0.3);
    }

    // Gauss-Legendre on a mapped half line; independent of the model code.
    fn integrate_density(f: impl Fn(f64) -> f64) -> f64 {
        // t = s / (1 - s), s in (0, 1)
        let n = 200_000;
        let h = 1.0 / n as f64;
        (0..n)
            .map(|i| {
                let s = (i as f64 + 0.5) * h;
                let t = s / (1.0 - s);
                f(t) / ((1.0 - s) * (1.0 - s)) * h
            })
            .sum()
    }

    #[test]
    fn densities_integrate_to_one() {
        for (family, a, ls) in [
            (Family::Weibull, -1.0, 0.3f64),
            (Family::Weibull, 0.5, 0.0),
            (Family::Weibull, -2.0, 0.8),
            (Family::LogNormal, 1.2, 0.4f64.ln()),
            (Family::LogNormal, 0.0, 0.5f64.ln()),
        ] {
            let tp = scalar_params(family, a, ls);
            let total =
                integrate_density(|t| log_density(t, Complier, 0, &[], &tp).unwrap().exp());
            assert!((total - 1.0).abs() < 1e-6, "{family:?} a={a} ls={ls}: {total}");
        }
    }

    #[test]
    fn density_is_derivative_of_cdf() {
        for family in [Family::Weibull, Family::LogNormal] {
            let tp = scalar_params(family, 0.2, -0.3);
            let h = 1e-5;
            for t in [0.1, 0.5, 1.0, 2.5] {
                let cdf = |t: f64| 1.0 - log_survival(t, Complier, 1, &[], &tp).unwrap().exp();
                let fd = (cdf(t + h) - cdf(t - h)) / (2.0 * h);
                let dens = log_density(t, Complier, 1, &[], &tp).unwrap().exp();
                assert!((fd - dens).abs() / dens < 1e-4, "{family:?} t={t}");
            }
        }
    }

    #[test]
    fn group_counts() {
        assert_eq!(build_groups(&StrataConfig::standard(true, true)).len(), 4);
        assert_eq!(build_groups(&StrataConfig::standard(true, false)).len(), 6);
        assert_eq!(build_groups(&StrataConfig::standard(false, false)).len(), 8);
        // defiers are affected by assignment, so never tied
        assert_eq!(build_groups(&StrataConfig::standard(false, true)).len(), 6);
    }

    #[test]
    fn layout_lengths() {
        for mono in [true, false] {
            for er in [true, false] {
                for p in 0..3 {
                    let cfg = StrataConfig::standard(mono, er);
                    let names = (0..p).map(|j| format!("x{j}")).collect();
                    let m = Model::new(cfg.clone(), Family::Weibull, names);
                    let k = cfg.active().len();
                    let g = build_groups(&cfg).len();
                    assert_eq!(m.dim(), (k - 1) * (1 + p) + g * (2 + p));
                }
            }
        }
    }

    #[test]
    fn er_ties_are_shared() {
        let m = Model::new(StrataConfig::standard(true, true), Family::Weibull, vec!["x".into()]);
        let theta: Vec<f64> = (0..m.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let tp = m.unpack(&theta).unwrap().outcome;
        for t in [0.3, 1.0, 4.0] {
            for s in [AlwaysTaker, NeverTaker] {
                let a = log_survival(t, s, 0, &[0.7], &tp).unwrap();
                let b = log_survival(t, s, 1, &[0.7], &tp).unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn log_prior_examples() {
        let m = Model::new(StrataConfig::standard(true, true), Family::Weibull, vec!["x".into()]);
        let prior = PriorSpec::default();
        let zero = vec![0.0; m.dim()];
        let base = log_prior(&zero, &m, &prior);
        let mut one = zero.clone();
        let xi_idx = m.params().iter().position(|p| p.name.starts_with("xi[")).unwrap();
        one[xi_idx] = prior.coefficient_sd;
        assert!((base - log_prior(&one, &m, &prior) - 0.5).abs() < 1e-15);

        let m0 = Model::new(StrataConfig::standard(true, false), Family::Weibull, vec![]);
        let a: Vec<f64> = (0..m0.dim()).map(|i| i as f64).collect();
        assert_eq!(log_prior(&a, &m0, &prior), log_prior(&vec![0.0; m0.dim()], &m0, &prior));
    }

    #[test]
    fn weibull_inverse_cdf_fixed_u() {
        let t = Family::Weibull.quantile_from_survival((-1f64).exp(), 0.0, 0.0);
        assert!((t - 1.0).abs() < 1e-15);
    }

    mod props {
        use super::super::*;
        use crate::data::StrataConfig;
        use proptest::prelude::*;

        fn configs() -> impl Strategy<Value = StrataConfig> {
            (any::<bool>(), any::<bool>()).prop_map(|(m, e)| StrataConfig::standard(m, e))
        }

        proptest! {
            #[test]
            fn pack_unpack_identity(cfg in configs(), p in 0usize..4, seed in any::<u64>()) {
                let names = (0..p).map(|j| format!("x{j}")).collect();
                let m = Model::new(cfg, Family::Weibull, names);
                let mut s = seed;
                let theta: Vec<f64> = (0..m.dim()).map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    f64::from_bits((s >> 12) | 0x3ff0_0000_0000_0000) - 1.5
                }).collect();
                let back = m.pack(&m.unpack(&theta).unwrap()).unwrap();
                prop_assert_eq!(
                    back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
            }

            #[test]
            fn strata_probs_sum_to_one(
                x in prop::collection::vec(-3.0f64..3.0, 2),
                eta in prop::collection::vec(-8.0f64..8.0, 4),
                xi in prop::collection::vec(-2.0f64..2.0, 8),
                mono in any::<bool>(),
            ) {
                let cfg = StrataConfig::standard(mono, false);
                let k = cfg.active().len();
                let mut e = eta[..k].to_vec();
                e[0] = 0.0;
                let mut xs: Vec<Vec<f64>> = xi.chunks(2).take(k).map(|c| c.to_vec()).collect();
                xs[0] = vec![0.0, 0.0];
                let pr = strata_probs(&x, &SModelParams { eta: e, xi: xs }, &cfg).unwrap();
                prop_assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(pr.iter().all(|&p| p > 0.0));
            }

            #[test]
            fn survival_nonincreasing(t in 0.0f64..20.0, dt in 0.0f64..5.0, a in -3.0f64..1.0, ls in -1.0f64..1.0) {
                for family in [Family::Weibull, Family::LogNormal] {
                    let s1 = family.log_survival(t, a, ls);
                    let s2 = family.log_survival(t + dt, a, ls);
                    prop_assert!(s2 <= s1 + 1e-15);
                    prop_assert!(s1 <= 0.0);
                }
            }
        }
    }
}
