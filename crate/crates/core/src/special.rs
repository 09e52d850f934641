//! Scalar numerics shared by the likelihood and the estimands: log-sum-exp,
//! log-gamma, the regularized lower incomplete gamma function and uniform-grid
//! quadrature.

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log(sum(exp(values)))` without overflow.
///
/// All `-inf` entries give `-inf`; an empty slice is an error.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("log_sum_exp of an empty slice".into()));
    }
    Ok(log_sum_exp_unchecked(values))
}

#[inline]
pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

// Stirling series coefficients B_{2k} / (2k (2k-1)).
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// Natural log of the gamma function for `a > 0`.
pub fn ln_gamma(a: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires a > 0, got {a}")));
    }
    Ok(ln_gamma_unchecked(a))
}

pub(crate) fn ln_gamma_unchecked(a: f64) -> f64 {
    // Shift into the Stirling regime, then undo with the recurrence.
    let mut x = a;
    let mut shift = 0.0;
    if x < 10.0 {
        let mut prod = 1.0;
        while x < 10.0 {
            prod *= x;
            x += 1.0;
            // keep the running product well inside f64 range
            if prod > 1e250 {
                shift += prod.ln();
                prod = 1.0;
            }
        }
        shift += prod.ln();
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv;
    for c in STIRLING {
        series += c * pow;
        pow *= inv2;
    }
    (x - 0.5) * x.ln() - x + LN_SQRT_2PI + series - shift
}

const INC_GAMMA_EPS: f64 = 1e-16;
const INC_GAMMA_MAX_ITER: usize = 10_000;

/// Regularized lower incomplete gamma `P(a, x) = γ(a, x) / Γ(a)`.
pub fn reg_lower_inc_gamma(a: f64, x: f64) -> Result<f64> {
    check_inc_gamma_domain(a, x)?;
    Ok(ln_reg_lower_inc_gamma_unchecked(a, x).exp())
}

/// `ln P(a, x)`, accurate where `P` itself would underflow.
pub fn ln_reg_lower_inc_gamma(a: f64, x: f64) -> Result<f64> {
    check_inc_gamma_domain(a, x)?;
    Ok(ln_reg_lower_inc_gamma_unchecked(a, x))
}

/// Unregularized lower incomplete gamma `γ(a, x) = P(a, x) Γ(a)`.
pub fn lower_inc_gamma(a: f64, x: f64) -> Result<f64> {
    check_inc_gamma_domain(a, x)?;
    Ok((ln_reg_lower_inc_gamma_unchecked(a, x) + ln_gamma_unchecked(a)).exp())
}

fn check_inc_gamma_domain(a: f64, x: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("incomplete gamma requires a > 0, got {a}")));
    }
    if !(x >= 0.0) || x.is_nan() {
        return Err(Error::Domain(format!("incomplete gamma requires x >= 0, got {x}")));
    }
    Ok(())
}

pub(crate) fn ln_reg_lower_inc_gamma_unchecked(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if x < a + 1.0 {
        // P = x^a e^{-x} / Γ(a+1) * Σ x^n / ((a+1)...(a+n))
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut ap = a;
        for _ in 0..INC_GAMMA_MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * INC_GAMMA_EPS {
                break;
            }
        }
        a * x.ln() - x - ln_gamma_unchecked(a + 1.0) + sum.ln()
    } else {
        let ln_q = ln_upper_cf(a, x);
        (-ln_q.exp()).ln_1p()
    }
}

/// `ln Q(a, x)` by the modified Lentz continued fraction, valid for x >= a + 1.
fn ln_upper_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..INC_GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < INC_GAMMA_EPS {
            break;
        }
    }
    a * x.ln() - x - ln_gamma_unchecked(a) + h.ln()
}

/// `K + 1` equally spaced nodes `u_k = (k / K) t` on `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    t_end: f64,
    k: usize,
}

impl QuadratureGrid {
    pub fn new(t_end: f64, k: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Domain(format!("quadrature grid needs t_end > 0, got {t_end}")));
        }
        if k == 0 {
            return Err(Error::Domain("quadrature grid needs k >= 1".into()));
        }
        Ok(Self { t_end, k })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Number of subintervals.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.k {
            self.t_end
        } else {
            (i as f64 / self.k as f64) * self.t_end
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.k).map(|i| self.node(i)).collect()
    }
}

/// Which composite rule to apply on a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Trapezoid,
    Simpson,
}

impl Rule {
    pub fn integrate(self, values: &[f64], grid: &QuadratureGrid) -> Result<f64> {
        match self {
            Rule::Trapezoid => trapezoid(values, grid),
            Rule::Simpson => simpson(values, grid),
        }
    }
}

/// `(t / K) Σ_{k=1..K} ½ (v_{k-1} + v_k)`.
pub fn trapezoid(values: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    check_len(values, grid)?;
    let sum: f64 = values.windows(2).map(|w| 0.5 * w[0] + 0.5 * w[1]).sum();
    Ok(grid.t_end / grid.k as f64 * sum)
}

/// Composite Simpson rule; `grid.k()` must be even.
pub fn simpson(values: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    check_len(values, grid)?;
    if grid.k % 2 != 0 {
        return Err(Error::Domain(format!("simpson needs an even number of subintervals, got {}", grid.k)));
    }
    let mut odd = 0.0;
    let mut even = 0.0;
    for (i, &v) in values.iter().enumerate().take(grid.k).skip(1) {
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    let h = grid.t_end / grid.k as f64;
    Ok(h / 3.0 * (values[0] + 4.0 * odd + 2.0 * even + values[grid.k]))
}

fn check_len(values: &[f64], grid: &QuadratureGrid) -> Result<()> {
    if values.len() != grid.k + 1 {
        return Err(Error::Shape(format!(
            "expected {} values on the grid, got {}",
            grid.k + 1,
            values.len()
        )));
    }
    Ok(())
}

/// `ln Φc(z)` for the standard normal, stable far into the upper tail.
pub(crate) fn ln_normal_sf(z: f64) -> f64 {
    if z < 30.0 {
        (0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let z2 = z * z;
        let corr = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - z.ln() - LN_SQRT_2PI + corr.ln()
    }
}

/// `φ(z) / Φc(z)`, the inverse Mills ratio.
pub(crate) fn normal_hazard(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI - ln_normal_sf(z)).exp()
}

#[inline]
pub(crate) fn ln_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}
