//! χ² distribution functions and Kolmogorov–Smirnov distances.
//!
//! The regularized incomplete gamma function is evaluated by its power
//! series below `x = a + 1` and by a Lentz continued fraction above, with
//! the `x^a e^{-x} / Γ(a)` prefactor computed in log space through a
//! Stirling remainder so that degrees of freedom in the hundreds of
//! thousands keep full relative precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Survival probabilities below this are reported as this value.
pub const TAIL_FLOOR: f64 = 1e-300;

const EPS: f64 = 1e-15;
const MAX_ITER: usize = 1_000_000;

/// χ² distribution with a positive integer number of degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChiSquare {
    dof: u64,
}

impl ChiSquare {
    pub fn new(dof: u64) -> Result<Self> {
        if dof == 0 {
            return Err(Error::Config("χ² needs at least one degree of freedom".into()));
        }
        Ok(Self { dof })
    }

    pub fn dof(&self) -> u64 {
        self.dof
    }

    fn shape(&self) -> f64 {
        self.dof as f64 / 2.0
    }

    pub fn mean(&self) -> f64 {
        self.dof as f64
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.dof as f64
    }

    /// Upper tail `P(χ² ≥ x)`, floored at [`TAIL_FLOOR`].
    pub fn survival(&self, x: f64) -> Result<f64> {
        check_arg(x)?;
        let (_, q) = regularized_gamma(self.shape(), x / 2.0);
        Ok(q.clamp(TAIL_FLOOR, 1.0))
    }

    /// Lower tail `P(χ² ≤ x)`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        check_arg(x)?;
        let (p, _) = regularized_gamma(self.shape(), x / 2.0);
        Ok(p.clamp(0.0, 1.0))
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        check_arg(x)?;
        let a = self.shape();
        if x == 0.0 {
            return match self.dof {
                1 => Err(Error::Config("χ²(1) density is singular at 0".into())),
                2 => Ok(0.5),
                _ => Ok(0.0),
            };
        }
        Ok(((a - 1.0) * x.ln() - x / 2.0 - a * std::f64::consts::LN_2 - ln_gamma(a)).exp())
    }

    /// Smallest `x` with `cdf(x) ≥ p`, for `p` in `(0, 1)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("quantile level {p} outside (0, 1)")));
        }
        let f = |x: f64| self.cdf(x).map(|c| c - p);
        let (mut lo, mut hi) = (0.0, self.mean().max(1.0));
        while f(hi)? < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let fx = f(x)?;
            if fx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            // Newton step when it stays inside the bracket, bisection otherwise
            let slope = if x > 0.0 { self.density(x)? } else { 0.0 };
            let newton = if slope > 0.0 { x - fx / slope } else { f64::NAN };
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= 1e-15 * hi {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }
}

fn check_arg(x: f64) -> Result<()> {
    if x.is_nan() || x < 0.0 || x.is_infinite() {
        return Err(Error::Config(format!("χ² argument must be finite and nonnegative, got {x}")));
    }
    Ok(())
}

/// Upper tail of χ²(`dof`) at `x`.
pub fn survival(dof: u64, x: f64) -> Result<f64> {
    ChiSquare::new(dof)?.survival(x)
}

pub fn density(dof: u64, x: f64) -> Result<f64> {
    ChiSquare::new(dof)?.density(x)
}

/// Standard normal CDF, via `erfc(t) = Q(1/2, t²)`.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let (_, q) = regularized_gamma(0.5, x * x / 2.0);
    if x < 0.0 {
        0.5 * q
    } else {
        1.0 - 0.5 * q
    }
}

/// Two-sided Kolmogorov–Smirnov distance between a sorted sample and a CDF.
pub fn ks_distance_with<F>(sorted: &[f64], cdf: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if sorted.is_empty() {
        return Err(Error::Config("KS distance of an empty sample".into()));
    }
    if sorted.windows(2).any(|w| w[0].is_nan() || w[1].is_nan() || w[0] > w[1]) {
        return Err(Error::Config("KS sample must be sorted and free of NaN".into()));
    }
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x)?;
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// KS distance of a sorted sample to χ²(`dof`).
pub fn ks_distance(sorted: &[f64], dof: u64) -> Result<f64> {
    let chi = ChiSquare::new(dof)?;
    ks_distance_with(sorted, |x| if x < 0.0 { Ok(0.0) } else { chi.cdf(x) })
}

/// KS distance of a sorted sample to the standard normal.
pub fn ks_distance_normal(sorted: &[f64]) -> Result<f64> {
    ks_distance_with(sorted, |x| Ok(normal_cdf(x)))
}

/// Asymptotic two-sided KS critical value `c(α) / √n` for the levels the
/// experiments use (10%, 5%, 1%).
pub fn ks_critical_value(n: usize, alpha: f64) -> Result<f64> {
    let c = if (alpha - 0.01).abs() < 1e-12 {
        1.63
    } else if (alpha - 0.05).abs() < 1e-12 {
        1.36
    } else if (alpha - 0.10).abs() < 1e-12 {
        1.22
    } else {
        return Err(Error::Config(format!("no tabulated KS constant for α = {alpha}")));
    };
    if n == 0 {
        return Err(Error::Config("KS critical value for an empty sample".into()));
    }
    Ok(c / (n as f64).sqrt())
}

/// `(P(a, x), Q(a, x))`, the regularized lower and upper incomplete gamma
/// functions, for `a > 0` and `x ≥ 0`. Their sum is one by construction.
pub(crate) fn regularized_gamma(a: f64, x: f64) -> (f64, f64) {
    if x == 0.0 {
        return (0.0, 1.0);
    }
    if x < a + 1.0 {
        let p = lower_series(a, x).clamp(0.0, 1.0);
        (p, 1.0 - p)
    } else {
        let q = upper_fraction(a, x).clamp(0.0, 1.0);
        (1.0 - q, q)
    }
}

fn lower_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (ln_prefactor(a, x) + sum.ln()).exp()
}

fn upper_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
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
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (ln_prefactor(a, x) + h.ln()).exp()
}

/// `ln(x^a e^{-x} / Γ(a))`.
fn ln_prefactor(a: f64, x: f64) -> f64 {
    if a < STIRLING_MIN {
        return a * x.ln() - x - ln_gamma(a);
    }
    // a ln(x/a) + a - x = a (ln(1 + e) - e) with e = (x - a) / a
    let e = (x - a) / a;
    a * (e.ln_1p() - e) + 0.5 * (a / (2.0 * std::f64::consts::PI)).ln() - stirling_remainder(a)
}

const STIRLING_MIN: f64 = 15.0;

/// `ln Γ(a) - [(a - 1/2) ln a - a + ln(2π)/2]` for `a ≥ 15`.
fn stirling_remainder(a: f64) -> f64 {
    let r = 1.0 / a;
    let r2 = r * r;
    r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 * (1.0 / 1680.0 - r2 / 1188.0))))
}

/// `ln Γ(a)` for `a > 0`: shift upward by the recurrence until the Stirling
/// series is accurate to double precision.
pub(crate) fn ln_gamma(a: f64) -> f64 {
    let mut shift = 0.0;
    let mut z = a;
    while z < STIRLING_MIN {
        shift += z.ln();
        z += 1.0;
    }
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + stirling_remainder(z) - shift
}
