//! Joint photon-count probabilities of the lossy two-arm down-conversion
//! state, and the model parameters they depend on.
//!
//! The probability of detecting `(a_h, a_v)` photons on arm a and
//! `(b_h, b_v)` on arm b is a double series over the pair numbers of the two
//! underlying squeezers. With A = alpha + beta and xi = (1-eta) tanh(tau):
//!
//! ```text
//! p = (eta/(1-eta))^A / (cosh^4 tau * a_h! a_v! b_h! b_v!)
//!     * sum_{m >= m0, n >= n0} xi^(2(m+n)) (m! n!)^2
//!       / ((m-a_h)! (m-b_v)! (n-a_v)! (n-b_h)!)
//! ```
//!
//! with m0 = max(a_h, b_v), n0 = max(a_v, b_h). Every factor is folded into
//! one exponent per term so the limits eta -> 0, eta -> 1, tau -> 0 need no
//! special casing: each term carries eta^A (1-eta)^(2(m+n)-A) tanh^(2(m+n))
//! with all three exponents nonnegative.
//!
//! The series is summed by anti-diagonals m + n = s. Truncation is accepted
//! only once a certified bound on the remaining tail drops below
//! `series_eps` times the partial sum; the bound comes from factorizing the
//! terms as f(m) g(n) and closing each single series geometrically where its
//! term ratio has fallen toward its limit xi^2 < 1.

use serde::Serialize;

use crate::blocks::BlockLabel;
use crate::scalar::{ln_factorial, real, Scalar};
use crate::{Error, Result};

/// Fixed ceiling on the anti-diagonal index; the log-factorial table is twice
/// this size, so hitting the ceiling is reported before the table runs out.
const MAX_DIAGONAL: i64 = 32_000;

/// Structurally zero diagonals (a zero base raised to a positive power) occur
/// with growing exponents, so they never turn nonzero again; three in a row
/// end the scan.
const ZERO_RUN_LIMIT: u32 = 3;

/// Transmission and squeezing parameters, validated at construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    eta: f64,
    tau: f64,
    series_eps: f64,
    corrupt_prefactor: bool,
}

impl ModelParams {
    pub const DEFAULT_SERIES_EPS: f64 = 1e-14;

    /// Transmittivity `eta` in [0, 1] and interaction time `tau >= 0`.
    pub fn new(eta: f64, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) || !eta.is_finite() {
            return Err(Error::InvalidParams(format!(
                "transmittivity must lie in [0, 1], got {eta}"
            )));
        }
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::InvalidParams(format!(
                "interaction time must be finite and nonnegative, got {tau}"
            )));
        }
        if tau.tanh() >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "interaction time {tau} saturates tanh at working precision; \
                 the count series would not converge"
            )));
        }
        Ok(ModelParams {
            eta,
            tau,
            series_eps: Self::DEFAULT_SERIES_EPS,
            corrupt_prefactor: false,
        })
    }

    /// Parametrize by the mean photon number N = 2 sinh^2(tau) of one arm
    /// before loss.
    pub fn from_mean_photons(eta: f64, n_mean: f64) -> Result<Self> {
        if !n_mean.is_finite() || n_mean < 0.0 {
            return Err(Error::InvalidParams(format!(
                "mean photon number must be finite and nonnegative, got {n_mean}"
            )));
        }
        Self::new(eta, (n_mean / 2.0).sqrt().asinh())
    }

    /// A representative (eta, tau) pair realizing the given xi. The block
    /// weights depend on the parameters only through xi = (1-eta) tanh(tau),
    /// so any section of the level set works; this one keeps tanh(tau)
    /// comfortably away from 0 and 1.
    pub fn from_xi(xi: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&xi) {
            return Err(Error::InvalidParams(format!(
                "xi must lie in [0, 1), got {xi}"
            )));
        }
        let tanh_tau = xi.sqrt().max(0.5);
        Self::new(1.0 - xi / tanh_tau, tanh_tau.atanh())
    }

    pub fn with_series_eps(mut self, series_eps: f64) -> Result<Self> {
        if !(series_eps > 0.0 && series_eps < 1e-2) {
            return Err(Error::InvalidParams(format!(
                "series tolerance must lie in (0, 1e-2), got {series_eps}"
            )));
        }
        self.series_eps = series_eps;
        Ok(self)
    }

    /// Debug switch selecting a deliberately wrong count formula (prefactor
    /// eta^A (1-eta)^A instead of (eta/(1-eta))^A, i.e. every probability
    /// multiplied by (1-eta)^(2A)). Exists as a negative control: it breaks
    /// normalization and the oracle cross-check while leaving eta = 0
    /// behavior intact.
    pub fn with_corrupt_prefactor(mut self, corrupt: bool) -> Self {
        self.corrupt_prefactor = corrupt;
        self
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn series_eps(&self) -> f64 {
        self.series_eps
    }

    pub fn corrupt_prefactor(&self) -> bool {
        self.corrupt_prefactor
    }

    /// xi = (1 - eta) tanh(tau), the single parameter the normalized block
    /// weights depend on.
    pub fn xi(&self) -> f64 {
        (1.0 - self.eta) * self.tau.tanh()
    }

    /// Mean photon number per arm before loss, N = 2 sinh^2(tau).
    pub fn mean_photons(&self) -> f64 {
        2.0 * self.tau.sinh().powi(2)
    }
}

/// Photon counts per arm and polarization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct FockCount {
    pub a_h: u32,
    pub a_v: u32,
    pub b_h: u32,
    pub b_v: u32,
}

impl FockCount {
    pub fn alpha(&self) -> u32 {
        self.a_h + self.a_v
    }

    pub fn beta(&self) -> u32 {
        self.b_h + self.b_v
    }

    pub fn block(&self) -> BlockLabel {
        BlockLabel::new(self.alpha(), self.beta())
    }
}

/// `exp * ln(base)` with exact-zero semantics: a zero base with a positive
/// exponent makes the whole term zero (None), and exponent 0 contributes
/// nothing even at base 0.
fn ln_pow(base: f64, exp: i64) -> Option<f64> {
    if exp == 0 {
        Some(0.0)
    } else if base == 0.0 {
        None
    } else {
        Some(exp as f64 * base.ln())
    }
}

/// ln cosh(tau) without overflowing cosh itself.
fn ln_cosh(tau: f64) -> f64 {
    tau + (-2.0 * tau).exp().ln_1p() - std::f64::consts::LN_2
}

/// Upper bound on `sum_{m >= start} exp(2 m ln_xi + 2 lf(m) - lf(m-a) - lf(m-b))`.
///
/// The term ratio xi^2 (m+1)^2 / ((m+1-a)(m+1-b)) decreases monotonically to
/// xi^2 < 1, so the series is summed explicitly until the ratio falls below
/// (1 + xi^2)/2 and closed with a geometric bound from there. None if the
/// factorial table is exhausted first.
fn factored_series_bound(ln_xi: f64, a: i64, b: i64, start: i64, xi2: f64) -> Option<f64> {
    let cap = 0.5 * (1.0 + xi2);
    let mut m = start.max(a).max(b);
    let mut partial = 0.0;
    loop {
        let t = (2.0 * m as f64 * ln_xi + 2.0 * ln_factorial(m)?
            - ln_factorial(m - a)?
            - ln_factorial(m - b)?)
            .exp();
        let next = (m + 1) as f64;
        let ratio = xi2 * (next / (next - a as f64)) * (next / (next - b as f64));
        if ratio <= cap {
            return Some(partial + t / (1.0 - ratio));
        }
        partial += t;
        m += 1;
    }
}

struct SeriesShape {
    /// Diagonal-independent log factor, holding eta^A, 1/cosh^4 and the
    /// count factorials. None when eta = 0 with A > 0 (probability exactly 0).
    ln_base: Option<f64>,
    a_tot: i64,
    m0: i64,
    n0: i64,
    a_h: i64,
    a_v: i64,
    b_h: i64,
    b_v: i64,
}

fn series_shape(params: &ModelParams, count: FockCount) -> Result<SeriesShape> {
    let (a_h, a_v) = (i64::from(count.a_h), i64::from(count.a_v));
    let (b_h, b_v) = (i64::from(count.b_h), i64::from(count.b_v));
    let a_tot = a_h + a_v + b_h + b_v;
    let ln_counts = [a_h, a_v, b_h, b_v]
        .into_iter()
        .try_fold(0.0, |acc, k| Some(acc + ln_factorial(k)?))
        .ok_or_else(|| {
            Error::InvalidParams(format!("photon count too large for factorial table: {count:?}"))
        })?;
    let ln_base = ln_pow(params.eta, a_tot).map(|ln_eta| ln_eta - 4.0 * ln_cosh(params.tau) - ln_counts);
    Ok(SeriesShape {
        ln_base,
        a_tot,
        m0: a_h.max(b_v),
        n0: a_v.max(b_h),
        a_h,
        a_v,
        b_h,
        b_v,
    })
}

/// Certified upper bound on the series tail beyond the anti-diagonal s, i.e.
/// on the sum of all terms with m + n > s (already including the prefactor).
fn certified_tail_bound(params: &ModelParams, shape: &SeriesShape, s: i64) -> Option<f64> {
    let xi = params.xi();
    if xi == 0.0 {
        return Some(0.0);
    }
    let ln_xi = xi.ln();
    let xi2 = xi * xi;
    // {m + n > s} is covered by {m >= c} union {n >= c} with c = ceil((s+1)/2).
    let c = (s + 2) / 2;
    let f_top = factored_series_bound(ln_xi, shape.a_h, shape.b_v, c.max(shape.m0), xi2)?;
    let g_all = factored_series_bound(ln_xi, shape.a_v, shape.b_h, shape.n0, xi2)?;
    let f_all = factored_series_bound(ln_xi, shape.a_h, shape.b_v, shape.m0, xi2)?;
    let g_top = factored_series_bound(ln_xi, shape.a_v, shape.b_h, c.max(shape.n0), xi2)?;
    let ln_base = shape.ln_base?;
    // Undo the xi^(2(m+n)) double count: the factored pieces carry xi^2m and
    // xi^2n, while ln_base carries eta^A / cosh^4; the remaining
    // (1-eta)^(-A) converts eta^A into (eta/(1-eta))^A.
    let k = (ln_base - ln_pow(1.0 - params.eta, shape.a_tot)?).exp();
    Some(k * (f_top * g_all + f_all * g_top))
}

fn joint_count_probability_f64(params: &ModelParams, count: FockCount) -> Result<f64> {
    let shape = series_shape(params, count)?;
    let Some(ln_base) = shape.ln_base else {
        // eta = 0 with photons detected.
        return Ok(0.0);
    };
    let tanh_tau = params.tau.tanh();
    let one_minus_eta = 1.0 - params.eta;
    let eps = params.series_eps;

    let lf = |k: i64| {
        ln_factorial(k).ok_or_else(|| {
            Error::SeriesDivergence(format!(
                "factorial table exhausted while summing counts {count:?}"
            ))
        })
    };

    let mut total = 0.0;
    let mut zero_run = 0u32;
    let mut s = shape.m0 + shape.n0;
    let result = loop {
        if s - shape.m0 - shape.n0 > MAX_DIAGONAL {
            return Err(Error::SeriesDivergence(format!(
                "count series did not converge within {MAX_DIAGONAL} anti-diagonals \
                 (eta={}, tau={})",
                params.eta, params.tau
            )));
        }
        // Per-diagonal constants: (1-eta)^(2s-A) tanh^(2s), both with
        // nonnegative exponents.
        let diag_ln = ln_pow(one_minus_eta, 2 * s - shape.a_tot)
            .and_then(|x| Some(x + ln_pow(tanh_tau, 2 * s)?));
        match diag_ln {
            None => {
                zero_run += 1;
                if zero_run >= ZERO_RUN_LIMIT {
                    break total;
                }
            }
            Some(diag_ln) => {
                zero_run = 0;
                let mut diag = 0.0;
                for m in shape.m0..=(s - shape.n0) {
                    let n = s - m;
                    let ln_term = ln_base + diag_ln + 2.0 * lf(m)? + 2.0 * lf(n)?
                        - lf(m - shape.a_h)?
                        - lf(m - shape.b_v)?
                        - lf(n - shape.a_v)?
                        - lf(n - shape.b_h)?;
                    diag += ln_term.exp();
                }
                total += diag;
                if total > 0.0 && diag <= eps * total {
                    if let Some(tail) = certified_tail_bound(params, &shape, s) {
                        if tail <= eps * total {
                            break total;
                        }
                    }
                }
            }
        }
        s += 1;
    };

    let result = if params.corrupt_prefactor {
        result * one_minus_eta.powi(2 * shape.a_tot as i32)
    } else {
        result
    };
    Ok(result.min(1.0))
}

/// Probability of one joint photon-count outcome.
pub fn joint_count_probability<S: Scalar>(params: &ModelParams, count: FockCount) -> Result<S> {
    // The series is evaluated in f64, where the log-factorial table lives,
    // and converted at the boundary.
    Ok(real(joint_count_probability_f64(params, count)?))
}

/// P(alpha, beta): total probability of the (alpha, beta) block, summed over
/// its (alpha+1)(beta+1) polarization splits.
pub fn block_probability<S: Scalar>(params: &ModelParams, block: BlockLabel) -> Result<S> {
    let mut total = S::zero();
    for a_h in 0..=block.alpha {
        for b_h in 0..=block.beta {
            total += joint_count_probability::<S>(
                params,
                FockCount {
                    a_h,
                    a_v: block.alpha - a_h,
                    b_h,
                    b_v: block.beta - b_h,
                },
            )?;
        }
    }
    Ok(total)
}

/// Probability that a single squeezer pair number exceeds `n_cutoff` before
/// loss. The distribution is (n+1) x^n (1-x)^2 with x = tanh^2(tau), whose
/// tail sums in closed form to x^(N+1) ((N+2) - (N+1) x).
pub fn pair_number_tail(tau: f64, n_cutoff: u32) -> f64 {
    let x = tau.tanh().powi(2);
    let n = f64::from(n_cutoff);
    x.powi(n_cutoff as i32 + 1) * ((n + 2.0) - (n + 1.0) * x)
}
