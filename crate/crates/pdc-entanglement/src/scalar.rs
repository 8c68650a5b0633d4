//! Scalar abstraction and shared log-factorial table.

use std::sync::OnceLock;

/// Floating-point scalar for the numeric pipeline.
///
/// Bounding on `nalgebra::RealField` (rather than `num_traits::Float`) keeps
/// transcendental method calls unambiguous while still allowing generic
/// matrix decompositions.
pub trait Scalar: nalgebra::RealField + num_traits::FromPrimitive + Copy {}

impl<T: nalgebra::RealField + num_traits::FromPrimitive + Copy> Scalar for T {}

/// Lifts an `f64` constant or intermediate into `S`.
#[inline]
pub fn real<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 value converts into the scalar type")
}

/// Rounds back to `f64`, for reporting and error payloads.
#[inline]
pub fn to_f64<S: Scalar>(x: S) -> f64 {
    nalgebra::try_convert(x).unwrap_or(f64::NAN)
}

/// Largest n with a tabulated ln(n!). Series indices past this are treated as
/// non-convergence, not a panic.
pub(crate) const LN_FACTORIAL_LIMIT: usize = 1 << 16;

static LN_FACTORIAL: OnceLock<Vec<f64>> = OnceLock::new();

fn table() -> &'static [f64] {
    LN_FACTORIAL.get_or_init(|| {
        let mut t = Vec::with_capacity(LN_FACTORIAL_LIMIT);
        t.push(0.0);
        // Kahan summation: the table is built once and differences of nearby
        // entries must stay accurate to ~1e-12 absolute.
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for k in 1..LN_FACTORIAL_LIMIT {
            let y = (k as f64).ln() - comp;
            let s = sum + y;
            comp = (s - sum) - y;
            sum = s;
            t.push(sum);
        }
        t
    })
}

/// ln(n!), or `None` past the table.
#[inline]
pub(crate) fn ln_factorial(n: i64) -> Option<f64> {
    debug_assert!(n >= 0);
    table().get(n as usize).copied()
}

/// ln(n!) for small n where the table is guaranteed to cover.
#[inline]
pub(crate) fn ln_factorial_small(n: i64) -> f64 {
    ln_factorial(n).expect("factorial argument within table")
}

/// ln of the binomial coefficient C(n, k).
#[inline]
pub(crate) fn ln_binomial(n: i64, k: i64) -> f64 {
    debug_assert!((0..=n).contains(&k));
    ln_factorial_small(n) - ln_factorial_small(k) - ln_factorial_small(n - k)
}
