//! Half-integer spin bookkeeping, Clebsch-Gordan coefficients, and total-spin
//! projectors on two-arm photon-number blocks.
//!
//! Spins are stored as doubled integers so that every label is exact. A block
//! with `alpha` photons on arm a and `beta` on arm b carries spins
//! `j_a = alpha/2`, `j_b = beta/2`; the occupation `(n_h, n_v)` of one arm maps
//! to `j = (n_h + n_v)/2`, `m = (n_h - n_v)/2`.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::blocks::BlockLabel;
use crate::scalar::{ln_factorial_small, real, Scalar};
use crate::{Error, Result};

/// Half-integer stored as its doubled value: `HalfInt::from_doubled(3)` is 3/2.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfInt(i32);

impl HalfInt {
    pub const ZERO: HalfInt = HalfInt(0);

    pub fn from_doubled(doubled: i32) -> Self {
        HalfInt(doubled)
    }

    pub fn from_int(n: i32) -> Self {
        HalfInt(2 * n)
    }

    pub fn doubled(self) -> i32 {
        self.0
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    pub fn value<S: Scalar>(self) -> S {
        real(self.to_f64())
    }

    /// Dimension 2j+1 of the spin-j representation.
    pub fn multiplicity(self) -> usize {
        debug_assert!(self.0 >= 0);
        (self.0 + 1) as usize
    }
}

impl std::ops::Add for HalfInt {
    type Output = HalfInt;
    fn add(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 + rhs.0)
    }
}

impl std::ops::Sub for HalfInt {
    type Output = HalfInt;
    fn sub(self, rhs: HalfInt) -> HalfInt {
        HalfInt(self.0 - rhs.0)
    }
}

impl std::ops::Neg for HalfInt {
    type Output = HalfInt;
    fn neg(self) -> HalfInt {
        HalfInt(-self.0)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl fmt::Debug for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// A (j, m) pair with `|m| <= j` and matching integer/half-integer parity.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SpinLabel {
    pub j: HalfInt,
    pub m: HalfInt,
}

impl SpinLabel {
    pub fn new(j: HalfInt, m: HalfInt) -> Result<Self> {
        if valid_label(j, m) {
            Ok(SpinLabel { j, m })
        } else {
            Err(Error::InvalidSpinLabel { j, m })
        }
    }
}

fn valid_label(j: HalfInt, m: HalfInt) -> bool {
    j.doubled() >= 0 && m.doubled().abs() <= j.doubled() && (j.doubled() - m.doubled()) % 2 == 0
}

/// One arm's occupation to its spin label: `j = (n_h + n_v)/2`, `m = (n_h - n_v)/2`.
pub fn fock_to_spin(n_h: u32, n_v: u32) -> SpinLabel {
    SpinLabel {
        j: HalfInt::from_doubled((n_h + n_v) as i32),
        m: HalfInt::from_doubled(n_h as i32 - n_v as i32),
    }
}

/// Inverse of [`fock_to_spin`].
pub fn spin_to_fock(label: SpinLabel) -> Result<(u32, u32)> {
    if !valid_label(label.j, label.m) {
        return Err(Error::InvalidSpinLabel {
            j: label.j,
            m: label.m,
        });
    }
    let n_h = (label.j.doubled() + label.m.doubled()) / 2;
    let n_v = (label.j.doubled() - label.m.doubled()) / 2;
    Ok((n_h as u32, n_v as u32))
}

/// Clebsch-Gordan coefficient `<j1 m1; j2 m2 | j m>` in the Condon-Shortley
/// convention, evaluated by the closed-form single sum in log-factorial
/// arithmetic. Selection-rule violations give 0; malformed labels give an
/// error.
pub fn clebsch_gordan<S: Scalar>(
    j1: HalfInt,
    m1: HalfInt,
    j2: HalfInt,
    m2: HalfInt,
    j: HalfInt,
    m: HalfInt,
) -> Result<S> {
    for (jj, mm) in [(j1, m1), (j2, m2), (j, m)] {
        if !valid_label(jj, mm) {
            return Err(Error::InvalidSpinLabel { j: jj, m: mm });
        }
    }
    Ok(real(cg_f64(
        j1.doubled(),
        m1.doubled(),
        j2.doubled(),
        m2.doubled(),
        j.doubled(),
        m.doubled(),
    )))
}

/// Core evaluation on doubled, pre-validated labels.
fn cg_f64(tj1: i32, tm1: i32, tj2: i32, tm2: i32, tj: i32, tm: i32) -> f64 {
    if tm1 + tm2 != tm {
        return 0.0;
    }
    if tj > tj1 + tj2 || tj < (tj1 - tj2).abs() {
        return 0.0;
    }
    // With valid labels and m = m1 + m2 the perimeter j1+j2+j is automatically
    // an integer, so no extra parity gate is needed.
    let a = i64::from(tj1 + tj2 - tj) / 2;
    let b = i64::from(tj1 - tj2 + tj) / 2;
    let c = i64::from(-tj1 + tj2 + tj) / 2;
    let d1 = i64::from(tj1 + tm1) / 2;
    let d2 = i64::from(tj1 - tm1) / 2;
    let d3 = i64::from(tj2 + tm2) / 2;
    let d4 = i64::from(tj2 - tm2) / 2;
    let d5 = i64::from(tj + tm) / 2;
    let d6 = i64::from(tj - tm) / 2;
    let e1 = i64::from(tj - tj2 + tm1) / 2;
    let e2 = i64::from(tj - tj1 - tm2) / 2;

    let k_min = 0.max(-e1).max(-e2);
    let k_max = a.min(d2).min(d3);
    if k_max < k_min {
        return 0.0;
    }

    let lf = ln_factorial_small;
    let half_ln = 0.5
        * (f64::from(tj + 1).ln() + lf(a) + lf(b) + lf(c) - lf(a + b + c + 1)
            + lf(d1)
            + lf(d2)
            + lf(d3)
            + lf(d4)
            + lf(d5)
            + lf(d6));

    let mut sum = 0.0;
    for k in k_min..=k_max {
        let ln_den = lf(k) + lf(a - k) + lf(d2 - k) + lf(d3 - k) + lf(e1 + k) + lf(e2 + k);
        let term = (half_ln - ln_den).exp();
        sum += if k % 2 == 0 { term } else { -term };
    }
    sum
}

/// Write-once cache of Clebsch-Gordan coefficients for all couplings with
/// `j1, j2 <= max_j`; read-only afterwards, so shared freely across threads.
pub struct CgTable<S> {
    max_j: HalfInt,
    map: HashMap<[i32; 5], S>,
}

impl<S: Scalar> CgTable<S> {
    pub fn new(max_j: HalfInt) -> Result<Self> {
        if max_j.doubled() < 0 {
            return Err(Error::InvalidSpinLabel {
                j: max_j,
                m: HalfInt::ZERO,
            });
        }
        let mut map = HashMap::new();
        for tj1 in 0..=max_j.doubled() {
            for tj2 in 0..=max_j.doubled() {
                for tm1 in (-tj1..=tj1).step_by(2) {
                    for tm2 in (-tj2..=tj2).step_by(2) {
                        let tm = tm1 + tm2;
                        let mut tj = (tj1 - tj2).abs();
                        while tj <= tj1 + tj2 {
                            if tm.abs() <= tj {
                                let value = cg_f64(tj1, tm1, tj2, tm2, tj, tm);
                                if value != 0.0 {
                                    map.insert([tj1, tm1, tj2, tm2, tj], real(value));
                                }
                            }
                            tj += 2;
                        }
                    }
                }
            }
        }
        Ok(CgTable { max_j, map })
    }

    pub fn max_j(&self) -> HalfInt {
        self.max_j
    }

    /// Cached `<j1 m1; j2 m2 | j, m1+m2>`. Couplings beyond the build cutoff
    /// are an error, selection-rule zeros return 0.
    pub fn get(&self, j1: HalfInt, m1: HalfInt, j2: HalfInt, m2: HalfInt, j: HalfInt) -> Result<S> {
        for (jj, mm) in [(j1, m1), (j2, m2)] {
            if !valid_label(jj, mm) {
                return Err(Error::InvalidSpinLabel { j: jj, m: mm });
            }
        }
        if j1 > self.max_j || j2 > self.max_j {
            return Err(Error::BeyondCutoff {
                j: if j1 > self.max_j { j1 } else { j2 },
                cutoff: self.max_j,
            });
        }
        Ok(self
            .map
            .get(&[
                j1.doubled(),
                m1.doubled(),
                j2.doubled(),
                m2.doubled(),
                j.doubled(),
            ])
            .copied()
            .unwrap_or_else(S::zero))
    }
}

/// Projector onto total spin j inside one photon-number block, in the product
/// basis ordered by [`BlockLabel::basis`].
pub struct ProjectorMatrix<S> {
    pub block: BlockLabel,
    pub j: HalfInt,
    pub matrix: DMatrix<S>,
}

/// Builds `Pi_j = sum_M |j,M><j,M|` from Clebsch-Gordan coefficients.
pub fn total_spin_projector<S: Scalar>(
    cg: &CgTable<S>,
    block: BlockLabel,
    j: HalfInt,
) -> Result<ProjectorMatrix<S>> {
    if !block.spin_range().contains(&j) {
        return Err(Error::SpinOutOfRange { block, j });
    }
    let j_a = block.j_a();
    let j_b = block.j_b();
    let basis: Vec<_> = block.basis().collect();
    let dim = block.dim();
    let mut matrix = DMatrix::zeros(dim, dim);
    for (row, &(ma, mb)) in basis.iter().enumerate() {
        let m = ma + mb;
        if m.doubled().abs() > j.doubled() {
            continue;
        }
        let left: S = cg.get(j_a, ma, j_b, mb, j)?;
        if left == S::zero() {
            continue;
        }
        for (col, &(ma2, mb2)) in basis.iter().enumerate() {
            if ma2 + mb2 != m {
                continue;
            }
            let right: S = cg.get(j_a, ma2, j_b, mb2, j)?;
            matrix[(row, col)] = left * right;
        }
    }
    Ok(ProjectorMatrix { block, j, matrix })
}
