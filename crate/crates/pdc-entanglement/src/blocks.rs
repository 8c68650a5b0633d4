//! Photon-number blocks of the two-arm state and extraction of total-spin
//! weights from count statistics.
//!
//! Loss commutes with both arms' photon-number measurements, so the state
//! conditioned on `alpha` detected photons in arm a and `beta` in arm b is a
//! well-defined block. Phase averaging makes each block diagonal in the
//! product basis and invariant under joint polarization rotations, hence a
//! mixture of normalized total-spin projectors with weights `mu_j`. The
//! weights are recovered from the diagonal populations by least squares
//! against squared Clebsch-Gordan coefficients.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::counts::{joint_count_probability, FockCount, ModelParams};
use crate::scalar::{real, to_f64, Scalar};
use crate::spin::{total_spin_projector, CgTable, HalfInt};
use crate::{Error, Result};

/// Photon-number pair (alpha, beta): counts on arm a and arm b.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct BlockLabel {
    pub alpha: u32,
    pub beta: u32,
}

impl BlockLabel {
    pub fn new(alpha: u32, beta: u32) -> Self {
        BlockLabel { alpha, beta }
    }

    pub fn j_a(self) -> HalfInt {
        HalfInt::from_doubled(self.alpha as i32)
    }

    pub fn j_b(self) -> HalfInt {
        HalfInt::from_doubled(self.beta as i32)
    }

    /// Product-basis dimension (alpha+1)(beta+1).
    pub fn dim(self) -> usize {
        (self.alpha as usize + 1) * (self.beta as usize + 1)
    }

    /// Total spins j = |j_a - j_b| .. j_a + j_b in ascending order.
    pub fn spin_range(self) -> Vec<HalfInt> {
        let lo = (self.alpha as i32 - self.beta as i32).abs();
        let hi = (self.alpha + self.beta) as i32;
        (lo..=hi).step_by(2).map(HalfInt::from_doubled).collect()
    }

    pub fn num_spins(self) -> usize {
        self.alpha.min(self.beta) as usize + 1
    }

    /// Product basis (m_a, m_b), arm a major, both ascending. Row
    /// `i = h_a (beta+1) + h_b` corresponds to `h_a` horizontal photons on
    /// arm a and `h_b` on arm b via `m = h - j`.
    pub fn basis(self) -> impl Iterator<Item = (HalfInt, HalfInt)> {
        let (alpha, beta) = (self.alpha as i32, self.beta as i32);
        (0..=alpha).flat_map(move |ha| {
            (0..=beta).map(move |hb| {
                (
                    HalfInt::from_doubled(2 * ha - alpha),
                    HalfInt::from_doubled(2 * hb - beta),
                )
            })
        })
    }

    /// Row index of (m_a, m_b) in [`basis`](Self::basis) order.
    pub fn index_of(self, m_a: HalfInt, m_b: HalfInt) -> Result<usize> {
        let ha2 = self.alpha as i32 + m_a.doubled();
        let hb2 = self.beta as i32 + m_b.doubled();
        if ha2 < 0 || ha2 % 2 != 0 || ha2 / 2 > self.alpha as i32 {
            return Err(Error::InvalidSpinLabel { j: self.j_a(), m: m_a });
        }
        if hb2 < 0 || hb2 % 2 != 0 || hb2 / 2 > self.beta as i32 {
            return Err(Error::InvalidSpinLabel { j: self.j_b(), m: m_b });
        }
        Ok((ha2 / 2) as usize * (self.beta as usize + 1) + (hb2 / 2) as usize)
    }

    /// Position of j within [`spin_range`](Self::spin_range).
    pub fn spin_index(self, j: HalfInt) -> Result<usize> {
        let lo = (self.alpha as i32 - self.beta as i32).abs();
        let d = j.doubled() - lo;
        if d < 0 || d % 2 != 0 || j.doubled() > (self.alpha + self.beta) as i32 {
            return Err(Error::SpinOutOfRange { block: self, j });
        }
        Ok((d / 2) as usize)
    }
}

impl fmt::Display for BlockLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.alpha, self.beta)
    }
}

/// Normalized diagonal populations of one block, plus the probability mass of
/// the block itself. `None` when the block carries no mass at the working
/// precision, which happens at eta = 0 or tau = 0 for nonvacuum blocks.
pub struct BlockPopulations<S> {
    pub block: BlockLabel,
    /// P(alpha, beta).
    pub probability: S,
    /// Conditional populations in [`BlockLabel::basis`] order, summing to 1.
    pub populations: DVector<S>,
}

/// Joint count probabilities across one block, normalized by their sum.
pub fn population_vector<S: Scalar>(
    params: &ModelParams,
    block: BlockLabel,
) -> Result<Option<BlockPopulations<S>>> {
    let mut populations = DVector::zeros(block.dim());
    let mut total = S::zero();
    for ha in 0..=block.alpha {
        for hb in 0..=block.beta {
            let p: S = joint_count_probability(
                params,
                FockCount {
                    a_h: ha,
                    a_v: block.alpha - ha,
                    b_h: hb,
                    b_v: block.beta - hb,
                },
            )?;
            let idx = ha as usize * (block.beta as usize + 1) + hb as usize;
            populations[idx] = p;
            total += p;
        }
    }
    let populated = total > S::zero();
    if !populated {
        return Ok(None);
    }
    populations /= total;
    Ok(Some(BlockPopulations {
        block,
        probability: total,
        populations,
    }))
}

/// Matrix W with `W[(m_a, m_b), j] = |<j_a m_a; j_b m_b | j, m_a+m_b>|^2 / (2j+1)`,
/// so that populations = W * mu. Each column sums to 1.
pub fn cg_weight_matrix<S: Scalar>(cg: &CgTable<S>, block: BlockLabel) -> Result<DMatrix<S>> {
    let basis: Vec<_> = block.basis().collect();
    let spins = block.spin_range();
    let mut w = DMatrix::zeros(block.dim(), spins.len());
    for (row, &(ma, mb)) in basis.iter().enumerate() {
        for (col, &j) in spins.iter().enumerate() {
            if (ma + mb).doubled().abs() > j.doubled() {
                continue;
            }
            let c: S = cg.get(block.j_a(), ma, block.j_b(), mb, j)?;
            w[(row, col)] = c * c / real::<S>(j.multiplicity() as f64);
        }
    }
    Ok(w)
}

/// A block state of the symmetric form `sum_j mu_j Pi_j / (2j+1)`.
#[derive(Clone, Debug)]
pub struct SymmetricBlockState<S> {
    pub block: BlockLabel,
    /// Weights over [`BlockLabel::spin_range`], nonnegative, summing to 1
    /// up to the extraction residual.
    pub mu: DVector<S>,
}

impl<S: Scalar> SymmetricBlockState<S> {
    /// Dense density matrix in the product basis.
    pub fn density(&self, cg: &CgTable<S>) -> Result<DMatrix<S>> {
        let dim = self.block.dim();
        let mut rho = DMatrix::zeros(dim, dim);
        for (idx, j) in self.block.spin_range().into_iter().enumerate() {
            let p = total_spin_projector(cg, self.block, j)?;
            rho += p.matrix * (self.mu[idx] / real::<S>(j.multiplicity() as f64));
        }
        Ok(rho)
    }
}

/// Outcome of fitting populations to the symmetric form.
#[derive(Debug)]
pub struct MuExtraction<S> {
    pub state: SymmetricBlockState<S>,
    /// Euclidean norm of `W mu - populations`; small residual certifies the
    /// populations are consistent with a rotation-invariant block.
    pub residual: f64,
}

/// Default ceiling on the least-squares residual. The fit is over-determined
/// for alpha != beta, so a residual near machine precision doubles as a check
/// that the input really came from a rotation-invariant state.
pub const MU_RESIDUAL_TOLERANCE: f64 = 1e-9;

/// Weights that are negative beyond this are reported as errors rather than
/// clipped; within it they are rounding noise and get set to zero.
pub const MU_NEGATIVITY_TOLERANCE: f64 = 1e-10;

/// Least-squares fit of total-spin weights to normalized populations.
pub fn extract_mu<S: Scalar>(
    cg: &CgTable<S>,
    block: BlockLabel,
    populations: &DVector<S>,
    residual_tolerance: f64,
) -> Result<MuExtraction<S>> {
    if populations.len() != block.dim() {
        return Err(Error::DimensionMismatch {
            expected: block.dim(),
            got: populations.len(),
        });
    }
    let w = cg_weight_matrix(cg, block)?;
    let svd = w.clone().svd(true, true);
    let mut mu = svd
        .solve(populations, real::<S>(1e-14))
        .map_err(|e| Error::LinearSolve(e.to_string()))?;
    let residual = to_f64((&w * &mu - populations).norm());
    let within = residual <= residual_tolerance;
    if !within {
        return Err(Error::SymmetryViolation {
            block,
            residual,
            tolerance: residual_tolerance,
        });
    }
    for (idx, value) in mu.iter_mut().enumerate() {
        let v = to_f64(*value);
        if v < -MU_NEGATIVITY_TOLERANCE {
            return Err(Error::NegativeWeight {
                block,
                index: idx,
                value: v,
            });
        }
        if v < 0.0 {
            *value = S::zero();
        }
    }
    Ok(MuExtraction {
        state: SymmetricBlockState { block, mu },
        residual,
    })
}

/// Populations and weights of one block in a single call. `None` when the
/// block has no probability mass.
pub fn block_state<S: Scalar>(
    cg: &CgTable<S>,
    params: &ModelParams,
    block: BlockLabel,
) -> Result<Option<(MuExtraction<S>, S)>> {
    match population_vector::<S>(params, block)? {
        None => Ok(None),
        Some(pops) => {
            let fit = extract_mu(cg, block, &pops.populations, MU_RESIDUAL_TOLERANCE)?;
            Ok(Some((fit, pops.probability)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(d: i32) -> HalfInt {
        HalfInt::from_doubled(d)
    }

    #[test]
    fn basis_order_and_indexing_agree() {
        for (alpha, beta) in [(0, 0), (1, 1), (2, 1), (3, 2)] {
            let block = BlockLabel::new(alpha, beta);
            let basis: Vec<_> = block.basis().collect();
            assert_eq!(basis.len(), block.dim());
            for (i, &(ma, mb)) in basis.iter().enumerate() {
                assert_eq!(block.index_of(ma, mb).unwrap(), i);
            }
            // First entry is both spins fully down, last fully up.
            assert_eq!(basis[0], (-block.j_a(), -block.j_b()));
            assert_eq!(basis[block.dim() - 1], (block.j_a(), block.j_b()));
        }
    }

    #[test]
    fn index_of_rejects_foreign_labels() {
        let block = BlockLabel::new(1, 1);
        assert!(block.index_of(h(2), h(1)).is_err());
        assert!(block.index_of(h(3), h(1)).is_err());
    }

    #[test]
    fn spin_range_shape() {
        let block = BlockLabel::new(3, 1);
        assert_eq!(block.spin_range(), vec![h(2), h(4)]);
        assert_eq!(block.num_spins(), 2);
        assert_eq!(block.spin_index(h(2)).unwrap(), 0);
        assert_eq!(block.spin_index(h(4)).unwrap(), 1);
        assert!(block.spin_index(h(0)).is_err());
        assert!(block.spin_index(h(3)).is_err());
        let square = BlockLabel::new(2, 2);
        assert_eq!(square.spin_range(), vec![h(0), h(2), h(4)]);
        // Sum over j of (2j+1) fills the block dimension.
        for (alpha, beta) in [(1, 1), (2, 2), (4, 1), (3, 3)] {
            let b = BlockLabel::new(alpha, beta);
            let total: usize = b.spin_range().iter().map(|j| j.multiplicity()).sum();
            assert_eq!(total, b.dim());
        }
    }

    #[test]
    fn weight_matrix_columns_sum_to_one() {
        let cg = CgTable::<f64>::new(h(4)).unwrap();
        for (alpha, beta) in [(1, 1), (2, 1), (3, 2), (4, 4)] {
            let block = BlockLabel::new(alpha, beta);
            let w = cg_weight_matrix(&cg, block).unwrap();
            for col in 0..w.ncols() {
                let sum: f64 = w.column(col).sum();
                assert!((sum - 1.0).abs() < 1e-12, "{block} col {col}: {sum}");
            }
        }
    }

    #[test]
    fn uniform_populations_give_dimension_weights() {
        // populations = 1/dim solves exactly with mu_j = (2j+1)/dim.
        let cg = CgTable::<f64>::new(h(3)).unwrap();
        for (alpha, beta) in [(1, 1), (2, 2), (3, 1)] {
            let block = BlockLabel::new(alpha, beta);
            let d = DVector::from_element(block.dim(), 1.0 / block.dim() as f64);
            let fit = extract_mu(&cg, block, &d, 1e-11).unwrap();
            for (idx, j) in block.spin_range().into_iter().enumerate() {
                let expect = j.multiplicity() as f64 / block.dim() as f64;
                assert!(
                    (fit.state.mu[idx] - expect).abs() < 1e-12,
                    "{block} j={j}: {}",
                    fit.state.mu[idx]
                );
            }
            assert!(fit.residual < 1e-13);
        }
    }

    #[test]
    fn extraction_inverts_synthetic_mixtures() {
        let cg = CgTable::<f64>::new(h(5)).unwrap();
        for (alpha, beta, raw) in [
            (1u32, 1u32, vec![0.7, 0.3]),
            (2, 2, vec![0.5, 0.3, 0.2]),
            (3, 2, vec![0.6, 0.25, 0.15]),
            (5, 5, vec![0.4, 0.25, 0.15, 0.1, 0.07, 0.03]),
        ] {
            let block = BlockLabel::new(alpha, beta);
            let mu = DVector::from_vec(raw);
            let w = cg_weight_matrix(&cg, block).unwrap();
            let populations = &w * &mu;
            let fit = extract_mu(&cg, block, &populations, 1e-10).unwrap();
            assert!((&fit.state.mu - &mu).amax() < 1e-10, "{block}");
        }
    }

    #[test]
    fn asymmetric_populations_violate_symmetry() {
        // Populations that no rotation-invariant block can produce: put all
        // mass on one extreme of the over-determined (2,1) system.
        let cg = CgTable::<f64>::new(h(2)).unwrap();
        let block = BlockLabel::new(2, 1);
        let mut d = DVector::zeros(block.dim());
        d[0] = 1.0;
        let err = extract_mu(&cg, block, &d, 1e-9).unwrap_err();
        assert!(matches!(err, Error::SymmetryViolation { .. }), "{err}");
    }

    #[test]
    fn negative_weights_are_rejected_not_clipped() {
        let cg = CgTable::<f64>::new(h(1)).unwrap();
        let block = BlockLabel::new(1, 1);
        // mu = (-0.2, 1.2) produces valid-looking populations.
        let mu = DVector::from_vec(vec![-0.2, 1.2]);
        let w = cg_weight_matrix(&cg, block).unwrap();
        let populations = &w * &mu;
        let err = extract_mu(&cg, block, &populations, 1e-9).unwrap_err();
        assert!(matches!(err, Error::NegativeWeight { .. }), "{err}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cg = CgTable::<f64>::new(h(1)).unwrap();
        let block = BlockLabel::new(1, 1);
        let d = DVector::from_element(3, 1.0 / 3.0);
        assert!(matches!(
            extract_mu(&cg, block, &d, 1e-9),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn density_reproduces_populations_and_trace() {
        let cg = CgTable::<f64>::new(h(3)).unwrap();
        let block = BlockLabel::new(3, 2);
        let mu = DVector::from_vec(vec![0.55, 0.3, 0.15]);
        let state = SymmetricBlockState { block, mu };
        let rho = state.density(&cg).unwrap();
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        let w = cg_weight_matrix(&cg, block).unwrap();
        let d = &w * &state.mu;
        for i in 0..block.dim() {
            assert!((rho[(i, i)] - d[i]).abs() < 1e-12, "row {i}");
        }
        // Phase averaging leaves no coherence between different total m.
        let basis: Vec<_> = block.basis().collect();
        for (r, &(ma, mb)) in basis.iter().enumerate() {
            for (c, &(ma2, mb2)) in basis.iter().enumerate() {
                if (ma + mb) != (ma2 + mb2) {
                    assert!(rho[(r, c)].abs() < 1e-14, "({r},{c})");
                }
            }
        }
    }

    #[test]
    fn display_and_order() {
        assert_eq!(BlockLabel::new(2, 1).to_string(), "(2,1)");
        assert!(BlockLabel::new(1, 2) < BlockLabel::new(2, 1));
        assert!(BlockLabel::new(2, 1) < BlockLabel::new(2, 2));
    }
}
