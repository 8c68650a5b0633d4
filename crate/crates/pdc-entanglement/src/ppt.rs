//! The per-block polytope of rotation-invariant states with positive partial
//! transpose.
//!
//! Partial transposition maps the commutant of joint rotations onto the
//! commutant of twisted rotations, which for SU(2) is again abelian. The
//! transposed normalized projectors `B_j = Pi_j^(T_b) / (2j+1)` therefore
//! commute and share an eigenbasis; a symmetric state `sum_j zeta_j Omega_j`
//! has positive partial transpose iff every common eigenvalue combination
//! `sum_j zeta_j lambda_(j,k)` is nonnegative. Stacking the distinct
//! eigenvalue tuples as rows C[k][j] turns PPT into `C zeta >= 0` on the
//! probability simplex, and the resulting polytope is small enough to carry
//! its full vertex list.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockLabel, SymmetricBlockState};
use crate::scalar::{real, to_f64, Scalar};
use crate::spin::{total_spin_projector, CgTable};
use crate::{Error, Result};

/// Feasibility slack: `C zeta >= -tol` counts as inside.
pub const PPT_FEASIBILITY_TOLERANCE: f64 = 1e-10;

/// Eigenvalue tuples closer than this (max norm) are one constraint row.
const ROW_DEDUP_TOLERANCE: f64 = 1e-9;

/// Allowed off-diagonal remainder when the common eigenbasis is applied to
/// each B_j individually.
const LEAKAGE_TOLERANCE: f64 = 1e-9;

/// Seed for the random positive combination used to find the common
/// eigenbasis. Fixed so polytopes, vertex order, and downstream output are
/// reproducible.
const COMBINATION_SEED: u64 = 0x0b5e_55ed;

/// Transposes the arm-b indices of a block matrix; involutive.
pub fn partial_transpose<S: Scalar>(
    block: BlockLabel,
    matrix: &DMatrix<S>,
) -> Result<DMatrix<S>> {
    let dim = block.dim();
    if matrix.nrows() != dim || matrix.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: matrix.nrows().max(matrix.ncols()),
        });
    }
    let nb = block.beta as usize + 1;
    let mut out = DMatrix::zeros(dim, dim);
    for row in 0..dim {
        let (ra, rb) = (row / nb, row % nb);
        for col in 0..dim {
            let (ca, cb) = (col / nb, col % nb);
            out[(ra * nb + cb, ca * nb + rb)] = matrix[(row, col)];
        }
    }
    Ok(out)
}

/// PPT region of one block in the zeta coordinates: `zeta_j >= 0`,
/// `sum zeta_j = 1`, `C zeta >= 0`, with the vertex list enumerated up front.
pub struct PptPolytope<S> {
    block: BlockLabel,
    constraints: DMatrix<S>,
    vertices: Vec<DVector<S>>,
}

impl<S: Scalar> PptPolytope<S> {
    pub fn block(&self) -> BlockLabel {
        self.block
    }

    /// Deduplicated eigenvalue tuples, one row per distinct tuple, columns
    /// indexed like [`BlockLabel::spin_range`].
    pub fn constraints(&self) -> &DMatrix<S> {
        &self.constraints
    }

    pub fn vertices(&self) -> &[DVector<S>] {
        &self.vertices
    }

    /// Worst constraint value `min_k (C zeta)_k`; negative means the partial
    /// transpose has a negative eigenvalue direction.
    pub fn constraint_margin(&self, weights: &DVector<S>) -> Result<S> {
        if weights.len() != self.constraints.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.constraints.ncols(),
                got: weights.len(),
            });
        }
        let values = &self.constraints * weights;
        Ok(values
            .iter()
            .copied()
            .reduce(|a, b| if b < a { b } else { a })
            .expect("at least one constraint row"))
    }

    /// PPT test with the worst-case margin.
    pub fn is_ppt(&self, state: &SymmetricBlockState<S>) -> Result<(bool, S)> {
        if state.block != self.block {
            return Err(Error::InvalidParams(format!(
                "state block {} does not match polytope block {}",
                state.block, self.block
            )));
        }
        let margin = self.constraint_margin(&state.mu)?;
        Ok((to_f64(margin) >= -PPT_FEASIBILITY_TOLERANCE, margin))
    }

    /// Maximum of `objective . zeta` over the polytope, attained at a vertex.
    pub fn maximize_linear(&self, objective: &DVector<S>) -> Result<(S, DVector<S>)> {
        if objective.len() != self.constraints.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.constraints.ncols(),
                got: objective.len(),
            });
        }
        let mut best: Option<(S, &DVector<S>)> = None;
        for v in &self.vertices {
            let value = objective.dot(v);
            if best.is_none_or(|(b, _)| value > b) {
                best = Some((value, v));
            }
        }
        let (value, vertex) = best.expect("polytope has at least one vertex");
        Ok((value, vertex.clone()))
    }
}

/// Builds the PPT polytope of a block from its total-spin projectors.
pub fn ppt_constraints<S: Scalar>(cg: &CgTable<S>, block: BlockLabel) -> Result<PptPolytope<S>> {
    let spins = block.spin_range();
    let d = spins.len();
    let dim = block.dim();

    let transposed: Vec<DMatrix<S>> = spins
        .iter()
        .map(|&j| {
            let p = total_spin_projector(cg, block, j)?;
            Ok(partial_transpose(block, &p.matrix)? / real::<S>(j.multiplicity() as f64))
        })
        .collect::<Result<_>>()?;

    // Common eigenbasis from a random positive combination; degenerate
    // combinations are vanishingly unlikely at the fixed seed, and the
    // leakage check below catches them.
    let mut rng = ChaCha8Rng::seed_from_u64(COMBINATION_SEED);
    let mut combo = DMatrix::<S>::zeros(dim, dim);
    for b in &transposed {
        combo += b * real::<S>(rng.random_range(1.0..2.0));
    }
    let mut basis = nalgebra::SymmetricEigen::new(combo).eigenvectors;

    let mut rotated: Vec<DMatrix<S>> = transposed
        .iter()
        .map(|b| basis.transpose() * b * &basis)
        .collect();
    let mut leakage = max_off_diagonal(&rotated);
    if leakage > LEAKAGE_TOLERANCE {
        jacobi_joint_diagonalize(&mut rotated, &mut basis);
        leakage = max_off_diagonal(&rotated);
        if leakage > LEAKAGE_TOLERANCE {
            return Err(Error::JointDiagonalization {
                leakage,
                tolerance: LEAKAGE_TOLERANCE,
            });
        }
    }

    // Distinct eigenvalue tuples become the constraint rows.
    let mut rows: Vec<Vec<f64>> = (0..dim)
        .map(|k| rotated.iter().map(|m| to_f64(m[(k, k)])).collect())
        .collect();
    rows.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    rows.dedup_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .all(|(x, y)| (x - y).abs() <= ROW_DEDUP_TOLERANCE)
    });
    let constraints = DMatrix::from_fn(rows.len(), d, |r, c| real::<S>(rows[r][c]));

    let vertices = enumerate_vertices(&constraints)?;
    if vertices.is_empty() {
        return Err(Error::LinearSolve(format!(
            "PPT polytope of block {block} came out empty"
        )));
    }
    Ok(PptPolytope {
        block,
        constraints,
        vertices,
    })
}

fn max_off_diagonal<S: Scalar>(mats: &[DMatrix<S>]) -> f64 {
    let mut worst = 0.0f64;
    for m in mats {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if r != c {
                    worst = worst.max(to_f64(m[(r, c)]).abs());
                }
            }
        }
    }
    worst
}

/// Simultaneous diagonalization of commuting symmetric matrices by Givens
/// sweeps; each rotation minimizes the summed squared off-diagonal mass of
/// the pair it touches. Updates the matrices in place and accumulates the
/// rotations into `basis`.
fn jacobi_joint_diagonalize<S: Scalar>(mats: &mut [DMatrix<S>], basis: &mut DMatrix<S>) {
    let dim = basis.nrows();
    let half = real::<S>(0.5);
    for _sweep in 0..60 {
        let before = max_off_diagonal(mats);
        if before <= LEAKAGE_TOLERANCE / 4.0 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                // The (p,q) entry after a Givens rotation by theta is
                // u cos(2 theta) + v sin(2 theta) with u = A[p,q] and
                // v = (A[p,p] - A[q,q])/2; minimizing the squared sum over
                // the family fixes the double angle below.
                let mut uu = S::zero();
                let mut vv = S::zero();
                let mut uv = S::zero();
                for m in mats.iter() {
                    let u = m[(p, q)];
                    let v = (m[(p, p)] - m[(q, q)]) * half;
                    uu += u * u;
                    vv += v * v;
                    uv += u * v;
                }
                let four_theta = (-(uv + uv)).atan2(vv - uu);
                let theta = four_theta * real::<S>(0.25);
                let (c, s) = (theta.cos(), theta.sin());
                if to_f64(s).abs() < 1e-16 {
                    continue;
                }
                for m in mats.iter_mut() {
                    givens_conjugate(m, p, q, c, s);
                }
                // basis <- basis * G so columns stay the eigenvector candidates.
                for r in 0..dim {
                    let bp = basis[(r, p)];
                    let bq = basis[(r, q)];
                    basis[(r, p)] = bp * c - bq * s;
                    basis[(r, q)] = bp * s + bq * c;
                }
            }
        }
        if max_off_diagonal(mats) >= before {
            break;
        }
    }
}

/// A <- G^T A G for the Givens rotation G in the (p, q) plane.
fn givens_conjugate<S: Scalar>(m: &mut DMatrix<S>, p: usize, q: usize, c: S, s: S) {
    let n = m.nrows();
    for r in 0..n {
        let mp = m[(r, p)];
        let mq = m[(r, q)];
        m[(r, p)] = mp * c - mq * s;
        m[(r, q)] = mp * s + mq * c;
    }
    for col in 0..n {
        let mp = m[(p, col)];
        let mq = m[(q, col)];
        m[(p, col)] = mp * c - mq * s;
        m[(q, col)] = mp * s + mq * c;
    }
}

fn for_each_combination(n: usize, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                idx[i] += 1;
                for j in (i + 1)..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// All vertices of `{zeta >= 0, sum zeta = 1, C zeta >= 0}` by brute-force
/// activation of d-1 constraints alongside the normalization; fine at d <= 8.
fn enumerate_vertices<S: Scalar>(constraints: &DMatrix<S>) -> Result<Vec<DVector<S>>> {
    let d = constraints.ncols();
    if d == 1 {
        // The simplex is the single point 1; keep it if it satisfies C.
        let v = DVector::from_element(1, S::one());
        let ok = (constraints * &v)
            .iter()
            .all(|&x| to_f64(x) >= -PPT_FEASIBILITY_TOLERANCE);
        return Ok(if ok { vec![v] } else { Vec::new() });
    }

    // Candidate active rows: the d nonnegativity facets, then C's rows.
    let total = d + constraints.nrows();
    let row_of = |idx: usize| -> RowDVector<S> {
        if idx < d {
            let mut e = RowDVector::zeros(d);
            e[idx] = S::one();
            e
        } else {
            constraints.row(idx - d).into_owned()
        }
    };

    let mut vertices: Vec<DVector<S>> = Vec::new();
    for_each_combination(total, d - 1, &mut |active: &[usize]| {
        let mut system = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        for c in 0..d {
            system[(0, c)] = S::one();
        }
        rhs[0] = S::one();
        for (r, &idx) in active.iter().enumerate() {
            system.row_mut(r + 1).copy_from(&row_of(idx));
        }
        let Some(candidate) = nalgebra::FullPivLU::new(system).solve(&rhs) else {
            return;
        };
        let nonneg = candidate
            .iter()
            .all(|&x| to_f64(x) >= -PPT_FEASIBILITY_TOLERANCE);
        if !nonneg {
            return;
        }
        let inside = (constraints * &candidate)
            .iter()
            .all(|&x| to_f64(x) >= -PPT_FEASIBILITY_TOLERANCE);
        if !inside {
            return;
        }
        let duplicate = vertices
            .iter()
            .any(|v| to_f64((v - &candidate).amax()) < ROW_DEDUP_TOLERANCE);
        if !duplicate {
            vertices.push(candidate);
        }
    });

    vertices.sort_by(|a, b| {
        let fa: Vec<f64> = a.iter().map(|&x| to_f64(x)).collect();
        let fb: Vec<f64> = b.iter().map(|&x| to_f64(x)).collect();
        fa.partial_cmp(&fb).expect("finite vertex coordinates")
    });
    Ok(vertices)
}
