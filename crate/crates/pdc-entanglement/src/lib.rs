//! Entanglement of multi-photon down-conversion states under photon loss.
//!
//! A pulsed type-II down-conversion source emits polarization singlets of
//! every photon-pair number at once. After independent, polarization-neutral
//! loss on the four spatial/polarization modes, the (phase-averaged) state is
//! block diagonal in the photon numbers `(alpha, beta)` counted on the two
//! arms, and each block is invariant under identical polarization rotations
//! on both arms. That symmetry reduces a block to a handful of total-spin
//! weights `mu_j`, turns the PPT criterion into a small polytope of weight
//! vectors, and makes the relative entropy of entanglement a low-dimensional
//! convex program. This crate computes the whole chain:
//!
//! * [`counts`]: joint photon-count probabilities of the lossy state,
//! * [`spin`]: Clebsch-Gordan coefficients and total-spin projectors,
//! * [`blocks`]: block labels, populations, and extraction of the `mu_j`,
//! * [`ppt`]: partial transposition and the per-block PPT polytope,
//! * [`entropy`]: relative entropy of entanglement over the polytope,
//! * [`oracle`]: an independent truncated-Fock simulation used to cross-check
//!   the analytic pipeline,
//! * [`cli`]: the `pdcent` command-line driver.
//!
//! Everything numeric is generic over [`Scalar`]; [`Real`] (`f64`) is the
//! working precision used by the CLI and the pinned tolerances.

#![forbid(unsafe_code)]

pub mod blocks;
pub mod cli;
pub mod counts;
pub mod entropy;
pub mod oracle;
pub mod ppt;
mod scalar;
pub mod spin;

use std::collections::BTreeMap;

pub use blocks::BlockLabel;
pub use counts::{FockCount, ModelParams};
pub use scalar::{real, to_f64, Scalar};
pub use spin::HalfInt;

/// Default floating-point type; all pinned tolerances assume this precision.
pub type Real = f64;

/// Dense matrix over the working scalar.
pub type RealMatrix = nalgebra::DMatrix<Real>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid spin label j={j}, m={m}")]
    InvalidSpinLabel { j: HalfInt, m: HalfInt },
    #[error("spin {j} outside the coupling range of block {block}")]
    SpinOutOfRange { block: BlockLabel, j: HalfInt },
    #[error("spin {j} exceeds the table cutoff {cutoff}")]
    BeyondCutoff { j: HalfInt, cutoff: HalfInt },
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("series did not converge: {0}")]
    SeriesDivergence(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("block {block}: populations violate the shared-rotation symmetry (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    SymmetryViolation {
        block: BlockLabel,
        residual: f64,
        tolerance: f64,
    },
    #[error("block {block}: extracted weight mu[{index}] = {value:.3e} is negative beyond tolerance")]
    NegativeWeight {
        block: BlockLabel,
        index: usize,
        value: f64,
    },
    #[error("joint diagonalization failed: off-diagonal leakage {leakage:.3e} above {tolerance:.3e}")]
    JointDiagonalization { leakage: f64, tolerance: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical cross-check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shared read-only tables for a cutoff: Clebsch-Gordan cache plus one PPT
/// polytope per block, built once and reused across a sweep.
pub struct Context<S: Scalar> {
    alpha_max: u32,
    beta_max: u32,
    cg: spin::CgTable<S>,
    polytopes: BTreeMap<BlockLabel, ppt::PptPolytope<S>>,
}

impl<S: Scalar> Context<S> {
    pub fn new(alpha_max: u32, beta_max: u32) -> Result<Self> {
        let max_j = HalfInt::from_doubled(alpha_max.max(beta_max) as i32);
        let cg = spin::CgTable::new(max_j)?;
        let mut polytopes = BTreeMap::new();
        for alpha in 0..=alpha_max {
            for beta in 0..=beta_max {
                let block = BlockLabel::new(alpha, beta);
                polytopes.insert(block, ppt::ppt_constraints(&cg, block)?);
            }
        }
        Ok(Self {
            alpha_max,
            beta_max,
            cg,
            polytopes,
        })
    }

    pub fn alpha_max(&self) -> u32 {
        self.alpha_max
    }

    pub fn beta_max(&self) -> u32 {
        self.beta_max
    }

    pub fn cg(&self) -> &spin::CgTable<S> {
        &self.cg
    }

    pub fn polytope(&self, block: BlockLabel) -> Result<&ppt::PptPolytope<S>> {
        self.polytopes.get(&block).ok_or(Error::BeyondCutoff {
            j: block.j_a(),
            cutoff: HalfInt::from_doubled(self.alpha_max.max(self.beta_max) as i32),
        })
    }
}
