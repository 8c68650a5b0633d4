//! Brute-force verification path: explicit truncated-Fock density matrices,
//! a Kraus loss channel, SU(2) symmetry checks, and projector-trace weight
//! measurements.
//!
//! Everything here is deliberately independent of the series evaluation in
//! `counts` and the least-squares extraction in `blocks`: states are built
//! from the alternating-sign pair expansion, loss is applied amplitude by
//! amplitude, and weights come from projector traces. Agreement between the
//! two routes is the repository's central cross-check.
//!
//! Before loss the state is block-diagonal in the pair number n, and each
//! sector is stored in the (n+1)-dimensional anticorrelated pair basis
//! |n-m, m>_a |m, n-m>_b. After loss it is block-diagonal in the per-arm
//! photon numbers (alpha, beta), stored per block in the same a-major basis
//! that `blocks` uses. Loss only removes photons, so a pair cutoff never
//! contaminates lower blocks; it only leaves a trace deficit tracked
//! explicitly.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::BlockLabel;
use crate::counts::pair_number_tail;
use crate::scalar::ln_binomial;
use crate::spin::{total_spin_projector, CgTable, HalfInt};
use crate::{Error, Result};

/// Pair sectors beyond this are skipped by symmetry checks; the rotation
/// there acts on a ((n+1)^2)-dimensional space and invariance is verified
/// sector by sector, so a handful of sectors exercises every code path.
const SYMMETRY_SECTOR_CAP: usize = 8;

/// Hard ceiling for the automatic pair cutoff search.
const N_MAX_CEILING: usize = 400;

/// Reported alongside symmetry results so runs are reproducible.
pub const HAAR_SEED: u64 = 0x5eed_ca5e;

type CMatrix = DMatrix<Complex<f64>>;

/// Truncated four-mode density operator.
///
/// The trace stays at or below one; `trace_deficit` bounds the probability
/// mass lost to the pair cutoff (and, for capped loss, to dropped blocks).
#[derive(Clone, Debug)]
pub struct TruncatedState {
    rep: Rep,
    trace_deficit: f64,
}

#[derive(Clone, Debug)]
enum Rep {
    /// Pre-loss: one matrix per pair number n over the pair basis m = 0..=n.
    Pairs { sectors: Vec<DMatrix<f64>> },
    /// Post-loss: one matrix per (alpha, beta) block, unnormalized (its
    /// trace is the block probability), over the a-major (h_a, h_b) basis.
    Blocks {
        cap: u32,
        map: BTreeMap<BlockLabel, DMatrix<f64>>,
    },
}

/// Smallest pair cutoff whose discarded mass stays below `tail_bound`.
pub fn auto_n_max(tau: f64, tail_bound: f64) -> Result<usize> {
    let valid = tau.is_finite() && tau >= 0.0 && tail_bound > 0.0;
    if !valid {
        return Err(Error::InvalidParams(format!(
            "need tau >= 0 and a positive tail bound, got tau={tau}, bound={tail_bound}"
        )));
    }
    (1..=N_MAX_CEILING)
        .find(|&n| pair_number_tail(tau, n as u32) < tail_bound)
        .ok_or_else(|| {
            Error::InvalidParams(format!(
                "pair tail at tau={tau} does not reach {tail_bound} below cutoff {N_MAX_CEILING}"
            ))
        })
}

/// Phase-averaged down-conversion state truncated at `n_max` photon pairs:
/// the mixture of projectors onto |psi^n_-> with weights
/// (n+1) tanh^(2n) tau / cosh^4 tau.
pub fn build_pdc_state(tau: f64, n_max: usize) -> Result<TruncatedState> {
    let valid = tau.is_finite() && tau >= 0.0;
    if !valid {
        return Err(Error::InvalidParams(format!(
            "squeezing parameter must be finite and nonnegative, got {tau}"
        )));
    }
    if n_max < 1 {
        return Err(Error::InvalidParams(
            "pair cutoff must be at least 1".to_owned(),
        ));
    }
    let x = tau.tanh().powi(2);
    let norm = (1.0 - x).powi(2);
    let mut sectors = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let weight = (n as f64 + 1.0) * x.powi(n as i32) * norm;
        let dim = n + 1;
        let mut sector = DMatrix::zeros(dim, dim);
        for m in 0..dim {
            for mp in 0..dim {
                let sign = if (m + mp) % 2 == 0 { 1.0 } else { -1.0 };
                sector[(m, mp)] = weight * sign / dim as f64;
            }
        }
        sectors.push(sector);
    }
    Ok(TruncatedState {
        rep: Rep::Pairs { sectors },
        trace_deficit: pair_number_tail(tau, n_max as u32),
    })
}

/// Loss amplitudes amp[p][k] = sqrt(C(p,k) eta^(p-k) (1-eta)^k): the matrix
/// element <p-k| L_k |p> of the k-photon-loss Kraus operator.
fn loss_amplitudes(eta: f64, p_max: usize) -> Vec<Vec<f64>> {
    (0..=p_max)
        .map(|p| {
            (0..=p)
                .map(|k| {
                    if eta == 0.0 {
                        return if k == p { 1.0 } else { 0.0 };
                    }
                    if eta == 1.0 {
                        return if k == 0 { 1.0 } else { 0.0 };
                    }
                    let ln = ln_binomial(p as i64, k as i64)
                        + (p - k) as f64 * eta.ln()
                        + k as f64 * (1.0 - eta).ln();
                    (0.5 * ln).exp()
                })
                .collect()
        })
        .collect()
}

/// Worst deviation of sum_k (L_k)^dagger L_k from the identity over
/// occupations up to `p_max`.
pub fn completeness_defect(eta: f64, p_max: usize) -> f64 {
    let amp = loss_amplitudes(eta, p_max);
    (0..=p_max)
        .map(|p| {
            let total: f64 = amp[p].iter().map(|a| a * a).sum();
            (total - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

impl TruncatedState {
    pub fn trace(&self) -> f64 {
        match &self.rep {
            Rep::Pairs { sectors } => sectors.iter().map(|s| s.trace()).sum(),
            Rep::Blocks { map, .. } => map.values().map(|b| b.trace()).sum(),
        }
    }

    /// Upper bound on the probability mass missing from the stored
    /// representation.
    pub fn trace_deficit(&self) -> f64 {
        self.trace_deficit
    }

    /// Applies the same transmission to all four modes, keeping every block
    /// the truncation can populate.
    pub fn apply_loss(&self, eta: f64) -> Result<TruncatedState> {
        let cap = match &self.rep {
            Rep::Pairs { sectors } => sectors.len() as u32 - 1,
            Rep::Blocks { cap, .. } => *cap,
        };
        self.apply_loss_capped(eta, cap)
    }

    /// Applies the loss channel but keeps only blocks with alpha, beta <=
    /// `cap`; the dropped mass is added to the trace deficit.
    pub fn apply_loss_capped(&self, eta: f64, cap: u32) -> Result<TruncatedState> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParams(format!(
                "transmission must lie in [0, 1], got {eta}"
            )));
        }
        let map = match &self.rep {
            Rep::Pairs { sectors } => lose_from_pairs(sectors, eta, cap),
            Rep::Blocks { map, .. } => lose_from_blocks(map, eta, cap),
        };
        let mut out = TruncatedState {
            rep: Rep::Blocks { cap, map },
            trace_deficit: 0.0,
        };
        // The channel preserves trace, so anything newly missing was cut by
        // the block cap.
        out.trace_deficit = self.trace_deficit + (self.trace() - out.trace()).max(0.0);
        Ok(out)
    }

    /// Projects onto fixed per-arm photon numbers. Returns the block
    /// probability and the normalized block matrix, or None for a block the
    /// state gives zero weight.
    pub fn extract_block(&self, block: BlockLabel) -> Result<Option<(f64, DMatrix<f64>)>> {
        match &self.rep {
            Rep::Pairs { sectors } => {
                if block.alpha != block.beta {
                    return Ok(None);
                }
                let n = block.alpha as usize;
                let Some(sector) = sectors.get(n) else {
                    return Err(Error::BeyondCutoff {
                        j: block.j_a(),
                        cutoff: HalfInt::from_doubled(sectors.len() as i32 - 1),
                    });
                };
                let p = sector.trace();
                if p <= 0.0 {
                    return Ok(None);
                }
                Ok(Some((p, embed_pair_sector(sector) / p)))
            }
            Rep::Blocks { cap, map } => {
                if block.alpha > *cap || block.beta > *cap {
                    return Err(Error::BeyondCutoff {
                        j: HalfInt::from_doubled(block.alpha.max(block.beta) as i32),
                        cutoff: HalfInt::from_doubled(*cap as i32),
                    });
                }
                let Some(matrix) = map.get(&block) else {
                    return Ok(None);
                };
                let p = matrix.trace();
                if p <= 0.0 {
                    return Ok(None);
                }
                Ok(Some((p, matrix / p)))
            }
        }
    }

    /// Smallest eigenvalue over all stored sectors or blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        let eig_min = |m: &DMatrix<f64>| -> f64 {
            SymmetricEigen::new(m.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        };
        let mats: Vec<&DMatrix<f64>> = match &self.rep {
            Rep::Pairs { sectors } => sectors.iter().collect(),
            Rep::Blocks { map, .. } => map.values().collect(),
        };
        mats.into_iter().map(eig_min).fold(f64::INFINITY, f64::min)
    }
}

/// Expands a pair-basis sector into the full (n+1)^2 a-major block basis of
/// the (n, n) block: pair index m sits at h_a = n - m, h_b = m.
fn embed_pair_sector(sector: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = sector.nrows();
    let n = dim - 1;
    let mut full = DMatrix::zeros(dim * dim, dim * dim);
    for m in 0..dim {
        for mp in 0..dim {
            let row = (n - m) * dim + m;
            let col = (n - mp) * dim + mp;
            full[(row, col)] = sector[(m, mp)];
        }
    }
    full
}

/// Pre-loss pair sectors through the four-mode channel. For each sector n
/// and Kraus multi-index, the surviving amplitudes factor into a per-ket
/// and a per-bra weight, so each (k-combination, block) pair contributes a
/// rank-one update.
fn lose_from_pairs(
    sectors: &[DMatrix<f64>],
    eta: f64,
    cap: u32,
) -> BTreeMap<BlockLabel, DMatrix<f64>> {
    let n_max = sectors.len() - 1;
    let amp = loss_amplitudes(eta, n_max);
    let mut map = BTreeMap::new();
    for (n, sector) in sectors.iter().enumerate() {
        for alpha in 0..=n.min(cap as usize) {
            for beta in 0..=n.min(cap as usize) {
                let block = BlockLabel::new(alpha as u32, beta as u32);
                let out = map
                    .entry(block)
                    .or_insert_with(|| DMatrix::zeros(block.dim(), block.dim()));
                for k1 in 0..=(n - alpha) {
                    let k2 = n - alpha - k1;
                    for k3 in 0..=(n - beta) {
                        let k4 = n - beta - k3;
                        let lo = k2.max(k3);
                        let hi = (n - k1).min(n - k4);
                        if lo > hi {
                            continue;
                        }
                        // Surviving weight of pair-basis ket m under this
                        // Kraus combination.
                        let row_weight: Vec<f64> = (lo..=hi)
                            .map(|m| {
                                amp[n - m][k1] * amp[m][k2] * amp[m][k3] * amp[n - m][k4]
                            })
                            .collect();
                        for m in lo..=hi {
                            let wm = row_weight[m - lo];
                            if wm == 0.0 {
                                continue;
                            }
                            let row = (n - m - k1) * (beta + 1) + (m - k3);
                            for mp in lo..=hi {
                                let w = wm * row_weight[mp - lo];
                                if w == 0.0 {
                                    continue;
                                }
                                let col = (n - mp - k1) * (beta + 1) + (mp - k3);
                                out[(row, col)] += sector[(m, mp)] * w;
                            }
                        }
                    }
                }
            }
        }
    }
    map.retain(|_, m| m.trace() > 0.0);
    map
}

/// General block-diagonal state through the four-mode channel; used to
/// verify that two consecutive losses compose multiplicatively.
fn lose_from_blocks(
    blocks: &BTreeMap<BlockLabel, DMatrix<f64>>,
    eta: f64,
    cap: u32,
) -> BTreeMap<BlockLabel, DMatrix<f64>> {
    let p_max = blocks
        .keys()
        .map(|b| b.alpha.max(b.beta) as usize)
        .max()
        .unwrap_or(0);
    let amp = loss_amplitudes(eta, p_max);
    let mut map = BTreeMap::new();
    for (label, matrix) in blocks {
        let (alpha, beta) = (label.alpha as usize, label.beta as usize);
        for k_ah in 0..=alpha {
            for k_av in 0..=(alpha - k_ah) {
                let out_alpha = alpha - k_ah - k_av;
                if out_alpha > cap as usize {
                    continue;
                }
                for k_bh in 0..=beta {
                    for k_bv in 0..=(beta - k_bh) {
                        let out_beta = beta - k_bh - k_bv;
                        if out_beta > cap as usize {
                            continue;
                        }
                        let out_block = BlockLabel::new(out_alpha as u32, out_beta as u32);
                        let out = map
                            .entry(out_block)
                            .or_insert_with(|| DMatrix::zeros(out_block.dim(), out_block.dim()));
                        let ha_range = k_ah..=(alpha - k_av);
                        let hb_range = k_bh..=(beta - k_bv);
                        let weight = |ha: usize, hb: usize| -> f64 {
                            amp[ha][k_ah]
                                * amp[alpha - ha][k_av]
                                * amp[hb][k_bh]
                                * amp[beta - hb][k_bv]
                        };
                        for ha in ha_range.clone() {
                            for hb in hb_range.clone() {
                                let w_ket = weight(ha, hb);
                                if w_ket == 0.0 {
                                    continue;
                                }
                                let row_in = ha * (beta + 1) + hb;
                                let row_out = (ha - k_ah) * (out_beta + 1) + (hb - k_bh);
                                for hap in ha_range.clone() {
                                    for hbp in hb_range.clone() {
                                        let w = w_ket * weight(hap, hbp);
                                        if w == 0.0 {
                                            continue;
                                        }
                                        let col_in = hap * (beta + 1) + hbp;
                                        let col_out =
                                            (hap - k_ah) * (out_beta + 1) + (hbp - k_bh);
                                        out[(row_out, col_out)] += matrix[(row_in, col_in)] * w;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    map.retain(|_, m| m.trace() > 0.0);
    map
}

/// Projector-trace weights mu_j = tr(rho Pi_j) of a normalized block matrix.
pub fn measure_mu(
    cg: &CgTable<f64>,
    matrix: &DMatrix<f64>,
    block: BlockLabel,
) -> Result<DVector<f64>> {
    if matrix.nrows() != block.dim() || matrix.ncols() != block.dim() {
        return Err(Error::DimensionMismatch {
            expected: block.dim(),
            got: matrix.nrows(),
        });
    }
    let spins = block.spin_range();
    let mut mu = DVector::zeros(spins.len());
    for (idx, &j) in spins.iter().enumerate() {
        let proj = total_spin_projector(cg, block, j)?;
        mu[idx] = matrix.zip_fold(&proj.matrix, 0.0, |acc, a, b| acc + a * b);
    }
    Ok(mu)
}

/// An SU(2) element in axis-angle form: U = exp(i (angle/2) axis . sigma).
#[derive(Clone, Copy, Debug)]
pub struct Su2 {
    pub angle: f64,
    pub axis: [f64; 3],
}

impl Su2 {
    /// The defining 2x2 matrix cos(angle/2) I + i sin(angle/2) axis . sigma,
    /// written in the same basis the generators use: occupation of the h
    /// mode ascending, so index 0 is the spin-down state.
    pub fn matrix(&self) -> CMatrix {
        let (s, c) = (0.5 * self.angle).sin_cos();
        let i = Complex::new(0.0, 1.0);
        let [nx, ny, nz] = self.axis;
        DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex::new(c, 0.0) - i * s * nz,
                i * s * Complex::new(nx, ny),
                i * s * Complex::new(nx, -ny),
                Complex::new(c, 0.0) + i * s * nz,
            ],
        )
    }
}

/// Haar-distributed SU(2) elements: uniform quaternions from Box-Muller
/// normals, reproducible from the seed.
pub fn haar_su2(count: usize, seed: u64) -> Vec<Su2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal_pair = |rng: &mut ChaCha8Rng| -> (f64, f64) {
        let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let phi = std::f64::consts::TAU * u2;
        (r * phi.cos(), r * phi.sin())
    };
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let (q0, q1) = normal_pair(&mut rng);
        let (q2, q3) = normal_pair(&mut rng);
        let norm = (q0 * q0 + q1 * q1 + q2 * q2 + q3 * q3).sqrt();
        if norm < 1e-6 {
            continue;
        }
        let w = (q0 / norm).clamp(-1.0, 1.0);
        let sin_half = (1.0 - w * w).sqrt();
        let axis = if sin_half < 1e-12 {
            [0.0, 0.0, 1.0]
        } else {
            [q1 / norm / sin_half, q2 / norm / sin_half, q3 / norm / sin_half]
        };
        out.push(Su2 {
            angle: 2.0 * w.acos(),
            axis,
        });
    }
    out
}

/// Quantum Stokes generators of one arm at fixed photon number: the spin
/// alpha/2 representation on the basis h = 0..=alpha (v = alpha - h).
#[derive(Clone, Debug)]
pub struct StokesGenerators {
    pub jx: CMatrix,
    pub jy: CMatrix,
    pub jz: CMatrix,
}

impl StokesGenerators {
    pub fn for_photon_number(alpha: u32) -> Self {
        let dim = alpha as usize + 1;
        let mut plus = CMatrix::zeros(dim, dim);
        for h in 0..dim - 1 {
            // J_+ = a_h^dagger a_v moves a photon from v to h.
            let v = (alpha as usize - h) as f64;
            plus[(h + 1, h)] = Complex::new(((h as f64 + 1.0) * v).sqrt(), 0.0);
        }
        let minus = plus.adjoint();
        let half = Complex::new(0.5, 0.0);
        let half_i = Complex::new(0.0, 0.5);
        let jx = (&plus + &minus) * half;
        let jy = (&minus - &plus) * half_i;
        let mut jz = CMatrix::zeros(dim, dim);
        for h in 0..dim {
            jz[(h, h)] = Complex::new(h as f64 - 0.5 * alpha as f64, 0.0);
        }
        StokesGenerators { jx, jy, jz }
    }

    /// Two-arm total J = J_a x I + I x J_b.
    pub fn combined(a: &Self, b: &Self) -> Self {
        let ia = CMatrix::identity(a.jz.nrows(), a.jz.nrows());
        let ib = CMatrix::identity(b.jz.nrows(), b.jz.nrows());
        StokesGenerators {
            jx: a.jx.kronecker(&ib) + ia.kronecker(&b.jx),
            jy: a.jy.kronecker(&ib) + ia.kronecker(&b.jy),
            jz: a.jz.kronecker(&ib) + ia.kronecker(&b.jz),
        }
    }

    /// V(U) = exp(i angle axis . J), via the Hermitian eigendecomposition of
    /// axis . J.
    pub fn rotation(&self, u: &Su2) -> CMatrix {
        let [nx, ny, nz] = u.axis;
        let h = &self.jx * Complex::new(nx, 0.0)
            + &self.jy * Complex::new(ny, 0.0)
            + &self.jz * Complex::new(nz, 0.0);
        let eig = SymmetricEigen::new(h);
        let phases = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues
                .iter()
                .map(|&l| Complex::from_polar(1.0, u.angle * l)),
        );
        &eig.eigenvectors * CMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint()
    }
}

/// Largest entry of |V rho V^dagger - rho| with V applied to the given
/// matrix promoted to complex.
fn rotation_deviation(matrix: &DMatrix<f64>, v: &CMatrix) -> f64 {
    let rho = matrix.map(|x| Complex::new(x, 0.0));
    let rotated = v * rho.clone() * v.adjoint();
    (rotated - rho)
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Largest symmetry deviation across `u_samples` Haar rotations applied to
/// both arms. Identically zero in exact arithmetic, before and after loss.
pub fn check_symmetry(state: &TruncatedState, u_samples: usize, seed: u64) -> Result<f64> {
    symmetry_deviation(state, u_samples, seed, true)
}

/// Negative control: rotates only arm a, which breaks the two-arm symmetry
/// for every entangled sector.
pub fn check_symmetry_one_sided(
    state: &TruncatedState,
    u_samples: usize,
    seed: u64,
) -> Result<f64> {
    symmetry_deviation(state, u_samples, seed, false)
}

fn symmetry_deviation(
    state: &TruncatedState,
    u_samples: usize,
    seed: u64,
    both_arms: bool,
) -> Result<f64> {
    if u_samples == 0 {
        return Err(Error::InvalidParams(
            "symmetry check needs at least one rotation sample".to_owned(),
        ));
    }
    let us = haar_su2(u_samples, seed);
    let mut worst = 0.0f64;
    match &state.rep {
        Rep::Pairs { sectors } => {
            for (n, sector) in sectors
                .iter()
                .enumerate()
                .take(SYMMETRY_SECTOR_CAP.min(sectors.len() - 1) + 1)
            {
                let full = embed_pair_sector(sector);
                let gen = StokesGenerators::for_photon_number(n as u32);
                let id = CMatrix::identity(n + 1, n + 1);
                for u in &us {
                    let arm = gen.rotation(u);
                    let v = if both_arms {
                        arm.kronecker(&arm)
                    } else {
                        arm.kronecker(&id)
                    };
                    worst = worst.max(rotation_deviation(&full, &v));
                }
            }
        }
        Rep::Blocks { map, .. } => {
            for (label, matrix) in map {
                let gen_a = StokesGenerators::for_photon_number(label.alpha);
                let gen_b = StokesGenerators::for_photon_number(label.beta);
                let id_b = CMatrix::identity(label.beta as usize + 1, label.beta as usize + 1);
                for u in &us {
                    let va = gen_a.rotation(u);
                    let v = if both_arms {
                        va.kronecker(&gen_b.rotation(u))
                    } else {
                        va.kronecker(&id_b)
                    };
                    worst = worst.max(rotation_deviation(matrix, &v));
                }
            }
        }
    }
    Ok(worst)
}
