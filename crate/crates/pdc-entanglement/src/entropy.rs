//! Relative entropy of entanglement of symmetric blocks, minimized over the
//! PPT polytope.
//!
//! Because the state and every candidate PPT state share the total-spin
//! projector eigenbasis, and each normalized projector is maximally mixed on
//! its support, the quantum relative entropy collapses to the classical
//! divergence `sum_j mu_j log2(mu_j / zeta_j)`: the dimension factors 2j+1
//! cancel between the two spectra. Minimizing over the polytope is then a
//! tiny convex program, solved by pairwise Frank-Wolfe over the explicit
//! vertex list with an exact line search (the directional derivative is
//! monotone, so bisection finds the segment optimum). A nonnegative
//! least-squares fit of the gradient to the active constraint normals
//! certifies optimality.

use nalgebra::{DMatrix, DVector};

use crate::blocks::{block_state, BlockLabel, SymmetricBlockState};
use crate::counts::ModelParams;
use crate::ppt::PptPolytope;
use crate::scalar::{real, to_f64, Scalar};
use crate::{Context, Error, Result};

/// Certified optimality: the KKT residual of a returned minimizer stays
/// below this.
pub const KKT_TOLERANCE: f64 = 1e-8;

/// Frank-Wolfe duality-gap target; the gap upper-bounds the objective error.
const GAP_TOLERANCE: f64 = 1e-12;

/// Hard cap on solver iterations; the per-block problems have at most a few
/// dozen vertices, so hitting this indicates a bug.
const MAX_ITERATIONS: usize = 100_000;

/// Floor for logarithm arguments; defensive only, the line search keeps
/// iterates away from the boundary wherever mu puts mass.
const LOG_FLOOR: f64 = 1e-300;

/// Constraints (rows of C or coordinates) closer to zero than this count as
/// active for the KKT certificate.
const ACTIVE_TOLERANCE: f64 = 1e-9;

/// Classical relative entropy `sum_j mu_j log2(mu_j / zeta_j)` with the
/// 0 log 0 = 0 convention on mu.
pub fn kl_bits<S: Scalar>(mu: &DVector<S>, zeta: &DVector<S>) -> S {
    let ln2 = real::<S>(std::f64::consts::LN_2);
    let floor = real::<S>(LOG_FLOOR);
    let mut total = S::zero();
    for (m, z) in mu.iter().zip(zeta.iter()) {
        if *m > S::zero() {
            let z = if *z > floor { *z } else { floor };
            total += *m * (m.ln() - z.ln());
        }
    }
    let bits = total / ln2;
    // Rounding can leave a tiny negative at mu = zeta; the true value is >= 0.
    if bits < S::zero() && to_f64(bits) > -1e-12 {
        S::zero()
    } else {
        bits
    }
}

/// Minimizer report for one block.
#[derive(Clone, Debug)]
pub struct EntropyResult<S> {
    pub block: BlockLabel,
    /// Relative entropy of entanglement in bits, conditional on the block.
    pub e_r: S,
    /// The closest PPT weight vector.
    pub zeta_star: DVector<S>,
    /// Norm of the unexplained gradient after fitting active constraint
    /// normals; small values certify optimality of `zeta_star`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Minimizes KL(mu || zeta) over the block's PPT polytope.
pub fn block_relative_entropy<S: Scalar>(
    state: &SymmetricBlockState<S>,
    polytope: &PptPolytope<S>,
) -> Result<EntropyResult<S>> {
    let (inside, _) = polytope.is_ppt(state)?;
    if inside {
        return Ok(EntropyResult {
            block: state.block,
            e_r: S::zero(),
            zeta_star: state.mu.clone(),
            kkt_residual: 0.0,
            iterations: 0,
        });
    }
    let vertices = polytope.vertices();
    let uniform = vec![real::<S>(1.0 / vertices.len() as f64); vertices.len()];
    let (zeta_star, e_r, iterations) = frank_wolfe(&state.mu, polytope, uniform)?;
    let kkt_residual = kkt_residual(&state.mu, polytope, &zeta_star);
    Ok(EntropyResult {
        block: state.block,
        e_r,
        zeta_star,
        kkt_residual,
        iterations,
    })
}

/// Gradient of the objective in bits: -mu_j / (zeta_j ln 2).
fn gradient<S: Scalar>(mu: &DVector<S>, zeta: &DVector<S>) -> DVector<S> {
    let ln2 = real::<S>(std::f64::consts::LN_2);
    let floor = real::<S>(LOG_FLOOR);
    DVector::from_iterator(
        mu.len(),
        mu.iter().zip(zeta.iter()).map(|(&m, &z)| {
            if m > S::zero() {
                let z = if z > floor { z } else { floor };
                -m / (z * ln2)
            } else {
                S::zero()
            }
        }),
    )
}

/// Pairwise Frank-Wolfe over the vertex list, starting from the convex
/// combination `lambda`. Returns the minimizer, its objective, and the
/// iteration count.
fn frank_wolfe<S: Scalar>(
    mu: &DVector<S>,
    polytope: &PptPolytope<S>,
    mut lambda: Vec<S>,
) -> Result<(DVector<S>, S, usize)> {
    let vertices = polytope.vertices();
    debug_assert_eq!(lambda.len(), vertices.len());
    let d = mu.len();
    let x_of = |lambda: &[S]| -> DVector<S> {
        let mut x = DVector::zeros(d);
        for (w, v) in lambda.iter().zip(vertices) {
            if *w > S::zero() {
                x += v * *w;
            }
        }
        x
    };

    let gap_tol = real::<S>(GAP_TOLERANCE);
    for iter in 0..MAX_ITERATIONS {
        let x = x_of(&lambda);
        let g = gradient(mu, &x);

        // Toward-vertex: best linear response; away-vertex: worst active one.
        let mut toward = 0usize;
        let mut toward_score = g.dot(&vertices[0]);
        let mut away = None;
        let mut away_score = S::zero();
        for (i, v) in vertices.iter().enumerate() {
            let score = g.dot(v);
            if score < toward_score {
                toward_score = score;
                toward = i;
            }
            if to_f64(lambda[i]) > 1e-15 && (away.is_none() || score > away_score) {
                away_score = score;
                away = Some(i);
            }
        }
        let away = away.expect("iterate is a convex combination");

        let gap = g.dot(&x) - toward_score;
        if gap <= gap_tol {
            let value = kl_bits(mu, &x);
            return Ok((x, value, iter));
        }

        // Pairwise direction: shift weight from the away vertex to the
        // toward vertex; fall back to a classic step if it cannot descend.
        let (direction, budget, from): (DVector<S>, S, Option<usize>) =
            if g.dot(&(&vertices[toward] - &vertices[away])) < S::zero() {
                (
                    &vertices[toward] - &vertices[away],
                    lambda[away],
                    Some(away),
                )
            } else {
                (&vertices[toward] - &x, S::one(), None)
            };
        let step = line_search(mu, &x, &direction, budget);
        if step <= S::zero() {
            let value = kl_bits(mu, &x);
            return Ok((x, value, iter));
        }

        match from {
            Some(away) => {
                lambda[away] -= step;
                lambda[toward] += step;
                if to_f64(lambda[away]) < 1e-15 {
                    lambda[away] = S::zero();
                }
            }
            None => {
                let keep = S::one() - step;
                for w in lambda.iter_mut() {
                    *w *= keep;
                }
                lambda[toward] += step;
            }
        }
        // Counter weight drift; the iterate must stay on the simplex of
        // vertex combinations.
        let total: S = lambda.iter().copied().fold(S::zero(), |a, b| a + b);
        for w in lambda.iter_mut() {
            *w /= total;
        }
    }
    Err(Error::CheckFailed(format!(
        "relative-entropy solver exhausted {MAX_ITERATIONS} iterations on block {}",
        polytope.block()
    )))
}

/// Exact line search on [0, budget]: the directional derivative of the
/// objective is monotone increasing (convexity), so bisection locates its
/// zero; infinite derivatives at depleted coordinates push the step back
/// inside automatically.
fn line_search<S: Scalar>(mu: &DVector<S>, x: &DVector<S>, d: &DVector<S>, budget: S) -> S {
    let slope = |gamma: S| -> f64 {
        let mut total = 0.0f64;
        for j in 0..mu.len() {
            let m = to_f64(mu[j]);
            if m <= 0.0 {
                continue;
            }
            let dj = to_f64(d[j]);
            if dj == 0.0 {
                continue;
            }
            let z = to_f64(x[j]) + to_f64(gamma) * dj;
            total += -m * dj / z.max(LOG_FLOOR);
        }
        total
    };
    if slope(S::zero()) >= 0.0 {
        return S::zero();
    }
    if slope(budget) <= 0.0 {
        return budget;
    }
    let mut lo = S::zero();
    let mut hi = budget;
    let half = real::<S>(0.5);
    for _ in 0..80 {
        let mid = (lo + hi) * half;
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Norm of the gradient component not explained by the active constraints:
/// fits `grad f = sum nu_i a_i + nu_0 1` with nu_i >= 0 over the active
/// normals (nonnegativity facets and C rows) and a free multiplier for the
/// normalization.
fn kkt_residual<S: Scalar>(mu: &DVector<S>, polytope: &PptPolytope<S>, zeta: &DVector<S>) -> f64 {
    let d = zeta.len();
    let grad = gradient(mu, zeta);
    let g = DVector::from_iterator(d, grad.iter().map(|&x| to_f64(x)));

    let mut columns: Vec<DVector<f64>> = Vec::new();
    for j in 0..d {
        if to_f64(zeta[j]).abs() <= ACTIVE_TOLERANCE {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            columns.push(e);
        }
    }
    let c = polytope.constraints();
    let values = c * zeta;
    for k in 0..c.nrows() {
        if to_f64(values[k]).abs() <= ACTIVE_TOLERANCE {
            columns.push(DVector::from_iterator(
                d,
                c.row(k).iter().map(|&x| to_f64(x)),
            ));
        }
    }
    // The equality multiplier is free: encode it as +1 and -1 columns.
    columns.push(DVector::from_element(d, 1.0));
    columns.push(DVector::from_element(d, -1.0));

    let m = DMatrix::from_columns(&columns);
    let (_, residual) = nnls(&m, &g);
    residual
}

/// Lawson-Hanson nonnegative least squares: minimizes |M x - b| over x >= 0.
/// Returns the solution and the residual norm. Dimensions here are tiny
/// (columns = active constraints + 2).
fn nnls(m: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = m.ncols();
    let mut passive = vec![false; n];
    let mut x = DVector::<f64>::zeros(n);

    let solve_passive = |passive: &[bool]| -> Option<DVector<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        if idx.is_empty() {
            return Some(DVector::zeros(0));
        }
        let sub = DMatrix::from_columns(&idx.iter().map(|&i| m.column(i).into_owned()).collect::<Vec<_>>());
        sub.svd(true, true).solve(b, 1e-13).ok()
    };

    for _round in 0..(10 * n + 10) {
        let w = m.transpose() * (b - m * &x);
        let candidate = (0..n)
            .filter(|&i| !passive[i])
            .max_by(|&a, &b2| w[a].partial_cmp(&w[b2]).unwrap());
        let Some(best) = candidate else { break };
        if w[best] <= 1e-12 {
            break;
        }
        passive[best] = true;

        loop {
            let Some(z) = solve_passive(&passive) else {
                passive[best] = false;
                break;
            };
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            if idx.iter().enumerate().all(|(k, _)| z[k] > 0.0) {
                x.fill(0.0);
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            // Step back along the segment from x to z until a passive
            // variable hits zero, then retire it.
            let mut alpha = f64::INFINITY;
            for (k, &i) in idx.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = x[i] - z[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &i) in idx.iter().enumerate() {
                x[i] += alpha * (z[k] - x[i]);
                if x[i] <= 1e-14 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    let residual = (b - m * &x).norm();
    (x, residual)
}

/// One block's share of the truncated total.
#[derive(Clone, Debug)]
pub struct BlockContribution<S> {
    pub block: BlockLabel,
    /// P(alpha, beta).
    pub probability: S,
    /// Relative entropy of entanglement of the normalized block, in bits.
    pub e_r: S,
    /// probability * e_r, the block's summand in the total.
    pub weighted: S,
}

/// Truncated total with its coverage report.
#[derive(Clone, Debug)]
pub struct TotalEntropy<S> {
    /// sum of P(alpha, beta) * E_R over the cutoff window, in bits. A lower
    /// bound on the full sum because every discarded summand is nonnegative.
    pub total: S,
    /// sum of P(alpha, beta) over the window; 1 - mass_captured bounds the
    /// probability weight the truncation discards.
    pub mass_captured: S,
    pub blocks: Vec<BlockContribution<S>>,
}

/// Aggregates P(alpha, beta) * E_R over all blocks within the context's
/// cutoff, skipping empty blocks.
pub fn total_relative_entropy<S: Scalar>(
    ctx: &Context<S>,
    params: &ModelParams,
) -> Result<TotalEntropy<S>> {
    let mut total = S::zero();
    let mut mass = S::zero();
    let mut blocks = Vec::new();
    for alpha in 0..=ctx.alpha_max() {
        for beta in 0..=ctx.beta_max() {
            let block = BlockLabel::new(alpha, beta);
            let Some((fit, probability)) = block_state(ctx.cg(), params, block)? else {
                blocks.push(BlockContribution {
                    block,
                    probability: S::zero(),
                    e_r: S::zero(),
                    weighted: S::zero(),
                });
                continue;
            };
            mass += probability;
            let e_r = if alpha.min(beta) == 0 {
                // Single-spin blocks carry no entanglement.
                S::zero()
            } else {
                block_relative_entropy(&fit.state, ctx.polytope(block)?)?.e_r
            };
            blocks.push(BlockContribution {
                block,
                probability,
                e_r,
                weighted: probability * e_r,
            });
            total += probability * e_r;
        }
    }
    Ok(TotalEntropy {
        total,
        mass_captured: mass,
        blocks,
    })
}
