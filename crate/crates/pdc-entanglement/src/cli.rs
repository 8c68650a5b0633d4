//! The `pdcent` command-line driver.
//!
//! Eight modes cover the pipeline end to end: block probabilities (`probs`),
//! spin-weight extraction (`mu`), polytope export (`polytope`), relative
//! entropy at one point (`entropy`) and over a loss grid (`sweep`), the two
//! figure datasets (`fig1`, `fig2`), and the dual-path verification suite
//! (`oracle-check`). Data modes emit CSV (default) or JSON to stdout or a
//! file. Entropies are in bits (log base 2), and every entropy table carries
//! the photon-number cutoff and the probability mass captured below it.
//!
//! Runs are deterministic: the same arguments produce byte-identical output.
//! The one randomized mode, `oracle-check`, seeds its rotation sampler from a
//! flag with a fixed default and echoes the seed in its report.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when a
//! numerical self-check fails.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::blocks::{
    block_state, extract_mu, population_vector, BlockLabel, MU_RESIDUAL_TOLERANCE,
};
use crate::counts::{block_probability, ModelParams};
use crate::entropy::{total_relative_entropy, TotalEntropy};
use crate::oracle;
use crate::{Context, Error, Real, Result};

/// Vertex lists ship only for blocks with min(alpha, beta) at or below this;
/// constraint rows always ship. Vertex counts grow combinatorially with the
/// spin dimension while the plots only ever use the small blocks.
const VERTEX_BLOCK_LIMIT: u32 = 3;

#[derive(Parser)]
#[command(
    name = "pdcent",
    version,
    about = "Polarization entanglement of lossy multi-photon down-conversion states",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand)]
enum Mode {
    /// Block probabilities P(alpha, beta) of the lossy state.
    Probs(ProbsArgs),
    /// Total-spin weights mu_j of every populated block.
    Mu(MuArgs),
    /// PPT polytopes per block: constraint rows and vertex lists.
    Polytope(PolytopeArgs),
    /// Relative entropy of entanglement at one parameter point.
    Entropy(EntropyArgs),
    /// Relative entropy swept over a transmittivity grid.
    Sweep(SweepArgs),
    /// Cross-check the count series and weight extraction against a
    /// truncated Fock-space simulation.
    OracleCheck(OracleCheckArgs),
    /// Weight trajectories of the equal-number blocks against their PPT
    /// polytopes, parametrized by xi.
    Fig1(Fig1Args),
    /// Entropy-versus-loss curves for a list of mean photon numbers.
    Fig2(Fig2Args),
}

/// Squeezing strength, given either directly or through the mean photon
/// number of one arm before loss.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct Squeeze {
    /// Interaction time (squeezing parameter) tau.
    #[arg(long)]
    tau: Option<f64>,
    /// Mean photon number 2 sinh^2(tau) per arm; alternative to --tau.
    #[arg(long)]
    mean_photons: Option<f64>,
}

impl Squeeze {
    fn tau(&self) -> Result<f64> {
        match (self.tau, self.mean_photons) {
            (Some(tau), None) => Ok(tau),
            (None, Some(n)) => mean_to_tau(n),
            _ => Err(Error::Config(
                "exactly one of --tau and --mean-photons must be given".into(),
            )),
        }
    }
}

fn mean_to_tau(n: f64) -> Result<f64> {
    if !n.is_finite() || n < 0.0 {
        return Err(Error::Config(format!(
            "mean photon number must be finite and nonnegative, got {n}"
        )));
    }
    Ok((n / 2.0).sqrt().asinh())
}

#[derive(Args)]
struct OutputArgs {
    /// Write to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ProbsArgs {
    /// Transmittivity in [0, 1], identical for all four modes.
    #[arg(long)]
    eta: f64,
    #[command(flatten)]
    squeeze: Squeeze,
    /// Largest photon number on arm a in the table.
    #[arg(long, default_value_t = 5)]
    alpha_max: u32,
    /// Largest photon number on arm b in the table.
    #[arg(long, default_value_t = 5)]
    beta_max: u32,
    /// Truncation tolerance of the count series.
    #[arg(long, default_value_t = ModelParams::DEFAULT_SERIES_EPS)]
    series_eps: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct MuArgs {
    /// Transmittivity in [0, 1], identical for all four modes.
    #[arg(long)]
    eta: f64,
    #[command(flatten)]
    squeeze: Squeeze,
    /// Largest photon number on arm a.
    #[arg(long, default_value_t = 5)]
    alpha_max: u32,
    /// Largest photon number on arm b.
    #[arg(long, default_value_t = 5)]
    beta_max: u32,
    /// Ceiling on the least-squares residual certifying rotation invariance.
    #[arg(long, default_value_t = MU_RESIDUAL_TOLERANCE)]
    residual_tolerance: f64,
    /// Truncation tolerance of the count series.
    #[arg(long, default_value_t = ModelParams::DEFAULT_SERIES_EPS)]
    series_eps: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct PolytopeArgs {
    /// Largest photon number on arm a.
    #[arg(long, default_value_t = 3)]
    alpha_max: u32,
    /// Largest photon number on arm b.
    #[arg(long, default_value_t = 3)]
    beta_max: u32,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct EntropyArgs {
    /// Transmittivity in [0, 1], identical for all four modes.
    #[arg(long)]
    eta: f64,
    #[command(flatten)]
    squeeze: Squeeze,
    /// Photon-number cutoff; blocks with alpha, beta <= cutoff enter the sum.
    #[arg(long, default_value_t = 5)]
    cutoff: u32,
    /// Truncation tolerance of the count series.
    #[arg(long, default_value_t = ModelParams::DEFAULT_SERIES_EPS)]
    series_eps: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Transmittivity grid, "start:stop:count" or comma-separated values.
    #[arg(long, default_value = "0:1:101")]
    eta_grid: String,
    #[command(flatten)]
    squeeze: Squeeze,
    /// Photon-number cutoff; blocks with alpha, beta <= cutoff enter the sum.
    #[arg(long, default_value_t = 5)]
    cutoff: u32,
    /// Truncation tolerance of the count series.
    #[arg(long, default_value_t = ModelParams::DEFAULT_SERIES_EPS)]
    series_eps: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct OracleCheckArgs {
    /// Transmittivities to test, "start:stop:count" or comma-separated.
    #[arg(long, default_value = "0.3,0.6,0.9")]
    eta_grid: String,
    /// Interaction times to test, "start:stop:count" or comma-separated.
    #[arg(long, default_value = "0.5,1.0")]
    tau_grid: String,
    /// Check every block with alpha + beta up to this sum.
    #[arg(long, default_value_t = 4)]
    block_sum_max: u32,
    /// Number of random rotations per invariance check.
    #[arg(long, default_value_t = 20)]
    u_samples: usize,
    /// Seed of the rotation sampler.
    #[arg(long, default_value_t = oracle::HAAR_SEED)]
    seed: u64,
    /// Tail bound choosing the simulation's pair-number cutoff.
    #[arg(long, default_value_t = 1e-10)]
    tail_bound: f64,
    /// Agreement tolerance for block probabilities.
    #[arg(long, default_value_t = 1e-8)]
    prob_tolerance: f64,
    /// Agreement tolerance for spin weights.
    #[arg(long, default_value_t = 1e-8)]
    mu_tolerance: f64,
    /// Rotation-invariance tolerance.
    #[arg(long, default_value_t = 1e-10)]
    symmetry_tolerance: f64,
    /// Truncation tolerance of the count series.
    #[arg(long, default_value_t = ModelParams::DEFAULT_SERIES_EPS)]
    series_eps: f64,
    /// Deliberately corrupt the series prefactor; the probability check must
    /// then fail. Negative control for the harness itself.
    #[arg(long)]
    corrupt_prefactor: bool,
    /// Write the report to this file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct Fig1Args {
    /// Grid of xi = (1 - eta) tanh(tau) values in [0, 1).
    #[arg(long, default_value = "0:0.99:100")]
    xi_grid: String,
    /// Truncation tolerance of the count series.
    #[arg(long, default_value_t = ModelParams::DEFAULT_SERIES_EPS)]
    series_eps: f64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct Fig2Args {
    /// Mean photon numbers, one curve each, comma-separated.
    #[arg(long, default_value = "0.5,1,3")]
    mean_photons: String,
    /// Transmittivity grid, "start:stop:count" or comma-separated values.
    #[arg(long, default_value = "0:1:101")]
    eta_grid: String,
    /// Photon-number cutoff; blocks with alpha, beta <= cutoff enter the sum.
    #[arg(long, default_value_t = 5)]
    cutoff: u32,
    /// Truncation tolerance of the count series.
    #[arg(long, default_value_t = ModelParams::DEFAULT_SERIES_EPS)]
    series_eps: f64,
    #[command(flatten)]
    out: OutputArgs,
}

/// Entry point of the binary; parses arguments and maps errors to the
/// documented exit codes.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.mode {
        Mode::Probs(args) => run_probs(args),
        Mode::Mu(args) => run_mu(args),
        Mode::Polytope(args) => run_polytope(args),
        Mode::Entropy(args) => run_entropy(args),
        Mode::Sweep(args) => run_sweep(args),
        Mode::OracleCheck(args) => run_oracle_check(args),
        Mode::Fig1(args) => run_fig1(args),
        Mode::Fig2(args) => run_fig2(args),
    }
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::CheckFailed(_)
        | Error::SymmetryViolation { .. }
        | Error::NegativeWeight { .. }
        | Error::JointDiagonalization { .. }
        | Error::SeriesDivergence(_) => 2,
        _ => 1,
    }
}

/// Parses "start:stop:count" (inclusive endpoints, exact at both ends) or a
/// comma-separated value list.
fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parse_one = |token: &str| -> Result<f64> {
        let token = token.trim();
        let value: f64 = token
            .parse()
            .map_err(|_| Error::Config(format!("cannot parse '{token}' as a number")))?;
        if !value.is_finite() {
            return Err(Error::Config(format!("grid value '{token}' is not finite")));
        }
        Ok(value)
    };
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(Error::Config("empty grid specification".into()));
    }
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.len() {
        1 => spec.split(',').map(parse_one).collect(),
        3 => {
            let start = parse_one(parts[0])?;
            let stop = parse_one(parts[1])?;
            let count: usize = parts[2].trim().parse().map_err(|_| {
                Error::Config(format!("cannot parse '{}' as a point count", parts[2].trim()))
            })?;
            if count == 0 {
                return Err(Error::Config("grid needs at least one point".into()));
            }
            if count == 1 {
                if start != stop {
                    return Err(Error::Config(
                        "a single-point grid needs start = stop".into(),
                    ));
                }
                return Ok(vec![start]);
            }
            let step = (stop - start) / (count - 1) as f64;
            Ok((0..count)
                .map(|i| if i + 1 == count { stop } else { start + step * i as f64 })
                .collect())
        }
        _ => Err(Error::Config(format!(
            "grid '{spec}' must be 'start:stop:count' or comma-separated values"
        ))),
    }
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg.into()))
    }
}

/// Fixed-precision scientific notation; the CSV schema promises this format
/// so repeated runs are byte-identical.
fn sci(x: f64) -> String {
    format!("{x:.12e}")
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn matrix_rows(m: &DMatrix<Real>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn vector_entries(v: &DVector<Real>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn spin_values(block: BlockLabel) -> Vec<f64> {
    block.spin_range().iter().map(|j| j.to_f64()).collect()
}

#[derive(Serialize)]
struct ProbsReport {
    eta: f64,
    tau: f64,
    xi: f64,
    mean_photons: f64,
    alpha_max: u32,
    beta_max: u32,
    mass_captured: f64,
    blocks: Vec<ProbEntry>,
}

#[derive(Serialize)]
struct ProbEntry {
    alpha: u32,
    beta: u32,
    probability: f64,
}

fn run_probs(args: ProbsArgs) -> Result<()> {
    let params = ModelParams::new(args.eta, args.squeeze.tau()?)?.with_series_eps(args.series_eps)?;
    let mut blocks = Vec::new();
    let mut mass = 0.0;
    for alpha in 0..=args.alpha_max {
        for beta in 0..=args.beta_max {
            let p: Real = block_probability(&params, BlockLabel::new(alpha, beta))?;
            mass += p;
            blocks.push(ProbEntry {
                alpha,
                beta,
                probability: p,
            });
        }
    }
    let text = match args.out.format {
        Format::Csv => {
            let mut s = String::from("alpha,beta,probability\n");
            for b in &blocks {
                let _ = writeln!(s, "{},{},{}", b.alpha, b.beta, sci(b.probability));
            }
            s
        }
        Format::Json => to_json(&ProbsReport {
            eta: params.eta(),
            tau: params.tau(),
            xi: params.xi(),
            mean_photons: params.mean_photons(),
            alpha_max: args.alpha_max,
            beta_max: args.beta_max,
            mass_captured: mass,
            blocks,
        })?,
    };
    emit(args.out.output.as_deref(), &text)
}

#[derive(Serialize)]
struct MuReport {
    eta: f64,
    tau: f64,
    xi: f64,
    mean_photons: f64,
    alpha_max: u32,
    beta_max: u32,
    residual_tolerance: f64,
    blocks: Vec<MuEntry>,
}

#[derive(Serialize)]
struct MuEntry {
    alpha: u32,
    beta: u32,
    probability: f64,
    residual: f64,
    spins: Vec<f64>,
    mu: Vec<f64>,
}

fn run_mu(args: MuArgs) -> Result<()> {
    let params = ModelParams::new(args.eta, args.squeeze.tau()?)?.with_series_eps(args.series_eps)?;
    let ctx: Context<Real> = Context::new(args.alpha_max, args.beta_max)?;
    let mut blocks = Vec::new();
    for alpha in 0..=args.alpha_max {
        for beta in 0..=args.beta_max {
            let block = BlockLabel::new(alpha, beta);
            let Some(pops) = population_vector::<Real>(&params, block)? else {
                continue;
            };
            let fit = extract_mu(ctx.cg(), block, &pops.populations, args.residual_tolerance)?;
            blocks.push(MuEntry {
                alpha,
                beta,
                probability: pops.probability,
                residual: fit.residual,
                spins: spin_values(block),
                mu: vector_entries(&fit.state.mu),
            });
        }
    }
    let text = match args.out.format {
        Format::Csv => {
            let mut s = String::from("alpha,beta,probability,residual,j,mu\n");
            for b in &blocks {
                for (j, mu) in b.spins.iter().zip(&b.mu) {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{j},{}",
                        b.alpha,
                        b.beta,
                        sci(b.probability),
                        sci(b.residual),
                        sci(*mu)
                    );
                }
            }
            s
        }
        Format::Json => to_json(&MuReport {
            eta: params.eta(),
            tau: params.tau(),
            xi: params.xi(),
            mean_photons: params.mean_photons(),
            alpha_max: args.alpha_max,
            beta_max: args.beta_max,
            residual_tolerance: args.residual_tolerance,
            blocks,
        })?,
    };
    emit(args.out.output.as_deref(), &text)
}

#[derive(Serialize)]
struct PolytopeReport {
    alpha_max: u32,
    beta_max: u32,
    vertex_block_limit: u32,
    blocks: Vec<PolytopeEntry>,
}

#[derive(Serialize)]
struct PolytopeEntry {
    alpha: u32,
    beta: u32,
    spins: Vec<f64>,
    /// One row per distinct eigenvalue tuple of the partially transposed
    /// projectors; the region is `row . zeta >= 0` for every row, on the
    /// probability simplex over `spins`.
    constraints: Vec<Vec<f64>>,
    vertices: Option<Vec<Vec<f64>>>,
}

fn run_polytope(args: PolytopeArgs) -> Result<()> {
    let ctx: Context<Real> = Context::new(args.alpha_max, args.beta_max)?;
    let mut blocks = Vec::new();
    for alpha in 0..=args.alpha_max {
        for beta in 0..=args.beta_max {
            let block = BlockLabel::new(alpha, beta);
            let polytope = ctx.polytope(block)?;
            let vertices = (alpha.min(beta) <= VERTEX_BLOCK_LIMIT)
                .then(|| polytope.vertices().iter().map(vector_entries).collect());
            blocks.push(PolytopeEntry {
                alpha,
                beta,
                spins: spin_values(block),
                constraints: matrix_rows(polytope.constraints()),
                vertices,
            });
        }
    }
    let text = match args.out.format {
        Format::Csv => {
            let mut s = String::from("alpha,beta,kind,row,component,value\n");
            for b in &blocks {
                for (i, j) in b.spins.iter().enumerate() {
                    let _ = writeln!(s, "{},{},spin,0,{i},{j}", b.alpha, b.beta);
                }
                for (r, row) in b.constraints.iter().enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        let _ = writeln!(s, "{},{},constraint,{r},{c},{}", b.alpha, b.beta, sci(*v));
                    }
                }
                if let Some(vertices) = &b.vertices {
                    for (r, vertex) in vertices.iter().enumerate() {
                        for (c, v) in vertex.iter().enumerate() {
                            let _ = writeln!(s, "{},{},vertex,{r},{c},{}", b.alpha, b.beta, sci(*v));
                        }
                    }
                }
            }
            s
        }
        Format::Json => to_json(&PolytopeReport {
            alpha_max: args.alpha_max,
            beta_max: args.beta_max,
            vertex_block_limit: VERTEX_BLOCK_LIMIT,
            blocks,
        })?,
    };
    emit(args.out.output.as_deref(), &text)
}

#[derive(Serialize)]
struct SweepReport {
    tau: f64,
    cutoff: u32,
    entropy_units: &'static str,
    points: Vec<EntropyPoint>,
}

#[derive(Serialize)]
struct EntropyPoint {
    eta: f64,
    xi: f64,
    mean_photons: f64,
    mass_captured: f64,
    e_r_total: f64,
    blocks: Vec<BlockDetail>,
}

#[derive(Serialize)]
struct BlockDetail {
    alpha: u32,
    beta: u32,
    probability: f64,
    e_r: f64,
    weighted: f64,
}

/// One sweep row per transmittivity, computed in parallel, ordered as given.
fn entropy_points(
    ctx: &Context<Real>,
    tau: f64,
    etas: &[f64],
    series_eps: f64,
) -> Result<Vec<(ModelParams, TotalEntropy<Real>)>> {
    etas.par_iter()
        .map(|&eta| {
            let params = ModelParams::new(eta, tau)?.with_series_eps(series_eps)?;
            let total = total_relative_entropy(ctx, &params)?;
            Ok((params, total))
        })
        .collect()
}

fn entropy_csv(cutoff: u32, rows: &[(ModelParams, TotalEntropy<Real>)]) -> String {
    let mut s = String::from(
        "# relative entropy in bits (log base 2); er_A_B columns are conditional block entropies\n",
    );
    s.push_str("eta,xi,mean_photons,cutoff,mass_captured,e_r_total");
    for alpha in 0..=cutoff {
        for beta in 0..=cutoff {
            let _ = write!(s, ",er_{alpha}_{beta}");
        }
    }
    s.push('\n');
    for (params, total) in rows {
        debug_assert_eq!(total.blocks.len(), ((cutoff + 1) * (cutoff + 1)) as usize);
        let _ = write!(
            s,
            "{},{},{},{cutoff},{},{}",
            sci(params.eta()),
            sci(params.xi()),
            sci(params.mean_photons()),
            sci(total.mass_captured),
            sci(total.total)
        );
        for b in &total.blocks {
            let _ = write!(s, ",{}", sci(b.e_r));
        }
        s.push('\n');
    }
    s
}

fn entropy_point(params: &ModelParams, total: &TotalEntropy<Real>) -> EntropyPoint {
    EntropyPoint {
        eta: params.eta(),
        xi: params.xi(),
        mean_photons: params.mean_photons(),
        mass_captured: total.mass_captured,
        e_r_total: total.total,
        blocks: total
            .blocks
            .iter()
            .map(|b| BlockDetail {
                alpha: b.block.alpha,
                beta: b.block.beta,
                probability: b.probability,
                e_r: b.e_r,
                weighted: b.weighted,
            })
            .collect(),
    }
}

fn emit_entropy_table(
    out: &OutputArgs,
    tau: f64,
    cutoff: u32,
    rows: &[(ModelParams, TotalEntropy<Real>)],
) -> Result<()> {
    let text = match out.format {
        Format::Csv => entropy_csv(cutoff, rows),
        Format::Json => to_json(&SweepReport {
            tau,
            cutoff,
            entropy_units: "bits",
            points: rows.iter().map(|(p, t)| entropy_point(p, t)).collect(),
        })?,
    };
    emit(out.output.as_deref(), &text)
}

fn run_entropy(args: EntropyArgs) -> Result<()> {
    let tau = args.squeeze.tau()?;
    let ctx: Context<Real> = Context::new(args.cutoff, args.cutoff)?;
    let rows = entropy_points(&ctx, tau, &[args.eta], args.series_eps)?;
    emit_entropy_table(&args.out, tau, args.cutoff, &rows)
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let tau = args.squeeze.tau()?;
    let etas = parse_grid(&args.eta_grid)?;
    for &eta in &etas {
        ensure(
            (0.0..=1.0).contains(&eta),
            format!("eta = {eta} outside [0, 1]"),
        )?;
    }
    let ctx: Context<Real> = Context::new(args.cutoff, args.cutoff)?;
    let rows = entropy_points(&ctx, tau, &etas, args.series_eps)?;
    emit_entropy_table(&args.out, tau, args.cutoff, &rows)
}

#[derive(Serialize)]
struct Fig2Report {
    cutoff: u32,
    entropy_units: &'static str,
    curves: Vec<Fig2Curve>,
}

#[derive(Serialize)]
struct Fig2Curve {
    mean_photons: f64,
    tau: f64,
    points: Vec<EntropyPoint>,
}

fn run_fig2(args: Fig2Args) -> Result<()> {
    let means = parse_grid(&args.mean_photons)?;
    let etas = parse_grid(&args.eta_grid)?;
    for &eta in &etas {
        ensure(
            (0.0..=1.0).contains(&eta),
            format!("eta = {eta} outside [0, 1]"),
        )?;
    }
    let ctx: Context<Real> = Context::new(args.cutoff, args.cutoff)?;
    let mut curves = Vec::new();
    for &n in &means {
        let tau = mean_to_tau(n)?;
        let rows = entropy_points(&ctx, tau, &etas, args.series_eps)?;
        curves.push((n, tau, rows));
    }
    let text = match args.out.format {
        Format::Csv => {
            let mut s = String::new();
            for (i, (_, _, rows)) in curves.iter().enumerate() {
                let table = entropy_csv(args.cutoff, rows);
                if i == 0 {
                    s.push_str(&table);
                } else {
                    // Header lines only once; curves are told apart by the
                    // mean_photons column.
                    let body = table.splitn(3, '\n').nth(2).unwrap_or_default();
                    s.push_str(body);
                }
            }
            s
        }
        Format::Json => to_json(&Fig2Report {
            cutoff: args.cutoff,
            entropy_units: "bits",
            curves: curves
                .iter()
                .map(|(n, tau, rows)| Fig2Curve {
                    mean_photons: *n,
                    tau: *tau,
                    points: rows.iter().map(|(p, t)| entropy_point(p, t)).collect(),
                })
                .collect(),
        })?,
    };
    emit(args.out.output.as_deref(), &text)
}

#[derive(Serialize)]
struct Fig1Report {
    blocks: Vec<Fig1Block>,
}

#[derive(Serialize)]
struct Fig1Block {
    alpha: u32,
    beta: u32,
    spins: Vec<f64>,
    constraints: Vec<Vec<f64>>,
    vertices: Vec<Vec<f64>>,
    trajectory: Vec<Fig1Point>,
}

#[derive(Serialize)]
struct Fig1Point {
    xi: f64,
    mu: Vec<f64>,
    /// Worst PPT constraint value; negative means the block is entangled.
    margin: f64,
}

fn run_fig1(args: Fig1Args) -> Result<()> {
    let xis = parse_grid(&args.xi_grid)?;
    for &xi in &xis {
        ensure(
            (0.0..1.0).contains(&xi),
            format!("xi = {xi} outside [0, 1)"),
        )?;
    }
    let ctx: Context<Real> = Context::new(3, 3)?;
    let mut blocks = Vec::new();
    for alpha in [1u32, 2, 3] {
        let block = BlockLabel::new(alpha, alpha);
        let polytope = ctx.polytope(block)?;
        let trajectory: Result<Vec<Fig1Point>> = xis
            .par_iter()
            .map(|&xi| {
                let params = ModelParams::from_xi(xi)?.with_series_eps(args.series_eps)?;
                let (fit, _) = block_state(ctx.cg(), &params, block)?.ok_or_else(|| {
                    Error::CheckFailed(format!(
                        "block ({alpha}, {alpha}) carries no mass at xi = {xi}"
                    ))
                })?;
                let (_, margin) = polytope.is_ppt(&fit.state)?;
                Ok(Fig1Point {
                    xi,
                    mu: vector_entries(&fit.state.mu),
                    margin,
                })
            })
            .collect();
        blocks.push(Fig1Block {
            alpha,
            beta: alpha,
            spins: spin_values(block),
            constraints: matrix_rows(polytope.constraints()),
            vertices: polytope.vertices().iter().map(vector_entries).collect(),
            trajectory: trajectory?,
        });
    }
    let text = match args.out.format {
        Format::Csv => {
            let mut s = String::from("alpha,xi,j,mu,margin\n");
            for b in &blocks {
                for point in &b.trajectory {
                    for (j, mu) in b.spins.iter().zip(&point.mu) {
                        let _ = writeln!(
                            s,
                            "{},{},{j},{},{}",
                            b.alpha,
                            sci(point.xi),
                            sci(*mu),
                            sci(point.margin)
                        );
                    }
                }
            }
            s
        }
        Format::Json => to_json(&Fig1Report { blocks })?,
    };
    emit(args.out.output.as_deref(), &text)
}

fn run_oracle_check(args: OracleCheckArgs) -> Result<()> {
    let etas = parse_grid(&args.eta_grid)?;
    for &eta in &etas {
        ensure(
            (0.0..=1.0).contains(&eta),
            format!("eta = {eta} outside [0, 1]"),
        )?;
    }
    let taus = parse_grid(&args.tau_grid)?;
    for &tau in &taus {
        ensure(tau >= 0.0, format!("tau = {tau} is negative"))?;
    }
    ensure(args.u_samples > 0, "need at least one rotation sample")?;
    let cap = args.block_sum_max;
    let ctx: Context<Real> = Context::new(cap, cap)?;

    let mut report = String::from("dual-path verification\n");
    let _ = writeln!(report, "eta grid: {etas:?}; tau grid: {taus:?}");
    let _ = writeln!(
        report,
        "blocks: alpha + beta <= {cap}; rotations per check: {} (seed {:#x})",
        args.u_samples, args.seed
    );
    let _ = writeln!(
        report,
        "tolerances: probability {:.1e}, weights {:.1e}, symmetry {:.1e}",
        args.prob_tolerance, args.mu_tolerance, args.symmetry_tolerance
    );
    if args.corrupt_prefactor {
        let _ = writeln!(
            report,
            "note: count prefactor deliberately corrupted; the probability check must fail"
        );
    }

    let mut worst_prob: f64 = 0.0;
    let mut worst_mu: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for &tau in &taus {
        let n_max = oracle::auto_n_max(tau, args.tail_bound)?;
        let state = oracle::build_pdc_state(tau, n_max)?;
        let pre = oracle::check_symmetry(&state, args.u_samples, args.seed)?;
        worst_sym = worst_sym.max(pre);
        let _ = writeln!(
            report,
            "tau = {tau}: pair cutoff {n_max}, pre-loss symmetry deviation {pre:.3e}"
        );
        for &eta in &etas {
            let lossy = state.apply_loss_capped(eta, cap)?;
            let post = oracle::check_symmetry(&lossy, args.u_samples, args.seed)?;
            worst_sym = worst_sym.max(post);
            let params = ModelParams::new(eta, tau)?
                .with_series_eps(args.series_eps)?
                .with_corrupt_prefactor(args.corrupt_prefactor);
            let mut prob_dev: f64 = 0.0;
            let mut mu_dev: f64 = 0.0;
            for alpha in 0..=cap {
                for beta in 0..=(cap - alpha) {
                    let block = BlockLabel::new(alpha, beta);
                    let series_p: Real = block_probability(&params, block)?;
                    match lossy.extract_block(block)? {
                        None => prob_dev = prob_dev.max(series_p.abs()),
                        Some((direct_p, matrix)) => {
                            prob_dev = prob_dev.max((series_p - direct_p).abs());
                            if block.num_spins() > 1 {
                                if let Some((fit, _)) = block_state(ctx.cg(), &params, block)? {
                                    let direct = oracle::measure_mu(ctx.cg(), &matrix, block)?;
                                    mu_dev = mu_dev.max((&fit.state.mu - &direct).amax());
                                }
                            }
                        }
                    }
                }
            }
            worst_prob = worst_prob.max(prob_dev);
            worst_mu = worst_mu.max(mu_dev);
            let _ = writeln!(
                report,
                "  eta = {eta}: probability deviation {prob_dev:.3e}, \
                 weight deviation {mu_dev:.3e}, post-loss symmetry deviation {post:.3e}"
            );
        }
    }

    let checks = [
        ("probabilities", worst_prob, args.prob_tolerance),
        ("weights", worst_mu, args.mu_tolerance),
        ("symmetry", worst_sym, args.symmetry_tolerance),
    ];
    let mut failures = Vec::new();
    for (name, worst, tolerance) in checks {
        let ok = worst <= tolerance;
        let _ = writeln!(
            report,
            "{name}: worst deviation {worst:.3e} vs tolerance {tolerance:.1e} ... {}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failures.push(format!("{name} deviation {worst:.3e} exceeds {tolerance:.1e}"));
        }
    }
    emit(args.output.as_deref(), &report)?;
    if let Some(first) = failures.first() {
        return Err(Error::CheckFailed(format!(
            "{} of 3 checks failed; first: {first}",
            failures.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_parse_in_both_forms() {
        assert_eq!(parse_grid("0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("0.3, 0.6 ,0.9").unwrap(), vec![0.3, 0.6, 0.9]);
        assert_eq!(parse_grid("0.7").unwrap(), vec![0.7]);
        assert_eq!(parse_grid("0.5:0.5:1").unwrap(), vec![0.5]);
        assert_eq!(parse_grid("1:0:3").unwrap(), vec![1.0, 0.5, 0.0]);
        let grid = parse_grid("0:1:101").unwrap();
        assert_eq!(grid.len(), 101);
        assert_eq!(grid[0], 0.0);
        assert_eq!(grid[100], 1.0);
        assert!((grid[50] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn malformed_grids_are_rejected() {
        for bad in ["", "a", "0:1", "0:1:0", "0:1:2:3", "nan", "0:inf:3", "0.1:0.9:1", "1,,2"] {
            assert!(parse_grid(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn squeeze_conversion_round_trips() {
        let by_mean = Squeeze {
            tau: None,
            mean_photons: Some(3.0),
        };
        let tau = by_mean.tau().unwrap();
        assert!((2.0 * tau.sinh().powi(2) - 3.0).abs() < 1e-12);
        let direct = Squeeze {
            tau: Some(0.8),
            mean_photons: None,
        };
        assert_eq!(direct.tau().unwrap(), 0.8);
        let negative = Squeeze {
            tau: None,
            mean_photons: Some(-1.0),
        };
        assert!(negative.tau().is_err());
    }

    #[test]
    fn entropy_header_lists_blocks_lexicographically() {
        let header = entropy_csv(1, &[]);
        let mut lines = header.lines();
        assert!(lines.next().unwrap().starts_with('#'));
        assert_eq!(
            lines.next().unwrap(),
            "eta,xi,mean_photons,cutoff,mass_captured,e_r_total,er_0_0,er_0_1,er_1_0,er_1_1"
        );
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn exit_codes_partition_error_kinds() {
        let block = BlockLabel::new(1, 1);
        assert_eq!(exit_code(&Error::CheckFailed("x".into())), 2);
        assert_eq!(exit_code(&Error::SeriesDivergence("x".into())), 2);
        assert_eq!(
            exit_code(&Error::SymmetryViolation {
                block,
                residual: 1.0,
                tolerance: 0.5
            }),
            2
        );
        assert_eq!(
            exit_code(&Error::NegativeWeight {
                block,
                index: 0,
                value: -1.0
            }),
            2
        );
        assert_eq!(
            exit_code(&Error::JointDiagonalization {
                leakage: 1.0,
                tolerance: 0.5
            }),
            2
        );
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::InvalidParams("x".into())), 1);
        assert_eq!(exit_code(&Error::LinearSolve("x".into())), 1);
    }

    #[test]
    fn command_lines_parse_as_documented() {
        assert!(Cli::try_parse_from(["pdcent", "sweep", "--tau", "0.8"]).is_ok());
        assert!(Cli::try_parse_from(["pdcent", "sweep", "--mean-photons", "1"]).is_ok());
        assert!(Cli::try_parse_from(["pdcent", "sweep", "--tau", "0.8", "--mean-photons", "1"]).is_err());
        assert!(Cli::try_parse_from(["pdcent", "sweep"]).is_err());
        assert!(Cli::try_parse_from([
            "pdcent", "entropy", "--eta", "0.5", "--tau", "0.8", "--format", "json"
        ])
        .is_ok());
        assert!(Cli::try_parse_from([
            "pdcent", "entropy", "--eta", "0.5", "--tau", "0.8", "--format", "yaml"
        ])
        .is_err());
        assert!(Cli::try_parse_from(["pdcent", "fig1"]).is_ok());
        assert!(Cli::try_parse_from(["pdcent", "fig2"]).is_ok());
        assert!(Cli::try_parse_from(["pdcent", "oracle-check"]).is_ok());
        assert!(Cli::try_parse_from(["pdcent", "polytope", "--alpha-max", "2"]).is_ok());
        assert!(Cli::try_parse_from(["pdcent", "nonsense"]).is_err());
    }

    #[test]
    fn scientific_format_is_stable() {
        assert_eq!(sci(0.0), "0.000000000000e0");
        assert_eq!(sci(1.0), "1.000000000000e0");
        assert_eq!(sci(0.25), "2.500000000000e-1");
        assert_eq!(sci(-3.5e-12), "-3.500000000000e-12");
    }
}
