//! Benchmark harness: problem ingestion, the simulated-rank ensemble
//! driver, and machine-parseable metrics documents.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::comm::{run_ranks, Universe};
use crate::csr::CsrMatrix;
use crate::dsmat::{
    block_nnz_table, comm_matrix, partition_rows, symbolic_power, to_dsmat, CommMatrix, DSMat,
    DistVector,
};
use crate::error::{Error, Result};
use crate::fsai::{FsaiParams, StopReason};
use crate::krylov::{
    jacobi_setup, pcg_fixed_iters, pcg_solve, setup_fsai_dist, Preconditioner, SolveParams,
    SolveReport,
};
use crate::mm::read_matrix_market;
use crate::poisson::generate_poisson7;
use crate::spmv::prepare;

/// Problem source: a Matrix Market file or the built-in Poisson generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    MatrixMarket(PathBuf),
    Poisson { nx: usize, ny: usize, nz: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondChoice {
    None,
    Jacobi,
    Afsai,
}

impl PrecondChoice {
    pub fn name(self) -> &'static str {
        match self {
            PrecondChoice::None => "none",
            PrecondChoice::Jacobi => "jacobi",
            PrecondChoice::Afsai => "afsai",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    /// Tolerance-driven solve.
    Solve,
    /// Exactly this many iterations, no convergence test.
    FixedIters(usize),
}

/// One benchmark run, fully specified.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: InputSource,
    pub precond: PrecondChoice,
    pub fsai_params: FsaiParams,
    pub solve_params: SolveParams,
    pub n_ranks: usize,
    /// Setup-halo power, normally 1..=3.
    pub halo_power: usize,
    pub mode: BenchMode,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ranks == 0 {
            return Err(Error::Config("need at least one rank".into()));
        }
        if self.halo_power == 0 {
            return Err(Error::Config("halo power must be at least 1".into()));
        }
        self.fsai_params.validate()?;
        self.solve_params.validate()
    }
}

/// Load or generate the system matrix; solver entry points require a square,
/// exactly symmetric matrix, so general Matrix Market files are verified.
pub fn load_matrix(input: &InputSource) -> Result<CsrMatrix> {
    let a = match input {
        InputSource::MatrixMarket(path) => read_matrix_market(path)?,
        InputSource::Poisson { nx, ny, nz } => generate_poisson7(*nx, *ny, *nz)?,
    };
    if a.n_rows != a.n_cols {
        return Err(Error::NotSquare {
            n_rows: a.n_rows,
            n_cols: a.n_cols,
        });
    }
    if !a.is_symmetric() {
        return Err(Error::NotSymmetric(
            "input must be structurally and numerically symmetric".into(),
        ));
    }
    Ok(a)
}

// ---------------------------------------------------------------------------
// Metrics documents
// ---------------------------------------------------------------------------

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixStats {
    pub n: usize,
    pub nnz: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Timings {
    /// Preconditioner setup seconds (max over ranks).
    pub t_p: f64,
    /// Iteration seconds (max over ranks).
    pub t_s: f64,
    /// `t_p + t_s`.
    pub t_t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PsiSummary {
    pub rows: usize,
    /// Mean and worst final-over-initial psi across rows.
    pub mean_reduction: f64,
    pub max_reduction: f64,
    pub mean_steps: f64,
    pub rows_tolerance_met: usize,
    pub rows_kmax_reached: usize,
    pub rows_no_candidates: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FsaiStats {
    pub factor_nnz: usize,
    pub factor_nnz_per_row: f64,
    pub psi: PsiSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CommStats {
    pub per_rank_sent_bytes: Vec<u64>,
    pub total_sent_bytes: u64,
    /// Non-zeros adjacent to each rank's gathered stripes that fall outside
    /// its setup halo (zero when the halo covers the whole matrix).
    pub halo_truncated_nnz: Vec<usize>,
    pub halo_truncated_total: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FsaiParamsDoc {
    pub kmax: usize,
    pub step_size: usize,
    pub eps: f64,
    pub single_precision_setup: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveParamsDoc {
    pub tol: f64,
    pub max_iters: usize,
}

/// The per-run metrics document (schema version 1).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub input: String,
    pub matrix: MatrixStats,
    pub preconditioner: String,
    pub n_ranks: usize,
    pub halo_power: usize,
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fsai_params: Option<FsaiParamsDoc>,
    pub solve_params: SolveParamsDoc,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub final_relative_residual: f64,
    pub verified_relative_residual: f64,
    pub timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fsai: Option<FsaiStats>,
    pub comm: CommStats,
}

/// Everything a run produces: the document plus the residual history for
/// optional CSV export.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub residual_history: Option<Vec<f64>>,
}

fn describe_input(input: &InputSource) -> String {
    match input {
        InputSource::MatrixMarket(p) => format!("matrix-market:{}", p.display()),
        InputSource::Poisson { nx, ny, nz } => format!("poisson:{nx}x{ny}x{nz}"),
    }
}

struct RankResult {
    report: SolveReport,
    factor_nnz: Option<usize>,
    psi: Option<PsiSummary>,
}

fn merge_psi(parts: &[Option<PsiSummary>]) -> Option<PsiSummary> {
    let mut rows = 0usize;
    let mut sum_red = 0.0;
    let mut max_red = 0.0f64;
    let mut steps = 0.0;
    let (mut tol, mut kmax, mut none) = (0usize, 0usize, 0usize);
    for p in parts {
        let p = p.as_ref()?;
        rows += p.rows;
        sum_red += p.mean_reduction * p.rows as f64;
        max_red = max_red.max(p.max_reduction);
        steps += p.mean_steps * p.rows as f64;
        tol += p.rows_tolerance_met;
        kmax += p.rows_kmax_reached;
        none += p.rows_no_candidates;
    }
    Some(PsiSummary {
        rows,
        mean_reduction: if rows > 0 { sum_red / rows as f64 } else { 1.0 },
        max_reduction: max_red,
        mean_steps: if rows > 0 { steps / rows as f64 } else { 0.0 },
        rows_tolerance_met: tol,
        rows_kmax_reached: kmax,
        rows_no_candidates: none,
    })
}

/// Truncated-halo diagnostic: non-zeros in blocks coupling a gathered
/// stripe with a stripe outside the halo.
fn truncation_counts(ghat: &CommMatrix, nnz_table: &[Vec<usize>]) -> Vec<usize> {
    let n_ranks = ghat.n_ranks;
    (0..n_ranks)
        .map(|rank| {
            let gathered: Vec<usize> = (0..=rank)
                .filter(|&q| q == rank || ghat.get(rank, q))
                .collect();
            let mut count = 0;
            for &r in &gathered {
                for c in 0..n_ranks {
                    if !gathered.contains(&c) {
                        count += nnz_table[r][c];
                    }
                }
            }
            count
        })
        .collect()
}

/// Execute one configuration across the simulated rank ensemble.
pub fn run_benchmark(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let a = load_matrix(&cfg.input)?;
    let partition = partition_rows(a.n_rows, cfg.n_ranks)?;
    let parts: Vec<DSMat> = (0..cfg.n_ranks)
        .map(|r| to_dsmat(&a, &partition, r))
        .collect::<Result<_>>()?;
    let chat = comm_matrix(&parts);
    let ghat = symbolic_power(&chat, cfg.halo_power);
    let truncated = truncation_counts(&ghat, &block_nnz_table(&parts));

    // Right-hand side chosen so the exact solution is the all-ones vector.
    let ones = vec![1.0; a.n_rows];
    let b_global = crate::csr::spmv_seq(&a, &ones)?;

    let universe = Universe::new(cfg.n_ranks);
    let inputs: Vec<(DSMat, DistVector)> = parts
        .into_iter()
        .enumerate()
        .map(|(r, d)| {
            let b = DistVector::from_global(&partition, r, &b_global);
            (d, b)
        })
        .collect();

    let ghat_ref = &ghat;
    let results: Vec<Result<RankResult>> = run_ranks(&universe, inputs, |ctx, (d, b)| {
        ctx.barrier();
        let setup_started = Instant::now();
        let plan_a = prepare(&d, &ctx)?;
        let precond = match cfg.precond {
            PrecondChoice::None => Preconditioner::None,
            PrecondChoice::Jacobi => jacobi_setup(&d)?,
            PrecondChoice::Afsai => {
                setup_fsai_dist(&d, ghat_ref, cfg.halo_power, &cfg.fsai_params, &ctx)?
            }
        };
        let setup_time = setup_started.elapsed().as_secs_f64();
        ctx.barrier();

        let (_, report) = match cfg.mode {
            BenchMode::Solve => pcg_solve(&d, &plan_a, &precond, &b, &cfg.solve_params, &ctx)?,
            BenchMode::FixedIters(n) => pcg_fixed_iters(
                &d,
                &plan_a,
                &precond,
                &b,
                n,
                cfg.solve_params.record_residual_history,
                &ctx,
            )?,
        };
        let report = report.with_setup_time(setup_time);

        let (factor_nnz, psi) = match &precond {
            Preconditioner::Fsai(f) => {
                let rows = f.traces.len();
                let mut sum_red = 0.0;
                let mut max_red = 0.0f64;
                let mut steps = 0usize;
                let (mut tol, mut kmax, mut none) = (0usize, 0usize, 0usize);
                for t in &f.traces {
                    let red = t.reduction();
                    sum_red += red;
                    max_red = max_red.max(red);
                    steps += t.steps_taken;
                    match t.stop_reason {
                        StopReason::ToleranceMet => tol += 1,
                        StopReason::KmaxReached => kmax += 1,
                        StopReason::NoCandidates => none += 1,
                    }
                }
                let psi = PsiSummary {
                    rows,
                    mean_reduction: if rows > 0 { sum_red / rows as f64 } else { 1.0 },
                    max_reduction: max_red,
                    mean_steps: if rows > 0 {
                        steps as f64 / rows as f64
                    } else {
                        0.0
                    },
                    rows_tolerance_met: tol,
                    rows_kmax_reached: kmax,
                    rows_no_candidates: none,
                };
                (Some(f.local_factor_nnz()), Some(psi))
            }
            _ => (None, None),
        };
        Ok(RankResult {
            report,
            factor_nnz,
            psi,
        })
    });

    let mut ranks = Vec::with_capacity(cfg.n_ranks);
    for r in results {
        ranks.push(r?);
    }

    let iterations = ranks[0].report.iterations;
    debug_assert!(
        ranks.iter().all(|r| r.report.iterations == iterations),
        "collective iteration counts diverged"
    );
    let t_p = ranks
        .iter()
        .map(|r| r.report.setup_time)
        .fold(0.0f64, f64::max);
    let t_s = ranks
        .iter()
        .map(|r| r.report.solve_time)
        .fold(0.0f64, f64::max);

    let fsai = if cfg.precond == PrecondChoice::Afsai {
        let factor_nnz: usize = ranks.iter().map(|r| r.factor_nnz.unwrap_or(0)).sum();
        let psi_parts: Vec<Option<PsiSummary>> = ranks.iter().map(|r| r.psi.clone()).collect();
        Some(FsaiStats {
            factor_nnz,
            factor_nnz_per_row: factor_nnz as f64 / a.n_rows as f64,
            psi: merge_psi(&psi_parts).expect("psi summaries present for afsai"),
        })
    } else {
        None
    };

    let per_rank_sent_bytes = universe.sent_bytes();
    let total_sent_bytes = per_rank_sent_bytes.iter().sum();
    let truncated_total = truncated.iter().sum();

    let first = &ranks[0].report;
    let metrics = RunMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        input: describe_input(&cfg.input),
        matrix: MatrixStats {
            n: a.n_rows,
            nnz: a.nnz(),
        },
        preconditioner: cfg.precond.name().to_string(),
        n_ranks: cfg.n_ranks,
        halo_power: cfg.halo_power,
        mode: match cfg.mode {
            BenchMode::Solve => "solve".to_string(),
            BenchMode::FixedIters(_) => "fixed_iters".to_string(),
        },
        fixed_iters: match cfg.mode {
            BenchMode::FixedIters(n) => Some(n),
            BenchMode::Solve => None,
        },
        fsai_params: (cfg.precond == PrecondChoice::Afsai).then_some(FsaiParamsDoc {
            kmax: cfg.fsai_params.kmax,
            step_size: cfg.fsai_params.step_size,
            eps: cfg.fsai_params.eps,
            single_precision_setup: cfg.fsai_params.use_single_precision_setup,
        }),
        solve_params: SolveParamsDoc {
            tol: cfg.solve_params.tol,
            max_iters: cfg.solve_params.max_iters,
        },
        iterations,
        converged: first.converged,
        final_relative_residual: first.final_relative_residual,
        verified_relative_residual: first.verified_relative_residual,
        timings: Timings {
            t_p,
            t_s,
            t_t: t_p + t_s,
        },
        fsai,
        comm: CommStats {
            per_rank_sent_bytes,
            total_sent_bytes,
            halo_truncated_nnz: truncated,
            halo_truncated_total: truncated_total,
        },
    };
    Ok(RunOutput {
        metrics,
        residual_history: ranks.swap_remove(0).report.residual_history,
    })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub n_ranks: usize,
    pub n: usize,
    pub nnz: usize,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub t_p: f64,
    pub t_s: f64,
    pub t_t: f64,
    pub t_per_iteration: f64,
    /// Strong mode: `t_t(min) * min_ranks / (t_t(r) * r)`. Weak mode:
    /// per-iteration time of the smallest configuration over this one's.
    pub efficiency: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_nnz_per_row: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepDocument {
    pub schema_version: u32,
    pub mode: String,
    pub preconditioner: String,
    pub rows: Vec<SweepRow>,
}

fn sweep_row(metrics: &RunMetrics) -> SweepRow {
    let iters = metrics.iterations.max(1);
    SweepRow {
        n_ranks: metrics.n_ranks,
        n: metrics.matrix.n,
        nnz: metrics.matrix.nnz,
        iterations: metrics.iterations,
        converged: metrics.converged,
        t_p: metrics.timings.t_p,
        t_s: metrics.timings.t_s,
        t_t: metrics.timings.t_t,
        t_per_iteration: metrics.timings.t_s / iters as f64,
        efficiency: 1.0,
        factor_nnz_per_row: metrics.fsai.as_ref().map(|f| f.factor_nnz_per_row),
    }
}

/// Strong scaling: fixed problem, varying rank counts.
pub fn run_strong_sweep(base: &RunConfig, rank_list: &[usize]) -> Result<SweepDocument> {
    if rank_list.is_empty() {
        return Err(Error::Config("sweep needs at least one rank count".into()));
    }
    let mut rows = Vec::new();
    for &r in rank_list {
        let cfg = RunConfig {
            n_ranks: r,
            ..base.clone()
        };
        let out = run_benchmark(&cfg)?;
        rows.push(sweep_row(&out.metrics));
    }
    let reference = rows[0].t_t * rows[0].n_ranks as f64;
    for row in &mut rows {
        let denom = row.t_t * row.n_ranks as f64;
        row.efficiency = if denom > 0.0 { reference / denom } else { 1.0 };
    }
    Ok(SweepDocument {
        schema_version: METRICS_SCHEMA_VERSION,
        mode: "strong".into(),
        preconditioner: base.precond.name().into(),
        rows,
    })
}

/// Weak scaling: cubic Poisson problems sized to hold rows-per-rank roughly
/// constant across the rank list.
pub fn run_weak_sweep(
    base: &RunConfig,
    rows_per_rank: usize,
    rank_list: &[usize],
) -> Result<SweepDocument> {
    if rank_list.is_empty() {
        return Err(Error::Config("sweep needs at least one rank count".into()));
    }
    if rows_per_rank == 0 {
        return Err(Error::Config("rows per rank must be positive".into()));
    }
    let mut rows = Vec::new();
    for &r in rank_list {
        let target = rows_per_rank * r;
        let side = (target as f64).cbrt().round().max(1.0) as usize;
        let cfg = RunConfig {
            input: InputSource::Poisson {
                nx: side,
                ny: side,
                nz: side,
            },
            n_ranks: r,
            ..base.clone()
        };
        let out = run_benchmark(&cfg)?;
        rows.push(sweep_row(&out.metrics));
    }
    let reference = rows[0].t_per_iteration;
    for row in &mut rows {
        row.efficiency = if row.t_per_iteration > 0.0 {
            reference / row.t_per_iteration
        } else {
            1.0
        };
    }
    Ok(SweepDocument {
        schema_version: METRICS_SCHEMA_VERSION,
        mode: "weak".into(),
        preconditioner: base.precond.name().into(),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

/// Residual history as `iteration,relative_residual` CSV.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,relative_residual")?;
    for (i, r) in history.iter().enumerate() {
        writeln!(f, "{i},{r:e}")?;
    }
    f.flush()?;
    Ok(())
}

/// Sweep table as CSV, one row per configuration.
pub fn write_sweep_csv(path: impl AsRef<Path>, doc: &SweepDocument) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "n_ranks,n,nnz,iterations,t_p,t_s,t_t,t_per_iteration,efficiency,factor_nnz_per_row"
    )?;
    for r in &doc.rows {
        writeln!(
            f,
            "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{}",
            r.n_ranks,
            r.n,
            r.nnz,
            r.iterations,
            r.t_p,
            r.t_s,
            r.t_t,
            r.t_per_iteration,
            r.efficiency,
            r.factor_nnz_per_row
                .map(|v| format!("{v:e}"))
                .unwrap_or_default()
        )?;
    }
    f.flush()?;
    Ok(())
}
