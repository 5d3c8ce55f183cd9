//! Command-line benchmark driver.
//!
//! Runs the solver on a Matrix Market file or a generated Poisson problem
//! across a simulated rank ensemble and emits JSON metrics (plus optional
//! CSV exports). Exit codes: 0 on convergence or benchmark completion, 2
//! when a tolerance-driven solve does not converge, 1 on errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use afsai_core::bench::{
    run_benchmark, run_strong_sweep, run_weak_sweep, write_history_csv, write_sweep_csv, BenchMode,
    InputSource, PrecondChoice, RunConfig,
};
use afsai_core::fsai::FsaiParams;
use afsai_core::krylov::SolveParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecondArg {
    None,
    Jacobi,
    Afsai,
}

impl From<PrecondArg> for PrecondChoice {
    fn from(p: PrecondArg) -> Self {
        match p {
            PrecondArg::None => PrecondChoice::None,
            PrecondArg::Jacobi => PrecondChoice::Jacobi,
            PrecondArg::Afsai => PrecondChoice::Afsai,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "afsai",
    about = "Adaptive-FSAI preconditioned conjugate gradient benchmark harness",
    long_about = None
)]
struct Cli {
    /// Matrix Market input file (coordinate, real, symmetric or general).
    #[arg(long, value_name = "PATH", conflicts_with = "poisson")]
    matrix: Option<PathBuf>,

    /// Generate a 7-point Poisson matrix on an NX x NY x NZ grid.
    #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"])]
    poisson: Option<Vec<usize>>,

    /// Preconditioner.
    #[arg(long, value_enum, default_value_t = PrecondArg::Afsai)]
    precond: PrecondArg,

    /// Maximum adaptive steps per factor row.
    #[arg(long, default_value_t = 10)]
    kmax: usize,

    /// Pattern positions added per adaptive step.
    #[arg(long = "step", default_value_t = 10)]
    step: usize,

    /// Relative tolerance on the per-row quadratic-form reduction.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,

    /// Relative residual target of the solver.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,

    /// Iteration cap of the solver.
    #[arg(long = "max-iters", default_value_t = 10_000)]
    max_iters: usize,

    /// Number of simulated ranks.
    #[arg(long, default_value_t = 1)]
    ranks: usize,

    /// Setup-halo power (gather graph = lower triangle of the block
    /// adjacency raised to this power).
    #[arg(long = "halo-power", default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
    halo_power: u8,

    /// Build the factor in 32-bit arithmetic, recast to 64-bit.
    #[arg(long = "single-precision-setup")]
    single_precision_setup: bool,

    /// Benchmark mode: run exactly N iterations, no convergence test.
    #[arg(long = "fixed-iters", value_name = "N")]
    fixed_iters: Option<usize>,

    /// Strong-scaling sweep over these rank counts (fixed problem).
    #[arg(long = "sweep-strong", value_delimiter = ',', value_name = "R1,R2,...")]
    sweep_strong: Option<Vec<usize>>,

    /// Weak-scaling sweep: ROWS_PER_RANK followed by a comma-separated rank
    /// list; Poisson grids are sized to hold rows-per-rank constant.
    #[arg(long = "sweep-weak", num_args = 2, value_names = ["ROWS_PER_RANK", "R1,R2,..."])]
    sweep_weak: Option<Vec<String>>,

    /// Write the metrics document here (also printed to stdout).
    #[arg(long, value_name = "PATH.json")]
    out: Option<PathBuf>,

    /// Write the residual history here (single runs only).
    #[arg(long, value_name = "PATH.csv")]
    history: Option<PathBuf>,
}

fn build_config(cli: &Cli) -> Result<RunConfig, String> {
    let input = match (&cli.matrix, &cli.poisson) {
        (Some(path), None) => InputSource::MatrixMarket(path.clone()),
        (None, Some(dims)) => InputSource::Poisson {
            nx: dims[0],
            ny: dims[1],
            nz: dims[2],
        },
        (None, None) => return Err("exactly one of --matrix or --poisson is required".into()),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    Ok(RunConfig {
        input,
        precond: cli.precond.into(),
        fsai_params: FsaiParams {
            kmax: cli.kmax,
            step_size: cli.step,
            eps: cli.eps,
            use_single_precision_setup: cli.single_precision_setup,
        },
        solve_params: SolveParams {
            tol: cli.tol,
            max_iters: cli.max_iters,
            record_residual_history: cli.history.is_some(),
        },
        n_ranks: cli.ranks,
        halo_power: cli.halo_power as usize,
        mode: match cli.fixed_iters {
            Some(n) => BenchMode::FixedIters(n),
            None => BenchMode::Solve,
        },
    })
}

fn emit<T: serde::Serialize>(doc: &T, out: &Option<PathBuf>) -> Result<(), String> {
    let json = serde_json::to_string_pretty(doc).map_err(|e| e.to_string())?;
    println!("{json}");
    if let Some(path) = out {
        std::fs::write(path, json + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode, String> {
    let cfg = build_config(cli)?;

    if let Some(ranks) = &cli.sweep_strong {
        if cli.history.is_some() {
            return Err("--history applies to single runs, not sweeps".into());
        }
        let doc = run_strong_sweep(&cfg, ranks).map_err(|e| e.to_string())?;
        emit(&doc, &cli.out)?;
        if let Some(out) = &cli.out {
            write_sweep_csv(out.with_extension("csv"), &doc).map_err(|e| e.to_string())?;
        }
        let all_converged = doc.rows.iter().all(|r| r.converged != Some(false));
        return Ok(if all_converged {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(2)
        });
    }

    if let Some(args) = &cli.sweep_weak {
        if cli.history.is_some() {
            return Err("--history applies to single runs, not sweeps".into());
        }
        let rows_per_rank: usize = args[0]
            .parse()
            .map_err(|_| format!("cannot parse rows-per-rank '{}'", args[0]))?;
        let ranks: Vec<usize> = args[1]
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| format!("bad rank '{s}'")))
            .collect::<Result<_, String>>()?;
        let doc = run_weak_sweep(&cfg, rows_per_rank, &ranks).map_err(|e| e.to_string())?;
        emit(&doc, &cli.out)?;
        if let Some(out) = &cli.out {
            write_sweep_csv(out.with_extension("csv"), &doc).map_err(|e| e.to_string())?;
        }
        let all_converged = doc.rows.iter().all(|r| r.converged != Some(false));
        return Ok(if all_converged {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(2)
        });
    }

    let output = run_benchmark(&cfg).map_err(|e| e.to_string())?;
    emit(&output.metrics, &cli.out)?;
    if let Some(path) = &cli.history {
        let history = output
            .residual_history
            .as_ref()
            .ok_or("no residual history recorded")?;
        write_history_csv(path, history).map_err(|e| e.to_string())?;
    }
    Ok(match output.metrics.converged {
        Some(false) => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
