//! Acceptance suite: one test per exit criterion, each printing a pass line
//! with the measured quantities (visible with `--nocapture`).
//!
//! Every tolerance is pinned here, in code; each criterion is checked
//! against an independent oracle from `common`, never against the
//! implementation path it validates.

mod common;

use std::time::Instant;

use afsai_core::bench::{
    run_benchmark, run_weak_sweep, BenchMode, InputSource, PrecondChoice, RunConfig,
};
use afsai_core::comm::{run_ranks, Universe};
use afsai_core::csr::spmv_seq;
use afsai_core::dsmat::{comm_matrix, partition_rows, symbolic_power, to_dsmat, DSMat, DistVector};
use afsai_core::fsai::{
    apply_preconditioner, compute_psi, kaporin_gradient_row, setup_afsai, setup_afsai_row,
    setup_afsai_traced, FsaiParams, RowPattern, RowWorkspace,
};
use afsai_core::krylov::{pcg_solve, Preconditioner, SolveParams};
use afsai_core::poisson::generate_poisson7;
use afsai_core::spmv::{apply_dist_preconditioner, prepare, spmv_dist, transpose_dsmat};
use afsai_core::CsrMatrix;

use common::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn full_pattern_params(n: usize) -> FsaiParams {
    FsaiParams {
        kmax: n,
        step_size: n,
        eps: 0.0,
        use_single_precision_setup: false,
    }
}

fn adaptive_params(kmax: usize, step: usize, eps: f64) -> FsaiParams {
    FsaiParams {
        kmax,
        step_size: step,
        eps,
        use_single_precision_setup: false,
    }
}

/// Full-pattern exactness: with the pattern allowed to fill the whole lower
/// triangle, the factor reproduces the inverse Cholesky factor and
/// `|G A G^T - I|_F <= 1e-10`. Runtime < 1 s.
#[test]
fn acceptance_full_pattern_exactness() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(1001);
    for n in [30usize, 50] {
        let a = random_spd_dense(n, &mut rng);
        let factor = setup_afsai(&a, &full_pattern_params(n)).unwrap();
        let frob = frobenius_distance_from_identity(&triple_product(&factor.g, &a));
        assert!(frob <= 1e-10, "n={n}: |GAG^T - I|_F = {frob:e}");

        // Inverse-Cholesky oracle: G must match inv(L) entrywise.
        let l = dense_cholesky_lower(&dense_of(&a)).expect("SPD");
        let linv = invert_lower(&l);
        let gd = dense_of(&factor.g);
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                err += (gd[i][j] - linv[i][j]).powi(2);
                scale += linv[i][j].powi(2);
            }
        }
        assert!(
            err.sqrt() <= 1e-8 * scale.sqrt(),
            "n={n}: |G - inv(L)|_F = {:e}",
            err.sqrt()
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "runtime {elapsed:.3}s exceeds 1s");
    println!("[acceptance] full-pattern exactness: PASS ({elapsed:.3}s)");
}

/// Unit-diagonal invariant: every adaptive run leaves
/// `max_i |(G A G^T)_ii - 1| <= 1e-12`.
#[test]
fn acceptance_unit_diagonal_invariant() {
    let mut rng = StdRng::seed_from_u64(1002);
    let cases: Vec<(String, CsrMatrix, FsaiParams)> = vec![
        (
            "poisson 10x10x10".into(),
            generate_poisson7(10, 10, 10).unwrap(),
            adaptive_params(10, 10, 1e-3),
        ),
        (
            "random sparse spd 1200".into(),
            random_spd_sparse(1200, 0.01, &mut rng),
            adaptive_params(5, 4, 0.0),
        ),
        (
            "random dense spd 300".into(),
            random_spd_dense(300, &mut rng),
            adaptive_params(8, 6, 1e-2),
        ),
        (
            "tridiagonal 2000".into(),
            tridiagonal(2000),
            adaptive_params(10, 10, 1e-3),
        ),
    ];
    for (name, a, params) in &cases {
        let factor = setup_afsai(a, params).unwrap();
        // Explicit sparse quadratic form per row: (G A G^T)_ii.
        let mut worst = 0.0f64;
        for i in 0..a.n_rows {
            let cols = factor.g.row_cols(i);
            let vals = factor.g.row_values(i);
            let mut dii = 0.0;
            for (kp, &p) in cols.iter().enumerate() {
                for (kq, &q) in cols.iter().enumerate() {
                    dii += vals[kp] * a.get(p, q) * vals[kq];
                }
            }
            worst = worst.max((dii - 1.0).abs());
        }
        assert!(worst <= 1e-12, "{name}: max deviation {worst:e}");
        println!("[acceptance] unit diagonal ({name}): PASS (max |d_ii - 1| = {worst:e})");
    }
}

/// Psi monotonicity: along every row trace,
/// `psi[k+1] <= psi[k] + 1e-12 * psi[0]`.
#[test]
fn acceptance_psi_monotonicity() {
    let mut rng = StdRng::seed_from_u64(1003);
    let cases: Vec<(String, CsrMatrix)> = vec![
        (
            "random spd 1000".into(),
            random_spd_sparse(1000, 0.01, &mut rng),
        ),
        (
            "poisson 16x16x16".into(),
            generate_poisson7(16, 16, 16).unwrap(),
        ),
    ];
    for (name, a) in &cases {
        let (_, traces) = setup_afsai_traced(a, &adaptive_params(10, 10, 0.0)).unwrap();
        let mut checked = 0usize;
        for t in &traces {
            for w in t.psi.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-12 * t.psi[0],
                    "{name}: psi grew at row {}: {} -> {}",
                    t.row,
                    w[0],
                    w[1]
                );
                checked += 1;
            }
        }
        println!("[acceptance] psi monotonicity ({name}): PASS ({checked} steps checked)");
    }
}

/// Kaporin dominance: the adaptive factor never loses to plain diagonal
/// scaling, `kappa(G A G^T) <= kappa(D^-1/2 A D^-1/2) + 1e-10`.
#[test]
fn acceptance_kaporin_dominance() {
    let mut rng = StdRng::seed_from_u64(1004);
    let mut worst_margin = f64::NEG_INFINITY;
    for case in 0..20 {
        let n = rng.gen_range(20..=300);
        let a = random_spd_sparse(n, 0.05, &mut rng);
        let factor = setup_afsai(&a, &adaptive_params(2, 2, 0.0)).unwrap();
        let kappa_fsai = kaporin_oracle(&triple_product(&factor.g, &a));

        // Jacobi scaling D^-1/2 A D^-1/2 as a dense oracle.
        let ad = dense_of(&a);
        let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ad[i][i].sqrt()).collect();
        let mut scaled = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                scaled[i][j] = inv_sqrt[i] * ad[i][j] * inv_sqrt[j];
            }
        }
        let kappa_jacobi = kaporin_oracle(&scaled);
        assert!(
            kappa_fsai <= kappa_jacobi + 1e-10,
            "case {case} (n={n}): kappa_fsai = {kappa_fsai} > kappa_jacobi = {kappa_jacobi}"
        );
        worst_margin = worst_margin.max(kappa_fsai - kappa_jacobi);
    }
    println!(
        "[acceptance] kaporin dominance: PASS (worst margin {worst_margin:e} over 20 matrices)"
    );
}

/// Analytic gradient against central finite differences of the quadratic
/// form: relative agreement 1e-5 at step 1e-6, on ten random instances.
#[test]
fn acceptance_gradient_finite_difference() {
    let mut rng = StdRng::seed_from_u64(1005);
    let mut checked = 0usize;
    for _ in 0..10 {
        let n = rng.gen_range(10..=50);
        let a = random_spd_dense(n, &mut rng);
        let row = rng.gen_range(2..n);
        let (pattern, values, _) = setup_afsai_row(&a, row, &adaptive_params(1, 3, 0.0)).unwrap();
        let mut ws = RowWorkspace::new(n);
        let grad = kaporin_gradient_row(&a, &pattern, &values, &mut ws);
        let h = 1e-6;
        for &(c, g) in &grad {
            let mut cols = pattern.cols.clone();
            cols.push(c);
            cols.sort_unstable();
            let pos = cols.iter().position(|&x| x == c).unwrap();
            let extended = RowPattern::new(row, cols).unwrap();
            let mut vp = values.clone();
            vp.insert(pos, h);
            let mut vm = values.clone();
            vm.insert(pos, -h);
            let fd =
                (compute_psi(&a, &extended, &vp) - compute_psi(&a, &extended, &vm)) / (2.0 * h);
            let scale = g.abs().max(1e-8);
            assert!(
                (fd - g).abs() / scale <= 1e-5,
                "row {row} col {c}: analytic {g} vs fd {fd}"
            );
            checked += 1;
        }
    }
    assert!(checked > 0);
    println!("[acceptance] gradient vs finite differences: PASS ({checked} entries)");
}

fn bitwise_eq(got: &[f64], want: &[f64]) -> bool {
    got.len() == want.len()
        && got
            .iter()
            .zip(want)
            .all(|(a, b)| a.to_bits() == b.to_bits())
}

/// Distributed product and preconditioner application are bitwise equal to
/// the sequential kernels for 1, 2, 4 and 8 ranks on three matrix families,
/// under 100 randomized message schedules per case.
#[test]
fn acceptance_distributed_bitwise_correctness() {
    let mut rng = StdRng::seed_from_u64(1006);
    let cases: Vec<(String, CsrMatrix)> = vec![
        ("tridiagonal 64".into(), tridiagonal(64)),
        ("poisson 8x8x8".into(), generate_poisson7(8, 8, 8).unwrap()),
        (
            "random spd 100".into(),
            random_spd_sparse(100, 0.05, &mut rng),
        ),
    ];
    for (name, a) in &cases {
        let n = a.n_rows;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z_want = spmv_seq(a, &x).unwrap();
        let factor = setup_afsai(a, &FsaiParams::default()).unwrap();
        let mz_want = apply_preconditioner(&factor, &x).unwrap();

        let mut schedules = 0usize;
        for n_ranks in [1usize, 2, 4, 8] {
            let p = partition_rows(n, n_ranks).unwrap();
            let a_parts: Vec<DSMat> = (0..n_ranks).map(|r| to_dsmat(a, &p, r).unwrap()).collect();
            let g_parts: Vec<DSMat> = (0..n_ranks)
                .map(|r| to_dsmat(&factor.g, &p, r).unwrap())
                .collect();
            // Full lower bound on the factor's block structure.
            let mut ghat = afsai_core::dsmat::CommMatrix::empty(n_ranks);
            for i in 0..n_ranks {
                for j in 0..=i {
                    ghat.set(i, j, true);
                }
            }
            let ghat_ref = &ghat;
            for seed in 0..25 {
                let u = Universe::with_random_schedule(n_ranks, seed, 25);
                let inputs: Vec<(DSMat, DSMat, DistVector)> = (0..n_ranks)
                    .map(|r| {
                        (
                            a_parts[r].clone(),
                            g_parts[r].clone(),
                            DistVector::from_global(&p, r, &x),
                        )
                    })
                    .collect();
                let outs = run_ranks(&u, inputs, |ctx, (ad, gd, xv)| {
                    let plan_a = prepare(&ad, &ctx).unwrap();
                    let z = spmv_dist(&ad, &plan_a, &xv, &ctx).unwrap();
                    let gt = transpose_dsmat(&gd, ghat_ref, &ctx).unwrap();
                    let plan_g = prepare(&gd, &ctx).unwrap();
                    let plan_gt = prepare(&gt, &ctx).unwrap();
                    let mz =
                        apply_dist_preconditioner(&gd, &gt, &plan_g, &plan_gt, &xv, &ctx).unwrap();
                    (z, mz)
                });
                let z: Vec<f64> = outs.iter().flat_map(|(z, _)| z.local.clone()).collect();
                let mz: Vec<f64> = outs.iter().flat_map(|(_, m)| m.local.clone()).collect();
                assert!(
                    bitwise_eq(&z, &z_want),
                    "{name}: spmv mismatch at n_ranks={n_ranks} seed={seed}"
                );
                assert!(
                    bitwise_eq(&mz, &mz_want),
                    "{name}: preconditioner mismatch at n_ranks={n_ranks} seed={seed}"
                );
                schedules += 1;
            }
        }
        assert_eq!(schedules, 100);
        println!("[acceptance] distributed bitwise correctness ({name}): PASS (100 schedules)");
    }
}

/// Solver rank invariance: iterations and the full residual history are
/// identical across 1, 2 and 4 ranks on the 16^3 Poisson problem with a
/// halo power covering the rank graph. Runtime < 10 s.
#[test]
fn acceptance_solver_rank_invariance() {
    let started = Instant::now();
    let mut histories: Vec<Vec<u64>> = Vec::new();
    let mut iterations = Vec::new();
    for n_ranks in [1usize, 2, 4] {
        let cfg = RunConfig {
            input: InputSource::Poisson {
                nx: 16,
                ny: 16,
                nz: 16,
            },
            precond: PrecondChoice::Afsai,
            fsai_params: FsaiParams::default(),
            solve_params: SolveParams {
                tol: 1e-8,
                max_iters: 1000,
                record_residual_history: true,
            },
            n_ranks,
            halo_power: 3,
            mode: BenchMode::Solve,
        };
        let out = run_benchmark(&cfg).unwrap();
        assert_eq!(out.metrics.converged, Some(true));
        iterations.push(out.metrics.iterations);
        histories.push(
            out.residual_history
                .unwrap()
                .iter()
                .map(|v| v.to_bits())
                .collect(),
        );
    }
    assert_eq!(iterations[0], iterations[1]);
    assert_eq!(iterations[0], iterations[2]);
    assert_eq!(histories[0], histories[1], "history differs at 2 ranks");
    assert_eq!(histories[0], histories[2], "history differs at 4 ranks");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "runtime {elapsed:.1}s exceeds 10s");
    println!(
        "[acceptance] solver rank invariance: PASS ({} iterations, {elapsed:.1}s)",
        iterations[0]
    );
}

/// Behavioral reproduction, diagonal baseline vs adaptive factor: on the
/// 32^3 Poisson problem at tol 1e-8 the adaptive factor needs at most half
/// the iterations. Runtime < 60 s.
#[test]
fn acceptance_afsai_halves_jacobi_iterations() {
    let started = Instant::now();
    let run = |precond: PrecondChoice| -> usize {
        let cfg = RunConfig {
            input: InputSource::Poisson {
                nx: 32,
                ny: 32,
                nz: 32,
            },
            precond,
            fsai_params: adaptive_params(10, 10, 1e-3),
            solve_params: SolveParams {
                tol: 1e-8,
                max_iters: 5000,
                record_residual_history: false,
            },
            n_ranks: 2,
            halo_power: 2,
            mode: BenchMode::Solve,
        };
        let out = run_benchmark(&cfg).unwrap();
        assert_eq!(out.metrics.converged, Some(true));
        out.metrics.iterations
    };
    let jacobi = run(PrecondChoice::Jacobi);
    let afsai = run(PrecondChoice::Afsai);
    assert!(
        2 * afsai <= jacobi,
        "afsai {afsai} iterations vs jacobi {jacobi}: factor-2 violated"
    );
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 60s");
    println!(
        "[acceptance] adaptive factor halves diagonal-baseline iterations: PASS \
         (afsai {afsai} vs jacobi {jacobi}, {elapsed:.1}s)"
    );
}

/// Weak-scaling shape: at 512 rows per rank over 1, 8 and 64 ranks
/// (8^3 -> 16^3 -> 32^3), iteration counts never decrease while the factor
/// fill stays within +-20% of the smallest configuration. Timings are
/// emitted as information only.
#[test]
fn acceptance_weak_scaling_shape() {
    let base = RunConfig {
        input: InputSource::Poisson {
            nx: 8,
            ny: 8,
            nz: 8,
        },
        precond: PrecondChoice::Afsai,
        fsai_params: FsaiParams::default(),
        solve_params: SolveParams {
            tol: 1e-8,
            max_iters: 2000,
            record_residual_history: false,
        },
        n_ranks: 1,
        halo_power: 3,
        mode: BenchMode::Solve,
    };
    let doc = run_weak_sweep(&base, 512, &[1, 8, 64]).unwrap();
    assert_eq!(doc.rows.len(), 3);
    let sizes: Vec<usize> = doc.rows.iter().map(|r| r.n).collect();
    assert_eq!(sizes, vec![512, 4096, 32768]);
    let iters: Vec<usize> = doc.rows.iter().map(|r| r.iterations).collect();
    assert!(
        iters.windows(2).all(|w| w[0] <= w[1]),
        "iterations not monotone: {iters:?}"
    );
    let fill: Vec<f64> = doc
        .rows
        .iter()
        .map(|r| r.factor_nnz_per_row.expect("adaptive factor present"))
        .collect();
    for (i, &f) in fill.iter().enumerate() {
        assert!(
            (f - fill[0]).abs() <= 0.2 * fill[0],
            "factor fill at size {} drifted: {f} vs {}",
            sizes[i],
            fill[0]
        );
    }
    for r in &doc.rows {
        println!(
            "[acceptance] weak scaling row: ranks={} n={} iterations={} nnz/row={:.2} \
             t_p={:.3}s t_s={:.3}s (informational)",
            r.n_ranks,
            r.n,
            r.iterations,
            r.factor_nnz_per_row.unwrap(),
            r.t_p,
            r.t_s
        );
    }
    println!(
        "[acceptance] weak scaling shape: PASS (iterations {iters:?}, fill {:?})",
        fill.iter()
            .map(|f| (f * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    );
}

/// Solve an in-memory SPD system single-rank through the collective
/// machinery with the adaptive factor; returns the iteration count.
fn solve_iterations(a: &CsrMatrix, single_precision: bool) -> usize {
    let p = partition_rows(a.n_rows, 1).unwrap();
    let d = to_dsmat(a, &p, 0).unwrap();
    let ghat = symbolic_power(&comm_matrix(std::slice::from_ref(&d)), 1);
    let u = Universe::new(1);
    let ctx = u.context(0);
    let plan = prepare(&d, &ctx).unwrap();
    let params = FsaiParams {
        use_single_precision_setup: single_precision,
        ..FsaiParams::default()
    };
    let m = afsai_core::krylov::setup_fsai_dist(&d, &ghat, 1, &params, &ctx).unwrap();
    let ones = vec![1.0; a.n_rows];
    let b_global = spmv_seq(a, &ones).unwrap();
    let b = DistVector::from_global(&p, 0, &b_global);
    let (_, report) = pcg_solve(
        &d,
        &plan,
        &m,
        &b,
        &SolveParams {
            tol: 1e-8,
            max_iters: 2000,
            record_residual_history: false,
        },
        &ctx,
    )
    .unwrap();
    assert_eq!(report.converged, Some(true));
    report.iterations
}

/// Single-precision setup: the recast factor still converges, within 1.2x
/// the double-setup iteration count, on the 16^3 Poisson problem and a
/// 1000-row random SPD matrix.
#[test]
fn acceptance_single_precision_setup() {
    let mut rng = StdRng::seed_from_u64(1010);
    let cases: Vec<(String, CsrMatrix)> = vec![
        (
            "poisson 16x16x16".into(),
            generate_poisson7(16, 16, 16).unwrap(),
        ),
        (
            "random spd 1000".into(),
            random_spd_sparse(1000, 0.01, &mut rng),
        ),
    ];
    for (name, a) in &cases {
        let double_iters = solve_iterations(a, false);
        let single_iters = solve_iterations(a, true);
        assert!(
            5 * single_iters <= 6 * double_iters,
            "{name}: single {single_iters} vs double {double_iters} exceeds 1.2x"
        );
        println!(
            "[acceptance] single-precision setup ({name}): PASS \
             (single {single_iters} vs double {double_iters})"
        );
    }
}

/// Conjugate-gradient finite termination: a diagonal matrix with three
/// distinct eigenvalues solves to 1e-12 in at most three iterations.
#[test]
fn acceptance_cg_finite_termination() {
    let n = 12;
    let eigs = [1.0, 2.0, 3.0];
    let a = CsrMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, eigs[i % 3]))).unwrap();
    let p = partition_rows(n, 1).unwrap();
    let d = to_dsmat(&a, &p, 0).unwrap();
    let u = Universe::new(1);
    let ctx = u.context(0);
    let plan = prepare(&d, &ctx).unwrap();
    let b: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64) * 0.25).collect();
    let bv = DistVector::from_global(&p, 0, &b);
    let (x, report) = pcg_solve(
        &d,
        &plan,
        &Preconditioner::None,
        &bv,
        &SolveParams {
            tol: 1e-12,
            max_iters: 10,
            record_residual_history: false,
        },
        &ctx,
    )
    .unwrap();
    assert_eq!(report.converged, Some(true));
    assert!(
        report.iterations <= 3,
        "took {} iterations",
        report.iterations
    );
    for i in 0..n {
        assert!((x.local[i] - b[i] / eigs[i % 3]).abs() <= 1e-10);
    }
    println!(
        "[acceptance] finite termination on 3 distinct eigenvalues: PASS \
         ({} iterations)",
        report.iterations
    );
}
