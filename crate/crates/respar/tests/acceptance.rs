//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured quantities (visible under `--nocapture`).
//!
//! The desk-scale training runs (criteria 5–9) are expensive, so they are
//! computed once in shared lazy state: criteria 5, 6 and 8 read the same
//! three dynamics runs, and criterion 9 reruns the pipelines at a different
//! worker count to certify byte-identical output.

use std::sync::LazyLock;
use std::time::Instant;

use ndarray::{Array1, Array2};

use respar::baselines::{
    lasso_coordinate_descent, lasso_kkt_violation, min_l2_interpolator, LassoConfig,
};
use respar::decomposition::ideal_coefficients;
use respar::harness::{run_scaling, DynamicsConfig, ScalingConfig, ScalingMethod};
use respar::instance::{generate_instance, BetaSpec};
use respar::linalg;
use respar::model::{gradients, residual_and_loss, LambdaSpec, ModelState, TrainConfig};
use respar::rng::SeededRng;

// --- shared heavy runs -------------------------------------------------------

const DYNAMICS_SEEDS: [u64; 3] = [1, 2, 3];

fn criterion5_config(seed: u64) -> DynamicsConfig<f64> {
    DynamicsConfig {
        d: 5000,
        n: None, // auto: round(3*sqrt(5000)) = 212
        s: 3,
        sigma: 0.1,
        seed,
        train: TrainConfig {
            eta: 1e-6,
            alpha: 1e-10,
            lambda: LambdaSpec::Auto,
            epsilon: 1e-5,
            max_iters: 400_000,
            record_every: 500,
            stage1_const: 1.0,
        },
        out: None,
    }
}

struct DynamicsArtifacts {
    seed: u64,
    trace_csv: String,
    summary_json: String,
    run: respar::harness::DynamicsRun<f64>,
}

/// Runs the three criterion-5 seeds in a pool with the given worker count.
fn run_criterion5_pipeline(workers: usize) -> Vec<DynamicsArtifacts> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool");
    pool.install(|| {
        use rayon::prelude::*;
        DYNAMICS_SEEDS
            .par_iter()
            .map(|&seed| {
                let run = respar::harness::run_dynamics(&criterion5_config(seed))
                    .expect("criterion 5 dynamics run");
                DynamicsArtifacts {
                    seed,
                    trace_csv: run.trace_csv.clone(),
                    summary_json: serde_json::to_string_pretty(&run.summary).unwrap(),
                    run,
                }
            })
            .collect()
    })
}

static CRITERION5: LazyLock<Vec<DynamicsArtifacts>> = LazyLock::new(|| run_criterion5_pipeline(2));

fn criterion7_config(workers: usize) -> ScalingConfig<f64> {
    ScalingConfig {
        workers,
        ..ScalingConfig::default()
    }
}

static CRITERION7: LazyLock<respar::harness::ScalingRun> =
    LazyLock::new(|| run_scaling(&criterion7_config(2)).expect("criterion 7 sweep"));

// --- criterion 1: gradient oracle ---------------------------------------------

#[test]
fn criterion_1_gradient_finite_difference_oracle() {
    let start = Instant::now();
    let mut rng = SeededRng::new(0xC1);
    let mut max_rel = 0.0f64;
    for case in 0..200 {
        let n = 2 + (case % 7);
        let d = 2 + ((case / 7) % 7);
        let sigma = if case % 3 == 0 { 0.0 } else { 0.3 };
        let mut beta_star = Array1::zeros(d);
        beta_star[0] = 0.9;
        let inst = generate_instance::<f64>(
            n,
            d,
            1,
            sigma,
            &BetaSpec::ExplicitVector(beta_star),
            5000 + case as u64,
        )
        .unwrap();
        let draw = |rng: &mut SeededRng, len: usize, scale: f64| {
            Array1::from_iter((0..len).map(|_| scale * rng.standard_normal()))
        };
        let lambda = 0.5 + 2.5 * rng.uniform();
        let st = ModelState {
            v: draw(&mut rng, d, 0.5),
            w: draw(&mut rng, d, 0.7),
            u: draw(&mut rng, d, 0.7),
            lambda,
            step: 0,
        };
        let g = gradients(&st, &inst);
        let h = 1e-6;
        let loss_at = |st: &ModelState<f64>| residual_and_loss(st, &inst).1;
        for k in 0..d {
            for (block, analytic) in [(0usize, g.v[k]), (1, g.w[k]), (2, g.u[k])] {
                let mut plus = st.clone();
                let mut minus = st.clone();
                match block {
                    0 => {
                        plus.v[k] += h;
                        minus.v[k] -= h;
                    }
                    1 => {
                        plus.w[k] += h;
                        minus.w[k] -= h;
                    }
                    _ => {
                        plus.u[k] += h;
                        minus.u[k] -= h;
                    }
                }
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let rel = (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-3);
                max_rel = max_rel.max(rel);
                assert!(
                    rel <= 1e-5,
                    "case {case}, coord {k}, block {block}: analytic {analytic} vs fd {fd}"
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("criterion 1: PASS (200 pairs, max rel err {max_rel:.2e}, {elapsed:?})");
}

// --- criterion 2: coefficient recursions --------------------------------------

#[test]
fn criterion_2_coefficient_recursion_replay() {
    let start = Instant::now();
    let mut rng = SeededRng::new(0xC2);
    let mut max_rel = 0.0f64;
    for _ in 0..50 {
        let n = 5 + rng.below(200);
        let ratio = 1 + rng.below(40);
        let d = n * ratio;
        // 0 < eta d / n < 1
        let eta = (0.01 + 0.98 * rng.uniform()) * n as f64 / d as f64;
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for t in 0..=10_000u64 {
            let (ca, cb) = ideal_coefficients::<f64>(t, eta, n, d);
            if t > 0 {
                let rel_a = (ca - a).abs() / a.abs().max(1e-300);
                let rel_b = (cb - b).abs() / b.abs().max(1e-300);
                max_rel = max_rel.max(rel_a).max(rel_b);
                assert!(rel_a <= 1e-10, "a at t={t}: {ca} vs {a}");
                assert!(rel_b <= 1e-10, "b at t={t}: {cb} vs {b}");
            }
            a -= eta * (b - 1.0 / n as f64);
            b -= eta * d as f64 / n as f64 * (b - 1.0 / n as f64);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("criterion 2: PASS (50 configs x 10^4 steps, max rel err {max_rel:.2e}, {elapsed:?})");
}

// --- criterion 3: min-l2 correctness -------------------------------------------

#[test]
fn criterion_3_min_l2_against_svd_oracle() {
    let start = Instant::now();
    let mut rng = SeededRng::new(0xC3);
    for case in 0..50 {
        let n = 6 + rng.below(35); // 6..40
        let d = n * (2 + rng.below(9)); // 2n..10n
        let inst =
            generate_instance::<f64>(n, d, 3, 0.2, &BetaSpec::ThreeSpike, 9000 + case as u64)
                .unwrap();
        let res = min_l2_interpolator(&inst).unwrap();
        let ynorm = linalg::l2_norm(inst.y.view());
        assert!(
            res.train_resid_norm <= 1e-8 * ynorm,
            "case {case}: residual {} vs {}",
            res.train_resid_norm,
            1e-8 * ynorm
        );

        // Row-space property.
        let gram = linalg::gram(inst.x.view());
        let chol = linalg::cholesky(gram.view()).unwrap();
        let xb = linalg::mat_vec(inst.x.view(), res.beta.view());
        let z = linalg::cholesky_solve(chol.view(), xb.view());
        let proj = linalg::mat_t_vec(inst.x.view(), z.view());
        let mut off = res.beta.clone();
        off -= &proj;
        assert!(
            linalg::l2_norm(off.view()) <= 1e-8 * linalg::l2_norm(res.beta.view()),
            "case {case}: row-space violation"
        );

        // SVD pseudoinverse oracle.
        let m = nalgebra::DMatrix::from_fn(inst.n, inst.d, |i, j| inst.x[[i, j]]);
        let b = nalgebra::DVector::from_fn(inst.n, |i, _| inst.y[i]);
        let oracle = m.svd(true, true).solve(&b, 1e-13).unwrap();
        for k in 0..inst.d {
            assert!(
                (res.beta[k] - oracle[k]).abs() <= 1e-10 * (1.0 + oracle[k].abs()),
                "case {case}, coord {k}: {} vs {}",
                res.beta[k],
                oracle[k]
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("criterion 3: PASS (50 instances, {elapsed:?})");
}

// --- criterion 4: lasso certificates -------------------------------------------

#[test]
fn criterion_4_lasso_certificates() {
    let start = Instant::now();
    let mut rng = SeededRng::new(0xC4);

    // KKT on 50 random instances.
    for case in 0..50 {
        let n = 20 + rng.below(60);
        let d = 10 + rng.below(110);
        let inst = generate_instance::<f64>(
            n,
            d,
            3.min(d),
            0.3,
            &respar::harness::target_spec(3.min(d), d),
            11_000 + case as u64,
        )
        .unwrap();
        let penalty = 0.02 + 0.3 * rng.uniform();
        let cfg = LassoConfig::new(penalty);
        let fit = lasso_coordinate_descent(&inst.x, &inst.y, &cfg).unwrap();
        let (active, inactive) =
            lasso_kkt_violation(inst.x.view(), inst.y.view(), fit.beta.view(), penalty);
        assert!(
            active <= 10.0 * cfg.tol,
            "case {case}: active KKT violation {active}"
        );
        assert!(
            inactive <= 10.0 * cfg.tol,
            "case {case}: inactive KKT excess {inactive}"
        );
    }

    // Closed form on an orthogonal design.
    let (n, d) = (40, 8);
    let mut cols: Vec<Array1<f64>> = (0..d)
        .map(|_| Array1::from_iter((0..n).map(|_| rng.standard_normal())))
        .collect();
    for j in 0..d {
        for i in 0..j {
            let proj = cols[j].dot(&cols[i]);
            let prev = cols[i].clone();
            cols[j].zip_mut_with(&prev, |a, &b| *a -= proj * b);
        }
        let norm = linalg::l2_norm(cols[j].view());
        cols[j].mapv_inplace(|v| v / norm * (n as f64).sqrt());
    }
    let mut x = Array2::zeros((n, d));
    for (j, c) in cols.iter().enumerate() {
        x.column_mut(j).assign(c);
    }
    let y = Array1::from_iter((0..n).map(|_| rng.standard_normal()));
    let penalty = 0.25;
    let fit = lasso_coordinate_descent(&x, &y, &LassoConfig::new(penalty)).unwrap();
    let xty = linalg::mat_t_vec(x.view(), y.view());
    for j in 0..d {
        let rho = xty[j] / n as f64;
        let expect = rho.signum() * (rho.abs() - penalty).max(0.0);
        assert!(
            (fit.beta[j] - expect).abs() <= 1e-8,
            "orthogonal design coord {j}"
        );
    }

    // Zero solution at and above the critical penalty.
    let inst = generate_instance::<f64>(25, 60, 3, 0.3, &BetaSpec::ThreeSpike, 77).unwrap();
    let xty = linalg::mat_t_vec(inst.x.view(), inst.y.view());
    let pmax = linalg::inf_norm(xty.view()) / inst.n as f64;
    let fit =
        lasso_coordinate_descent(&inst.x, &inst.y, &LassoConfig::new(pmax * 1.000001)).unwrap();
    assert!(fit.beta.iter().all(|&b| b == 0.0));

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    println!(
        "criterion 4: PASS (50 KKT instances, orthogonal closed form, zero solution, {elapsed:?})"
    );
}

// --- criterion 5: dynamics reproduction ----------------------------------------

#[test]
fn criterion_5_dynamics_reproduction() {
    let start = Instant::now();
    let runs = &*CRITERION5;
    let alpha_sq = 1e-10f64 * 1e-10;
    for art in runs {
        let run = &art.run;
        let seed = art.seed;
        assert_eq!(run.summary.n, 212, "auto n at d=5000");

        // (a) training loss reached 1e-5 within the iteration cap.
        assert_eq!(run.summary.stop, "loss_reached", "seed {seed}");
        assert!(run.summary.final_train_loss <= 1e-5, "seed {seed}");

        // (b) residual norm never increased (1e-10 slack).
        assert!(
            run.summary.max_resid_increase <= 1e-10,
            "seed {seed}: max increase {}",
            run.summary.max_resid_increase
        );

        // (c) the second-order term crosses half the signal norm strictly
        // before v crosses half its own final size.
        let beta_star_norm = linalg::l2_norm(run.instance.beta_star.view());
        let v_final = run.outcome.trace.last().unwrap().v_norm;
        let t_so = run
            .outcome
            .trace
            .iter()
            .find(|r| r.second_order_norm > beta_star_norm / 2.0)
            .map(|r| r.t)
            .expect("second-order term must grow");
        let t_v = run
            .outcome
            .trace
            .iter()
            .find(|r| r.v_norm > v_final / 2.0)
            .map(|r| r.t)
            .expect("v must grow to its final size");
        assert!(
            t_so < t_v,
            "seed {seed}: stage ordering broken (t_so={t_so}, t_v={t_v})"
        );

        // (d) detected stage boundary within the first tenth of training.
        let t1 = run
            .summary
            .stage1_end_t
            .expect("stage-1 end must be detected");
        assert!(
            t1 <= run.summary.steps / 10,
            "seed {seed}: T1={t1} vs total {}",
            run.summary.steps
        );

        // (e) elementwise 0 <= w_k u_k <= alpha^2 at every step, and the
        // per-step product identity held to rounding error.
        assert!(
            run.summary.wu_min >= 0.0,
            "seed {seed}: wu_min {}",
            run.summary.wu_min
        );
        assert!(
            run.summary.wu_max <= alpha_sq,
            "seed {seed}: wu_max {}",
            run.summary.wu_max
        );
        assert!(
            run.outcome.diagnostics.product_identity_err <= 1e-12,
            "seed {seed}: product identity err {}",
            run.outcome.diagnostics.product_identity_err
        );
    }
    let elapsed = start.elapsed();
    let steps: Vec<u64> = runs.iter().map(|a| a.run.summary.steps).collect();
    println!("criterion 5: PASS (3 seeds at d=5000, steps {steps:?}, {elapsed:?})");
}

// --- criterion 6: remainder envelopes -------------------------------------------

#[test]
fn criterion_6_remainder_envelopes() {
    let runs = &*CRITERION5;
    for art in runs {
        let run = &art.run;
        let seed = art.seed;
        let n = run.summary.n as f64;
        let d = run.summary.d as f64;
        let level = run.summary.b_xi + run.summary.sigma * (n / d).sqrt();
        let gamma_bound = 10.0 * level;
        let zeta_bound = 10.0 * level * n * n.ln() / d;
        assert!(
            run.summary.max_gamma_inf <= gamma_bound,
            "seed {seed}: gamma {} vs {}",
            run.summary.max_gamma_inf,
            gamma_bound
        );
        assert!(
            run.summary.max_zeta_inf <= zeta_bound,
            "seed {seed}: zeta {} vs {}",
            run.summary.max_zeta_inf,
            zeta_bound
        );
    }
    let worst: f64 = runs
        .iter()
        .map(|a| a.run.summary.max_gamma_inf)
        .fold(0.0, f64::max);
    println!("criterion 6: PASS (max gamma over runs {worst:.3e})");
}

// --- criterion 7: scaling ordering ----------------------------------------------

fn median_test_loss(run: &respar::harness::ScalingRun, d: usize, method: ScalingMethod) -> f64 {
    let mut vals: Vec<f64> = run
        .cells
        .iter()
        .filter(|c| c.d == d && c.method == method)
        .map(|c| {
            c.result
                .as_ref()
                .unwrap_or_else(|e| panic!("cell ({d}, {method:?}) failed: {e}"))
                .test_loss_l2
        })
        .collect();
    assert_eq!(vals.len(), 3, "three seeds per cell group");
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals[1]
}

#[test]
fn criterion_7_scaling_ordering() {
    let start = Instant::now();
    let run = &*CRITERION7;
    let d_top = 25_600;
    let hybrid = median_test_loss(run, d_top, ScalingMethod::Hybrid);
    let full = median_test_loss(run, d_top, ScalingMethod::Full);
    let second = median_test_loss(run, d_top, ScalingMethod::SecondOrder);
    assert!(
        hybrid <= full && full <= second,
        "ordering at d=25600: hybrid {hybrid:.4}, full {full:.4}, second {second:.4}"
    );
    assert!(
        full <= 2.0 * hybrid,
        "full {full:.4} vs 2x hybrid {:.4}",
        2.0 * hybrid
    );
    let full_small = median_test_loss(run, 400, ScalingMethod::Full);
    assert!(
        full < full_small,
        "no decreasing trend: full@25600 {full:.4} vs full@400 {full_small:.4}"
    );
    let elapsed = start.elapsed();
    println!(
        "criterion 7: PASS (medians at d=25600: hybrid {hybrid:.4} <= full {full:.4} <= second {second:.4}; full@400 {full_small:.4}, {elapsed:?})"
    );
}

// --- criterion 8: final accuracy vs the rate shape -------------------------------

#[test]
fn criterion_8_final_accuracy_rate_shape() {
    let runs = &*CRITERION5;
    for art in runs {
        let run = &art.run;
        let n = run.summary.n as f64;
        let d = run.summary.d as f64;
        let s = run.summary.s as f64;
        let bound = 10.0 * run.summary.sigma * (s * d.ln() / n).sqrt();
        assert!(
            run.summary.final_test_loss_l2 <= bound,
            "seed {}: final error {} vs bound {}",
            art.seed,
            run.summary.final_test_loss_l2,
            bound
        );
    }
    let worst: f64 = runs
        .iter()
        .map(|a| a.run.summary.final_test_loss_l2)
        .fold(0.0, f64::max);
    println!("criterion 8: PASS (worst final test loss {worst:.4})");
}

// --- criterion 9: determinism across reruns and worker counts --------------------

#[test]
fn criterion_9_determinism_across_worker_counts() {
    let start = Instant::now();

    // Criterion 5 pipeline: rerun sequentially and byte-compare.
    let parallel = &*CRITERION5;
    let sequential = run_criterion5_pipeline(1);
    assert_eq!(parallel.len(), sequential.len());
    for (a, b) in parallel.iter().zip(&sequential) {
        assert_eq!(a.seed, b.seed);
        assert!(
            a.trace_csv == b.trace_csv,
            "seed {}: trace CSV differs between worker counts",
            a.seed
        );
        assert!(
            a.summary_json == b.summary_json,
            "seed {}: summary differs between worker counts",
            a.seed
        );
    }

    // Criterion 7 sweep: rerun with one worker and byte-compare the CSV.
    let sweep_parallel = &*CRITERION7;
    let sweep_sequential = run_scaling(&criterion7_config(1)).expect("sequential sweep");
    assert!(
        sweep_parallel.csv == sweep_sequential.csv,
        "scaling CSV differs between worker counts"
    );

    let elapsed = start.elapsed();
    println!("criterion 9: PASS (criteria 5 and 7 byte-identical at 1 vs 2 workers, {elapsed:?})");
}
