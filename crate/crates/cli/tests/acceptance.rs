//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its criterion.

use std::path::Path;
use std::process::Command as Process;
use std::time::{Duration, Instant};

use fparma::estimate::RegularizationConfig;
use fparma::presets::{random_model, test_fpar_model, test_fparma_model, Example42Params};
use fparma::probe::{
    check_stationarity, lagged_moment, m_approx_decay, population_covariances, season_covariance_halves,
};
use fparma::sim::{simulate, RngStream};
use fparma::{BlockOp, FparmaModel};
use fparma_cli::experiments::{
    decay_csv, example42_report, rates_table, recovery_csv, recovery_table, whiteness_csv, whiteness_runs,
};
use fparma_cli::{run, Command, ExperimentConfig};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASTER_SEED: u64 = 20240601;

fn report(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    println!(
        "[{}] criterion {id}: {name} | {detail} | {:.2?} (budget {:.0?})",
        if ok { "PASS" } else { "FAIL" },
        elapsed,
        budget
    );
    ok
}

fn max_block_distance(a: &BlockOp, b: &BlockOp) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            worst = worst.max((a.block(i, j) - b.block(i, j)).norm());
        }
    }
    worst
}

#[test]
fn criterion_01_companion_algebra() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED);
    let (mut worst, mut first_col) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let period = rng.random_range(2..=6);
        let p = rng.random_range(1..period);
        let q = rng.random_range(0..period);
        let d = rng.random_range(1..=3);
        let scale = rng.random_range(0.2..1.5);
        let model = random_model(&mut rng, period, p, q, d, scale).unwrap();
        let phi = model.cycle_matrix().unwrap();
        worst = worst.max(max_block_distance(&phi, &model.cycle_matrix_recursive().unwrap()));
        for i in 0..period {
            first_col = first_col.max(phi.block(i, 0).norm());
        }
    }
    let pass = worst <= 1e-12 && first_col == 0.0;
    let detail = format!("max block HS gap {worst:.2e} (tol 1e-12), first block column norm {first_col:.1e}");
    assert!(report(
        1,
        "cycle matrix vs entrywise recursion, 100 models",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(10)
    ));
}

#[test]
fn criterion_02_example_structure() {
    let start = Instant::now();
    let default = example42_report(&Example42Params::default()).unwrap();
    let degenerate = example42_report(&Example42Params {
        c22: 0.0,
        ..Default::default()
    })
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        example42: Some(Example42Params {
            c22: 0.0,
            ..Default::default()
        }),
        output_dir: Some(out.path().to_path_buf()),
        ..Default::default()
    };
    let exit = run(Command::Example42, &cfg).unwrap().exit_code;
    let pass = default.hs_distance <= 1e-12
        && default.dense_image_margin[&3] > 0.0
        && degenerate.dense_image_margin[&3] <= 1e-12
        && exit == 2;
    let detail = format!(
        "HS distance {:.2e} (tol 1e-12); sigma_min(Phi*_[33]) {:.3e} (c22 != 0), {:.2e} (c22 = 0, exit {exit})",
        default.hs_distance, default.dense_image_margin[&3], degenerate.dense_image_margin[&3]
    );
    assert!(report(
        2,
        "closed-form cycle operator and dense image",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(1)
    ));
}

fn random_stationary_model(rng: &mut ChaCha8Rng) -> FparmaModel {
    loop {
        let period = rng.random_range(2..=5);
        let p = rng.random_range(1..period);
        let q = rng.random_range(1..period);
        let d = rng.random_range(1..=3);
        let model = random_model(rng, period, p, q, d, 0.7).unwrap();
        let r = check_stationarity(&model.cycle_matrix().unwrap(), 200);
        if r.j0.is_some() && r.spectral_radius < 1.0 {
            return model;
        }
    }
}

#[test]
fn criterion_03_one_cycle_reduction() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(MASTER_SEED + 3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let model = random_stationary_model(&mut rng);
        let (pp, d) = (model.period(), model.dim());
        let phi = model.cycle_matrix().unwrap();
        let agg = model.ma_aggregates().unwrap();
        for _ in 0..100 {
            let mut gauss = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let x0 = gauss(pp * d);
            // innovations at times 1-P ..= P; eps[t + P - 1] is ε_t
            let eps: Vec<DVector<f64>> = (0..2 * pp).map(|_| gauss(d)).collect();
            let mut x = x0.clone();
            for k in 1..=pp {
                let stacked = DVector::from_iterator(
                    pp * d,
                    (k..k + pp).flat_map(|i| eps[i].iter().copied().collect::<Vec<_>>()),
                );
                x = model.stacked_step(k as i64, &x, &stacked).unwrap();
            }
            let prev = DVector::from_iterator(
                pp * d,
                eps[..pp].iter().flat_map(|e| e.iter().copied().collect::<Vec<_>>()),
            );
            let cur = DVector::from_iterator(
                pp * d,
                eps[pp..].iter().flat_map(|e| e.iter().copied().collect::<Vec<_>>()),
            );
            let one_shot = phi.apply_stacked(&x0).unwrap()
                + agg.delta1.apply_stacked(&prev).unwrap()
                + agg.delta0.apply_stacked(&cur).unwrap();
            worst = worst.max((x - one_shot).amax());
        }
    }
    let pass = worst <= 1e-12;
    let detail = format!("max entry gap {worst:.2e} over 20 models x 100 states (tol 1e-12)");
    assert!(report(
        3,
        "P companion steps vs (Phi, Delta0, Delta1) update",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(10)
    ));
}

#[test]
fn criterion_04_covariance_engine() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;

    // AR case: C^1 = Phi C
    let ar = test_fpar_model();
    let cov = population_covariances(&ar, 1).unwrap();
    let phi = ar.cycle_matrix().unwrap();
    let gap_ar = cov.lagged[&1].hs_distance(&phi.compose(&cov.c).unwrap()).unwrap();
    pass &= cov.route_gap <= 1e-10 && gap_ar <= 1e-10;
    lines.push(format!(
        "fpAR route gap {:.2e}, |C1 - Phi C| {gap_ar:.2e}",
        cov.route_gap
    ));

    // ARMA case: C^1 = Phi C + Delta1 C_eps Delta0*
    let arma = test_fparma_model();
    let cov_arma = population_covariances(&arma, 1).unwrap();
    let phi_a = arma.cycle_matrix().unwrap();
    let agg = arma.ma_aggregates().unwrap();
    let c_eps = arma.noise().stacked_covariance().unwrap();
    let expected = phi_a
        .compose(&cov_arma.c)
        .unwrap()
        .add(
            &agg.delta1
                .compose(&c_eps)
                .unwrap()
                .compose(&agg.delta0.adjoint())
                .unwrap(),
        )
        .unwrap();
    let gap_arma = cov_arma.lagged[&1].hs_distance(&expected).unwrap();
    pass &= cov_arma.route_gap <= 1e-10 && gap_arma <= 1e-10;
    lines.push(format!(
        "fpARMA route gap {:.2e}, h=1 identity gap {gap_arma:.2e}",
        cov_arma.route_gap
    ));

    // Monte Carlo at 1e5 cycles, lags 0 and 1, 3 SE entrywise
    for (name, model, cov, seed) in [("fpAR", &ar, &cov, 41u64), ("fpARMA", &arma, &cov_arma, 42u64)] {
        let path = simulate(model, 100_000 * model.period(), None, RngStream::new(MASTER_SEED, seed)).unwrap();
        let cycles = path.cycles();
        for h in 0..=1usize {
            let est = lagged_moment(&cycles, h, 50).unwrap();
            let truth = if h == 0 {
                cov.c.to_flat()
            } else {
                cov.lagged[&1].to_flat()
            };
            let z = (&est.estimate - &truth).component_div(&est.standard_errors);
            pass &= z.amax() <= 3.0;
            lines.push(format!("{name} MC lag {h}: max |z| {:.2}", z.amax()));
        }
    }
    assert!(report(
        4,
        "covariance routes, lag identities, Monte Carlo",
        pass,
        lines.join("; "),
        start.elapsed(),
        Duration::from_secs(120)
    ));
}

fn whiteness_csv_for_run() -> (String, usize) {
    let runs = whiteness_runs(&test_fpar_model(), 10_000, 100, 10, MASTER_SEED).unwrap();
    let clean = runs.iter().filter(|r| r.rho_flags == 0 && r.eps_flags == 0).count();
    (whiteness_csv(&runs), clean)
}

#[test]
fn criterion_05_whiteness() {
    let start = Instant::now();
    let (_, clean) = whiteness_csv_for_run();
    let pass = clean >= 95;
    let detail = format!("{clean}/100 runs with no flags at lags 1..10 (need >= 95)");
    assert!(report(
        5,
        "whiteness of rho and eps' at n = 1e4",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(120)
    ));
}

fn decay_table_csv() -> (String, Option<fparma::stats::LinearFit>) {
    let table = m_approx_decay(
        &test_fpar_model(),
        &(2..=12).collect::<Vec<_>>(),
        2000,
        2.0,
        MASTER_SEED,
    )
    .unwrap();
    (decay_csv(&table), table.fit)
}

#[test]
fn criterion_06_weak_dependence() {
    let start = Instant::now();
    let (_, fit) = decay_table_csv();
    let (pass, detail) = match fit {
        Some(f) => (
            f.slope < 0.0 && f.r_squared >= 0.9,
            format!("slope {:.4}, R^2 {:.4} (need < 0 and >= 0.9)", f.slope, f.r_squared),
        ),
        None => (false, "slope undefined".into()),
    };
    assert!(report(
        6,
        "geometric decay of coupling distance",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(120)
    ));
}

const THETAS: [f64; 7] = [1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10];

fn recovery() -> Vec<(f64, f64)> {
    recovery_table(&Example42Params::default().model().unwrap(), &THETAS).unwrap()
}

#[test]
fn criterion_07_exact_recovery() {
    let start = Instant::now();
    let rows = recovery();
    let last = rows.last().unwrap().1;
    let decreasing = rows.windows(2).all(|w| w[1].1 < w[0].1);
    let pass = last <= 1e-6 && decreasing;
    let detail = format!(
        "max HS error {:.2e} at theta 1e-10 (tol 1e-6); strictly decreasing: {decreasing} ({})",
        last,
        rows.iter()
            .map(|(_, e)| format!("{e:.1e}"))
            .collect::<Vec<_>>()
            .join(" > ")
    );
    assert!(report(
        7,
        "identifiability from the exact cycle operator",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(5)
    ));
}

fn rates() -> fparma_cli::experiments::RatesTable {
    let model = Example42Params::default().model().unwrap();
    rates_table(
        &model,
        &[500, 1000, 2000, 4000],
        50,
        MASTER_SEED,
        &RegularizationConfig::default(),
    )
    .unwrap()
}

#[test]
fn criterion_08_consistency() {
    let start = Instant::now();
    let table = rates();
    let m = &table.medians;
    let dec = |f: fn(&fparma_cli::experiments::RatesMedian) -> f64| m.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let slope = table.slopes.as_ref().unwrap().err_phi.slope;
    let pass = dec(|r| r.max_err_row1) && dec(|r| r.max_err_rest) && dec(|r| r.err_phi) && slope <= -0.2;
    let detail = format!(
        "medians (row1/rest/Phi) {}; log-log slope of ||Phi_hat - Phi||_S {slope:.3} (need <= -0.2)",
        m.iter()
            .map(|r| format!(
                "n={}: {:.4}/{:.4}/{:.4}",
                r.n, r.max_err_row1, r.max_err_rest, r.err_phi
            ))
            .collect::<Vec<_>>()
            .join(", ")
    );
    assert!(report(
        8,
        "median errors decrease over n, 50 seeds",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(900)
    ));
}

#[test]
fn criterion_09_periodic_stationarity() {
    let start = Instant::now();
    let mut pass = true;
    let mut worst = 0.0f64;
    let models = [
        test_fpar_model(),
        test_fparma_model(),
        Example42Params::default().model().unwrap(),
    ];
    for (i, model) in models.iter().enumerate() {
        let path = simulate(
            model,
            50_000 * model.period(),
            None,
            RngStream::new(MASTER_SEED, 90 + i as u64),
        )
        .unwrap();
        for r in season_covariance_halves(&path.cycles(), model.period(), 40).unwrap() {
            let ratio = r.hs_difference / r.standard_error;
            worst = worst.max(ratio);
            pass &= ratio <= 3.0;
        }
    }
    let detail = format!("max HS difference / SE over seasons and 3 models: {worst:.2} (need <= 3)");
    assert!(report(
        9,
        "per-season covariances agree across path halves",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(60)
    ));
}

fn run_binary(cfg: &Path, out: &Path, threads: &str, command: &str) -> i32 {
    Process::new(env!("CARGO_BIN_EXE_fparma"))
        .args([command, "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env("FPARMA_THREADS", threads)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let mut same = vec![];
    same.push(("whiteness", whiteness_csv_for_run().0 == whiteness_csv_for_run().0));
    same.push(("decay", decay_table_csv().0 == decay_table_csv().0));
    same.push(("recovery", recovery_csv(&recovery()) == recovery_csv(&recovery())));
    same.push(("rates", rates().to_csv() == rates().to_csv()));

    // through the binary, with different worker counts
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("rates.json");
    std::fs::write(
        &cfg_path,
        format!(r#"{{"example42": {{}}, "n_cycles": [500, 1000], "n_seeds": 20, "master_seed": {MASTER_SEED}}}"#),
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let codes = (
        run_binary(&cfg_path, &a, "1", "rates"),
        run_binary(&cfg_path, &b, "4", "rates"),
    );
    let bytes = |d: &Path| std::fs::read(d.join("rates.csv")).unwrap_or_default();
    same.push((
        "rates cli (1 vs 4 workers)",
        codes == (0, 0) && !bytes(&a).is_empty() && bytes(&a) == bytes(&b),
    ));

    let decay_cfg = dir.path().join("decay.json");
    let model_path = dir.path().join("model.json");
    std::fs::write(&model_path, test_fpar_model().to_json().unwrap()).unwrap();
    std::fs::write(
        &decay_cfg,
        format!(r#"{{"model": "model.json", "m_values": [2, 4, 6], "n_paths": 200, "master_seed": {MASTER_SEED}}}"#),
    )
    .unwrap();
    let codes = (
        run_binary(&decay_cfg, &a, "1", "decay"),
        run_binary(&decay_cfg, &b, "3", "decay"),
    );
    let bytes = |d: &Path| std::fs::read(d.join("decay.csv")).unwrap_or_default();
    same.push((
        "decay cli",
        codes == (0, 0) && !bytes(&a).is_empty() && bytes(&a) == bytes(&b),
    ));

    let pass = same.iter().all(|(_, s)| *s);
    let detail = same
        .iter()
        .map(|(n, s)| format!("{n}: {}", if *s { "identical" } else { "DIFFERENT" }))
        .collect::<Vec<_>>()
        .join(", ");
    assert!(report(
        10,
        "byte-identical reruns of criteria 5-8",
        pass,
        detail,
        start.elapsed(),
        Duration::from_secs(1800)
    ));
}
