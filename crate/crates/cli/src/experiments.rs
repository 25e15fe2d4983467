use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fparma::estimate::{end_to_end_fit, extract_fpar_operators, RegularizationConfig};
use fparma::presets::{dense_image_margin, Example42Params};
use fparma::probe::{
    ar_residuals, check_stationarity, m_approx_decay, population_covariances, whiteness_diagnostic, DecayTable,
    StationarityReport, DEFAULT_J_MAX,
};
use fparma::sim::{simulate, RngStream, SamplePath};
use fparma::stats::{linear_fit, median, LinearFit};
use fparma::{BlockOp, FparmaModel};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Command, ExperimentConfig};
use crate::error::{CliError, CliResult};

/// Largest HS distance accepted between the built and the closed-form cycle operator.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// Files written by a command and its exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub exit_code: i32,
    pub message: String,
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> CliResult<Outcome> {
    cfg.check_required(command)?;
    cfg.regularization.validate(None)?;
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out)?;
    match command {
        Command::Validate => run_validate(cfg, &out),
        Command::Simulate => run_simulate(cfg, &out),
        Command::Covariance => run_covariance(cfg, &out),
        Command::Estimate => run_estimate(cfg, &out),
        Command::Rates => run_rates(cfg, &out),
        Command::Decay => run_decay(cfg, &out),
        Command::Example42 => run_example42(cfg, &out),
    }
}

/// Runs `f` on a pool capped by `FPARMA_THREADS` when set.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FPARMA_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("FPARMA_THREADS must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(pool.install(f))
}

fn write_file(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn require_model(cfg: &ExperimentConfig) -> CliResult<FparmaModel> {
    cfg.model()?
        .ok_or_else(|| CliError::Config("a model is required".into()))
}

fn rows(b: &BlockOp) -> Vec<Vec<f64>> {
    b.to_flat().row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct ValidationReport {
    valid: bool,
    violations: Vec<String>,
    stationarity: Option<StationarityReport>,
}

fn run_validate(cfg: &ExperimentConfig, out: &Path) -> CliResult<Outcome> {
    let doc = cfg
        .model_unchecked()?
        .ok_or_else(|| CliError::Config("a model is required".into()))?;
    let (violations, stationarity) = match FparmaModel::from_document(&doc) {
        Ok(model) => (
            Vec::new(),
            Some(check_stationarity(&model.cycle_matrix()?, DEFAULT_J_MAX)),
        ),
        Err(fparma::Error::InvalidModel(v)) => (v.iter().map(|v| v.to_string()).collect(), None),
        Err(e) => return Err(e.into()),
    };
    let stationary = stationarity.as_ref().is_some_and(|r| r.j0.is_some());
    let valid = violations.is_empty() && stationary;
    let mut files = Vec::new();
    write_file(
        out,
        "validation.json",
        &to_json(&ValidationReport {
            valid,
            violations,
            stationarity,
        })?,
        &mut files,
    )?;
    let message = if valid {
        "model is valid and stationary".to_string()
    } else {
        "model fails validation or stationarity".to_string()
    };
    Ok(Outcome {
        files,
        exit_code: if valid { 0 } else { 2 },
        message,
    })
}

fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> CliResult<Outcome> {
    let model = require_model(cfg)?;
    let n = cfg.n_cycles[0] * model.period();
    let path = simulate(
        &model,
        n,
        cfg.burn_in,
        RngStream::new(cfg.master_seed.unwrap_or_default(), 0),
    )?;
    let mut files = Vec::new();
    write_file(out, "path.csv", &path.to_csv(), &mut files)?;
    Ok(Outcome {
        files,
        exit_code: 0,
        message: format!("simulated {n} observations after {} burn-in", path.burn_in()),
    })
}

#[derive(Serialize)]
struct LaggedEntry {
    h: i64,
    entries: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct CovarianceReport {
    #[serde(rename = "P")]
    period: usize,
    d: usize,
    c: Vec<Vec<f64>>,
    lagged: Vec<LaggedEntry>,
    c_rho: Option<Vec<Vec<f64>>>,
    series_terms: usize,
    fixed_point_iterations: usize,
    route_gap: f64,
    stationarity: StationarityReport,
}

fn run_covariance(cfg: &ExperimentConfig, out: &Path) -> CliResult<Outcome> {
    let model = require_model(cfg)?;
    let stationarity = check_stationarity(&model.cycle_matrix()?, DEFAULT_J_MAX);
    let cov = population_covariances(&model, cfg.h_max.unwrap_or(1))?;
    let report = CovarianceReport {
        period: model.period(),
        d: model.dim(),
        c: rows(&cov.c),
        lagged: cov
            .lagged
            .iter()
            .map(|(&h, b)| LaggedEntry { h, entries: rows(b) })
            .collect(),
        c_rho: cov.c_rho.as_ref().map(rows),
        series_terms: cov.series_terms,
        fixed_point_iterations: cov.fixed_point_iterations,
        route_gap: cov.route_gap,
        stationarity,
    };
    let mut files = Vec::new();
    write_file(out, "covariance.json", &to_json(&report)?, &mut files)?;
    Ok(Outcome {
        files,
        exit_code: 0,
        message: format!("route gap {:.3e}", cov.route_gap),
    })
}

fn run_estimate(cfg: &ExperimentConfig, out: &Path) -> CliResult<Outcome> {
    let model = cfg.model()?;
    let (path, period) = match (&cfg.input, &model) {
        (Some(input), _) => {
            let period = model
                .as_ref()
                .map(|m| m.period())
                .or(cfg.period)
                .expect("checked by check_required");
            if let (Some(m), Some(p)) = (&model, cfg.period) {
                if m.period() != p {
                    return Err(CliError::Config(format!(
                        "period {p} differs from the model's {}",
                        m.period()
                    )));
                }
            }
            let text = std::fs::read_to_string(input)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", input.display())))?;
            (SamplePath::from_csv(&text, period)?, period)
        }
        (None, Some(m)) => {
            let n = cfg.n_cycles[0] * m.period();
            (
                simulate(
                    m,
                    n,
                    cfg.burn_in,
                    RngStream::new(cfg.master_seed.unwrap_or_default(), 0),
                )?,
                m.period(),
            )
        }
        (None, None) => unreachable!("checked by check_required"),
    };
    let truth = model.as_ref().filter(|m| m.ma_order() == 0);
    let result = end_to_end_fit(&path, period, &cfg.regularization, truth)?;
    let mut files = Vec::new();
    write_file(out, "estimate.json", &format!("{}\n", result.to_json()?), &mut files)?;
    Ok(Outcome {
        files,
        exit_code: 0,
        message: format!("estimated {} operators", result.phi_hat.len()),
    })
}

/// One fit per `(n, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatesRow {
    pub n: usize,
    pub seed: usize,
    pub max_err_row1: f64,
    pub max_err_rest: f64,
    pub err_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatesMedian {
    pub n: usize,
    pub max_err_row1: f64,
    pub max_err_rest: f64,
    pub err_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatesSlopes {
    pub max_err_row1: LinearFit,
    pub max_err_rest: LinearFit,
    pub err_phi: LinearFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatesTable {
    pub rows: Vec<RatesRow>,
    pub medians: Vec<RatesMedian>,
    /// Log-log least-squares slopes of the medians against `n`; absent for a
    /// single-point grid.
    pub slopes: Option<RatesSlopes>,
}

impl RatesTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,seed,max_err_row1,max_err_rest,err_Phi\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{}",
                r.n, r.seed, r.max_err_row1, r.max_err_rest, r.err_phi
            )
            .unwrap();
        }
        s
    }

    pub fn medians_csv(&self) -> String {
        let mut s = String::from("n,max_err_row1,max_err_rest,err_Phi\n");
        for r in &self.medians {
            writeln!(s, "{},{},{},{}", r.n, r.max_err_row1, r.max_err_rest, r.err_phi).unwrap();
        }
        s
    }
}

/// Stream of seed `seed` at grid position `n_index`; independent across `n`.
pub fn rates_stream(master_seed: u64, n_index: usize, seed: usize) -> RngStream {
    RngStream::new(master_seed, ((n_index as u64) << 32) | seed as u64)
}

/// Fits `n_seeds` independent paths for every `n` (in cycles) in the grid.
pub fn rates_table(
    model: &FparmaModel,
    n_grid: &[usize],
    n_seeds: usize,
    master_seed: u64,
    reg: &RegularizationConfig,
) -> CliResult<RatesTable> {
    if model.ma_order() > 0 {
        return Err(CliError::Config("rates need a pure AR model".into()));
    }
    check_stationary(model)?;
    let jobs: Vec<(usize, usize, usize)> = n_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..n_seeds).map(move |s| (i, n, s)))
        .collect();
    let rows: Vec<RatesRow> = with_pool(|| {
        jobs.par_iter()
            .map(|&(i, n, seed)| {
                let path = simulate(model, n * model.period(), None, rates_stream(master_seed, i, seed))?;
                let fit = end_to_end_fit(&path, model.period(), reg, Some(model))?;
                let e = fit.errors_vs_truth.expect("truth supplied");
                Ok(RatesRow {
                    n,
                    seed,
                    max_err_row1: e.max_err_row1,
                    max_err_rest: e.max_err_rest,
                    err_phi: e.err_phi,
                })
            })
            .collect::<fparma::Result<Vec<_>>>()
    })??;
    let medians: Vec<RatesMedian> = n_grid
        .iter()
        .map(|&n| {
            let col = |f: fn(&RatesRow) -> f64| median(&rows.iter().filter(|r| r.n == n).map(f).collect::<Vec<_>>());
            RatesMedian {
                n,
                max_err_row1: col(|r| r.max_err_row1),
                max_err_rest: col(|r| r.max_err_rest),
                err_phi: col(|r| r.err_phi),
            }
        })
        .collect();
    let slopes = if n_grid.len() >= 2 {
        let x: Vec<f64> = medians.iter().map(|m| (m.n as f64).ln()).collect();
        let fit = |f: fn(&RatesMedian) -> f64| {
            linear_fit(&x, &medians.iter().map(|m| f(m).ln()).collect::<Vec<_>>())
                .ok_or_else(|| CliError::Numerical("degenerate rate regression".into()))
        };
        Some(RatesSlopes {
            max_err_row1: fit(|m| m.max_err_row1)?,
            max_err_rest: fit(|m| m.max_err_rest)?,
            err_phi: fit(|m| m.err_phi)?,
        })
    } else {
        None
    };
    Ok(RatesTable { rows, medians, slopes })
}

fn check_stationary(model: &FparmaModel) -> CliResult<StationarityReport> {
    let report = check_stationarity(&model.cycle_matrix()?, DEFAULT_J_MAX);
    if report.j0.is_none() {
        return Err(CliError::Assumption(format!(
            "no j <= {DEFAULT_J_MAX} with ||Phi^j|| < 1"
        )));
    }
    Ok(report)
}

fn run_rates(cfg: &ExperimentConfig, out: &Path) -> CliResult<Outcome> {
    let model = require_model(cfg)?;
    let table = rates_table(
        &model,
        &cfg.n_cycles,
        cfg.n_seeds.expect("checked"),
        cfg.master_seed.expect("checked"),
        &cfg.regularization,
    )?;
    let mut files = Vec::new();
    write_file(out, "rates.csv", &table.to_csv(), &mut files)?;
    write_file(out, "rates_medians.csv", &table.medians_csv(), &mut files)?;
    write_file(
        out,
        "rates_summary.json",
        &to_json(&serde_json::json!({ "medians": table.medians, "slopes": table.slopes }))?,
        &mut files,
    )?;
    let message = match &table.slopes {
        Some(s) => format!("log-log slope of ||Phi_hat - Phi||_S: {:.3}", s.err_phi.slope),
        None => "single grid point; slopes omitted".into(),
    };
    Ok(Outcome {
        files,
        exit_code: 0,
        message,
    })
}

pub fn decay_csv(table: &DecayTable) -> String {
    let mut s = String::from("m,nu\n");
    for (m, nu) in table.m_values.iter().zip(&table.nu) {
        writeln!(s, "{m},{nu}").unwrap();
    }
    s
}

fn run_decay(cfg: &ExperimentConfig, out: &Path) -> CliResult<Outcome> {
    let model = require_model(cfg)?;
    let table = m_approx_decay(
        &model,
        &cfg.m_values,
        cfg.n_paths.expect("checked"),
        cfg.tau.unwrap_or(2.0),
        cfg.master_seed.expect("checked"),
    )?;
    let mut files = Vec::new();
    write_file(out, "decay.csv", &decay_csv(&table), &mut files)?;
    let note = match &table.fit {
        Some(_) => None,
        None => Some("slope undefined: some coupling distances are zero"),
    };
    let summary = serde_json::json!({
        "tau": table.tau,
        "n_paths": cfg.n_paths,
        "truncation": table.truncation,
        "slope": table.fit.as_ref().map(|f| f.slope),
        "r_squared": table.fit.as_ref().map(|f| f.r_squared),
        "note": note,
    });
    write_file(out, "decay_summary.json", &to_json(&summary)?, &mut files)?;
    let message = match &table.fit {
        Some(f) => format!("slope {:.4}, R^2 {:.4}", f.slope, f.r_squared),
        None => "slope undefined (flagged)".into(),
    };
    Ok(Outcome {
        files,
        exit_code: 0,
        message,
    })
}

/// Structural diagnostics of the packaged diagonal-plus-coupling model.
#[derive(Debug, Clone, Serialize)]
pub struct Example42Report {
    pub params: Example42Params,
    pub eigenvalues: Vec<f64>,
    pub sobolev_sum: f64,
    pub cycle_matrix: Vec<Vec<f64>>,
    pub closed_form: Vec<Vec<f64>>,
    pub hs_distance: f64,
    /// Smallest singular value of the flattened `Φ*_[mm]`, keyed by `m`.
    pub dense_image_margin: BTreeMap<usize, f64>,
    pub structure_ok: bool,
    pub dense_image_ok: bool,
    pub rates: Option<RatesTable>,
}

pub fn example42_report(params: &Example42Params) -> CliResult<Example42Report> {
    let model = params.model()?;
    let phi = model.cycle_matrix()?;
    let closed = params.closed_form_cycle_matrix()?;
    let hs_distance = phi.hs_distance(&closed)?;
    let margins: BTreeMap<usize, f64> = (2..=3)
        .map(|m| Ok((m, dense_image_margin(&phi, m)?)))
        .collect::<fparma::Result<_>>()?;
    Ok(Example42Report {
        params: params.clone(),
        eigenvalues: params.eigenvalues(),
        sobolev_sum: params.sobolev_sum(),
        cycle_matrix: rows(&phi),
        closed_form: rows(&closed),
        hs_distance,
        structure_ok: hs_distance <= STRUCTURE_TOL,
        dense_image_ok: margins[&3] > STRUCTURE_TOL,
        dense_image_margin: margins,
        rates: None,
    })
}

fn run_example42(cfg: &ExperimentConfig, out: &Path) -> CliResult<Outcome> {
    if cfg.model.is_some() {
        return Err(CliError::Config(
            "`example42` builds its own model; use `example42` parameters".into(),
        ));
    }
    let params = cfg.example42.clone().unwrap_or_default();
    let mut report = example42_report(&params)?;
    let mut files = Vec::new();
    if !cfg.n_cycles.is_empty() && report.dense_image_ok {
        let seed = cfg
            .master_seed
            .ok_or_else(|| CliError::Config("rate tables require master_seed".into()))?;
        let table = rates_table(
            &params.model()?,
            &cfg.n_cycles,
            cfg.n_seeds.unwrap_or(50),
            seed,
            &cfg.regularization,
        )?;
        write_file(out, "example42_rates.csv", &table.to_csv(), &mut files)?;
        report.rates = Some(table);
    }
    write_file(out, "example42.json", &to_json(&report)?, &mut files)?;
    let ok = report.structure_ok && report.dense_image_ok;
    let message = format!(
        "HS distance to closed form {:.3e}; smallest singular value of Phi*_[33] {:.3e}",
        report.hs_distance, report.dense_image_margin[&3]
    );
    Ok(Outcome {
        files,
        exit_code: if ok { 0 } else { 2 },
        message,
    })
}

/// Per-run whiteness flags of `ρ_k` and `ε'_k` for an AR model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhitenessRun {
    pub run: usize,
    pub rho_flags: usize,
    pub eps_flags: usize,
    pub rho_max_ratio: f64,
    pub eps_max_ratio: f64,
}

pub fn whiteness_runs(
    model: &FparmaModel,
    n_cycles: usize,
    runs: usize,
    max_lag: usize,
    master_seed: u64,
) -> CliResult<Vec<WhitenessRun>> {
    if model.ma_order() > 0 {
        return Err(CliError::Config("whiteness of rho needs a pure AR model".into()));
    }
    let phi = model.cycle_matrix()?;
    let pp = model.period();
    with_pool(|| {
        (0..runs)
            .into_par_iter()
            .map(|run| {
                let path = simulate(model, n_cycles * pp, None, RngStream::new(master_seed, run as u64))?;
                let rho = ar_residuals(&path.cycles(), &phi)?;
                let eps = path.innovation_cycles();
                let a = whiteness_diagnostic(&rho, max_lag)?;
                let b = whiteness_diagnostic(&eps[eps.len() - n_cycles..], max_lag)?;
                let ratio =
                    |r: &fparma::probe::WhitenessReport| r.lag_norms.iter().fold(0.0f64, |m, v| m.max(v / r.threshold));
                Ok(WhitenessRun {
                    run,
                    rho_flags: a.flags.len(),
                    eps_flags: b.flags.len(),
                    rho_max_ratio: ratio(&a),
                    eps_max_ratio: ratio(&b),
                })
            })
            .collect::<fparma::Result<Vec<_>>>()
    })?
    .map_err(Into::into)
}

pub fn whiteness_csv(runs: &[WhitenessRun]) -> String {
    let mut s = String::from("run,rho_flags,eps_flags,rho_max_ratio,eps_max_ratio\n");
    for r in runs {
        writeln!(
            s,
            "{},{},{},{},{}",
            r.run, r.rho_flags, r.eps_flags, r.rho_max_ratio, r.eps_max_ratio
        )
        .unwrap();
    }
    s
}

/// Max HS error of all extracted operators from the exact cycle operator,
/// one row per `θ`, with `K` full.
pub fn recovery_table(model: &FparmaModel, thetas: &[f64]) -> CliResult<Vec<(f64, f64)>> {
    let phi = model.cycle_matrix()?;
    thetas
        .iter()
        .map(|&theta| {
            let mut r = extract_fpar_operators(&phi, &RegularizationConfig::uniform(model.period(), theta, None))?;
            let t = r.compare_to_truth(model)?;
            Ok((theta, t.max_err_row1.max(t.max_err_rest)))
        })
        .collect()
}

pub fn recovery_csv(rows: &[(f64, f64)]) -> String {
    let mut s = String::from("theta,max_err\n");
    for (t, e) in rows {
        writeln!(s, "{t:e},{e}").unwrap();
    }
    s
}
