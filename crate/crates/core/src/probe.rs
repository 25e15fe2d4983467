//! Stationarity checks, population covariances of the cycle-stacked process,
//! and empirical dependence diagnostics.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::BlockOp;
use crate::model::FparmaModel;
use crate::sim::{self, NoiseSampler, RngStream};
use crate::stats::{self, LinearFit};

/// Number of powers examined by default.
pub const DEFAULT_J_MAX: usize = 200;

/// Tail tolerance for the truncated covariance series.
pub const SERIES_TAIL_TOL: f64 = 1e-13;

/// Hard cap on the number of series terms.
pub const MAX_SERIES_TERMS: usize = 10_000;

/// Relative HS change that stops the fixed-point iteration.
pub const FIXED_POINT_TOL: f64 = 1e-13;

/// Maximal allowed HS gap between the two covariance routes, relative to
/// `max(1, ||C||_S)`.
pub const ROUTE_AGREEMENT_TOL: f64 = 1e-10;
pub const NEGLIGIBLE_NORM: f64 = 1e-200;

/// `||Φ^j||_L <= a b^j` over the computed range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricBound {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// Smallest `j` with `||Φ^j||_L < 1`.
    pub j0: Option<usize>,
    /// `norms[j - 1] = ||Φ^j||_L` for `j = 1..=j_max`; stops early once a
    /// norm falls below `NEGLIGIBLE_NORM`.
    pub norms: Vec<f64>,
    pub spectral_radius: f64,
    pub geometric_bound: GeometricBound,
    /// Smallest `j` with `Φ^j = 0` exactly, if any.
    pub nilpotent_index: Option<usize>,
}

impl StationarityReport {
    /// Smallest `c >= 1` with `a b^c < tol`; `None` when the bound does not decay.
    pub fn cycles_below(&self, tol: f64) -> Option<usize> {
        if let Some(n) = self.nilpotent_index {
            return Some(n);
        }
        let GeometricBound { a, b } = self.geometric_bound;
        if self.j0.is_none() || !(b < 1.0) {
            return None;
        }
        if a < tol {
            return Some(1);
        }
        let c = ((tol / a).ln() / b.ln()).ceil().max(1.0);
        Some((c as usize).min(MAX_SERIES_TERMS))
    }

    /// Number of series terms `J` with `a b^J / (1 - b) * scale < tol`.
    pub fn series_terms(&self, scale: f64, tol: f64) -> Option<usize> {
        if let Some(n) = self.nilpotent_index {
            return Some(n);
        }
        let b = self.geometric_bound.b;
        if !(b < 1.0) {
            return None;
        }
        self.cycles_below(tol * (1.0 - b) / scale.max(f64::MIN_POSITIVE))
    }
}

/// Powers of `Φ` up to `j_max`, the first contracting power, a spectral
/// radius estimate, and a fitted geometric envelope.
pub fn check_stationarity(phi: &BlockOp, j_max: usize) -> StationarityReport {
    let j_max = j_max.max(1);
    let mut norms = Vec::with_capacity(j_max);
    let mut power = phi.clone();
    let mut nilpotent_index = None;
    for j in 1..=j_max {
        if nilpotent_index.is_some() {
            norms.push(0.0);
            continue;
        }
        let n = power.op_norm();
        norms.push(n);
        if n == 0.0 {
            nilpotent_index = Some(j);
        } else if n < NEGLIGIBLE_NORM {
            break;
        } else if j < j_max {
            power = phi.compose(&power).expect("square grid");
        }
    }
    let j0 = norms.iter().position(|&n| n < 1.0).map(|i| i + 1);

    let flat = phi.to_flat();
    let spectral_radius = if flat.iter().all(|v| *v == 0.0) {
        0.0
    } else {
        flat.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    };

    let geometric_bound = fit_geometric_bound(&norms, j0, nilpotent_index);
    StationarityReport {
        j0,
        norms,
        spectral_radius,
        geometric_bound,
        nilpotent_index,
    }
}

fn fit_geometric_bound(norms: &[f64], j0: Option<usize>, nilpotent: Option<usize>) -> GeometricBound {
    let peak = norms.iter().copied().fold(0.0, f64::max);
    if nilpotent.is_some() {
        return GeometricBound { a: peak, b: 0.0 };
    }
    // fit on the tail where the norms decrease
    let start = j0.unwrap_or(1);
    let (xs, ys): (Vec<f64>, Vec<f64>) = norms
        .iter()
        .enumerate()
        .skip(start - 1)
        .filter(|(_, &n)| n > 1e-250 && n.is_finite())
        .map(|(i, &n)| ((i + 1) as f64, n.ln()))
        .unzip();
    let b = match stats::linear_fit(&xs, &ys) {
        Some(fit) => fit.slope.exp(),
        None => norms.first().copied().unwrap_or(0.0),
    };
    // envelope over the computed range
    let a = norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0.0)
        .map(|(i, &n)| n / b.powi(i as i32 + 1))
        .fold(0.0, f64::max);
    GeometricBound { a, b }
}

/// Population covariance structure of the cycle-stacked process.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub c: BlockOp,
    /// `lagged[h] = E[X'_{k+h} ⊗ X'_k]` (as an operator: `Cov(X'_k, X'_{k+h})`).
    pub lagged: BTreeMap<i64, BlockOp>,
    /// Covariance of the AR-case innovation `ρ_k`, when `Δ₁ = 0`.
    pub c_rho: Option<BlockOp>,
    pub c_eps_prime: BlockOp,
    pub series_terms: usize,
    pub fixed_point_iterations: usize,
    /// HS distance between the series and fixed-point routes.
    pub route_gap: f64,
}

/// Stationary covariance `C` of `X'_k = Φ X'_{k-1} + Δ₁ ε'_{k-1} + Δ₀ ε'_k`,
/// computed by the truncated series `Σ_i Φ̃_i C_ε' Φ̃_i*` and by the fixed
/// point of `C = Φ C Φ* + S`; the two must agree.
pub fn stationary_covariance(
    phi: &BlockOp,
    delta0: &BlockOp,
    delta1: &BlockOp,
    c_eps_prime: &BlockOp,
) -> Result<CovarianceSet> {
    let report = check_stationarity(phi, DEFAULT_J_MAX);
    if report.j0.is_none() {
        return Err(Error::NotStationary { j_max: DEFAULT_J_MAX });
    }
    let phi_t = phi.adjoint();
    let sandwich = |a: &BlockOp, c: &BlockOp, b: &BlockOp| -> Result<BlockOp> { a.compose(c)?.compose(&b.adjoint()) };

    // series route
    let g = phi.compose(delta0)?.add(delta1)?;
    let head = sandwich(delta0, c_eps_prime, delta0)?;
    let mut term = sandwich(&g, c_eps_prime, &g)?;
    let scale = term.hs_norm().max(f64::MIN_POSITIVE);
    let b = report.geometric_bound.b;
    // tail Σ_{i>J} ||Φ^{i-1}||² ||G C G*|| <= a² b^{2J} / (1 - b²) ||G C G*||
    let terms = report
        .series_terms(report.geometric_bound.a * scale / (1.0 + b), SERIES_TAIL_TOL)
        .ok_or(Error::NotStationary { j_max: DEFAULT_J_MAX })?
        .clamp(1, MAX_SERIES_TERMS);
    let mut series = head.clone();
    for _ in 0..terms {
        series = series.add(&term)?;
        term = phi.compose(&term)?.compose(&phi_t)?;
    }

    // fixed-point route
    let cross = phi.compose(delta0)?.compose(c_eps_prime)?.compose(&delta1.adjoint())?;
    let s = head
        .add(&sandwich(delta1, c_eps_prime, delta1)?)?
        .add(&cross)?
        .add(&cross.adjoint())?;
    let mut c = s.clone();
    let mut iterations = 0;
    loop {
        let next = phi.compose(&c)?.compose(&phi_t)?.add(&s)?;
        iterations += 1;
        let change = next.hs_distance(&c)?;
        let size = next.hs_norm();
        c = next;
        if change <= FIXED_POINT_TOL * size.max(f64::MIN_POSITIVE) || size == 0.0 {
            break;
        }
        if iterations >= 100 * MAX_SERIES_TERMS {
            return Err(Error::Numerical("covariance fixed point did not converge".into()));
        }
    }
    // symmetrize away rounding asymmetry
    let c = c.add(&c.adjoint())?.scale(0.5);

    let route_gap = series.hs_distance(&c)?;
    if route_gap > ROUTE_AGREEMENT_TOL * c.hs_norm().max(1.0) {
        return Err(Error::Numerical(format!(
            "covariance routes disagree: series vs fixed point HS gap {route_gap:.3e}"
        )));
    }

    let c_rho = (delta1.hs_norm() == 0.0).then(|| head.clone());
    let mut lagged = BTreeMap::new();
    lagged.insert(0, c.clone());
    Ok(CovarianceSet {
        c,
        lagged,
        c_rho,
        c_eps_prime: c_eps_prime.clone(),
        series_terms: terms,
        fixed_point_iterations: iterations,
        route_gap,
    })
}

/// Fills `lagged[h]` for `|h| <= h_max`:
/// `C^h = Φ^h C + Φ^{h-1} Δ₁ C_ε' Δ₀*` for `h > 0`, `C^{-h} = (C^h)*`.
pub fn lagged_covariances(
    cov: &mut CovarianceSet,
    phi: &BlockOp,
    delta0: &BlockOp,
    delta1: &BlockOp,
    h_max: usize,
) -> Result<()> {
    let ma_term = delta1.compose(&cov.c_eps_prime)?.compose(&delta0.adjoint())?;
    let mut phi_pow_prev = BlockOp::identity(phi.rows(), phi.block_dim()); // Φ^{h-1}
    cov.lagged.insert(0, cov.c.clone());
    for h in 1..=h_max {
        let phi_pow = phi.compose(&phi_pow_prev)?;
        let ch = phi_pow.compose(&cov.c)?.add(&phi_pow_prev.compose(&ma_term)?)?;
        cov.lagged.insert(-(h as i64), ch.adjoint());
        cov.lagged.insert(h as i64, ch);
        phi_pow_prev = phi_pow;
    }
    Ok(())
}

/// Population covariances of a model's cycle-stacked process with lags up to `h_max`.
pub fn population_covariances(model: &FparmaModel, h_max: usize) -> Result<CovarianceSet> {
    let phi = model.cycle_matrix()?;
    let agg = model.ma_aggregates()?;
    let c_eps = model.noise().stacked_covariance()?;
    let mut cov = stationary_covariance(&phi, &agg.delta0, &agg.delta1, &c_eps)?;
    lagged_covariances(&mut cov, &phi, &agg.delta0, &agg.delta1, h_max)?;
    Ok(cov)
}

/// `C_ρ = Σ_i Φ_{P-i,P} C_{π_i} Φ*_{P-i,P}` with `C_{π_i} = diag(0, ..., 0, C_{ε,i})`,
/// computed directly from the companion products.
pub fn rho_covariance(model: &FparmaModel) -> Result<BlockOp> {
    let (pp, d) = (model.period(), model.dim());
    let mut out = BlockOp::zeros(pp, pp, d);
    for i in 1..=pp {
        let prod = model.phi_product(pp - i, pp as i64)?;
        let mut c_pi = BlockOp::zeros(pp, pp, d);
        c_pi.set_block(pp - 1, pp - 1, model.noise().covariance(i))?;
        out = out.add(&prod.compose(&c_pi)?.compose(&prod.adjoint())?)?;
    }
    Ok(out)
}

/// The innovations `ρ_k = X'_k - Φ X'_{k-1}` of a cycle-stacked series.
pub fn ar_residuals(cycles: &[DVector<f64>], phi: &BlockOp) -> Result<Vec<DVector<f64>>> {
    cycles
        .windows(2)
        .map(|w| Ok(&w[1] - phi.apply_stacked(&w[0])?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenessReport {
    pub n: usize,
    pub trace_c0: f64,
    pub threshold: f64,
    /// `lag_norms[h - 1]` is the HS norm of the lag-`h` second-moment operator.
    pub lag_norms: Vec<f64>,
    pub flags: Vec<usize>,
}

/// Lag-wise white-noise screen for a mean-zero series.
///
/// Second moments are not centered (white noise is centered by definition),
/// so a constant nonzero series is flagged at every lag. A lag `h` is flagged
/// when the HS norm of `(1/n) Σ_k x_{k+h} ⊗ x_k` exceeds `3 tr(Ĉ₀) / √n`.
/// This is a heuristic screen, not a calibrated hypothesis test.
pub fn whiteness_diagnostic(series: &[DVector<f64>], max_lag: usize) -> Result<WhitenessReport> {
    let n = series.len();
    if max_lag == 0 || n < 10 * max_lag {
        return Err(Error::TooShort(format!(
            "{n} observations for {max_lag} lags (need >= 10 per lag)"
        )));
    }
    let moment = |h: usize| -> DMatrix<f64> {
        let dim = series[0].len();
        let mut acc = DMatrix::zeros(dim, dim);
        for k in 0..n - h {
            acc.ger(1.0, &series[k + h], &series[k], 1.0);
        }
        acc / n as f64
    };
    let trace_c0 = moment(0).trace();
    let threshold = 3.0 * trace_c0 / (n as f64).sqrt();
    let lag_norms: Vec<f64> = (1..=max_lag).map(|h| moment(h).norm()).collect();
    let flags = lag_norms
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(WhitenessReport {
        n,
        trace_c0,
        threshold,
        lag_norms,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub tau: f64,
    pub m_values: Vec<usize>,
    /// `ν̂_τ(m) = (mean ||X_m - X_m^{(m)}||^τ)^{1/τ}`.
    pub nu: Vec<f64>,
    /// Least-squares fit of `ln ν̂` on `m`; `None` when some `ν̂` is zero.
    pub fit: Option<LinearFit>,
    pub truncation: usize,
}

/// Monte Carlo estimate of the coupling distances `ν̂_τ(m)`.
///
/// Path `i` uses stream `(master_seed, i)` for every `m`, so the table is
/// built from common random numbers and is independent of evaluation order.
pub fn m_approx_decay(
    model: &FparmaModel,
    m_values: &[usize],
    n_paths: usize,
    tau: f64,
    master_seed: u64,
) -> Result<DecayTable> {
    if !(tau >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "moment order tau must be >= 1, got {tau}"
        )));
    }
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be positive".into()));
    }
    let report = check_stationarity(&model.cycle_matrix()?, DEFAULT_J_MAX);
    let cycles = report
        .cycles_below(SERIES_TAIL_TOL)
        .ok_or(Error::NotStationary { j_max: DEFAULT_J_MAX })?;
    let truncation = (cycles + 1) * model.period();
    let sampler = NoiseSampler::new(model.noise())?;
    let nu: Vec<f64> = m_values
        .iter()
        .map(|&m| {
            let total: f64 = (0..n_paths)
                .map(|i| {
                    let mut rng = RngStream::new(master_seed, i as u64).rng();
                    let (x, y) = sim::simulate_coupled(model, &sampler, m, truncation, &mut rng);
                    (x.coeffs() - y.coeffs()).norm().powf(tau)
                })
                .sum();
            (total / n_paths as f64).powf(1.0 / tau)
        })
        .collect();
    let fit = if nu.iter().all(|&v| v > 0.0) {
        let xs: Vec<f64> = m_values.iter().map(|&m| m as f64).collect();
        let ys: Vec<f64> = nu.iter().map(|v| v.ln()).collect();
        stats::linear_fit(&xs, &ys)
    } else {
        None
    };
    Ok(DecayTable {
        tau,
        m_values: m_values.to_vec(),
        nu,
        fit,
        truncation,
    })
}

/// Lag-`h` second-moment operator of a mean-zero series with entrywise
/// batch-means standard errors.
#[derive(Debug, Clone)]
pub struct MomentEstimate {
    /// `(1/(n-h)) Σ_k x_{k+h} x_kᵀ`.
    pub estimate: DMatrix<f64>,
    pub standard_errors: DMatrix<f64>,
}

pub fn lagged_moment(series: &[DVector<f64>], h: usize, n_batches: usize) -> Result<MomentEstimate> {
    let n = series.len();
    if n < h + 2 * n_batches.max(2) {
        return Err(Error::TooShort(format!(
            "{n} observations for lag {h} and {n_batches} batches"
        )));
    }
    let dim = series[0].len();
    let m = n - h;
    let mut estimate = DMatrix::zeros(dim, dim);
    let mut standard_errors = DMatrix::zeros(dim, dim);
    let mut products = vec![0.0; m];
    for a in 0..dim {
        for b in 0..dim {
            for (k, v) in products.iter_mut().enumerate() {
                *v = series[k + h][a] * series[k][b];
            }
            estimate[(a, b)] = stats::mean(&products);
            standard_errors[(a, b)] = stats::batch_means_se(&products, n_batches);
        }
    }
    Ok(MomentEstimate {
        estimate,
        standard_errors,
    })
}

/// Per-season covariance operators of the two halves of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonHalves {
    pub season: usize,
    /// `||Ĉ_s(first half) - Ĉ_s(second half)||_S`.
    pub hs_difference: f64,
    /// Standard error of the difference in HS norm, `sqrt(Σ se_1² + se_2²)`.
    pub standard_error: f64,
}

/// Splits the cycles into halves and compares the per-season lag-0
/// covariance operators `E[X_{(k-1)P+s} ⊗ X_{(k-1)P+s}]`.
pub fn season_covariance_halves(cycles: &[DVector<f64>], period: usize, n_batches: usize) -> Result<Vec<SeasonHalves>> {
    let half = cycles.len() / 2;
    let dim = cycles.first().map_or(0, |c| c.len());
    if period == 0 || dim % period != 0 {
        return Err(Error::DimensionMismatch(
            "cycle vectors do not split into P equal blocks".into(),
        ));
    }
    let d = dim / period;
    (1..=period)
        .map(|s| {
            let season = |part: &[DVector<f64>]| -> Vec<DVector<f64>> {
                part.iter().map(|c| c.rows((s - 1) * d, d).into_owned()).collect()
            };
            let first = lagged_moment(&season(&cycles[..half]), 0, n_batches)?;
            let second = lagged_moment(&season(&cycles[half..2 * half]), 0, n_batches)?;
            let se = (first.standard_errors.map(|v| v * v) + second.standard_errors.map(|v| v * v))
                .sum()
                .sqrt();
            Ok(SeasonHalves {
                season: s,
                hs_difference: (first.estimate - second.estimate).norm(),
                standard_error: se,
            })
        })
        .collect()
}
