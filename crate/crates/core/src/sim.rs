//! Reproducible periodic noise and fpARMA sample paths.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hilbert::{FunctionRep, OperatorRep};
use crate::model::{FparmaModel, NoiseDistribution, NoiseSpec};
use crate::probe;

/// Relative tolerance below which negative covariance eigenvalues are
/// treated as rounding noise and clamped to zero.
const PSD_TOL: f64 = 1e-10;

/// Identifies one reproducible random stream.
///
/// The generator is a counter-based ChaCha8 keyed by `master_seed`, with
/// `stream_id` selecting an independent stream. Identical pairs give
/// bit-identical sequences regardless of which thread consumes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Precomputed per-season factors `F_s` with `F_s F_s* = C_{ε,s}`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    factors: Vec<DMatrix<f64>>,
    distribution: NoiseDistribution,
    d: usize,
}

impl NoiseSampler {
    pub fn new(spec: &NoiseSpec) -> Result<Self> {
        let d = spec.covariances.first().map(|c| c.dim()).unwrap_or(0);
        let factors = spec
            .covariances
            .iter()
            .map(|c| covariance_factor(c, spec.distribution))
            .collect::<Result<_>>()?;
        Ok(Self {
            factors,
            distribution: spec.distribution,
            d,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn period(&self) -> usize {
        self.factors.len()
    }

    /// One innovation for `season` (1-based).
    pub fn draw<R: Rng + ?Sized>(&self, season: usize, rng: &mut R) -> DVector<f64> {
        let z = match self.distribution {
            NoiseDistribution::Gaussian => DVector::from_fn(self.d, |_, _| rng.sample::<f64, _>(StandardNormal)),
            NoiseDistribution::ScaledUniform => {
                let half = 3f64.sqrt();
                DVector::from_fn(self.d, |_, _| (2.0 * rng.random::<f64>() - 1.0) * half)
            }
        };
        &self.factors[season - 1] * z
    }
}

fn covariance_factor(c: &OperatorRep, distribution: NoiseDistribution) -> Result<DMatrix<f64>> {
    let m = c.matrix();
    let scale = m.norm().max(1.0);
    if (m - m.transpose()).norm() > PSD_TOL * scale {
        return Err(Error::NotSelfAdjoint((m - m.transpose()).norm()));
    }
    let eig = ((m + m.transpose()) * 0.5).symmetric_eigen();
    let mut roots = DVector::zeros(eig.eigenvalues.len());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -PSD_TOL * scale {
            return Err(Error::NotPositiveSemiDefinite(l));
        }
        roots[k] = l.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |r, col| v[(r, col)] * roots[col]);
    Ok(match distribution {
        // symmetric square root
        NoiseDistribution::Gaussian => scaled * v.transpose(),
        // independent coordinates in the eigenbasis
        NoiseDistribution::ScaledUniform => scaled,
    })
}

/// One innovation of `season` drawn from `spec`.
pub fn draw_noise<R: Rng + ?Sized>(spec: &NoiseSpec, season: usize, rng: &mut R) -> Result<FunctionRep> {
    if season == 0 || season > spec.covariances.len() {
        return Err(Error::InvalidParameter(format!(
            "season {season} outside 1..={}",
            spec.covariances.len()
        )));
    }
    let factor = covariance_factor(&spec.covariances[season - 1], spec.distribution)?;
    let sampler = NoiseSampler {
        d: factor.nrows(),
        factors: vec![factor],
        distribution: spec.distribution,
    };
    Ok(FunctionRep::from_vector(sampler.draw(1, rng)))
}

/// A simulated path `X_1, ..., X_N` with its innovations.
///
/// Innovations are stored from the first burn-in step, so the path can be
/// replayed exactly from a zero initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    period: usize,
    values: Vec<DVector<f64>>,
    innovations: Vec<DVector<f64>>,
    burn_in: usize,
}

impl SamplePath {
    pub fn from_values(period: usize, values: Vec<DVector<f64>>) -> Self {
        Self {
            period,
            values,
            innovations: Vec::new(),
            burn_in: 0,
        }
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// `X_k` for `1 <= k <= N`.
    pub fn value(&self, k: usize) -> &DVector<f64> {
        &self.values[k - 1]
    }

    pub fn season(&self, k: usize) -> usize {
        (k - 1) % self.period + 1
    }

    /// All stored innovations, starting at time `1 - burn_in`.
    pub fn innovations(&self) -> &[DVector<f64>] {
        &self.innovations
    }

    /// `ε_k` for `1 - burn_in <= k <= N`.
    pub fn innovation(&self, k: i64) -> Option<&DVector<f64>> {
        let idx = k + self.burn_in as i64 - 1;
        (idx >= 0).then(|| self.innovations.get(idx as usize)).flatten()
    }

    pub fn n_cycles(&self) -> usize {
        self.values.len() / self.period
    }

    /// Cycle-stacked states `X'_c = (X_{(c-1)P+1}, ..., X_{cP})` for every
    /// complete cycle.
    pub fn cycles(&self) -> Vec<DVector<f64>> {
        stack_cycles(&self.values, self.period)
    }

    /// Cycle-stacked innovations `ε'_c` aligned with [`Self::cycles`].
    pub fn innovation_cycles(&self) -> Vec<DVector<f64>> {
        if self.innovations.is_empty() {
            return Vec::new();
        }
        stack_cycles(&self.innovations[self.burn_in..], self.period)
    }

    /// CSV with header `k,season,c_1,...,c_d`; 17 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::from("k,season");
        for j in 1..=d {
            write!(out, ",c_{j}").unwrap();
        }
        out.push('\n');
        for (idx, v) in self.values.iter().enumerate() {
            let k = idx + 1;
            write!(out, "{k},{}", self.season(k)).unwrap();
            for x in v.iter() {
                write!(out, ",{x:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Self::to_csv`] output. Innovations are not part of the format.
    pub fn from_csv(text: &str, period: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidParameter("period must be positive".into()));
        }
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidParameter("empty path CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "k" || cols[1] != "season" {
            return Err(Error::InvalidParameter(format!(
                "unexpected path CSV header '{header}'"
            )));
        }
        let d = cols.len() - 2;
        for (j, c) in cols[2..].iter().enumerate() {
            if *c != format!("c_{}", j + 1) {
                return Err(Error::InvalidParameter(format!("unexpected column '{c}'")));
            }
        }
        let mut values = Vec::new();
        for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            let k = row + 1;
            let bad = || Error::InvalidParameter(format!("malformed path CSV row {k}"));
            if fields.len() != d + 2 {
                return Err(bad());
            }
            let kk: usize = fields[0].parse().map_err(|_| bad())?;
            let season: usize = fields[1].parse().map_err(|_| bad())?;
            if kk != k || season != (k - 1) % period + 1 {
                return Err(Error::InvalidParameter(format!("row {k}: index/season mismatch")));
            }
            let v: Vec<f64> = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            values.push(DVector::from_vec(v));
        }
        Ok(Self::from_values(period, values))
    }
}

/// Concatenates consecutive blocks of `period` vectors; trailing partial
/// blocks are dropped.
pub fn stack_cycles(values: &[DVector<f64>], period: usize) -> Vec<DVector<f64>> {
    values
        .chunks_exact(period)
        .map(|chunk| {
            DVector::from_iterator(
                chunk.iter().map(|v| v.len()).sum(),
                chunk.iter().flat_map(|v| v.iter().copied()),
            )
        })
        .collect()
}

/// Runs the fpARMA recursion from a zero initial state. `innovations[n]` is
/// the innovation at absolute time `start_time + n`; returns `X` at the same
/// times.
pub fn run_recursion(model: &FparmaModel, start_time: i64, innovations: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let (p, q, d) = (model.ar_order(), model.ma_order(), model.dim());
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(innovations.len());
    for (n, eps) in innovations.iter().enumerate() {
        let t = start_time + n as i64;
        let s = model.season_of(t);
        let mut x = eps.clone();
        for i in 1..=p.min(n) {
            if let Some(op) = model.phi(i, s) {
                x.gemv(1.0, op.matrix(), &out[n - i], 1.0);
            }
        }
        for j in 1..=q.min(n) {
            if let Some(op) = model.psi(j, s) {
                x.gemv(1.0, op.matrix(), &innovations[n - j], 1.0);
            }
        }
        debug_assert_eq!(x.len(), d);
        out.push(x);
    }
    out
}

/// Default burn-in for `model`: the smallest multiple of `P` whose cycle
/// count `c` satisfies `a b^c < 1e-10` for the fitted geometric bound.
pub fn default_burn_in(model: &FparmaModel) -> Result<usize> {
    let report = probe::check_stationarity(&model.cycle_matrix()?, probe::DEFAULT_J_MAX);
    let cycles = report.cycles_below(1e-10).ok_or(Error::NotStationary {
        j_max: probe::DEFAULT_J_MAX,
    })?;
    Ok(cycles * model.period())
}

/// Simulates `X_1, ..., X_N` starting from zero lags at time `1 - burn_in`.
///
/// `burn_in` is rounded up to a multiple of `P` so that `X_1` is season 1;
/// `None` selects [`default_burn_in`].
pub fn simulate(model: &FparmaModel, n: usize, burn_in: Option<usize>, stream: RngStream) -> Result<SamplePath> {
    let period = model.period();
    if n < period {
        return Err(Error::TooShort(format!(
            "path length {n} shorter than the period {period}"
        )));
    }
    let report = probe::check_stationarity(&model.cycle_matrix()?, probe::DEFAULT_J_MAX);
    if report.j0.is_none() {
        return Err(Error::NotStationary {
            j_max: probe::DEFAULT_J_MAX,
        });
    }
    let burn_in = match burn_in {
        Some(b) => b.div_ceil(period) * period,
        None => default_burn_in(model)?,
    };
    let sampler = NoiseSampler::new(model.noise())?;
    let mut rng = stream.rng();
    let start = 1 - burn_in as i64;
    let innovations: Vec<DVector<f64>> = (0..burn_in + n)
        .map(|idx| sampler.draw(model.season_of(start + idx as i64), &mut rng))
        .collect();
    let mut values = run_recursion(model, start, &innovations);
    let values = values.split_off(burn_in);
    Ok(SamplePath {
        period,
        values,
        innovations,
        burn_in,
    })
}

/// Evaluates `X_m` and its coupled copy `X_m^{(m)}` through the truncated
/// causal representation over the `truncation + 1` most recent innovations.
///
/// Both share the innovations at lags `0..m`; lags `m..=truncation` of the
/// copy are independent redraws.
pub fn simulate_coupled<R: Rng + ?Sized>(
    model: &FparmaModel,
    sampler: &NoiseSampler,
    m: usize,
    truncation: usize,
    rng: &mut R,
) -> (FunctionRep, FunctionRep) {
    let t_m = m as i64;
    let start = t_m - truncation as i64;
    // drawn by lag: index L holds the innovation at time m - L
    let by_lag: Vec<DVector<f64>> = (0..=truncation)
        .map(|lag| sampler.draw(model.season_of(t_m - lag as i64), rng))
        .collect();
    let copies: Vec<DVector<f64>> = (m..=truncation)
        .map(|lag| sampler.draw(model.season_of(t_m - lag as i64), rng))
        .collect();

    let original: Vec<DVector<f64>> = by_lag.iter().rev().cloned().collect();
    let coupled: Vec<DVector<f64>> = (0..=truncation)
        .rev()
        .map(|lag| {
            if lag >= m {
                copies[lag - m].clone()
            } else {
                by_lag[lag].clone()
            }
        })
        .collect();
    let x = run_recursion(model, start, &original).pop().expect("non-empty window");
    let y = run_recursion(model, start, &coupled).pop().expect("non-empty window");
    (FunctionRep::from_vector(x), FunctionRep::from_vector(y))
}
