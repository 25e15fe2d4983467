//! Estimation of periodic functional AR operators.
//!
//! The pipeline is
//! 1. empirical lag-0 and lag-1 covariances of the cycle-stacked process,
//! 2. a Yule-Walker-type cycle operator `Φ̂ = Ĉ¹ (Ĉ⁰)† P̂`,
//! 3. extraction of every `φ̂_{k,ℓ}` from `Φ̂`: the first block row directly,
//!    then season by season from the block system `φ_ℓ Φ_[ℓℓ] = Φ_[ℓ]`
//!    solved with a projected Tikhonov inverse, then back-substitution.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{projector_onto_leading, spectral_decomp, tikhonov_inverse, BlockOp, OperatorRep};
use crate::model::FparmaModel;
use crate::sim::SamplePath;

/// Tikhonov parameters and spectral truncation levels.
///
/// Unset values fall back to the adaptive rule, with `n` = `sample_size` and
/// `G` the relevant Gram operator: `θ = n^{-1/2} · tr(G) / dim(G)` for the
/// cycle operator, `θ = n^{-1/4} · λ_1(G)` for each season, and `K = dim(G)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizationConfig {
    pub theta_yw: Option<f64>,
    pub k_yw: Option<usize>,
    /// Per-season parameters, keyed by season `2..=P`.
    pub theta_m: BTreeMap<usize, f64>,
    pub k_m: BTreeMap<usize, usize>,
    /// Number of cycles behind the estimate; drives the adaptive defaults.
    pub sample_size: Option<usize>,
}

impl RegularizationConfig {
    /// Same fixed `θ` and `K` for the cycle operator and every season.
    pub fn uniform(period: usize, theta: f64, k: Option<usize>) -> Self {
        let mut cfg = Self {
            theta_yw: Some(theta),
            k_yw: k,
            ..Self::default()
        };
        for m in 2..=period {
            cfg.theta_m.insert(m, theta);
            if let Some(k) = k {
                cfg.k_m.insert(m, k);
            }
        }
        cfg
    }

    /// Checks positivity and, for `period = Some(P)`, season keys in `2..=P`.
    pub fn validate(&self, period: Option<usize>) -> Result<()> {
        let bad_theta = |t: f64| !(t > 0.0) || !t.is_finite();
        if self.theta_yw.is_some_and(bad_theta) || self.theta_m.values().any(|&t| bad_theta(t)) {
            return Err(Error::InvalidParameter(
                "regularization parameters must be positive and finite".into(),
            ));
        }
        if self.k_yw == Some(0) || self.k_m.values().any(|&k| k == 0) {
            return Err(Error::InvalidParameter("truncation levels must be >= 1".into()));
        }
        if self.sample_size == Some(0) {
            return Err(Error::InvalidParameter("sample size must be positive".into()));
        }
        if let Some(pp) = period {
            if let Some(m) = self.theta_m.keys().chain(self.k_m.keys()).find(|&&m| m < 2 || m > pp) {
                return Err(Error::InvalidParameter(format!("season key {m} outside 2..={pp}")));
            }
        }
        Ok(())
    }

    fn resolve(
        &self,
        theta: Option<f64>,
        k: Option<usize>,
        gram_eigenvalues: &[f64],
        scale: GramScale,
    ) -> Result<(f64, usize)> {
        let dim = gram_eigenvalues.len();
        let theta = match theta {
            Some(t) => t,
            None => {
                let n = self
                    .sample_size
                    .ok_or_else(|| Error::InvalidParameter("adaptive regularization needs sample_size".into()))?;
                let n = n as f64;
                let level = match scale {
                    GramScale::MeanEigenvalue => {
                        gram_eigenvalues.iter().map(|v| v.max(0.0)).sum::<f64>() / dim as f64 / n.sqrt()
                    }
                    GramScale::LeadingEigenvalue => {
                        gram_eigenvalues.iter().copied().fold(0.0, f64::max) * n.powf(-0.25)
                    }
                };
                level.max(f64::MIN_POSITIVE)
            }
        };
        let k = match k {
            Some(k) if k > dim => {
                return Err(Error::InvalidParameter(format!(
                    "truncation level {k} exceeds dimension {dim}"
                )));
            }
            Some(k) => k,
            None => dim,
        };
        Ok((theta, k))
    }
}

#[derive(Debug, Clone, Copy)]
enum GramScale {
    MeanEigenvalue,
    LeadingEigenvalue,
}

/// Centered lag-`h` sample covariance operators `Ĉ^h`, `h = 0..=h_max`.
///
/// `Ĉ^h = (1/(n-h)) Σ_k (X'_k - X̄') ⊗ (X'_{k+h} - X̄')`, i.e. the array
/// `Σ (X'_{k+h} - X̄')(X'_k - X̄')ᵀ / (n - h)`.
pub fn empirical_covariances(cycles: &[DVector<f64>], period: usize, h_max: usize) -> Result<Vec<BlockOp>> {
    let n = cycles.len();
    if n < h_max + 2 {
        return Err(Error::TooShort(format!(
            "{n} cycles for lag {h_max} (need >= {})",
            h_max + 2
        )));
    }
    let dim = cycles[0].len();
    if period == 0 || dim % period != 0 || cycles.iter().any(|c| c.len() != dim) {
        return Err(Error::DimensionMismatch(
            "cycle vectors do not split into P equal blocks".into(),
        ));
    }
    let d = dim / period;
    let mean = cycles.iter().fold(DVector::zeros(dim), |acc, c| acc + c) / n as f64;
    let centered: Vec<DVector<f64>> = cycles.iter().map(|c| c - &mean).collect();
    (0..=h_max)
        .map(|h| {
            let mut acc = DMatrix::zeros(dim, dim);
            for k in 0..n - h {
                acc.ger(1.0, &centered[k + h], &centered[k], 1.0);
            }
            acc /= (n - h) as f64;
            if h == 0 {
                acc = (&acc + acc.transpose()) * 0.5;
            }
            BlockOp::from_flat(period, period, d, &acc)
        })
        .collect()
}

/// Estimated cycle operator and the regularization actually used.
#[derive(Debug, Clone)]
pub struct CycleMatrixFit {
    pub phi_hat: BlockOp,
    pub theta: f64,
    pub k: usize,
    /// Eigenvalues of `Ĉ⁰ Ĉ⁰*`, non-increasing.
    pub gram_eigenvalues: Vec<f64>,
}

/// `Φ̂ = Ĉ¹ (Ĉ⁰)†_θ P̂_K` with `P̂_K` the projection onto the `K` leading
/// eigenvectors of `Ĉ⁰`.
pub fn estimate_cycle_matrix(c0: &BlockOp, c1: &BlockOp, cfg: &RegularizationConfig) -> Result<CycleMatrixFit> {
    cfg.validate(None)?;
    if c0.rows() != c1.rows() || c0.cols() != c1.cols() || c0.block_dim() != c1.block_dim() {
        return Err(Error::DimensionMismatch(
            "lag-0 and lag-1 covariances differ in shape".into(),
        ));
    }
    let eig = spectral_decomp(c0, true)?;
    let gram_eigenvalues: Vec<f64> = {
        let mut v: Vec<f64> = eig.eigenvalues.iter().map(|l| l * l).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    };
    let (theta, k) = cfg.resolve(cfg.theta_yw, cfg.k_yw, &gram_eigenvalues, GramScale::MeanEigenvalue)?;
    // leading eigenvectors of Ĉ⁰ by |λ| (Ĉ⁰ is PSD up to rounding)
    let proj = projector_onto_leading(&eig, k)?;
    let phi_hat = c1.compose(&tikhonov_inverse(c0, theta)?)?.compose(&proj)?;
    Ok(CycleMatrixFit {
        phi_hat,
        theta,
        k,
        gram_eigenvalues,
    })
}

/// `(Φ̂_[m], Φ̂_[mm])` for `2 <= m <= P`: the block row
/// `(Φ̂_{m,2}, ..., Φ̂_{m,m})` and the block matrix `(Φ̂_{i-1,j})_{i,j=2}^m`.
pub fn submatrices(phi_hat: &BlockOp, m: usize) -> Result<(BlockOp, BlockOp)> {
    let pp = phi_hat.rows();
    if !phi_hat.is_square() || m < 2 || m > pp {
        return Err(Error::InvalidParameter(format!("season {m} outside 2..={pp}")));
    }
    let d = phi_hat.block_dim();
    let mut row = BlockOp::zeros(1, m - 1, d);
    let mut square = BlockOp::zeros(m - 1, m - 1, d);
    for j in 2..=m {
        row.set_block(0, j - 2, &phi_hat.block_op(m - 1, j - 1))?;
        for i in 2..=m {
            square.set_block(i - 2, j - 2, &phi_hat.block_op(i - 2, j - 1))?;
        }
    }
    Ok((row, square))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonDiagnostics {
    pub m: usize,
    pub theta: f64,
    pub k: usize,
    pub leading_eigenvalue: f64,
    pub kth_eigenvalue: f64,
    /// `λ_1 / λ_K` of the Gram operator.
    pub condition: f64,
    /// `λ_K^{-1/2}`.
    pub reciprocal_root: f64,
    /// `||φ̂_m Φ̂_[mm] - Φ̂_[m]||_S`.
    pub equation_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorError {
    pub k: usize,
    pub l: usize,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthErrors {
    pub per_operator: Vec<OperatorError>,
    /// `max_{k<P} ||φ̂_{k,1} - φ_{k,1}||_S`.
    pub max_err_row1: f64,
    /// `max_{k<P, 2<=ℓ<=P} ||φ̂_{k,ℓ} - φ_{k,ℓ}||_S`.
    pub max_err_rest: f64,
    /// `||Φ̂ - Φ||_S`.
    pub err_phi: f64,
}

/// Extracted per-season operators and diagnostics.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub period: usize,
    pub d: usize,
    /// `φ̂_{k,ℓ}` keyed by `(k, ℓ)`, `1 <= k < P`, `1 <= ℓ <= P`.
    pub phi_hat: BTreeMap<(usize, usize), OperatorRep>,
    pub cycle_matrix: BlockOp,
    /// Eigenvalues of `Φ̂_[mm] Φ̂_[mm]*` keyed by `m`.
    pub gram_eigenvalues: BTreeMap<usize, Vec<f64>>,
    pub diagnostics: Vec<SeasonDiagnostics>,
    /// `||r_ℓ||_S` for the would-be order-`P` operator of each season, where
    /// `r_ℓ = Φ̂_{ℓ,ℓ} - Σ_m φ̂_{m,ℓ} Φ̂_{ℓ-m,ℓ}`; zero for exact input since `p < P`.
    pub order_p_residuals: Vec<f64>,
    pub cycle_fit: Option<CycleFitSummary>,
    pub errors_vs_truth: Option<TruthErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleFitSummary {
    pub n_cycles: usize,
    pub theta: f64,
    pub k: usize,
}

impl EstimationResult {
    pub fn phi(&self, k: usize, l: usize) -> Option<&OperatorRep> {
        self.phi_hat.get(&(k, l))
    }

    /// Fills [`Self::errors_vs_truth`]; truth operators beyond its order are zero.
    pub fn compare_to_truth(&mut self, truth: &FparmaModel) -> Result<&TruthErrors> {
        if truth.period() != self.period || truth.dim() != self.d {
            return Err(Error::DimensionMismatch(
                "reference model has a different period or dimension".into(),
            ));
        }
        let zero = OperatorRep::zeros(self.d);
        let mut per_operator = Vec::with_capacity(self.phi_hat.len());
        let (mut row1, mut rest) = (0.0f64, 0.0f64);
        for (&(k, l), est) in &self.phi_hat {
            let err = est.sub(truth.phi(k, l).unwrap_or(&zero))?.hs_norm();
            if l == 1 {
                row1 = row1.max(err);
            } else {
                rest = rest.max(err);
            }
            per_operator.push(OperatorError { k, l, err });
        }
        let err_phi = self.cycle_matrix.hs_distance(&truth.cycle_matrix()?)?;
        Ok(self.errors_vs_truth.insert(TruthErrors {
            per_operator,
            max_err_row1: row1,
            max_err_rest: rest,
            err_phi,
        }))
    }

    pub fn to_document(&self) -> EstimationDocument {
        EstimationDocument {
            period: self.period,
            d: self.d,
            phi_hat: self
                .phi_hat
                .iter()
                .map(|(&(k, l), op)| EstimatedOperator {
                    k,
                    l,
                    entries: op.to_rows(),
                })
                .collect(),
            gram_eigenvalues: self
                .gram_eigenvalues
                .iter()
                .map(|(&m, v)| GramSpectrum {
                    m,
                    eigenvalues: v.clone(),
                })
                .collect(),
            diagnostics: self.diagnostics.clone(),
            order_p_residuals: self.order_p_residuals.clone(),
            cycle_fit: self.cycle_fit.clone(),
            errors_vs_truth: self.errors_vs_truth.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }
}

/// Serialized [`EstimationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationDocument {
    #[serde(rename = "P")]
    pub period: usize,
    pub d: usize,
    pub phi_hat: Vec<EstimatedOperator>,
    pub gram_eigenvalues: Vec<GramSpectrum>,
    pub diagnostics: Vec<SeasonDiagnostics>,
    pub order_p_residuals: Vec<f64>,
    pub cycle_fit: Option<CycleFitSummary>,
    pub errors_vs_truth: Option<TruthErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedOperator {
    pub k: usize,
    pub l: usize,
    pub entries: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramSpectrum {
    pub m: usize,
    pub eigenvalues: Vec<f64>,
}

/// Extracts `φ̂_{k,ℓ}` for `1 <= k < P`, `1 <= ℓ <= P` from a cycle operator.
pub fn extract_fpar_operators(phi_hat: &BlockOp, cfg: &RegularizationConfig) -> Result<EstimationResult> {
    let pp = phi_hat.rows();
    if !phi_hat.is_square() || pp < 2 {
        return Err(Error::InvalidParameter(format!(
            "need a square block grid with P >= 2, got {}x{}",
            phi_hat.rows(),
            phi_hat.cols()
        )));
    }
    cfg.validate(Some(pp))?;
    let d = phi_hat.block_dim();
    // 1-based block access
    let blk = |i: usize, j: usize| phi_hat.block_op(i - 1, j - 1);

    let mut est: BTreeMap<(usize, usize), OperatorRep> = BTreeMap::new();
    for k in 1..pp {
        est.insert((k, 1), blk(1, pp + 1 - k));
    }
    let mut gram_eigenvalues = BTreeMap::new();
    let mut diagnostics = Vec::with_capacity(pp - 1);
    let mut order_p_residuals = vec![blk(1, 1).hs_norm()];

    for l in 2..=pp {
        let (row, square) = submatrices(phi_hat, l)?;
        let gram = square.compose(&square.adjoint())?;
        let gram = gram.add(&gram.adjoint())?.scale(0.5);
        let eig = spectral_decomp(&gram, true)?;
        let (theta, k_l) = cfg.resolve(
            cfg.theta_m.get(&l).copied(),
            cfg.k_m.get(&l).copied(),
            &eig.eigenvalues,
            GramScale::LeadingEigenvalue,
        )?;
        let solution = row
            .compose(&tikhonov_inverse(&square, theta)?)?
            .compose(&projector_onto_leading(&eig, k_l)?)?;
        // component c (1-based) of the solution is φ̂_{ℓ-c, ℓ}
        for c in 1..l {
            est.insert((l - c, l), solution.block_op(0, c - 1));
        }
        // back-substitution for ℓ <= k < P; Φ̂_{0,·} terms vanish
        let back = |k: usize, est: &BTreeMap<(usize, usize), OperatorRep>| -> Result<OperatorRep> {
            let col = pp + l - k;
            let mut acc = blk(l, col);
            for m in 1..=(k - 1).min(l - 1) {
                acc = acc.sub(&est[&(m, l)].compose(&blk(l - m, col))?)?;
            }
            Ok(acc)
        };
        for k in l..pp {
            let op = back(k, &est)?;
            est.insert((k, l), op);
        }
        order_p_residuals.push(back(pp, &est)?.hs_norm());

        let equation_residual = solution.compose(&square)?.hs_distance(&row)?;
        let lead = eig.eigenvalues.first().copied().unwrap_or(0.0);
        let kth = eig.eigenvalues[k_l - 1];
        diagnostics.push(SeasonDiagnostics {
            m: l,
            theta,
            k: k_l,
            leading_eigenvalue: lead,
            kth_eigenvalue: kth,
            condition: lead / kth,
            reciprocal_root: 1.0 / kth.max(0.0).sqrt(),
            equation_residual,
        });
        gram_eigenvalues.insert(l, eig.eigenvalues.clone());
    }

    Ok(EstimationResult {
        period: pp,
        d,
        phi_hat: est,
        cycle_matrix: phi_hat.clone(),
        gram_eigenvalues,
        diagnostics,
        order_p_residuals,
        cycle_fit: None,
        errors_vs_truth: None,
    })
}

/// Cycles → covariances → `Φ̂` → per-season operators, optionally scored
/// against a reference AR model.
pub fn end_to_end_fit(
    path: &SamplePath,
    period: usize,
    cfg: &RegularizationConfig,
    truth: Option<&FparmaModel>,
) -> Result<EstimationResult> {
    if period != path.period() {
        return Err(Error::InvalidParameter(format!(
            "path period {} differs from P = {period}",
            path.period()
        )));
    }
    if let Some(t) = truth {
        if t.ma_order() > 0 {
            return Err(Error::InvalidParameter(
                "operator extraction assumes a pure AR model (q = 0)".into(),
            ));
        }
    }
    let cycles = path.cycles();
    let n = cycles.len();
    let mut cfg = cfg.clone();
    cfg.sample_size.get_or_insert(n);
    let covs = empirical_covariances(&cycles, period, 1)?;
    let fit = estimate_cycle_matrix(&covs[0], &covs[1], &cfg)?;
    let mut result = extract_fpar_operators(&fit.phi_hat, &cfg)?;
    result.cycle_fit = Some(CycleFitSummary {
        n_cycles: n,
        theta: fit.theta,
        k: fit.k,
    });
    if let Some(t) = truth {
        result.compare_to_truth(t)?;
    }
    Ok(result)
}
