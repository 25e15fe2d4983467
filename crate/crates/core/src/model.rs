//! The fpARMA model and its block companion algebra.
//!
//! Conventions: seasons are 1-based, `s ∈ {1, ..., P}`; absolute time `k`
//! has season `((k - 1) mod P) + 1`, so cycle `c` covers times
//! `(c - 1)P + 1 ..= cP`. The stacked state at time `k` is
//! `(X_{k-P+1}, ..., X_k)`, and the cycle-stacked process is the stacked
//! state at the last season of each cycle.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{BlockOp, OperatorRep};

/// Tolerance used when checking noise covariances for symmetry and PSD.
const COVARIANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDistribution {
    Gaussian,
    /// Independent uniform coordinates in the covariance eigenbasis, scaled to
    /// match the target covariance.
    ScaledUniform,
}

/// Per-season innovation covariances and the innovation law.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub covariances: Vec<OperatorRep>,
    pub distribution: NoiseDistribution,
}

impl NoiseSpec {
    pub fn new(covariances: Vec<OperatorRep>, distribution: NoiseDistribution) -> Self {
        Self {
            covariances,
            distribution,
        }
    }

    /// Same covariance in every season.
    pub fn constant(period: usize, cov: OperatorRep, distribution: NoiseDistribution) -> Self {
        Self {
            covariances: vec![cov; period],
            distribution,
        }
    }

    pub fn covariance(&self, season: usize) -> &OperatorRep {
        &self.covariances[season - 1]
    }

    /// `diag(C_{ε,1}, ..., C_{ε,P})`, the covariance of the cycle-stacked noise.
    pub fn stacked_covariance(&self) -> Result<BlockOp> {
        BlockOp::block_diagonal(&self.covariances)
    }

    pub fn scaled(&self, factor: f64) -> NoiseSpec {
        NoiseSpec {
            covariances: self.covariances.iter().map(|c| c.scale(factor)).collect(),
            distribution: self.distribution,
        }
    }
}

/// A violated model invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    PeriodTooShort { period: usize, p: usize, q: usize },
    ArOrderNotAttained { p: usize },
    MaOrderNotAttained { q: usize },
    FamilyShape(String),
    Dimension(String),
    NoiseNotSymmetric { season: usize },
    NoiseNotPsd { season: usize, min_eigenvalue: f64 },
    NoiseDegenerate,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PeriodTooShort { period, p, q } => {
                write!(f, "P > max(p,q) fails (P={period}, p={p}, q={q})")
            }
            Violation::ArOrderNotAttained { p } => {
                write!(f, "order p not attained: phi_{{{p},s}} = 0 for every season")
            }
            Violation::MaOrderNotAttained { q } => {
                write!(f, "order q not attained: psi_{{{q},s}} = 0 for every season")
            }
            Violation::FamilyShape(msg) => write!(f, "operator family shape: {msg}"),
            Violation::Dimension(msg) => write!(f, "dimension: {msg}"),
            Violation::NoiseNotSymmetric { season } => {
                write!(f, "noise covariance of season {season} is not symmetric")
            }
            Violation::NoiseNotPsd { season, min_eigenvalue } => {
                write!(
                    f,
                    "noise covariance of season {season} is not PSD (min eigenvalue {min_eigenvalue:.3e})"
                )
            }
            Violation::NoiseDegenerate => write!(f, "all noise covariances have zero trace"),
        }
    }
}

/// A functional periodic ARMA model of period `P` and orders `(p, q)`.
///
/// `phi[i - 1][s - 1]` is the lag-`i` AR operator of season `s`;
/// `psi[j - 1][s - 1]` the lag-`j` MA operator.
#[derive(Debug, Clone, PartialEq)]
pub struct FparmaModel {
    period: usize,
    p: usize,
    q: usize,
    d: usize,
    phi: Vec<Vec<OperatorRep>>,
    psi: Vec<Vec<OperatorRep>>,
    noise: NoiseSpec,
}

impl FparmaModel {
    /// Builds and validates a model.
    pub fn new(
        period: usize,
        phi: Vec<Vec<OperatorRep>>,
        psi: Vec<Vec<OperatorRep>>,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let model = Self::new_unchecked(period, phi, psi, noise);
        let violations = model.validate();
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(violations))
        }
    }

    /// Builds a model without validation; see [`FparmaModel::validate`].
    pub fn new_unchecked(
        period: usize,
        phi: Vec<Vec<OperatorRep>>,
        psi: Vec<Vec<OperatorRep>>,
        noise: NoiseSpec,
    ) -> Self {
        let d = noise
            .covariances
            .first()
            .map(|c| c.dim())
            .or_else(|| phi.first().and_then(|f| f.first()).map(|o| o.dim()))
            .unwrap_or(0);
        Self {
            period,
            p: phi.len(),
            q: psi.len(),
            d,
            phi,
            psi,
            noise,
        }
    }

    /// Every violated invariant; empty when the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (period, p, q, d) = (self.period, self.p, self.q, self.d);
        if period <= p.max(q) {
            out.push(Violation::PeriodTooShort { period, p, q });
        }
        if d == 0 {
            out.push(Violation::Dimension("basis dimension must be positive".into()));
        }
        for (name, fam) in [("phi", &self.phi), ("psi", &self.psi)] {
            for (lag, per_season) in fam.iter().enumerate() {
                if per_season.len() != period {
                    out.push(Violation::FamilyShape(format!(
                        "{name} lag {} has {} seasons, expected {period}",
                        lag + 1,
                        per_season.len()
                    )));
                }
                for (s, op) in per_season.iter().enumerate() {
                    if op.dim() != d {
                        out.push(Violation::Dimension(format!(
                            "{name}_{{{},{}}} has dimension {}, expected {d}",
                            lag + 1,
                            s + 1,
                            op.dim()
                        )));
                    }
                }
            }
        }
        if p > 0 && self.phi[p - 1].iter().all(OperatorRep::is_zero) {
            out.push(Violation::ArOrderNotAttained { p });
        }
        if q > 0 && self.psi[q - 1].iter().all(OperatorRep::is_zero) {
            out.push(Violation::MaOrderNotAttained { q });
        }

        let covs = &self.noise.covariances;
        if covs.len() != period {
            out.push(Violation::FamilyShape(format!(
                "{} noise covariances for period {period}",
                covs.len()
            )));
        }
        for (s, c) in covs.iter().enumerate() {
            let season = s + 1;
            if c.dim() != d {
                out.push(Violation::Dimension(format!(
                    "noise covariance of season {season} has dimension {}",
                    c.dim()
                )));
                continue;
            }
            let m = c.matrix();
            let scale = m.norm().max(1.0);
            if (m - m.transpose()).norm() > COVARIANCE_TOL * scale {
                out.push(Violation::NoiseNotSymmetric { season });
                continue;
            }
            let min_eig = m
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if min_eig < -COVARIANCE_TOL * scale {
                out.push(Violation::NoiseNotPsd {
                    season,
                    min_eigenvalue: min_eig,
                });
            }
        }
        if !covs.is_empty() && covs.iter().all(|c| c.trace() <= 0.0) {
            out.push(Violation::NoiseDegenerate);
        }
        out
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn ar_order(&self) -> usize {
        self.p
    }

    pub fn ma_order(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Same operators, different innovations.
    pub fn with_noise(&self, noise: NoiseSpec) -> Result<Self> {
        Self::new(self.period, self.phi.clone(), self.psi.clone(), noise)
    }

    /// Wraps any integer time or season index onto `1..=P`.
    pub fn season_of(&self, k: i64) -> usize {
        (k - 1).rem_euclid(self.period as i64) as usize + 1
    }

    /// `φ_{i,s}`, or `None` when `i = 0` or `i > p`.
    pub fn phi(&self, i: usize, season: usize) -> Option<&OperatorRep> {
        if i == 0 || i > self.p {
            return None;
        }
        self.phi[i - 1].get(season - 1)
    }

    /// `ψ_{j,s}`, or `None` when `j = 0` or `j > q`.
    pub fn psi(&self, j: usize, season: usize) -> Option<&OperatorRep> {
        if j == 0 || j > self.q {
            return None;
        }
        self.psi[j - 1].get(season - 1)
    }

    pub fn phi_family(&self) -> &[Vec<OperatorRep>] {
        &self.phi
    }

    pub fn psi_family(&self) -> &[Vec<OperatorRep>] {
        &self.psi
    }

    fn check_season(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.period {
            return Err(Error::InvalidParameter(format!(
                "season {s} outside 1..={}",
                self.period
            )));
        }
        Ok(())
    }

    /// The AR companion `Φ_s`: identity superdiagonal, last block row
    /// `(φ_{P,s}, ..., φ_{1,s})`.
    pub fn companion_ar(&self, s: usize) -> Result<BlockOp> {
        self.check_season(s)?;
        let (pp, d) = (self.period, self.d);
        let mut out = BlockOp::zeros(pp, pp, d);
        let id = OperatorRep::identity(d);
        for r in 0..pp - 1 {
            out.set_block(r, r + 1, &id)?;
        }
        for c in 0..pp {
            if let Some(op) = self.phi(pp - c, s) {
                out.set_block(pp - 1, c, op)?;
            }
        }
        Ok(out)
    }

    /// The MA companion `Ψ_s`: only the last block row
    /// `(ψ_{P-1,s}, ..., ψ_{1,s}, ψ_{0,s})` is nonzero, with `ψ_{0,s} = 0`.
    pub fn companion_ma(&self, s: usize) -> Result<BlockOp> {
        self.check_season(s)?;
        let (pp, d) = (self.period, self.d);
        let mut out = BlockOp::zeros(pp, pp, d);
        for c in 0..pp {
            if let Some(op) = self.psi(pp - 1 - c, s) {
                out.set_block(pp - 1, c, op)?;
            }
        }
        Ok(out)
    }

    /// `Θ_s = Ψ_s` plus the identity in the last diagonal block, so that the
    /// single-step update `X_k = Φ_k X_{k-1} + Θ_k E_k` carries the current
    /// innovation along with the MA terms.
    pub fn innovation_companion(&self, s: usize) -> Result<BlockOp> {
        let mut theta = self.companion_ma(s)?;
        let last = self.period - 1;
        let id = OperatorRep::identity(self.d);
        let current = theta.block_op(last, last).add(&id)?;
        theta.set_block(last, last, &current)?;
        Ok(theta)
    }

    /// `Φ_{i,k} = Φ_k Φ_{k-1} ... Φ_{k-(i-1)}`, seasons wrapping modulo `P`;
    /// `Φ_{0,k}` is the identity.
    pub fn phi_product(&self, i: usize, k: i64) -> Result<BlockOp> {
        let mut acc = BlockOp::identity(self.period, self.d);
        // Build right-to-left: start from the oldest factor.
        for step in (0..i).rev() {
            let season = self.season_of(k - step as i64);
            acc = self.companion_ar(season)?.compose(&acc)?;
        }
        Ok(acc)
    }

    /// The cycle operator `Φ = Φ_P Φ_{P-1} ... Φ_1`.
    pub fn cycle_matrix(&self) -> Result<BlockOp> {
        self.phi_product(self.period, self.period as i64)
    }

    /// Block `(i, j)` (1-based) of the cycle operator via the row recursion
    ///
    /// `Φ_{i,j} = 1{j > i} φ_{P+i-j,i} + Σ_{k=1}^{i-1} φ_{k,i} Φ_{i-k,j}`,
    ///
    /// computed without forming any companion product.
    pub fn recursive_entry(&self, i: usize, j: usize) -> Result<OperatorRep> {
        let pp = self.period;
        if i == 0 || i > pp || j == 0 || j > pp {
            return Err(Error::InvalidParameter(format!("block ({i}, {j}) outside 1..={pp}")));
        }
        // column j of rows 1..=i
        let mut column: Vec<OperatorRep> = Vec::with_capacity(i);
        for row in 1..=i {
            let mut entry = match (j > row).then(|| self.phi(pp + row - j, row)).flatten() {
                Some(op) => op.clone(),
                None => OperatorRep::zeros(self.d),
            };
            for k in 1..row {
                if let Some(op) = self.phi(k, row) {
                    entry = entry.add(&op.compose(&column[row - k - 1])?)?;
                }
            }
            column.push(entry);
        }
        Ok(column.pop().expect("i >= 1"))
    }

    /// The cycle operator assembled block by block from [`Self::recursive_entry`].
    pub fn cycle_matrix_recursive(&self) -> Result<BlockOp> {
        let pp = self.period;
        let mut out = BlockOp::zeros(pp, pp, self.d);
        for j in 1..=pp {
            for i in 1..=pp {
                out.set_block(i - 1, j - 1, &self.recursive_entry(i, j)?)?;
            }
        }
        Ok(out)
    }

    /// `(Δ₀, Δ₁)` with `X'_c = Φ X'_{c-1} + Δ₁ ε'_{c-1} + Δ₀ ε'_c`.
    ///
    /// Built by unrolling the single-step update over one cycle:
    /// `X_{cP} = Φ X_{(c-1)P} + Σ_{i=0}^{P-1} Φ_{i,P} Θ_{P-i} E_{cP-i}`.
    /// Block column `j` of the `i`-th term multiplies the innovation at
    /// season offset `j - i`; offsets in `1..=P` belong to the current cycle
    /// (Δ₀), offsets `≤ 0` to the previous one (Δ₁).
    pub fn ma_aggregates(&self) -> Result<MaAggregates> {
        let (pp, d) = (self.period, self.d);
        let mut delta0 = BlockOp::zeros(pp, pp, d);
        let mut delta1 = BlockOp::zeros(pp, pp, d);
        for i in 0..pp {
            let term = self
                .phi_product(i, pp as i64)?
                .compose(&self.innovation_companion(pp - i)?)?;
            for col in 1..=pp {
                let offset = col as i64 - i as i64;
                let (target, tcol) = if offset >= 1 {
                    (&mut delta0, offset as usize)
                } else {
                    (&mut delta1, (offset + pp as i64) as usize)
                };
                for row in 0..pp {
                    *target.block_mut(row, tcol - 1) += term.block(row, col - 1);
                }
            }
        }
        Ok(MaAggregates { delta0, delta1 })
    }

    /// Closed-form summand assembly of `(Δ₀, Δ₁)`:
    ///
    /// `Δ₀_{i,j} = Σ_{ℓ=0}^{P-j} (Φ_{ℓ,P})_{i,P} ψ_{P-j-ℓ, P-ℓ}` and
    /// `Δ₁_{i,j} = Σ_{ℓ=2}^{j} (Φ_{P+1-ℓ,P})_{i,P} ψ_{P-j-1+ℓ, ℓ-1}`,
    ///
    /// where `ψ_{0,s}` stands for the identity (the current innovation).
    /// Independent of [`Self::ma_aggregates`]; used as a cross-check.
    pub fn ma_aggregates_closed_form(&self) -> Result<MaAggregates> {
        let (pp, d) = (self.period, self.d);
        let id = OperatorRep::identity(d);
        let psi_or_id = |lag: usize, season: usize| -> Option<&OperatorRep> {
            if lag == 0 {
                Some(&id)
            } else {
                self.psi(lag, season)
            }
        };
        let products: Vec<BlockOp> = (0..=pp)
            .map(|l| self.phi_product(l, pp as i64))
            .collect::<Result<_>>()?;
        let mut delta0 = BlockOp::zeros(pp, pp, d);
        let mut delta1 = BlockOp::zeros(pp, pp, d);
        for i in 0..pp {
            for j in 1..=pp {
                for l in 0..=pp - j {
                    if let Some(psi) = psi_or_id(pp - j - l, pp - l) {
                        *delta0.block_mut(i, j - 1) += products[l].block(i, pp - 1) * psi.matrix();
                    }
                }
                for l in 2..=j {
                    if let Some(psi) = psi_or_id(pp + l - j - 1, l - 1) {
                        *delta1.block_mut(i, j - 1) += products[pp + 1 - l].block(i, pp - 1) * psi.matrix();
                    }
                }
            }
        }
        Ok(MaAggregates { delta0, delta1 })
    }

    /// One step of the stacked recursion at time `k`:
    /// `X_k = Φ_k X_{k-1} + Θ_k E_k`, with `E_k = (ε_{k-P+1}, ..., ε_k)` stacked.
    pub fn stacked_step(&self, k: i64, prev: &DVector<f64>, innovations: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.season_of(k);
        Ok(self.companion_ar(s)?.apply_stacked(prev)? + self.innovation_companion(s)?.apply_stacked(innovations)?)
    }

    pub fn to_document(&self) -> ModelDocument {
        let entries = |fam: &[Vec<OperatorRep>]| -> Vec<OperatorEntry> {
            fam.iter()
                .enumerate()
                .flat_map(|(lag, per_season)| {
                    per_season.iter().enumerate().map(move |(s, op)| OperatorEntry {
                        i: lag + 1,
                        season: s + 1,
                        entries: op.to_rows(),
                    })
                })
                .collect()
        };
        ModelDocument {
            period: self.period,
            p: self.p,
            q: self.q,
            d: self.d,
            phi: entries(&self.phi),
            psi: entries(&self.psi),
            noise: NoiseDocument {
                covariances: self.noise.covariances.iter().map(OperatorRep::to_rows).collect(),
                distribution: self.noise.distribution,
            },
        }
    }

    /// Parses and validates a model document. Operators missing from the
    /// document are zero.
    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let (period, d) = (doc.period, doc.d);
        if period == 0 || d == 0 {
            return Err(Error::InvalidParameter("P and d must be positive".into()));
        }
        let family = |order: usize, list: &[OperatorEntry], name: &str| -> Result<Vec<Vec<OperatorRep>>> {
            let mut fam = vec![vec![OperatorRep::zeros(d); period]; order];
            for e in list {
                if e.i == 0 || e.i > order || e.season == 0 || e.season > period {
                    return Err(Error::InvalidParameter(format!(
                        "{name} entry (i={}, season={}) outside lag 1..={order}, season 1..={period}",
                        e.i, e.season
                    )));
                }
                let op = OperatorRep::from_rows(&e.entries)?;
                if op.dim() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "{name}_{{{},{}}} is not {d}x{d}",
                        e.i, e.season
                    )));
                }
                fam[e.i - 1][e.season - 1] = op;
            }
            Ok(fam)
        };
        let phi = family(doc.p, &doc.phi, "phi")?;
        let psi = family(doc.q, &doc.psi, "psi")?;
        let covariances = doc
            .noise
            .covariances
            .iter()
            .map(|rows| OperatorRep::from_rows(rows))
            .collect::<Result<_>>()?;
        Self::new(period, phi, psi, NoiseSpec::new(covariances, doc.noise.distribution))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }
}

/// Moving-average aggregates of one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct MaAggregates {
    pub delta0: BlockOp,
    pub delta1: BlockOp,
}

/// Serialized model; operator entries are row-major with the row index being
/// the output basis index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(rename = "P")]
    pub period: usize,
    pub p: usize,
    pub q: usize,
    pub d: usize,
    #[serde(default)]
    pub phi: Vec<OperatorEntry>,
    #[serde(default)]
    pub psi: Vec<OperatorEntry>,
    pub noise: NoiseDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorEntry {
    pub i: usize,
    pub season: usize,
    pub entries: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseDocument {
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub distribution: NoiseDistribution,
}

/// Convenience: a `d x d` operator from a flat row-major slice.
pub fn operator_from_row_major(d: usize, values: &[f64]) -> Result<OperatorRep> {
    if values.len() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {d}x{d} operator",
            values.len()
        )));
    }
    OperatorRep::from_matrix(DMatrix::from_row_slice(d, d, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op2(a: f64, b: f64, c: f64, e: f64) -> OperatorRep {
        operator_from_row_major(2, &[a, b, c, e]).unwrap()
    }

    fn noise(period: usize, d: usize) -> NoiseSpec {
        NoiseSpec::constant(period, OperatorRep::identity(d), NoiseDistribution::Gaussian)
    }

    fn small_model() -> FparmaModel {
        // P = 3, p = 2, q = 1, d = 2
        let phi = vec![
            vec![
                op2(0.3, 0.1, 0.0, 0.2),
                op2(-0.2, 0.0, 0.1, 0.4),
                op2(0.5, 0.0, 0.0, 0.1),
            ],
            vec![op2(0.1, 0.0, 0.0, 0.1), OperatorRep::zeros(2), op2(0.0, 0.2, -0.1, 0.0)],
        ];
        let psi = vec![vec![
            op2(0.4, 0.0, 0.1, 0.3),
            OperatorRep::zeros(2),
            op2(0.2, 0.1, 0.0, 0.2),
        ]];
        FparmaModel::new(3, phi, psi, noise(3, 2)).unwrap()
    }

    #[test]
    fn validate_example_shape_is_ok() {
        let d = 2;
        let mut phi = vec![vec![OperatorRep::zeros(d); 7]; 3];
        phi[2][0] = OperatorRep::identity(d).scale(0.2);
        let psi = vec![vec![OperatorRep::identity(d).scale(0.1); 7]];
        let m = FparmaModel::new_unchecked(7, phi, psi, noise(7, d));
        assert!(m.validate().is_empty());
    }

    #[test]
    fn validate_reports_period_violation() {
        let phi = vec![vec![OperatorRep::identity(1); 2]; 2];
        let m = FparmaModel::new_unchecked(2, phi, vec![], noise(2, 1));
        let v = m.validate();
        assert!(v.contains(&Violation::PeriodTooShort { period: 2, p: 2, q: 0 }));
        assert!(v[0].to_string().contains("P > max(p,q) fails"));
    }

    #[test]
    fn validate_reports_unattained_order() {
        let phi = vec![
            vec![OperatorRep::identity(2).scale(0.1); 3],
            vec![OperatorRep::zeros(2); 3],
        ];
        let m = FparmaModel::new_unchecked(3, phi, vec![], noise(3, 2));
        assert_eq!(m.validate(), vec![Violation::ArOrderNotAttained { p: 2 }]);
        assert!(matches!(
            FparmaModel::new(3, vec![vec![OperatorRep::zeros(2); 3]], vec![], noise(3, 2)),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn validate_checks_noise() {
        let bad = NoiseSpec::new(
            vec![op2(1.0, 0.0, 0.0, -1.0), op2(1.0, 2.0, 0.0, 1.0), OperatorRep::zeros(2)],
            NoiseDistribution::Gaussian,
        );
        let m = FparmaModel::new_unchecked(3, vec![], vec![], bad);
        let v = m.validate();
        assert!(v.iter().any(|x| matches!(x, Violation::NoiseNotPsd { season: 1, .. })));
        assert!(v.contains(&Violation::NoiseNotSymmetric { season: 2 }));

        let zero = NoiseSpec::constant(3, OperatorRep::zeros(2), NoiseDistribution::Gaussian);
        let m = FparmaModel::new_unchecked(3, vec![], vec![], zero);
        assert_eq!(m.validate(), vec![Violation::NoiseDegenerate]);
    }

    #[test]
    fn companion_ar_structure() {
        let d = 2;
        let m = FparmaModel::new_unchecked(2, vec![], vec![], noise(2, d));
        let c = m.companion_ar(1).unwrap();
        let mut expected = BlockOp::zeros(2, 2, d);
        expected.set_block(0, 1, &OperatorRep::identity(d)).unwrap();
        assert_eq!(c, expected);
        assert!(m.companion_ar(0).is_err());
        assert!(m.companion_ar(3).is_err());

        let a = op2(1.0, 2.0, 3.0, 4.0);
        let b = op2(-1.0, 0.5, 0.0, 2.0);
        let phi = vec![vec![a.clone(); 3], vec![b.clone(); 3]];
        let m = FparmaModel::new(3, phi, vec![], noise(3, d)).unwrap();
        let c = m.companion_ar(2).unwrap();
        assert!(c.block_op(2, 0).is_zero());
        assert_eq!(c.block_op(2, 1), b);
        assert_eq!(c.block_op(2, 2), a);

        let x: Vec<_> = (0..3)
            .map(|i| crate::FunctionRep::new(vec![i as f64 + 1.0, -(i as f64)]))
            .collect();
        let out = c.apply(&x).unwrap();
        assert_eq!(out[0], x[1]);
        assert_eq!(out[1], x[2]);
        let expected = b.apply(&x[1]).unwrap().coeffs() + a.apply(&x[2]).unwrap().coeffs();
        assert_eq!(out[2].coeffs(), &expected);
    }

    #[test]
    fn companion_ma_structure() {
        let m = FparmaModel::new(
            3,
            vec![vec![OperatorRep::identity(2).scale(0.1); 3]],
            vec![],
            noise(3, 2),
        )
        .unwrap();
        assert_eq!(m.companion_ma(1).unwrap().hs_norm(), 0.0);

        let cmat = op2(0.5, 1.0, -1.0, 2.0);
        let m = FparmaModel::new(3, vec![], vec![vec![cmat.clone(); 3]], noise(3, 2)).unwrap();
        let psi = m.companion_ma(3).unwrap();
        assert!(psi.block_op(2, 0).is_zero());
        assert_eq!(psi.block_op(2, 1), cmat);
        assert!(psi.block_op(2, 2).is_zero());
        let eps: Vec<_> = (0..3).map(|i| crate::FunctionRep::new(vec![1.0, i as f64])).collect();
        let out = psi.apply(&eps).unwrap();
        assert!(out[0].norm() == 0.0 && out[1].norm() == 0.0);
        assert_eq!(out[2], cmat.apply(&eps[1]).unwrap());
    }

    #[test]
    fn phi_product_cases() {
        let m = small_model();
        assert_eq!(m.phi_product(0, 2).unwrap(), BlockOp::identity(3, 2));
        assert_eq!(m.phi_product(1, 2).unwrap(), m.companion_ar(2).unwrap());
        assert_eq!(m.phi_product(3, 3).unwrap(), m.cycle_matrix().unwrap());
        // seasons wrap
        assert_eq!(
            m.phi_product(2, 4).unwrap(),
            m.companion_ar(1).unwrap().compose(&m.companion_ar(3).unwrap()).unwrap()
        );
        assert_eq!(m.companion_ar(m.season_of(5)).unwrap(), m.companion_ar(2).unwrap());
    }

    #[test]
    fn zero_ar_cycle_matrix_is_zero() {
        let m = FparmaModel::new_unchecked(4, vec![], vec![], noise(4, 2));
        assert_eq!(m.cycle_matrix().unwrap().hs_norm(), 0.0);
    }

    #[test]
    fn recursion_matches_product() {
        let m = small_model();
        let phi = m.cycle_matrix().unwrap();
        for i in 1..=3 {
            for j in 1..=3 {
                let r = m.recursive_entry(i, j).unwrap();
                assert!(
                    r.sub(&phi.block_op(i - 1, j - 1)).unwrap().hs_norm() < 1e-14,
                    "block ({i},{j})"
                );
            }
            assert!(phi.block_op(i - 1, 0).is_zero());
        }
        // first row exposes season-1 operators
        assert_eq!(m.recursive_entry(1, 2).unwrap(), *m.phi(2, 1).unwrap());
        assert_eq!(m.recursive_entry(1, 3).unwrap(), *m.phi(1, 1).unwrap());
        assert!(m.recursive_entry(0, 1).is_err());
        assert!(m.recursive_entry(1, 4).is_err());
    }

    #[test]
    fn pure_noise_aggregates() {
        let m = FparmaModel::new_unchecked(3, vec![], vec![], noise(3, 2));
        let agg = m.ma_aggregates().unwrap();
        assert_eq!(agg.delta0, BlockOp::identity(3, 2));
        assert_eq!(agg.delta1.hs_norm(), 0.0);
    }

    #[test]
    fn ar_only_aggregates_match_rho_construction() {
        let phi = vec![
            vec![
                op2(0.3, 0.1, 0.0, 0.2),
                op2(-0.2, 0.0, 0.1, 0.4),
                op2(0.5, 0.0, 0.0, 0.1),
                op2(0.1, 0.1, 0.1, 0.1),
            ],
            vec![
                op2(0.1, 0.0, 0.0, 0.1),
                OperatorRep::zeros(2),
                op2(0.0, 0.2, -0.1, 0.0),
                op2(0.2, 0.0, 0.0, 0.0),
            ],
        ];
        let m = FparmaModel::new(4, phi, vec![], noise(4, 2)).unwrap();
        let agg = m.ma_aggregates().unwrap();
        assert_eq!(agg.delta1.hs_norm(), 0.0);
        for j in 1..=4 {
            let prod = m.phi_product(4 - j, 4).unwrap();
            for i in 0..4 {
                assert!((agg.delta0.block(i, j - 1) - prod.block(i, 3)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn closed_form_aggregates_agree_with_unrolling() {
        let m = small_model();
        let a = m.ma_aggregates().unwrap();
        let b = m.ma_aggregates_closed_form().unwrap();
        assert!(a.delta0.hs_distance(&b.delta0).unwrap() < 1e-14);
        assert!(a.delta1.hs_distance(&b.delta1).unwrap() < 1e-14);
    }

    #[test]
    fn one_cycle_unrolling_matches_farma11_form() {
        let m = small_model();
        let (pp, d) = (3usize, 2usize);
        let phi = m.cycle_matrix().unwrap();
        let agg = m.ma_aggregates().unwrap();
        let mut s = 7u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..100 {
            let x_prev = DVector::from_fn(pp * d, |_, _| next());
            // ε over previous and current cycle, times 1..=2P relative
            let eps: Vec<DVector<f64>> = (0..2 * pp).map(|_| DVector::from_fn(d, |_, _| next())).collect();
            let stack = |t: usize| -> DVector<f64> {
                // E_t for t in P+1..=2P uses eps[t-P .. t]
                DVector::from_iterator(
                    pp * d,
                    (t - pp..t).flat_map(|u| eps[u].iter().copied().collect::<Vec<_>>()),
                )
            };
            let mut x = x_prev.clone();
            for t in pp + 1..=2 * pp {
                x = m.stacked_step(t as i64, &x, &stack(t)).unwrap();
            }
            let prev_cycle = stack(pp);
            let cur_cycle = stack(2 * pp);
            let one_shot = phi.apply_stacked(&x_prev).unwrap()
                + agg.delta1.apply_stacked(&prev_cycle).unwrap()
                + agg.delta0.apply_stacked(&cur_cycle).unwrap();
            assert!((x - one_shot).norm() < 1e-12);
        }
    }

    #[test]
    fn document_round_trip_is_bit_identical() {
        let m = small_model();
        let text = m.to_json().unwrap();
        let back = FparmaModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn document_rejects_unknown_fields_and_bad_indices() {
        let mut doc = serde_json::to_value(small_model().to_document()).unwrap();
        doc["extra"] = serde_json::json!(1);
        assert!(FparmaModel::from_json(&doc.to_string()).is_err());

        let mut doc = small_model().to_document();
        doc.phi[0].season = 9;
        assert!(FparmaModel::from_document(&doc).is_err());
    }
}
