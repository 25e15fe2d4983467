//! Packaged models used by tests and experiments.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::submatrices;
use crate::hilbert::{BlockOp, OperatorRep};
use crate::model::{FparmaModel, NoiseDistribution, NoiseSpec};

/// Period-3, order-2 model with `φ_{i,j} = c_{ij} φ` and diagonal `φ`
/// with eigenvalues `φ_j = c · j^{-(β + 0.51)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Example42Params {
    pub d: usize,
    pub beta: f64,
    pub c: f64,
    pub c11: f64,
    pub c12: f64,
    pub c13: f64,
    pub c21: f64,
    pub c22: f64,
    pub c23: f64,
    /// Noise covariance is `noise_scale · diag(j^{-2})` in every season.
    pub noise_scale: f64,
    pub distribution: NoiseDistribution,
}

impl Default for Example42Params {
    fn default() -> Self {
        Self {
            d: 8,
            beta: 1.0,
            c: 0.5,
            c11: 0.6,
            c12: 0.0,
            c13: 0.5,
            c21: 0.6,
            c22: 0.6,
            c23: 0.0,
            noise_scale: 1.0,
            distribution: NoiseDistribution::Gaussian,
        }
    }
}

impl Example42Params {
    /// Coefficient `c_{ij}`, lag `i ∈ {1, 2}`, season `j ∈ {1, 2, 3}`.
    pub fn coefficient(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (1, 1) => self.c11,
            (1, 2) => self.c12,
            (1, 3) => self.c13,
            (2, 1) => self.c21,
            (2, 2) => self.c22,
            (2, 3) => self.c23,
            _ => 0.0,
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.d)
            .map(|j| self.c * (j as f64).powf(-(self.beta + 0.51)))
            .collect()
    }

    /// The base operator `φ`.
    pub fn phi(&self) -> OperatorRep {
        OperatorRep::diagonal(&self.eigenvalues())
    }

    /// `Σ_{j<=d} φ_j² (1 + j^{2β})`.
    pub fn sobolev_sum(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .enumerate()
            .map(|(j, v)| v * v * (1.0 + ((j + 1) as f64).powf(2.0 * self.beta)))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidParameter("d must be positive".into()));
        }
        let finite = [
            self.beta,
            self.c,
            self.c11,
            self.c12,
            self.c13,
            self.c21,
            self.c22,
            self.c23,
            self.noise_scale,
        ];
        if finite.iter().any(|v| !v.is_finite()) || !(self.beta > 0.0) || !(self.c > 0.0) || !(self.noise_scale > 0.0) {
            return Err(Error::InvalidParameter(
                "beta, c and noise_scale must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<FparmaModel> {
        self.validate()?;
        let phi = self.phi();
        let family = (1..=2)
            .map(|i| (1..=3).map(|j| phi.scale(self.coefficient(i, j))).collect())
            .collect();
        let cov = OperatorRep::diagonal(
            &(1..=self.d)
                .map(|j| self.noise_scale / (j * j) as f64)
                .collect::<Vec<_>>(),
        );
        FparmaModel::new(3, family, Vec::new(), NoiseSpec::constant(3, cov, self.distribution))
    }

    /// The cycle operator written out in terms of `φ` and the `c_{ij}`.
    pub fn closed_form_cycle_matrix(&self) -> Result<BlockOp> {
        self.validate()?;
        let c = |i, j| self.coefficient(i, j);
        let p1 = self.phi();
        let p2 = p1.compose(&p1)?;
        let p3 = p2.compose(&p1)?;
        let z = OperatorRep::zeros(self.d);
        let b22 = p1.scale(c(2, 2)).add(&p2.scale(c(1, 1) * c(1, 2)))?;
        let blocks = [
            [z.clone(), p1.scale(c(2, 1)), p1.scale(c(1, 1))],
            [z.clone(), p2.scale(c(1, 2) * c(2, 1)), b22.clone()],
            [
                z,
                p3.scale(c(1, 2) * c(1, 3) * c(2, 1))
                    .add(&p2.scale(c(2, 1) * c(2, 3)))?,
                p1.compose(&b22)?.scale(c(1, 3)).add(&p2.scale(c(1, 1) * c(2, 3)))?,
            ],
        ];
        let mut out = BlockOp::zeros(3, 3, self.d);
        for (i, row) in blocks.iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                out.set_block(i, j, b)?;
            }
        }
        Ok(out)
    }
}

/// Smallest singular value of the flattened `Φ*_[mm]`; positive iff the
/// adjoint is injective on the discretized space.
pub fn dense_image_margin(phi: &BlockOp, m: usize) -> Result<f64> {
    let (_, square) = submatrices(phi, m)?;
    let flat: DMatrix<f64> = square.adjoint().to_flat();
    Ok(flat.singular_values().min())
}

fn op(d: usize, values: &[f64]) -> OperatorRep {
    OperatorRep::from_matrix(DMatrix::from_row_slice(d, d, values)).expect("square")
}

/// Stationary fpAR(3, 2) test model on `d = 3` with full (non-diagonal)
/// operators and season-dependent noise.
pub fn test_fpar_model() -> FparmaModel {
    let d = 3;
    let phi = vec![
        vec![
            op(d, &[0.5, 0.1, 0.0, -0.1, 0.3, 0.1, 0.0, 0.1, 0.2]),
            op(d, &[-0.4, 0.0, 0.1, 0.2, 0.3, 0.0, 0.0, -0.1, 0.2]),
            op(d, &[0.3, 0.2, 0.0, 0.0, -0.3, 0.1, 0.1, 0.0, 0.25]),
        ],
        vec![
            op(d, &[0.2, 0.0, 0.0, 0.1, 0.1, 0.0, 0.0, 0.0, 0.1]),
            op(d, &[0.3, -0.1, 0.0, 0.0, 0.2, 0.0, 0.05, 0.0, 0.1]),
            op(d, &[-0.2, 0.0, 0.1, 0.0, 0.2, 0.0, 0.0, 0.1, -0.1]),
        ],
    ];
    let noise = NoiseSpec::new(
        vec![
            op(d, &[1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 0.25]),
            op(d, &[0.8, 0.0, 0.1, 0.0, 0.6, 0.0, 0.1, 0.0, 0.3]),
            op(d, &[1.2, -0.1, 0.0, -0.1, 0.4, 0.0, 0.0, 0.0, 0.2]),
        ],
        NoiseDistribution::Gaussian,
    );
    FparmaModel::new(3, phi, Vec::new(), noise).expect("packaged fpAR model is valid")
}

/// Stationary fpARMA(3, 1, 1) test model on `d = 2` with uniform noise.
pub fn test_fparma_model() -> FparmaModel {
    let d = 2;
    let phi = vec![vec![
        op(d, &[0.5, 0.2, -0.1, 0.4]),
        op(d, &[-0.6, 0.0, 0.1, 0.3]),
        op(d, &[0.4, -0.2, 0.0, 0.5]),
    ]];
    let psi = vec![vec![
        op(d, &[0.3, 0.0, 0.1, -0.2]),
        op(d, &[0.4, 0.1, 0.0, 0.2]),
        op(d, &[-0.3, 0.0, 0.2, 0.1]),
    ]];
    let noise = NoiseSpec::new(
        vec![
            op(d, &[1.0, 0.3, 0.3, 0.6]),
            op(d, &[0.7, 0.0, 0.0, 0.4]),
            op(d, &[1.1, -0.2, -0.2, 0.5]),
        ],
        NoiseDistribution::ScaledUniform,
    );
    FparmaModel::new(3, phi, psi, noise).expect("packaged fpARMA model is valid")
}

/// Random model with every AR/MA operator scaled to operator norm
/// `scale · u`, `u ~ U(0.2, 1)`, and random positive definite noise.
/// Not necessarily stationary.
pub fn random_model<R: Rng + ?Sized>(
    rng: &mut R,
    period: usize,
    p: usize,
    q: usize,
    d: usize,
    scale: f64,
) -> Result<FparmaModel> {
    let random_op = |rng: &mut R| {
        let m = DMatrix::<f64>::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let norm = m.norm().max(f64::MIN_POSITIVE);
        let target = scale * rng.random_range(0.2..1.0);
        // HS norm bounds the operator norm, so this is a conservative rescaling
        OperatorRep::from_matrix(m * (target / norm))
    };
    let phi = (0..p)
        .map(|_| (0..period).map(|_| random_op(rng)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let psi = (0..q)
        .map(|_| (0..period).map(|_| random_op(rng)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let covs = (0..period)
        .map(|_| {
            let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            OperatorRep::from_matrix(&a * a.transpose() + DMatrix::identity(d, d) * 0.1)
        })
        .collect::<Result<Vec<_>>>()?;
    FparmaModel::new(period, phi, psi, NoiseSpec::new(covs, NoiseDistribution::Gaussian))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::check_stationarity;

    #[test]
    fn built_cycle_matrix_matches_closed_form() {
        let p = Example42Params::default();
        let phi = p.model().unwrap().cycle_matrix().unwrap();
        assert!(phi.hs_distance(&p.closed_form_cycle_matrix().unwrap()).unwrap() <= 1e-12);
        // general coefficients, including the ones the simplified display drops
        let q = Example42Params {
            c12: 0.3,
            c23: -0.4,
            d: 4,
            ..p
        };
        let phi = q.model().unwrap().cycle_matrix().unwrap();
        assert!(phi.hs_distance(&q.closed_form_cycle_matrix().unwrap()).unwrap() <= 1e-12);
    }

    #[test]
    fn simplified_structure() {
        let p = Example42Params::default();
        let phi = p.closed_form_cycle_matrix().unwrap();
        let base = p.phi();
        for i in 0..3 {
            assert_eq!(phi.block(i, 0).norm(), 0.0);
        }
        assert_eq!(phi.block(1, 1).norm(), 0.0);
        assert_eq!(phi.block(2, 1).norm(), 0.0);
        let want = base.compose(&base).unwrap().scale(p.c13 * p.c22);
        assert!((phi.block(2, 2) - want.matrix()).norm() < 1e-15);
    }

    #[test]
    fn default_model_is_stationary() {
        let phi = Example42Params::default().model().unwrap().cycle_matrix().unwrap();
        assert!(phi.op_norm() < 1.0);
        assert!(check_stationarity(&phi, 50).spectral_radius < 1.0);
        assert!(check_stationarity(&test_fpar_model().cycle_matrix().unwrap(), 50).spectral_radius < 1.0);
        assert!(check_stationarity(&test_fparma_model().cycle_matrix().unwrap(), 50).spectral_radius < 1.0);
    }

    #[test]
    fn dense_image_needs_c22() {
        let p = Example42Params::default();
        let phi = p.closed_form_cycle_matrix().unwrap();
        assert!(dense_image_margin(&phi, 3).unwrap() > 1e-6);
        let q = Example42Params { c22: 0.0, ..p.clone() };
        assert!(dense_image_margin(&q.closed_form_cycle_matrix().unwrap(), 3).unwrap() <= 1e-12);
        let q = Example42Params { c21: 0.0, ..p };
        assert!(dense_image_margin(&q.closed_form_cycle_matrix().unwrap(), 3).unwrap() <= 1e-12);
    }

    #[test]
    fn sobolev_sum_is_finite() {
        let p = Example42Params {
            d: 500,
            ..Default::default()
        };
        let s = p.sobolev_sum();
        assert!(s.is_finite() && s > 0.0);
        let longer = Example42Params { d: 1000, ..p.clone() };
        assert!(longer.sobolev_sum() > s);
    }

    #[test]
    fn root_norms_of_packaged_models_do_not_increase() {
        for phi in [
            Example42Params::default().model().unwrap().cycle_matrix().unwrap(),
            test_fpar_model().cycle_matrix().unwrap(),
            test_fparma_model().cycle_matrix().unwrap(),
        ] {
            let r = check_stationarity(&phi, 40);
            let roots: Vec<f64> = r
                .norms
                .iter()
                .enumerate()
                .map(|(j, n)| n.powf(1.0 / (j + 1) as f64))
                .collect();
            assert!(roots.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{roots:?}");
        }
    }
}
