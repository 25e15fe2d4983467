use fparma::presets::{test_fpar_model, test_fparma_model, Example42Params};
use fparma::probe::{
    ar_residuals, lagged_moment, m_approx_decay, population_covariances, season_covariance_halves, whiteness_diagnostic,
};
use fparma::sim::{simulate, RngStream};
use fparma::FparmaModel;

fn within_se(model: &FparmaModel, n_cycles: usize, seed: u64, k_se: f64) {
    let pp = model.period();
    let cov = population_covariances(model, 1).unwrap();
    let path = simulate(model, n_cycles * pp, None, RngStream::new(seed, 0)).unwrap();
    let cycles = path.cycles();
    for h in 0..=1usize {
        let est = lagged_moment(&cycles, h, 50).unwrap();
        let truth = if h == 0 {
            cov.c.to_flat()
        } else {
            cov.lagged[&1].to_flat()
        };
        let z = (&est.estimate - &truth).component_div(&est.standard_errors.map(|v| v.max(1e-300)));
        assert!(z.amax() <= k_se, "lag {h}: max |z| = {}", z.amax());
    }
}

#[test]
fn sample_covariances_match_population_values() {
    within_se(&test_fpar_model(), 20_000, 1, 4.0);
    within_se(&test_fparma_model(), 20_000, 2, 4.0);
}

#[test]
fn innovations_look_white() {
    let model = test_fpar_model();
    let phi = model.cycle_matrix().unwrap();
    let mut clean = 0;
    for s in 0..20 {
        let path = simulate(&model, 3 * 5000, None, RngStream::new(4, s)).unwrap();
        let rho = ar_residuals(&path.cycles(), &phi).unwrap();
        let eps = path.innovation_cycles();
        let a = whiteness_diagnostic(&rho, 10).unwrap();
        let b = whiteness_diagnostic(&eps[eps.len() - 5000..], 10).unwrap();
        if a.flags.is_empty() && b.flags.is_empty() {
            clean += 1;
        }
    }
    assert!(clean >= 18, "{clean}/20");

    // the cycles themselves are autocorrelated
    let path = simulate(&model, 3 * 5000, None, RngStream::new(4, 99)).unwrap();
    assert!(!whiteness_diagnostic(&path.cycles(), 10).unwrap().flags.is_empty());
}

#[test]
fn simulated_paths_are_periodically_stationary() {
    for (model, seed) in [
        (test_fpar_model(), 6),
        (test_fparma_model(), 7),
        (Example42Params::default().model().unwrap(), 8),
    ] {
        let path = simulate(&model, 3 * 20_000, None, RngStream::new(seed, 0)).unwrap();
        for r in season_covariance_halves(&path.cycles(), 3, 40).unwrap() {
            assert!(r.hs_difference <= 3.0 * r.standard_error, "{r:?}");
        }
    }
}

#[test]
fn coupling_distance_decays_geometrically() {
    let table = m_approx_decay(&test_fpar_model(), &(2..=12).collect::<Vec<_>>(), 400, 2.0, 5).unwrap();
    let fit = table.fit.unwrap();
    assert!(fit.slope < 0.0 && fit.r_squared >= 0.9, "{fit:?}");
}
