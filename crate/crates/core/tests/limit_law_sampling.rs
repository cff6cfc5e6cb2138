use mde_core::limit_law::ZetaSampler;
use mde_core::stats::{mean, variance};
use mde_core::streams::{derive_seed, rng_from_seed};
use mde_core::{
    build_time_grid, builtin, builtin_names, fisher_info, lebesgue_measure, sample_limit_distribution, LimitLawSpec,
    Measure, ModelSpec,
};
use nalgebra::DMatrix;

fn truth(model: &str) -> Vec<f64> {
    match model {
        "CM1" => vec![0.7],
        "LM1" => vec![0.8],
        "SM1" => vec![1.0, 0.5],
        "KM1" => vec![1.0, 0.5],
        "LG1" => vec![1.5],
        other => panic!("no truth for {other}"),
    }
}

fn setup(name: &str, n_steps: usize) -> (ModelSpec, Measure) {
    let g = build_time_grid(1.0, n_steps).unwrap();
    (builtin(name).unwrap().spec, lebesgue_measure(&g))
}

fn zeta_draws(model: &ModelSpec, theta: &[f64], mu: &Measure, n: u64, seed: u64) -> Vec<Vec<f64>> {
    let sampler = ZetaSampler::new(model, theta, mu).unwrap();
    (0..n)
        .map(|i| sampler.draw(&mut rng_from_seed(derive_seed(&[seed, i]))).unwrap().value)
        .collect()
}

fn covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows[0].len();
    let n = rows.len() as f64;
    let means: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    DMatrix::from_fn(p, p, |i, j| {
        rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j])).sum::<f64>() / (n - 1.0)
    })
}

#[test]
fn zeta_is_centered_for_every_builtin() {
    for name in builtin_names() {
        let theta = truth(name);
        let (model, mu) = setup(name, 200);
        let draws = zeta_draws(&model, &theta, &mu, 20_000, 77);
        for j in 0..theta.len() {
            let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let se = (variance(&col) / col.len() as f64).sqrt();
            assert!(mean(&col).abs() <= 3.0 * se, "{name} coord {j}: mean {} se {se}", mean(&col));
        }
    }
}

#[test]
fn zeta_variance_constant_drift() {
    let (model, mu) = setup("CM1", 1000);
    let draws = zeta_draws(&model, &[0.7], &mu, 20_000, 5);
    let col: Vec<f64> = draws.iter().map(|d| d[0]).collect();
    assert!((variance(&col) - 2.0 / 15.0).abs() <= 0.05 * 2.0 / 15.0, "{}", variance(&col));
}

#[test]
fn fisher_linear_model_at_zero() {
    let (model, mu) = setup("LM1", 2000);
    let info = fisher_info(&model, &[0.0], &mu).unwrap();
    assert!((info.get(0, 0) - 1.0 / 3.0).abs() < 1e-4);
}

#[test]
fn unpenalized_limit_constant_drift() {
    let (model, mu) = setup("CM1", 500);
    let spec = LimitLawSpec::new(vec![0.7], fisher_info(&model, &[0.7], &mu).unwrap(), 1.0, 0.0).unwrap();
    let u = sample_limit_distribution(&model, &[0.7], &mu, &spec, 20_000, 8).unwrap();
    let col: Vec<f64> = u.iter().map(|r| r[0]).collect();
    assert!((variance(&col) - 1.2).abs() <= 0.05 * 1.2, "{}", variance(&col));
}

#[test]
fn unpenalized_limit_covariance_matches_sandwich() {
    for (name, theta) in [("CM1", vec![0.7]), ("SM1", vec![1.0, 0.5])] {
        let (model, mu) = setup(name, 500);
        let info = fisher_info(&model, &theta, &mu).unwrap();
        let spec = LimitLawSpec::new(theta.clone(), info.clone(), 2.0, 0.0).unwrap();
        let u = sample_limit_distribution(&model, &theta, &mu, &spec, 20_000, 9).unwrap();
        // Cov(ζ) from an independent batch
        let cov_zeta = covariance(&zeta_draws(&model, &theta, &mu, 20_000, 10));
        let inv = info.matrix().clone().try_inverse().unwrap();
        let want = &inv * cov_zeta * &inv;
        let got = covariance(&u);
        for i in 0..theta.len() {
            for j in 0..theta.len() {
                let (g, w) = (got[(i, j)], want[(i, j)]);
                assert!((g - w).abs() <= 0.1 * w.abs(), "{name} ({i},{j}): {g} vs {w}");
            }
        }
    }
}

#[test]
fn heavy_lasso_zeroes_almost_everything() {
    let (model, mu) = setup("CM1", 500);
    let info = fisher_info(&model, &[0.7], &mu).unwrap();
    // E|ζ| = sqrt(2/π · 2/15) ≈ 0.29
    let lambda0 = 10.0 * (2.0 / std::f64::consts::PI * 2.0 / 15.0).sqrt();
    let spec = LimitLawSpec::new(vec![0.0], info, 1.0, lambda0).unwrap();
    let u = sample_limit_distribution(&model, &[0.0], &mu, &spec, 5000, 11).unwrap();
    let zeros = u.iter().filter(|r| r[0] == 0.0).count();
    assert!(zeros as f64 >= 0.99 * u.len() as f64, "{zeros}");
}

#[test]
fn single_draw_reproducible() {
    let (model, mu) = setup("KM1", 200);
    let theta = [1.0, 0.5];
    let spec = LimitLawSpec::new(theta.to_vec(), fisher_info(&model, &theta, &mu).unwrap(), 0.5, 1.0).unwrap();
    let a = sample_limit_distribution(&model, &theta, &mu, &spec, 1, 3).unwrap();
    let b = sample_limit_distribution(&model, &theta, &mu, &spec, 1, 3).unwrap();
    assert_eq!(a, b);
}
