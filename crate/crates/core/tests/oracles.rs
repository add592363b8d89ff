mod common;

use nalgebra::{DMatrix, DVector};
use pseudoreg::bootstrap::{draw_weights, empirical_covariance, replicate_set, BootstrapConfig};
use pseudoreg::covariance::{self, leverages, CovKind};
use pseudoreg::data::DesignMatrix;
use pseudoreg::functional::Functional;
use pseudoreg::gee::{self, estimating_fn, m_hat, AKind, FitResult, Link, MeanModel};
use pseudoreg::inference::{chisq_cdf, chisq_quantile, chisq_sf, run_test, Hypothesis};
use pseudoreg::pseudo::{jackknife_pseudo, PseudoValues};
use pseudoreg::rng::SeedStream;
use pseudoreg::simulation::{
    self, gen_covariates, gen_survival, weibull_scale, CovariateScheme, ScenarioConfig, TestVariant,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn gaussian_design<R: Rng>(rng: &mut R, n: usize) -> DesignMatrix {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let m = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { normal.sample(rng) });
    DesignMatrix::new(m, vec!["(Intercept)".into(), "x1".into(), "x2".into()], true).unwrap()
}

/// Linear model `y = Xβ + ε` fitted through the estimating-equation solver
/// with the identity link; responses stand in for pseudo-values.
fn linear_fit<R: Rng>(rng: &mut R, design: &DesignMatrix, beta: &[f64]) -> FitResult {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = design.matrix();
    let y: Vec<f64> = (0..design.n())
        .map(|i| (0..beta.len()).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + normal.sample(rng))
        .collect();
    let pv = PseudoValues::from_values(y, Functional::km(1.0)).unwrap();
    gee::solve(&MeanModel::new(Link::Identity, AKind::Design), design, &pv, None, None).unwrap()
}

fn ols(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let xt = x.transpose();
    (&xt * x).cholesky().unwrap().solve(&(&xt * DVector::from_column_slice(y)))
}

#[test]
fn leverages_match_the_hat_matrix_from_qr() {
    let mut rng = SeedStream::new(3).rng();
    for n in [8, 25, 120] {
        let design = gaussian_design(&mut rng, n);
        let h = leverages(&design, None).unwrap();
        let q = design.matrix().clone().qr().q();
        for (i, hi) in h.iter().enumerate() {
            let want = q.row(i).norm_squared();
            assert!((hi - want).abs() < 1e-12, "row {i}: {hi} vs {want}");
        }
        assert!((h.iter().sum::<f64>() - 3.0).abs() < 1e-10);
    }
}

#[test]
fn chi_square_tail_against_statrs_and_erfc() {
    for df in 1..=12u32 {
        let reference = ChiSquared::new(f64::from(df)).unwrap();
        for &x in &[1e-3, 0.1, 0.5, 1.0, 2.7, 5.0, 9.49, 15.0, 30.0, 60.0] {
            assert!((chisq_cdf(x, df) - reference.cdf(x)).abs() < 1e-12, "cdf df={df} x={x}");
            let sf = chisq_sf(x, df);
            let want = reference.sf(x);
            assert!((sf - want).abs() <= 1e-12_f64.max(1e-9 * want), "sf df={df} x={x}: {sf} vs {want}");
        }
        for p in [0.5, 0.9, 0.95, 0.99] {
            assert!((chisq_quantile(p, df) - reference.inverse_cdf(p)).abs() < 1e-8);
        }
    }
    for &x in &[0.01, 1.0, 3.841_458_820_694_124, 10.0, 40.0] {
        let want = statrs::function::erf::erfc((x / 2.0_f64).sqrt());
        assert!((chisq_sf(x, 1) - want).abs() <= 1e-13_f64.max(1e-10 * want));
    }
    assert!((chisq_quantile(0.95, 1) - 3.841_458_820_694_124).abs() < 1e-9);
}

#[test]
fn jacobian_equals_minus_n_bread_without_residuals() {
    let mut rng = SeedStream::new(5).rng();
    let design = gaussian_design(&mut rng, 40);
    let beta = DVector::from_vec(vec![0.3, -0.7, 0.4]);
    for link in [Link::Identity, Link::Logit, Link::Cloglog] {
        for a in [AKind::Dmu, AKind::Design] {
            let model = MeanModel::new(link, a);
            let theta: Vec<f64> = (design.matrix() * &beta).iter().map(|&e| link.eval(e).0).collect();
            let (u, j) = estimating_fn(&model, &beta, &design, &theta, &[1.0; 40]);
            assert!(u.amax() < 1e-12);
            let m = m_hat(&model, &beta, &design, None);
            assert!(common::max_abs_diff(&j, &(-40.0 * m)) < 1e-10, "{link:?} {a:?}");
        }
    }
}

#[test]
fn logit_fit_on_binary_responses_is_logistic_regression() {
    let mut rng = SeedStream::new(8).rng();
    let design = gaussian_design(&mut rng, 300);
    let y: Vec<f64> = (0..300)
        .map(|i| {
            let eta = 0.2 + 0.8 * design.matrix()[(i, 1)] - 0.5 * design.matrix()[(i, 2)];
            f64::from(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())))
        })
        .collect();
    let want = common::irls_logistic(design.matrix(), &y, 1e-13);
    let pv = PseudoValues::from_values(y, Functional::km(1.0)).unwrap();
    let fit = gee::solve(&MeanModel::new(Link::Logit, AKind::Design), &design, &pv, None, None).unwrap();
    assert!((&fit.beta_hat - want).amax() < 1e-8);
}

#[test]
fn multinomial_weight_moments() {
    let n = 50;
    let draws = 100_000;
    let mut rng = SeedStream::new(13).rng();
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    let mut cross = 0.0;
    for _ in 0..draws {
        let w = draw_weights(&mut rng, n);
        assert_eq!(w.iter().sum::<u32>() as usize, n);
        for k in 0..n {
            let v = f64::from(w[k]);
            sum[k] += v;
            sq[k] += v * v;
        }
        cross += f64::from(w[0]) * f64::from(w[1]);
    }
    let d = draws as f64;
    let mean = sum.iter().sum::<f64>() / (d * n as f64);
    let var = (0..n).map(|k| sq[k] / d - (sum[k] / d).powi(2)).sum::<f64>() / n as f64;
    let cov = cross / d - sum[0] * sum[1] / (d * d);
    assert!((mean - 1.0).abs() < 1e-12);
    assert!((var - (1.0 - 1.0 / n as f64)).abs() < 0.01, "variance {var}");
    assert!((cov + 1.0 / n as f64).abs() < 0.015, "covariance {cov}");
}

#[test]
fn asymptotic_test_is_calibrated_on_a_gaussian_model() {
    let reps = 6000;
    let stream = SeedStream::new(21);
    let mut rejections = 0;
    for r in 0..reps {
        let mut rng = stream.child(r).rng();
        let design = gaussian_design(&mut rng, 500);
        let fit = linear_fit(&mut rng, &design, &[1.0, 0.0, 0.5]);
        let cov = covariance::sigma_hw(&fit, &design).unwrap();
        let hyp = Hypothesis::coefficients_zero(&[1], 3, "x1").unwrap();
        rejections += usize::from(run_test(&fit, &cov, &hyp, 0.05).unwrap().reject);
    }
    let rate = rejections as f64 / reps as f64;
    assert!((0.038..=0.062).contains(&rate), "rejection rate {rate}");
}

#[test]
fn bootstrap_replicates_are_centred_on_the_estimate() {
    let mut rng = SeedStream::new(34).rng();
    let design = gaussian_design(&mut rng, 200);
    let fit = linear_fit(&mut rng, &design, &[1.0, 0.4, -0.3]);
    let config = BootstrapConfig { replicates: 2000, seed: 9, ..BootstrapConfig::default() };
    let set = replicate_set(&fit, &design, &[], &[], &config).unwrap();
    let b = set.betas.len() as f64;
    for j in 0..3 {
        let mean = set.betas.iter().map(|x| x[j]).sum::<f64>() / b;
        let sd = (set.betas.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
        let se = sd / b.sqrt();
        assert!((mean - fit.beta_hat[j]).abs() <= 3.0 * se, "coefficient {j}");
    }
}

/// Pairs bootstrap of OLS written out from scratch, with its own index draws.
fn pairs_bootstrap_ols<R: Rng>(rng: &mut R, x: &DMatrix<f64>, y: &[f64], replicates: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let full = ols(x, y);
    let mut acc = DMatrix::zeros(x.ncols(), x.ncols());
    for _ in 0..replicates {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let xb = DMatrix::from_fn(n, x.ncols(), |i, j| x[(idx[i], j)]);
        let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let d = ols(&xb, &yb) - &full;
        acc += &d * d.transpose();
    }
    acc / replicates as f64
}

#[test]
fn bootstrap_covariance_matches_pairs_bootstrap_of_ols() {
    let mut rng = SeedStream::new(55).rng();
    let design = gaussian_design(&mut rng, 100);
    // Heteroscedastic errors so the answer is not the model-based variance.
    let x = design.matrix().clone();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let y: Vec<f64> = (0..100)
        .map(|i| 1.0 + 0.5 * x[(i, 1)] + (0.5 + x[(i, 2)].abs()) * normal.sample(&mut rng))
        .collect();
    let pv = PseudoValues::from_values(y.clone(), Functional::km(1.0)).unwrap();
    let fit = gee::solve(&MeanModel::new(Link::Identity, AKind::Design), &design, &pv, None, None).unwrap();
    assert!((&fit.beta_hat - ols(&x, &y)).amax() < 1e-10);

    let config = BootstrapConfig { replicates: 10_000, seed: 2, ..BootstrapConfig::default() };
    let set = replicate_set(&fit, &design, &[], &[], &config).unwrap();
    let ours = empirical_covariance(&fit, &set.betas).sandwich / 100.0;
    let reference = pairs_bootstrap_ols(&mut SeedStream::new(77).rng(), &x, &y, 10_000);
    for j in 0..3 {
        let rel = (ours[(j, j)] - reference[(j, j)]).abs() / reference[(j, j)];
        assert!(rel < 0.05, "variance {j}: {} vs {}", ours[(j, j)], reference[(j, j)]);
    }
}

#[test]
fn bootstrap_error_halves_with_four_times_the_replicates() {
    let mut rng = SeedStream::new(89).rng();
    let design = gaussian_design(&mut rng, 50);
    let fit = linear_fit(&mut rng, &design, &[0.0, 1.0, 0.0]);
    let spread = |replicates: usize| {
        let est: Vec<f64> = (0..40u64)
            .map(|s| {
                let config = BootstrapConfig { replicates, seed: 1000 + s, ..BootstrapConfig::default() };
                let set = replicate_set(&fit, &design, &[], &[], &config).unwrap();
                empirical_covariance(&fit, &set.betas).sandwich[(1, 1)]
            })
            .collect();
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt()
    };
    let ratio = spread(200) / spread(800);
    assert!((1.5..=2.7).contains(&ratio), "ratio {ratio}");
}

#[test]
fn uncensored_bootstrap_covariance_tracks_the_sandwich() {
    let config = ScenarioConfig::veteran_like(400, None, 0.0, 0.0);
    let (_, design) = simulation::generate(&mut SeedStream::new(4).rng(), &config).unwrap();
    let mut rng = SeedStream::new(6).rng();
    let x = design.matrix();
    // Binary responses from a logit model: uncensored pseudo-values are indicators.
    let y: Vec<f64> = (0..400)
        .map(|i| {
            let eta = 0.5 - 0.6 * x[(i, 1)] + 0.4 * x[(i, 2)] - 0.01 * (x[(i, 5)] - 58.0);
            f64::from(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())))
        })
        .collect();
    let pv = PseudoValues::from_values(y, Functional::km(1.0)).unwrap();
    let fit = gee::solve(&config.model(), &design, &pv, None, None).unwrap();
    let hw = covariance::sigma_hw(&fit, &design).unwrap().sandwich;
    let bc = BootstrapConfig { replicates: 2000, seed: 3, ..BootstrapConfig::default() };
    let set = replicate_set(&fit, &design, &[], &[], &bc).unwrap();
    let boot = empirical_covariance(&fit, &set.betas).sandwich;
    for j in 0..design.q() {
        let rel = (boot[(j, j)] - hw[(j, j)]).abs() / hw[(j, j)];
        assert!(rel < 0.15, "coefficient {j}: {} vs {}", boot[(j, j)], hw[(j, j)]);
    }
}

#[test]
fn generator_marginals() {
    let mut rng = SeedStream::new(144).rng();
    let raw = gen_covariates(&mut rng, CovariateScheme::VeteranLike, 100_000);
    let n = raw.len() as f64;
    let age_mean = raw.iter().map(|r| r[2]).sum::<f64>() / n;
    let age_sd = (raw.iter().map(|r| (r[2] - age_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((age_mean - 58.0).abs() < 0.2, "age mean {age_mean}");
    assert!((age_sd - 10.5).abs() < 0.2, "age sd {age_sd}");
    for cell in 1..=4 {
        let share = raw.iter().filter(|r| r[1] == f64::from(cell)).count() as f64 / n;
        assert!((share - 0.25).abs() < 0.01);
    }
    let treated = raw.iter().filter(|r| r[0] == 1.0).count() as f64 / n;
    assert!((treated - 0.5).abs() < 0.01);

    // Shape one is exponential with mean equal to the scale.
    let (mu, t0): (f64, f64) = (0.7, 90.0);
    let z = [1.0];
    let beta = [(mu / (1.0 - mu)).ln()];
    let times: Vec<f64> = (0..100_000)
        .map(|_| gen_survival(&mut rng, &z, &beta, 1.0, t0, Link::Logit).unwrap())
        .collect();
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let scale = weibull_scale(mu, 1.0, t0);
    assert!((mean / scale - 1.0).abs() < 0.015, "mean {mean} vs scale {scale}");
    let surv = times.iter().filter(|&&t| t > t0).count() as f64 / times.len() as f64;
    assert!((surv - mu).abs() < 0.005);
}

/// The published rates are averages over the whole effect grid.
#[test]
fn generator_censoring_fractions() {
    for (bound, target) in [(730.0, 0.30), (365.0, 0.46)] {
        let mut censored = 0usize;
        let mut total = 0usize;
        for d1 in [0.0, 0.5, 1.0] {
            for d2 in [-1.0, 0.0, 1.0] {
                let config = ScenarioConfig::veteran_like(2000, Some(bound), d1, d2);
                for r in 0..6 {
                    let (ds, _) = simulation::generate(&mut SeedStream::new(r).rng(), &config).unwrap();
                    censored += ds.censored_count();
                    total += ds.n();
                }
            }
        }
        let frac = censored as f64 / total as f64;
        assert!((frac - target).abs() < 0.02, "bound {bound}: {frac}");
    }
}

#[test]
fn large_sample_fit_recovers_the_true_coefficients() {
    let config = ScenarioConfig::veteran_like(20_000, Some(365.0), 0.5, -1.0);
    let (ds, design) = simulation::generate(&mut SeedStream::new(2024).rng(), &config).unwrap();
    let pv = jackknife_pseudo(&ds, &config.functional()).unwrap();
    let fit = gee::solve(&config.model(), &design, &pv, None, None).unwrap();
    let se = covariance::sigma_hw(&fit, &design).unwrap().standard_errors(ds.n());
    for j in 0..design.q() {
        let z = (fit.beta_hat[j] - config.beta0[j]) / se[j];
        assert!(z.abs() < 3.0, "coefficient {j}: z = {z}");
    }
}

#[test]
fn uncensored_interaction_design_gives_identical_corrected_and_plain_tests() {
    let mut config = ScenarioConfig::interaction(200, None, 0.0);
    config.tests = vec![TestVariant::Corr, TestVariant::Hw];
    config.n_sim = 60;
    let report = simulation::run_scenario(&config).unwrap();
    assert_eq!(report.fit_failures, 0);
    for outcome in &report.outcomes {
        for per_hyp in &outcome.decisions {
            assert_eq!(per_hyp[0], per_hyp[1], "replication {}", outcome.rep);
        }
    }
    let (ds, design) = simulation::generate(&mut config.rep_stream(0).child(0).rng(), &config).unwrap();
    let pv = jackknife_pseudo(&ds, &config.functional()).unwrap();
    let fit = gee::solve(&config.model(), &design, &pv, None, None).unwrap();
    let corrected = covariance::estimate(CovKind::Pv, &fit, &design, &ds).unwrap();
    let plain = covariance::estimate(CovKind::Hw, &fit, &design, &ds).unwrap();
    assert!(common::max_abs_diff(&corrected.sigma, &plain.sigma) < 1e-9);
}

#[test]
fn corrected_variance_is_usually_below_the_plain_one_under_censoring() {
    let config = ScenarioConfig::veteran_like(137, Some(365.0), 0.0, 0.0);
    let mut smaller = 0;
    let mut total = 0;
    for seed in 0..200 {
        let Ok((ds, design)) = simulation::generate(&mut SeedStream::new(seed).rng(), &config) else { continue };
        let Ok(pv) = jackknife_pseudo(&ds, &config.functional()) else { continue };
        let Ok(fit) = gee::solve(&config.model(), &design, &pv, None, None) else { continue };
        let (Ok(pvc), Ok(hw)) = (
            covariance::estimate(CovKind::Pv, &fit, &design, &ds),
            covariance::estimate(CovKind::Hw, &fit, &design, &ds),
        ) else {
            continue;
        };
        total += 1;
        smaller += usize::from(pvc.sandwich.diagonal().mean() <= hw.sandwich.diagonal().mean());
    }
    assert!(total >= 190);
    assert!(smaller as f64 >= 0.8 * total as f64, "{smaller} of {total}");
}
