mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use pseudoreg::covariance::pv_meat;
use pseudoreg::functional::{EmpiricalDistribution, Functional};
use pseudoreg::gee::{mu_eval, AKind, Link, MeanModel};
use pseudoreg::rng::SeedStream;
use pseudoreg::ustats::{
    bootstrap_u_statistic, max_abs_deviation, u_statistic, v_statistic, FnKernel, Kernel, SecondOrderMeatKernel,
};
use rand::Rng;

fn data(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = SeedStream::new(seed).rng();
    (0..n).map(|_| rng.random_range(-2.0..3.0)).collect()
}

fn scalar_kernel(m: usize) -> impl Kernel<f64> {
    FnKernel::new(m, 1, true, |a: &[&f64], out: &mut [f64]| {
        let s: f64 = a.iter().map(|v| **v).sum();
        let p: f64 = a.iter().map(|v| **v).product();
        out[0] = s * s + p.sin();
    })
}

/// 2 × 2 kernel, row-major: `[[Σx, Πx], [Πx, max x]]`.
fn matrix_kernel(m: usize) -> impl Kernel<f64> {
    FnKernel::new(m, 4, true, |a: &[&f64], out: &mut [f64]| {
        let s: f64 = a.iter().map(|v| **v).sum();
        let p: f64 = a.iter().map(|v| **v).product();
        let mx = a.iter().map(|v| **v).fold(f64::NEG_INFINITY, f64::max);
        out.copy_from_slice(&[s, p, p, mx]);
    })
}

fn variance_kernel() -> impl Kernel<f64> {
    FnKernel::new(2, 1, true, |a: &[&f64], out: &mut [f64]| out[0] = (a[0] - a[1]).powi(2) / 2.0)
}

/// Every index tuple in `{0..n}^m`, in lexicographic order.
fn tuples(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..n).map(move |i| {
                    let mut u = t.clone();
                    u.push(i);
                    u
                })
            })
            .collect();
    }
    out
}

fn brute_force<K: Kernel<f64>>(kernel: &K, x: &[f64], strict: bool) -> Vec<f64> {
    let dim = kernel.output_dim();
    let mut total = vec![0.0; dim];
    let mut count = 0.0;
    let mut buf = vec![0.0; dim];
    for t in tuples(x.len(), kernel.degree()) {
        if strict && t.windows(2).any(|w| w[0] >= w[1]) {
            continue;
        }
        let args: Vec<&f64> = t.iter().map(|&i| &x[i]).collect();
        kernel.eval(&args, &mut buf);
        for (a, b) in total.iter_mut().zip(&buf) {
            *a += b;
        }
        count += 1.0;
    }
    total.iter().map(|t| t / count).collect()
}

#[test]
fn exhaustive_enumeration_agrees_for_small_samples() {
    for m in 1..=3 {
        for n in m..=12 {
            let x = data((100 * m + n) as u64, n);
            let tol = 1e-12;
            let s = scalar_kernel(m);
            assert!(max_abs_deviation(&u_statistic(&s, &x).unwrap(), &brute_force(&s, &x, true)) < tol);
            assert!(max_abs_deviation(&v_statistic(&s, &x).unwrap(), &brute_force(&s, &x, false)) < tol);
            let k = matrix_kernel(m);
            assert!(max_abs_deviation(&u_statistic(&k, &x).unwrap(), &brute_force(&k, &x, true)) < tol);
            assert!(max_abs_deviation(&v_statistic(&k, &x).unwrap(), &brute_force(&k, &x, false)) < tol);
        }
    }
}

#[test]
fn degree_two_v_statistic_splits_into_u_and_diagonal() {
    let k = matrix_kernel(2);
    for n in [2, 5, 11] {
        let x = data(n as u64, n);
        let u = u_statistic(&k, &x).unwrap();
        let v = v_statistic(&k, &x).unwrap();
        let mut diag = [0.0; 4];
        let mut buf = [0.0; 4];
        for xi in &x {
            k.eval(&[xi, xi], &mut buf);
            for (d, b) in diag.iter_mut().zip(buf) {
                *d += b / n as f64;
            }
        }
        let nf = n as f64;
        let want: Vec<f64> = (0..4).map(|e| ((nf - 1.0) * u[e] + diag[e]) / nf).collect();
        assert!(max_abs_deviation(&v, &want) < 1e-12);
    }
}

#[test]
fn variance_kernel_gives_sample_and_population_variance() {
    let x = data(7, 30);
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let u = u_statistic(&variance_kernel(), &x).unwrap()[0];
    let v = v_statistic(&variance_kernel(), &x).unwrap()[0];
    assert!((u - ss / (n - 1.0)).abs() < 1e-12);
    assert!((v - ss / n).abs() < 1e-12);
}

#[test]
fn u_statistic_is_unbiased_and_v_statistic_is_not() {
    // Population: uniform on five points, variance 2.
    let support = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let sigma2 = 2.0;
    let n = 8;
    let draws = 5000;
    let mut rng = SeedStream::new(41).rng();
    let (mut us, mut vs) = (Vec::new(), Vec::new());
    for _ in 0..draws {
        let x: Vec<f64> = (0..n).map(|_| support[rng.random_range(0..5)]).collect();
        us.push(u_statistic(&variance_kernel(), &x).unwrap()[0]);
        vs.push(v_statistic(&variance_kernel(), &x).unwrap()[0]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 / v.len() as f64).sqrt()
    };
    assert!((mean(&us) - sigma2).abs() < 4.0 * se(&us), "U mean {}", mean(&us));
    let v_target = sigma2 * (n as f64 - 1.0) / n as f64;
    assert!((mean(&vs) - v_target).abs() < 4.0 * se(&vs), "V mean {}", mean(&vs));
    assert!((mean(&vs) - sigma2).abs() > 4.0 * se(&vs));
}

#[test]
fn bootstrap_u_statistic_targets_the_plug_in_value() {
    let x = data(12, 15);
    let plug_in = v_statistic(&variance_kernel(), &x).unwrap()[0];
    let mut rng = SeedStream::new(5).rng();
    let reps: Vec<f64> = (0..4000)
        .map(|_| bootstrap_u_statistic(&variance_kernel(), &x, &mut rng).unwrap()[0])
        .collect();
    let m = reps.iter().sum::<f64>() / reps.len() as f64;
    let sd = (reps.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt();
    assert!((m - plug_in).abs() < 4.0 * sd / (reps.len() as f64).sqrt(), "{m} vs {plug_in}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn statistics_ignore_the_order_of_the_sample(seed in any::<u64>(), n in 3usize..10, m in 1usize..=3) {
        let x = data(seed, n);
        let mut y = x.clone();
        y.reverse();
        y.rotate_left(seed as usize % n);
        let k = matrix_kernel(m);
        prop_assert!(max_abs_deviation(&u_statistic(&k, &x).unwrap(), &u_statistic(&k, &y).unwrap()) < 1e-12);
        prop_assert!(max_abs_deviation(&v_statistic(&k, &x).unwrap(), &v_statistic(&k, &y).unwrap()) < 1e-12);
    }

    #[test]
    fn full_degree_u_statistic_is_the_kernel_itself(seed in any::<u64>(), m in 1usize..=4) {
        let x = data(seed, m);
        let k = FnKernel::new(m, 1, true, |a: &[&f64], out: &mut [f64]| {
            out[0] = a.iter().map(|v| v.cos()).product::<f64>() + a.iter().map(|v| **v).sum::<f64>();
        });
        let mut direct = [0.0];
        k.eval(&x.iter().collect::<Vec<_>>(), &mut direct);
        prop_assert!((u_statistic(&k, &x).unwrap()[0] - direct[0]).abs() < 1e-14);
    }
}

fn survival_tables(seed: u64, n: usize, beta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>, f64) {
    let mut rng = SeedStream::new(seed).rng();
    let (ds, t0) = common::censored_sample(&mut rng, n, Some(3.0));
    let design = common::linear_design(&ds);
    let model = MeanModel::new(Link::Logit, AKind::Dmu);
    let mut a = DMatrix::zeros(n, design.q());
    let mut mu = Vec::with_capacity(n);
    for k in 0..n {
        let z: Vec<f64> = design.matrix().row(k).iter().copied().collect();
        let (m, grad) = mu_eval(&model, beta, &z);
        a.set_row(k, &grad.transpose());
        mu.push(m);
    }
    let marks = ds.marks();
    let prepared = Functional::km(t0).prepare(&EmpiricalDistribution::uniform(marks.clone()).unwrap()).unwrap();
    let second = DMatrix::from_row_slice(n, n, &prepared.second_derivative_matrix(&marks));
    (a, second, mu, prepared.value())
}

#[test]
fn second_order_meat_kernel_matches_closed_form_and_corrected_meat() {
    let beta = DVector::from_vec(vec![0.4, -0.3, 0.2]);
    for (seed, n) in [(1, 6), (2, 9), (3, 14)] {
        let (a, second, mu, phi) = survival_tables(seed, n, &beta);
        let kernel = SecondOrderMeatKernel::new(&a, &second).unwrap();
        let index: Vec<usize> = (0..n).collect();
        let generic = v_statistic(&kernel, &index).unwrap();
        let closed = kernel.v_closed_form();
        let scale = closed.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
        assert!(max_abs_deviation(&generic, &closed) < 1e-12 * scale.max(1.0), "n = {n}");

        // With the first-order term cancelled, the corrected meat reduces to
        // the second-order V-statistic.
        let mut rng = SeedStream::new(seed).rng();
        let (ds, _) = common::censored_sample(&mut rng, n, Some(3.0));
        let design = common::linear_design(&ds);
        let d1: Vec<f64> = mu.iter().map(|m| m - phi).collect();
        // The second-order table is symmetric, so storage order is moot.
        let meat = pv_meat(&MeanModel::new(Link::Logit, AKind::Dmu), &beta, &design, phi, &d1, second.as_slice()).unwrap();
        let flat: Vec<f64> = (0..9).map(|e| meat[(e / 3, e % 3)]).collect();
        assert!(max_abs_deviation(&flat, &closed) < 1e-12 * scale.max(1.0));
    }
}

#[test]
fn second_order_meat_settles_as_n_grows() {
    // Spread over independent samples of the second-order part at a fixed
    // parameter; a law of large numbers shows up as shrinking spread.
    let beta = DVector::from_vec(vec![0.2, -0.3, 0.4]);
    let spread = |n: usize| {
        let vals: Vec<f64> = (0..16u64)
            .map(|s| {
                let (a, second, _, _) = survival_tables(1000 + s, n, &beta);
                SecondOrderMeatKernel::new(&a, &second).unwrap().v_closed_form()[0]
            })
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
    };
    let spreads: Vec<f64> = [50, 100, 200].iter().map(|&n| spread(n)).collect();
    assert!(spreads[2] < spreads[0], "spreads {spreads:?}");
}
