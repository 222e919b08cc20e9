use difficulty_core::metrics::mean;
use difficulty_core::regression::{
    cross_validate, evaluate_folds, fit_ridge, lambda_curve, lr_baseline, objective_gradient, select_lambda, CvConfig,
    Standardizer, DEFAULT_LAMBDA_GRID,
};
use difficulty_core::Error;
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Exact solve of the uncentered system with an unpenalized intercept:
/// [n, 1ᵀX; Xᵀ1, XᵀX + λI] [b; w] = [1ᵀy; Xᵀy], by rational Gauss–Jordan.
fn exact_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let p = x[0].len();
    let aug = |row: &[f64]| -> Vec<BigRational> {
        std::iter::once(BigRational::from_integer(BigInt::from(1)))
            .chain(row.iter().map(|&v| q(v)))
            .collect()
    };
    let rows: Vec<Vec<BigRational>> = x.iter().map(|r| aug(r)).collect();
    let d = p + 1;
    let zero = BigRational::from_integer(BigInt::from(0));
    let mut m = vec![vec![zero.clone(); d + 1]; d];
    for (r, &t) in rows.iter().zip(y) {
        for i in 0..d {
            for j in 0..d {
                m[i][j] += &r[i] * &r[j];
            }
            m[i][d] += &r[i] * q(t);
        }
    }
    for (j, row) in m.iter_mut().enumerate().skip(1) {
        row[j] += q(lambda);
    }
    for col in 0..d {
        let pivot = (col..d).find(|&r| m[r][col] != zero).expect("nonsingular");
        m.swap(col, pivot);
        let pv = m[col][col].clone();
        for v in m[col].iter_mut() {
            *v = &*v / &pv;
        }
        for r in 0..d {
            if r != col && m[r][col] != zero {
                let f = m[r][col].clone();
                let pivot_row = m[col].clone();
                for (v, pvv) in m[r].iter_mut().zip(&pivot_row) {
                    *v -= &f * pvv;
                }
            }
        }
    }
    let to_f = |v: &BigRational| {
        let (n, dd) = (v.numer().to_string(), v.denom().to_string());
        // Both fit comfortably in f64 range for these fixtures.
        n.parse::<f64>().unwrap() / dd.parse::<f64>().unwrap()
    };
    (to_f(&m[0][d]), (1..d).map(|j| to_f(&m[j][d])).collect())
}

fn fixture6() -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = vec![
        vec![1.0, 2.0],
        vec![2.0, 0.5],
        vec![3.0, 4.0],
        vec![4.0, 3.5],
        vec![5.0, 1.0],
        vec![6.0, 5.5],
    ];
    let y = vec![1.3, 0.9, 3.1, 3.6, 2.2, 5.4];
    (x, y)
}

#[test]
fn six_point_fixture_matches_exact_solve() {
    let (x, y) = fixture6();
    let m = fit_ridge(&x, &y, 1.0).unwrap();
    let (b, w) = exact_ridge(&x, &y, 1.0);
    assert!((m.intercept - b).abs() <= 1e-8, "{} vs {b}", m.intercept);
    for (a, e) in m.weights.iter().zip(&w) {
        assert!((a - e).abs() <= 1e-8, "{a} vs {e}");
    }
}

#[test]
fn zero_penalty_is_ordinary_least_squares() {
    let (x, y) = fixture6();
    let m = fit_ridge(&x, &y, 0.0).unwrap();
    let (b, w) = exact_ridge(&x, &y, 0.0);
    assert!((m.intercept - b).abs() <= 1e-9);
    for (a, e) in m.weights.iter().zip(&w) {
        assert!((a - e).abs() <= 1e-9);
    }
}

#[test]
fn huge_penalty_shrinks_to_the_mean() {
    let (x, y) = fixture6();
    let m = fit_ridge(&x, &y, 1e12).unwrap();
    assert!(m.weights.iter().all(|w| w.abs() < 1e-9));
    assert!((m.intercept - mean(&y)).abs() < 1e-8);
}

#[test]
fn exact_line_recovered() {
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.5]).collect();
    let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0]).collect();
    let m = fit_ridge(&x, &y, 0.0).unwrap();
    assert!((m.weights[0] - 2.0).abs() < 1e-10);
    assert!(m.intercept.abs() < 1e-10);
}

fn random_fixture(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let w: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = x
        .iter()
        .map(|r| 0.3 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.5..0.5))
        .collect();
    (x, y)
}

#[test]
fn penalized_gradient_vanishes_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10 {
        let (x, y) = random_fixture(&mut rng, 30, 4);
        for lambda in DEFAULT_LAMBDA_GRID {
            let m = fit_ridge(&x, &y, lambda).unwrap();
            let (gb, gw) = objective_gradient(&x, &y, &m);
            let max = gw.iter().fold(gb.abs(), |a, g| a.max(g.abs()));
            assert!(max <= 1e-8, "gradient {max} at λ={lambda}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_norm_non_increasing_in_lambda(seed in any::<u64>(), n in 8usize..40, p in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_fixture(&mut rng, n, p);
        let mut prev = f64::INFINITY;
        for lambda in [0.1, 1.0, 10.0, 100.0, 500.0] {
            let m = fit_ridge(&x, &y, lambda).unwrap();
            let norm = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            prop_assert!(norm <= prev * (1.0 + 1e-12) + 1e-15);
            prev = norm;
        }
    }

    #[test]
    fn standardized_numeric_columns_have_unit_scale(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![rng.random_range(-5.0..5.0), (i % 2) as f64]).collect();
        let s = Standardizer::fit(&rows, &[true, false]).unwrap();
        let t = s.transform(&rows);
        let col: Vec<f64> = t.iter().map(|r| r[0]).collect();
        prop_assert!(mean(&col).abs() < 1e-10);
        if !s.zero_variance[0] {
            let var = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
            prop_assert!((var - 1.0).abs() < 1e-10);
        }
        for (a, b) in rows.iter().zip(&t) {
            prop_assert_eq!(a[1], b[1]);
        }
    }
}

#[test]
fn standardize_example_and_train_statistics() {
    let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
    let s = Standardizer::fit(&rows, &[true]).unwrap();
    let t = s.transform(&rows);
    let e = 1.224_744_871_391_589;
    assert!((t[0][0] + e).abs() < 1e-12 && t[1][0].abs() < 1e-15 && (t[2][0] - e).abs() < 1e-12);
    // A test row is scaled with training statistics.
    assert!((s.transform_row(&[4.0])[0] - 2.0 * e).abs() < 1e-12);
    assert!(Standardizer::fit(&rows[..1], &[true]).is_err());
}

#[test]
fn noiseless_linear_data_selects_smallest_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = x.iter().map(|r| 1.0 + 2.0 * r[0] - r[1] + 0.5 * r[2]).collect();
    let numeric = [true; 3];
    let grid = DEFAULT_LAMBDA_GRID;
    let chosen = select_lambda(&x, &y, &numeric, &grid, 5, 1).unwrap();
    // Exhaustive evaluation of the same inner split agrees.
    let curve = lambda_curve(&x, &y, &numeric, &grid, 5, 1).unwrap();
    let best = curve.iter().zip(grid).fold(
        (f64::INFINITY, f64::NAN),
        |acc, (&m, l)| if m < acc.0 { (m, l) } else { acc },
    );
    assert_eq!(chosen, best.1);
    assert_eq!(chosen, 0.1);
}

#[test]
fn ties_go_to_the_smaller_lambda() {
    // A constant feature leaves every λ with the same validation error.
    let x: Vec<Vec<f64>> = (0..20).map(|_| vec![1.0]).collect();
    let y: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
    assert_eq!(select_lambda(&x, &y, &[true], &[100.0, 10.0, 1.0], 5, 0).unwrap(), 1.0);
}

#[test]
fn cv_is_deterministic_and_aggregates_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (x, y) = random_fixture(&mut rng, 60, 5);
    let cfg = CvConfig {
        seed: 42,
        ..CvConfig::default()
    };
    let a = cross_validate(&x, &y, &[true; 5], &cfg).unwrap();
    let b = cross_validate(&x, &y, &[true; 5], &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let mses: Vec<f64> = a.folds.iter().map(|f| f.mse).collect();
    let r2s: Vec<f64> = a.folds.iter().map(|f| f.r2).collect();
    assert!((a.mse_mean - mses.iter().sum::<f64>() / 5.0).abs() <= 1e-12);
    assert!((a.r2_mean - r2s.iter().sum::<f64>() / 5.0).abs() <= 1e-12);
    assert!(a.folds.iter().all(|f| DEFAULT_LAMBDA_GRID.contains(&f.lambda.unwrap())));
}

#[test]
fn baseline_equals_ridge_at_zero_penalty() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (x, y) = random_fixture(&mut rng, 50, 3);
    let lr = lr_baseline(&x, &y, &[true; 3], 5, 3).unwrap();
    let ridge0 = cross_validate(
        &x,
        &y,
        &[true; 3],
        &CvConfig {
            lambda_grid: vec![0.0],
            seed: 3,
            ..CvConfig::default()
        },
    )
    .unwrap();
    assert_eq!(lr, ridge0);
}

#[test]
fn baseline_reports_singular_designs() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
    let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
    // Standardizing keeps the two columns identical, so λ = 0 is singular.
    assert!(matches!(
        lr_baseline(&x, &y, &[true, true], 5, 0),
        Err(Error::Singular(_))
    ));
}

#[test]
fn harness_perfect_and_mean_predictors() {
    let y: Vec<f64> = (0..25).map(|i| (i as f64 * 1.3).cos() + i as f64 * 0.1).collect();
    let perfect = evaluate_folds(&y, 5, 11, |s| Ok((s.test.iter().map(|&i| y[i]).collect(), None))).unwrap();
    assert!(perfect.folds.iter().all(|f| f.mse == 0.0 && f.r2 == 1.0));
    let at_mean = evaluate_folds(&y, 5, 11, |s| {
        let m = mean(&s.test.iter().map(|&i| y[i]).collect::<Vec<_>>());
        Ok((vec![m; s.test.len()], None))
    })
    .unwrap();
    assert!(at_mean.folds.iter().all(|f| f.r2.abs() < 1e-12));
    assert!(matches!(
        evaluate_folds(&y[..9], 5, 0, |s| Ok((vec![0.0; s.test.len()], None))),
        Err(Error::FoldTooSmall { .. })
    ));
}
