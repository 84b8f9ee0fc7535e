//! Single-variable least-squares polynomial regression (degree 1 to 4).
//!
//! Inputs are centered and scaled to `[-1, 1]` before the Vandermonde basis
//! is built, the least-squares problem is solved by Householder QR, and the
//! coefficients are mapped back to the original `x` frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_DEGREE: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum LinregError {
    #[error("degree must be in 1..={MAX_DEGREE}, got {0}")]
    Degree(usize),
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} points, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("need at least {needed} distinct x values for degree {degree}, got {got}")]
    RankDeficient {
        degree: usize,
        needed: usize,
        got: usize,
    },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("observed values have zero variance")]
    ZeroVariance,
}

pub type Result<T, E = LinregError> = std::result::Result<T, E>;

/// Fitted polynomial `sum(c[i] * x^i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub degree: usize,
    pub coefficients: Vec<f64>,
    #[serde(rename = "feature")]
    pub feature_name: String,
    #[serde(rename = "target")]
    pub target_name: String,
    /// `None` when the training targets are constant.
    pub train_r2: Option<f64>,
}

impl PolyModel {
    /// Horner evaluation.
    pub fn predict_one(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn with_names(mut self, feature: &str, target: &str) -> Self {
        self.feature_name = feature.to_string();
        self.target_name = target.to_string();
        self
    }
}

pub fn predict(model: &PolyModel, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| model.predict_one(v)).collect()
}

/// Solves `min |A a - b|` for a tall, column-major `A` (n x p) by Householder
/// QR. Returns `None` when `A` is numerically rank deficient.
fn householder_lstsq(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let p = a.len();
    let n = b.len();
    let mut diag = vec![0.0; p];
    for k in 0..p {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored in place of column k
        a[k][k] -= alpha;
        let vnorm2: f64 = a[k][k..].iter().map(|v| v * v).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let (head, tail) = a.split_at_mut(k + 1);
        let v = &head[k][k..];
        for col in tail.iter_mut() {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col[k..].iter_mut().zip(v) {
                *c -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&b[k..]).map(|(a, b)| a * b).sum();
        let f = 2.0 * dot / vnorm2;
        for (bi, vi) in b[k..].iter_mut().zip(v) {
            *bi -= f * vi;
        }
    }
    let max_diag = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let tol = max_diag * (n.max(p) as f64) * f64::EPSILON * 16.0;
    if diag.iter().any(|d| d.abs() <= tol) {
        return None;
    }
    // back substitution, R[i][j] = a[j][i] above the diagonal, diag on it
    let mut sol = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = b[i];
        for j in i + 1..p {
            s -= a[j][i] * sol[j];
        }
        sol[i] = s / diag[i];
    }
    Some(sol)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Least-squares polynomial fit of `y` on `x`.
pub fn fit_poly(x: &[f64], y: &[f64], degree: usize) -> Result<PolyModel> {
    if !(1..=MAX_DEGREE).contains(&degree) {
        return Err(LinregError::Degree(degree));
    }
    if x.len() != y.len() {
        return Err(LinregError::LengthMismatch(x.len(), y.len()));
    }
    let p = degree + 1;
    if x.len() < p {
        return Err(LinregError::TooFew {
            needed: p,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(LinregError::NonFinite);
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let deficient = LinregError::RankDeficient {
        degree,
        needed: p,
        got: sorted.len(),
    };
    if sorted.len() < p {
        return Err(deficient);
    }

    let n = x.len() as f64;
    let center = x.iter().sum::<f64>() / n;
    let scale = x.iter().fold(0.0f64, |m, v| m.max((v - center).abs()));
    let z: Vec<f64> = x.iter().map(|v| (v - center) / scale).collect();
    let basis: Vec<Vec<f64>> = (0..p)
        .map(|k| z.iter().map(|zi| zi.powi(k as i32)).collect())
        .collect();
    let scaled = householder_lstsq(basis, y.to_vec()).ok_or(deficient)?;

    // sum_k a_k ((x - m)/s)^k  ->  sum_i c_i x^i
    let mut coefficients = vec![0.0; p];
    for (k, &ak) in scaled.iter().enumerate() {
        let w = ak / scale.powi(k as i32);
        for (i, c) in coefficients.iter_mut().enumerate().take(k + 1) {
            *c += w * binomial(k, i) * (-center).powi((k - i) as i32);
        }
    }
    let mut model = PolyModel {
        degree,
        coefficients,
        feature_name: String::new(),
        target_name: String::new(),
        train_r2: None,
    };
    model.train_r2 = r2_score(y, &predict(&model, x)).ok();
    Ok(model)
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2_score(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return Err(LinregError::LengthMismatch(observed.len(), predicted.len()));
    }
    if observed.len() < 2 {
        return Err(LinregError::TooFew {
            needed: 2,
            got: observed.len(),
        });
    }
    if observed.iter().all(|&v| v == observed[0]) {
        return Err(LinregError::ZeroVariance);
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// observed - predicted, per row.
    pub residuals: Vec<f64>,
    pub rmse: f64,
}

pub fn residual_report(model: &PolyModel, x: &[f64], y: &[f64]) -> Result<ResidualReport> {
    if x.len() != y.len() {
        return Err(LinregError::LengthMismatch(x.len(), y.len()));
    }
    let residuals: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| yi - model.predict_one(xi))
        .collect();
    let rmse = if residuals.is_empty() {
        0.0
    } else {
        (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
    };
    Ok(ResidualReport { residuals, rmse })
}

/// Heteroskedasticity diagnostic: standard deviation of the residuals in the
/// top quartile of fitted values divided by that of the bottom quartile.
///
/// `None` with fewer than 8 rows or a zero-spread bottom quartile.
pub fn spread_ratio(fitted: &[f64], residuals: &[f64]) -> Option<f64> {
    let n = fitted.len().min(residuals.len());
    let q = n / 4;
    if q < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitted[a].total_cmp(&fitted[b]).then(a.cmp(&b)));
    let std = |idx: &[usize]| {
        let m = idx.iter().map(|&i| residuals[i]).sum::<f64>() / idx.len() as f64;
        (idx.iter().map(|&i| (residuals[i] - m).powi(2)).sum::<f64>() / idx.len() as f64).sqrt()
    };
    let low = std(&order[..q]);
    let high = std(&order[n - q..]);
    (low > 0.0).then(|| high / low)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Uniform};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0, 7.5];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let m = fit_poly(&x, &y, 1).unwrap();
        assert!(close(&m.coefficients, &[1.0, 2.0], 1e-9), "{:?}", m.coefficients);
        assert!((m.train_r2.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exact_parabola() {
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let m = fit_poly(&x, &y, 2).unwrap();
        assert!(close(&m.coefficients, &[0.0, 0.0, 1.0], 1e-9), "{:?}", m.coefficients);
    }

    #[test]
    fn quartic_interpolates_five_points() {
        let x = [0.5, 1.7, 3.0, 4.2, 9.0];
        let y = [3.0, -1.0, 4.0, 1.0, -5.0];
        let m = fit_poly(&x, &y, 4).unwrap();
        let rep = residual_report(&m, &x, &y).unwrap();
        assert!(rep.residuals.iter().all(|r| r.abs() < 1e-8), "{:?}", rep.residuals);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(fit_poly(&[1.0, 2.0], &[1.0, 2.0], 0), Err(LinregError::Degree(0)));
        assert_eq!(fit_poly(&[1.0, 2.0], &[1.0, 2.0], 5), Err(LinregError::Degree(5)));
        assert!(matches!(
            fit_poly(&[1.0, 1.0, 2.0, 2.0], &[1.0, 2.0, 3.0, 4.0], 2),
            Err(LinregError::RankDeficient { got: 2, .. })
        ));
        assert!(matches!(fit_poly(&[1.0, 2.0], &[1.0, 2.0], 2), Err(LinregError::TooFew { .. })));
        assert!(matches!(fit_poly(&[1.0, f64::NAN], &[1.0, 2.0], 1), Err(LinregError::NonFinite)));
    }

    #[test]
    fn predict_examples() {
        let m = |c: Vec<f64>| PolyModel {
            degree: c.len() - 1,
            coefficients: c,
            feature_name: "x".into(),
            target_name: "y".into(),
            train_r2: None,
        };
        assert_eq!(predict(&m(vec![1.0, 2.0]), &[0.0]), vec![1.0]);
        assert_eq!(predict(&m(vec![0.0, 0.0, 1.0]), &[3.0]), vec![9.0]);
        let c = vec![3.25, -1.5, 0.125, 2.0e-3, 7.5e-5];
        let x: f64 = 1.0e4;
        let direct: f64 = c.iter().enumerate().map(|(i, ci)| ci * x.powi(i as i32)).sum();
        let got = m(c).predict_one(x);
        assert!(got.is_finite());
        assert!(((got - direct) / direct).abs() < 1e-12, "{got} vs {direct}");
    }

    #[test]
    fn r2_examples() {
        let o = [1.0, 2.0, 4.0];
        assert_eq!(r2_score(&o, &o).unwrap(), 1.0);
        let mean = 7.0 / 3.0;
        assert!(r2_score(&o, &[mean; 3]).unwrap().abs() < 1e-15);
        assert!(r2_score(&[0.0, 1.0], &[10.0, 10.0]).unwrap() < 0.0);
        assert_eq!(r2_score(&[1.0, 1.0], &[1.0, 1.0]), Err(LinregError::ZeroVariance));
    }

    #[test]
    fn residual_examples() {
        let x = [0.0, 1.0, 2.0];
        let y = [1.0, 3.0, 5.0];
        let m = fit_poly(&x, &y, 1).unwrap();
        let rep = residual_report(&m, &x, &y).unwrap();
        assert!(rep.rmse < 1e-12);
        let shifted: Vec<f64> = y.iter().map(|v| v - 2.0).collect();
        let perfect = PolyModel { coefficients: vec![1.0, 2.0], ..m };
        let rep = residual_report(&perfect, &x, &shifted).unwrap();
        assert_eq!(rep.residuals, vec![-2.0; 3]);
        assert_eq!(rep.rmse, 2.0);
    }

    #[test]
    fn noisy_line_rmse_matches_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2022);
        let ux = Uniform::new(0.0, 100.0).unwrap();
        let noise = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..10_000).map(|_| ux.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v - 4.0 + noise.sample(&mut rng)).collect();
        let m = fit_poly(&x, &y, 1).unwrap();
        let rep = residual_report(&m, &x, &y).unwrap();
        assert!((0.95..=1.05).contains(&rep.rmse), "{}", rep.rmse);
    }

    #[test]
    fn spread_ratio_detects_fanning() {
        let fitted: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let resid: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + i as f64 / 10.0))
            .collect();
        let r = spread_ratio(&fitted, &resid).unwrap();
        assert!(r > 3.0, "{r}");
        assert_eq!(spread_ratio(&fitted[..5], &resid[..5]), None);
    }

    fn sample(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(-3.0, 5.0).unwrap();
        let noise = Normal::new(0.0, 2.0).unwrap();
        let x: Vec<f64> = (0..n).map(|_| u.sample(&mut rng)).collect();
        let y = x
            .iter()
            .map(|v| 1.0 + v - 0.5 * v * v + 0.1 * v.powi(3) + noise.sample(&mut rng))
            .collect();
        (x, y)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn residuals_orthogonal_to_basis(seed in 0u64..10_000, n in 10usize..200, degree in 1usize..=4) {
            let (x, y) = sample(seed, n);
            let m = fit_poly(&x, &y, degree).unwrap();
            let rep = residual_report(&m, &x, &y).unwrap();
            // scaled basis, so the tolerance is not dominated by x^4 magnitudes
            let s = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for p in 0..=degree {
                let dot: f64 = rep.residuals.iter().zip(&x).map(|(r, xi)| r * (xi / s).powi(p as i32)).sum();
                prop_assert!(dot.abs() < 1e-6 * n as f64, "p={} dot={}", p, dot);
            }
        }

        #[test]
        fn higher_degree_never_fits_worse(seed in 0u64..10_000, n in 10usize..200) {
            let (x, y) = sample(seed, n);
            let r2: Vec<f64> = (1..=4).map(|d| fit_poly(&x, &y, d).unwrap().train_r2.unwrap()).collect();
            for w in r2.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12, "{:?}", r2);
            }
        }

        #[test]
        fn train_r2_matches_rescoring(seed in 0u64..10_000, n in 10usize..200, degree in 1usize..=4) {
            let (x, y) = sample(seed, n);
            let m = fit_poly(&x, &y, degree).unwrap();
            prop_assert_eq!(m.train_r2.unwrap(), r2_score(&y, &predict(&m, &x)).unwrap());
        }

        #[test]
        fn affine_target_transform(seed in 0u64..10_000, degree in 1usize..=4, a in prop_oneof![-5.0f64..-0.2, 0.2f64..5.0], b in -20.0f64..20.0) {
            let (x, y) = sample(seed, 60);
            let m = fit_poly(&x, &y, degree).unwrap();
            let ty: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let mt = fit_poly(&x, &ty, degree).unwrap();
            for (p, pt) in predict(&m, &x).iter().zip(predict(&mt, &x)) {
                prop_assert!((a * p + b - pt).abs() < 1e-9);
            }
            prop_assert!((m.train_r2.unwrap() - mt.train_r2.unwrap()).abs() < 1e-12);
        }
    }
}
