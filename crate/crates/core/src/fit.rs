//! Small Levenberg-Marquardt fitter for the two-parameter power laws used
//! in the scaling studies: P_e^max(N) = 1 - a N^-b and Omega(N) = a N^b.
//!
//! Confidence intervals come from the linearized covariance
//! s^2 (J^T J)^{-1} with the usual t ~ 1.96 large-sample factor.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A fitted model y = f(x; a, b) with gradient df/d(a,b).
pub trait Model2 {
    fn eval(&self, x: f64, a: f64, b: f64) -> f64;
    fn grad(&self, x: f64, a: f64, b: f64) -> (f64, f64);
}

/// y = 1 - a x^-b
pub struct SaturationPowerLaw;

impl Model2 for SaturationPowerLaw {
    fn eval(&self, x: f64, a: f64, b: f64) -> f64 {
        1.0 - a * x.powf(-b)
    }
    fn grad(&self, x: f64, a: f64, b: f64) -> (f64, f64) {
        let p = x.powf(-b);
        (-p, a * p * x.ln())
    }
}

/// y = a x^b
pub struct PowerLaw;

impl Model2 for PowerLaw {
    fn eval(&self, x: f64, a: f64, b: f64) -> f64 {
        a * x.powf(b)
    }
    fn grad(&self, x: f64, a: f64, b: f64) -> (f64, f64) {
        let p = x.powf(b);
        (p, a * p * x.ln())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    /// Half-widths of the 95% confidence intervals.
    pub a_ci95: f64,
    pub b_ci95: f64,
    pub r_squared: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

fn chi_sqr<M: Model2>(model: &M, xs: &[f64], ys: &[f64], a: f64, b: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - model.eval(x, a, b);
            r * r
        })
        .sum()
}

/// Levenberg-Marquardt on the 2-parameter model.  The normal equations are
/// 2x2, so everything is solved in closed form.
pub fn fit_model2<M: Model2>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    a0: f64,
    b0: f64,
) -> Result<FitResult, Error> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::DimensionMismatch {
            left: n,
            right: ys.len(),
        });
    }
    if n < 3 {
        return Err(Error::InvalidConfig(
            "need at least 3 points for a 2-parameter fit".into(),
        ));
    }
    let (mut a, mut b) = (a0, b0);
    let mut lambda = 1e-3;
    let mut chi = chi_sqr(model, xs, ys, a, b);
    let mut iterations = 0;
    for _ in 0..200 {
        iterations += 1;
        // J^T J and J^T r for the current point
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let r = y - model.eval(x, a, b);
            let (da, db) = model.grad(x, a, b);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let maa = jaa * (1.0 + lambda);
            let mbb = jbb * (1.0 + lambda);
            let det = maa * mbb - jab * jab;
            if det.abs() < 1e-300 {
                return Err(Error::InvalidConfig("singular normal equations".into()));
            }
            let da = (mbb * ga - jab * gb) / det;
            let db = (maa * gb - jab * ga) / det;
            let trial = chi_sqr(model, xs, ys, a + da, b + db);
            if trial.is_finite() && trial <= chi {
                let converged = (chi - trial) < 1e-14 * (chi + 1e-30)
                    || (da.abs() < 1e-12 * (a.abs() + 1e-12)
                        && db.abs() < 1e-12 * (b.abs() + 1e-12));
                a += da;
                b += db;
                chi = trial;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if converged {
                    return finish(model, xs, ys, a, b, chi, iterations);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    finish(model, xs, ys, a, b, chi, iterations)
}

fn finish<M: Model2>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    a: f64,
    b: f64,
    chi: f64,
    iterations: usize,
) -> Result<FitResult, Error> {
    let n = xs.len() as f64;
    let (mut jaa, mut jab, mut jbb) = (0.0, 0.0, 0.0);
    for &x in xs {
        let (da, db) = model.grad(x, a, b);
        jaa += da * da;
        jab += da * db;
        jbb += db * db;
    }
    let det = jaa * jbb - jab * jab;
    if det.abs() < 1e-300 {
        return Err(Error::InvalidConfig("singular covariance".into()));
    }
    let dof = (n - 2.0).max(1.0);
    let s2 = chi / dof;
    let var_a = s2 * jbb / det;
    let var_b = s2 * jaa / det;
    let mean = ys.iter().sum::<f64>() / n;
    let ss_tot: f64 = ys.iter().map(|&y| (y - mean) * (y - mean)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - chi / ss_tot } else { 1.0 };
    Ok(FitResult {
        a,
        b,
        a_ci95: 1.96 * var_a.max(0.0).sqrt(),
        b_ci95: 1.96 * var_b.max(0.0).sqrt(),
        r_squared,
        residual_norm: chi.sqrt(),
        iterations,
    })
}
