//! Log-link count regressions fitted by iteratively reweighted least squares.
//!
//! Design matrices are passed without the intercept column; coefficient
//! vectors carry the intercept first.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_IRLS_ITER: usize = 100;
pub const IRLS_TOL: f64 = 1e-8;
pub const MAX_OUTER_ITER: usize = 50;
pub const OUTER_TOL: f64 = 1e-6;
pub const DISPERSION_CAP: f64 = 1e6;
pub const SEPARATION_NORM: f64 = 1e3;
pub const ETA_CLAMP: f64 = 700.0;
const RIDGE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlmFamily {
    Poisson,
    Negbin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmParams {
    pub coefficients: Vec<f64>,
    pub family: GlmFamily,
    /// NB2 `θ` in `Var = μ + μ²/θ`.
    pub dispersion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub params: GlmParams,
    /// Deviance after each accepted IRLS step of the final inner solve.
    pub deviance_history: Vec<f64>,
    pub iterations: usize,
    /// A ridge jitter was added to a singular weighted normal matrix.
    pub jittered: bool,
    /// No over-dispersion found; `θ` sits at the cap.
    pub dispersion_capped: bool,
    pub outer_iterations: usize,
}

fn validate(x: &Array2<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Length(x.nrows(), y.len()));
    }
    if y.is_empty() {
        return Err(Error::Degenerate("empty response".into()));
    }
    if y.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("response must be finite and non-negative, covariates finite".into()));
    }
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("response is identically zero".into()));
    }
    Ok(())
}

fn with_intercept(x: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::ones((x.nrows(), x.ncols() + 1));
    out.slice_mut(ndarray::s![.., 1..]).assign(x);
    out
}

fn means(xd: &Array2<f64>, coef: &Array1<f64>) -> Array1<f64> {
    xd.dot(coef).mapv(|eta| eta.min(ETA_CLAMP).exp())
}

/// NB2 deviance; `theta = None` gives the Poisson deviance.
fn deviance(y: &[f64], mu: &Array1<f64>, theta: Option<f64>) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| {
            let m = m.max(1e-300);
            let ylog = if y > 0.0 { y * (y / m).ln() } else { 0.0 };
            match theta {
                None => ylog - (y - m),
                Some(t) => ylog - (y + t) * ((y + t) / (m + t)).ln(),
            }
        })
        .sum::<f64>()
}

/// Solves `XᵀWX β = XᵀW z`; returns the solution and whether a jitter was
/// needed.
fn weighted_solve(xd: &Array2<f64>, w: &Array1<f64>, z: &Array1<f64>) -> Result<(Array1<f64>, bool)> {
    let xw = xd * &w.view().insert_axis(Axis(1));
    let xtwx = xd.t().dot(&xw);
    let rhs = xw.t().dot(z);
    let p = xtwx.nrows();
    let a = DMatrix::from_fn(p, p, |r, c| xtwx[[r, c]]);
    let b = DVector::from_iterator(p, rhs.iter().copied());
    if let Some(ch) = a.clone().cholesky() {
        let s = ch.solve(&b);
        if s.iter().all(|v| v.is_finite()) {
            return Ok((s.iter().copied().collect(), false));
        }
    }
    let jittered = a + DMatrix::identity(p, p) * RIDGE_JITTER;
    let ch = jittered
        .cholesky()
        .ok_or_else(|| Error::Degenerate("weighted normal matrix is singular even with jitter".into()))?;
    Ok((ch.solve(&b).iter().copied().collect(), true))
}

struct Irls {
    coef: Array1<f64>,
    history: Vec<f64>,
    iterations: usize,
    jittered: bool,
}

fn irls(xd: &Array2<f64>, y: &[f64], theta: Option<f64>, start: Option<&Array1<f64>>) -> Result<Irls> {
    let yv = Array1::from(y.to_vec());
    let step = |mu: &Array1<f64>, eta: &Array1<f64>| -> Result<(Array1<f64>, bool)> {
        let w = match theta {
            None => mu.clone(),
            Some(t) => mu.mapv(|m| m / (1.0 + m / t)),
        };
        let z = eta + &((&yv - mu) / mu);
        weighted_solve(xd, &w, &z)
    };

    let mut jittered = false;
    let mut coef = match start {
        Some(c) => c.clone(),
        None => {
            let mu0 = yv.mapv(|v| v + 0.1);
            let eta0 = mu0.mapv(f64::ln);
            let (c, j) = step(&mu0, &eta0)?;
            jittered |= j;
            c
        }
    };
    let mut dev = deviance(y, &means(xd, &coef), theta);
    let mut history = vec![dev];
    let mut iterations = 0;
    for _ in 0..MAX_IRLS_ITER {
        iterations += 1;
        let eta = xd.dot(&coef).mapv(|e| e.min(ETA_CLAMP));
        let mu = eta.mapv(f64::exp);
        let (proposal, j) = step(&mu, &eta)?;
        jittered |= j;
        let mut cand = proposal;
        let mut cand_dev = deviance(y, &means(xd, &cand), theta);
        let mut halvings = 0;
        while !(cand_dev <= dev) && halvings < 30 {
            cand = (&cand + &coef) * 0.5;
            cand_dev = deviance(y, &means(xd, &cand), theta);
            halvings += 1;
        }
        if !(cand_dev <= dev) {
            break;
        }
        let norm = cand.dot(&cand).sqrt();
        if !(norm <= SEPARATION_NORM) {
            return Err(Error::Separation { norm });
        }
        let change = dev - cand_dev;
        coef = cand;
        dev = cand_dev;
        history.push(dev);
        if change < IRLS_TOL * (dev.abs() + 0.1) {
            break;
        }
    }
    let norm = coef.dot(&coef).sqrt();
    if !(norm <= SEPARATION_NORM) {
        return Err(Error::Separation { norm });
    }
    Ok(Irls {
        coef,
        history,
        iterations,
        jittered,
    })
}

pub fn fit_poisson(x: &Array2<f64>, y: &[f64]) -> Result<GlmFit> {
    validate(x, y)?;
    let xd = with_intercept(x);
    let fit = irls(&xd, y, None, None)?;
    if fit.jittered {
        log::warn!("Poisson IRLS needed a ridge jitter; covariates are nearly collinear");
    }
    Ok(GlmFit {
        params: GlmParams {
            coefficients: fit.coef.to_vec(),
            family: GlmFamily::Poisson,
            dispersion: None,
        },
        deviance_history: fit.history,
        iterations: fit.iterations,
        jittered: fit.jittered,
        dispersion_capped: false,
        outer_iterations: 0,
    })
}

fn pearson(y: &[f64], mu: &Array1<f64>, theta: f64) -> f64 {
    y.iter().zip(mu).map(|(&y, &m)| (y - m).powi(2) / (m + m * m / theta)).sum()
}

/// Moment estimate of `θ`: the value at which the Pearson statistic equals
/// the residual degrees of freedom. `None` if no finite value below the cap
/// achieves it.
fn moment_theta(y: &[f64], mu: &Array1<f64>, dof: f64) -> Option<f64> {
    let f = |log_t: f64| pearson(y, mu, log_t.exp()) - dof;
    let (mut lo, mut hi) = (1e-8f64.ln(), DISPERSION_CAP.ln());
    if f(hi) <= 0.0 {
        return None;
    }
    if f(lo) >= 0.0 {
        return Some(lo.exp());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Some((0.5 * (lo + hi)).exp())
}

pub fn fit_negbin(x: &Array2<f64>, y: &[f64]) -> Result<GlmFit> {
    validate(x, y)?;
    let xd = with_intercept(x);
    let dof = (y.len() as f64 - xd.ncols() as f64).max(1.0);
    let poisson = irls(&xd, y, None, None)?;
    let capped = |outer: usize, jittered: bool| {
        log::warn!("no over-dispersion detected; dispersion capped at {DISPERSION_CAP}");
        GlmFit {
            params: GlmParams {
                coefficients: poisson.coef.to_vec(),
                family: GlmFamily::Negbin,
                dispersion: Some(DISPERSION_CAP),
            },
            deviance_history: poisson.history.clone(),
            iterations: poisson.iterations,
            jittered,
            dispersion_capped: true,
            outer_iterations: outer,
        }
    };

    let Some(mut theta) = moment_theta(y, &means(&xd, &poisson.coef), dof) else {
        return Ok(capped(0, poisson.jittered));
    };
    let mut coef = poisson.coef.clone();
    let mut jittered = poisson.jittered;
    let mut last = None;
    for outer in 1..=MAX_OUTER_ITER {
        let fit = irls(&xd, y, Some(theta), Some(&coef))?;
        jittered |= fit.jittered;
        let coef_change = (&fit.coef - &coef).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        coef = fit.coef.clone();
        let Some(new_theta) = moment_theta(y, &means(&xd, &coef), dof) else {
            return Ok(capped(outer, jittered));
        };
        let theta_change = (new_theta.ln() - theta.ln()).abs();
        theta = new_theta;
        last = Some((fit, outer));
        if coef_change < OUTER_TOL && theta_change < OUTER_TOL {
            break;
        }
    }
    let (fit, outer) = last.expect("at least one outer iteration");
    Ok(GlmFit {
        params: GlmParams {
            coefficients: coef.to_vec(),
            family: GlmFamily::Negbin,
            dispersion: Some(theta),
        },
        deviance_history: fit.history,
        iterations: fit.iterations,
        jittered,
        dispersion_capped: false,
        outer_iterations: outer,
    })
}

/// `exp(intercept + coef · x̄)`; the flag reports a clamped exponent.
pub fn predict_glm(params: &GlmParams, x: ArrayView1<'_, f64>) -> Result<(f64, bool)> {
    let c = &params.coefficients;
    if c.len() != x.len() + 1 {
        return Err(Error::Length(c.len(), x.len() + 1));
    }
    let eta = c[0] + c[1..].iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
    if !eta.is_finite() {
        return Err(Error::NonFinite("GLM linear predictor"));
    }
    Ok(if eta > ETA_CLAMP { (ETA_CLAMP.exp(), true) } else { (eta.exp(), false) })
}
