//! Furness balancing for doubly constrained interaction models.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IPF_TOLERANCE: f64 = 1e-8;
pub const IPF_MAX_SWEEPS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Balancing {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sweeps: usize,
    /// Factor applied to `D` so that its total matches `O` (1 if none).
    pub d_rescale: f64,
}

/// Finds `A`, `B` with `T_ij = A_i O_i B_j D_j K_ij` matching the margins.
/// Nodes with a zero margin are left out and get a zero factor.
pub fn ipf_balance(o: &[f64], d: &[f64], k: &Array2<f64>) -> Result<Balancing> {
    let n = o.len();
    if d.len() != n {
        return Err(Error::Length(n, d.len()));
    }
    if k.dim() != (n, n) {
        return Err(Error::Shape {
            op: "ipf_balance",
            lhs: [n, n],
            rhs: [k.nrows(), k.ncols()],
        });
    }
    if o.iter().chain(d).any(|v| !(*v >= 0.0) || !v.is_finite()) || k.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Degenerate("margins and kernel must be finite and non-negative".into()));
    }
    let (so, sd) = (o.iter().sum::<f64>(), d.iter().sum::<f64>());
    if so == 0.0 || sd == 0.0 {
        return Err(Error::Degenerate("margins sum to zero".into()));
    }
    let d_rescale = if ((so - sd) / so).abs() > 1e-12 { so / sd } else { 1.0 };
    let d: Vec<f64> = d.iter().map(|v| v * d_rescale).collect();

    let rows: Vec<usize> = (0..n).filter(|&i| o[i] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&j| d[j] > 0.0).collect();
    for &i in &rows {
        if cols.iter().all(|&j| k[[i, j]] == 0.0) {
            return Err(Error::Degenerate(format!("kernel row {i} is zero on every destination")));
        }
    }
    for &j in &cols {
        if rows.iter().all(|&i| k[[i, j]] == 0.0) {
            return Err(Error::Degenerate(format!("kernel column {j} is zero on every origin")));
        }
    }

    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for &j in &cols {
        b[j] = 1.0;
    }
    let mut change = f64::INFINITY;
    for sweep in 1..=IPF_MAX_SWEEPS {
        change = 0.0;
        for &i in &rows {
            let s: f64 = cols.iter().map(|&j| b[j] * d[j] * k[[i, j]]).sum();
            let new = 1.0 / s;
            if sweep > 1 {
                change = f64::max(change, ((new - a[i]) / a[i]).abs());
            }
            a[i] = new;
        }
        for &j in &cols {
            let s: f64 = rows.iter().map(|&i| a[i] * o[i] * k[[i, j]]).sum();
            let new = 1.0 / s;
            change = f64::max(change, ((new - b[j]) / b[j]).abs());
            b[j] = new;
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::IpfDiverged {
                sweeps: sweep,
                residual: f64::INFINITY,
            });
        }
        if sweep > 1 && change < IPF_TOLERANCE {
            return Ok(Balancing {
                a,
                b,
                sweeps: sweep,
                d_rescale,
            });
        }
    }
    Err(Error::IpfDiverged {
        sweeps: IPF_MAX_SWEEPS,
        residual: change,
    })
}

/// `T_ij = A_i O_i B_j D_j K_ij`, with `D` rescaled as during balancing.
pub fn balanced_matrix(o: &[f64], d: &[f64], k: &Array2<f64>, bal: &Balancing) -> Array2<f64> {
    let n = o.len();
    Array2::from_shape_fn((n, n), |(i, j)| bal.a[i] * o[i] * bal.b[j] * d[j] * bal.d_rescale * k[[i, j]])
}
