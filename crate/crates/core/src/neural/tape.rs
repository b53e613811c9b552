//! Reverse-mode differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! owned by the caller and copied onto the tape with [`Tape::param`];
//! [`Tape::backward`] returns their gradients keyed by parameter index.

use ndarray::{concatenate, Array1, Array2, Axis};

use crate::adjacency::SparseMatrix;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<'a> {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    /// `x + b` with `b` a single row broadcast over the rows of `x`.
    AddRow(Var, Var),
    Add(Var, Var),
    /// `s · x` with `s` of shape 1×1.
    Scale(Var, Var),
    Relu(Var),
    Concat(Vec<Var>),
    Mse(Var, Var),
    SpMatMul(&'a SparseMatrix, Var),
    GatherRows(Var, Vec<usize>),
    BatchNormTrain {
        x: Var,
        gamma: Var,
        shift: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        shift: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    MulConst(Var, Array2<f64>),
}

#[derive(Debug)]
struct Node<'a> {
    value: Array2<f64>,
    op: Op<'a>,
}

/// Batch statistics produced by a training-mode batch norm, for the caller
/// to fold into its running averages.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Unbiased variance.
    pub var: Array1<f64>,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn shape(a: &Array2<f64>) -> [usize; 2] {
    [a.nrows(), a.ncols()]
}

fn finite(op: &'static str, v: &Array2<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &'static str, value: Array2<f64>, op: Op<'a>) -> Result<Var> {
        finite(name, &value)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    /// Records parameter `index` with its current value.
    pub fn param(&mut self, index: usize, value: &Array2<f64>) -> Result<Var> {
        self.push("param", value.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(Error::Shape {
                op: "matmul",
                lhs: shape(x),
                rhs: shape(y),
            });
        }
        let v = x.dot(y);
        self.push("matmul", v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.nrows() != 1 || bv.ncols() != xv.ncols() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: shape(xv),
                rhs: shape(bv),
            });
        }
        let v = xv + bv;
        self.push("add_row", v, Op::AddRow(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dim() != y.dim() {
            return Err(Error::Shape {
                op: "add",
                lhs: shape(x),
                rhs: shape(y),
            });
        }
        let v = x + y;
        self.push("add", v, Op::Add(a, b))
    }

    pub fn scale(&mut self, s: Var, x: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.dim() != (1, 1) {
            return Err(Error::Shape {
                op: "scale",
                lhs: shape(sv),
                rhs: shape(self.value(x)),
            });
        }
        let v = self.value(x) * sv[[0, 0]];
        self.push("scale", v, Op::Scale(s, x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).mapv(|z| if z > 0.0 { z } else { 0.0 });
        self.push("relu", v, Op::Relu(x))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        for &p in &parts[1..] {
            if self.value(p).nrows() != first.nrows() {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: shape(first),
                    rhs: shape(self.value(p)),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts checked");
        self.push("concat", v, Op::Concat(parts.to_vec()))
    }

    /// Mean of squared differences over all entries, as a 1×1 value.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.dim() != t.dim() || p.is_empty() {
            return Err(Error::Shape {
                op: "mse",
                lhs: shape(p),
                rhs: shape(t),
            });
        }
        let m = (p - t).mapv(|d| d * d).mean().expect("non-empty");
        self.push("mse", Array2::from_elem((1, 1), m), Op::Mse(pred, target))
    }

    /// `A · x` with a constant sparse `A`.
    pub fn sp_matmul(&mut self, a: &'a SparseMatrix, x: Var) -> Result<Var> {
        let v = a.matmul_dense(self.value(x))?;
        self.push("sp_matmul", v, Op::SpMatMul(a, x))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= xv.nrows()) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: shape(xv),
                rhs: [bad, 0],
            });
        }
        let v = xv.select(Axis(0), rows);
        self.push("gather_rows", v, Op::GatherRows(x, rows.to_vec()))
    }

    fn check_bn(&self, x: Var, gamma: Var, shift: Var) -> Result<()> {
        let d = self.value(x).ncols();
        for p in [gamma, shift] {
            if self.value(p).dim() != (1, d) {
                return Err(Error::Shape {
                    op: "batch_norm",
                    lhs: shape(self.value(x)),
                    rhs: shape(self.value(p)),
                });
            }
        }
        Ok(())
    }

    /// Normalizes by batch moments; also returns them for running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, shift: Var) -> Result<(Var, BatchStats)> {
        self.check_bn(x, gamma, shift)?;
        let xv = self.value(x);
        let b = xv.nrows();
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let mean = xv.mean_axis(Axis(0)).expect("non-empty");
        let centered = xv - &mean;
        let var = centered.mapv(|c| c * c).mean_axis(Axis(0)).expect("non-empty");
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = &centered * &inv_std;
        let out = &xhat * self.value(gamma) + self.value(shift);
        let stats = BatchStats {
            mean,
            var: var * (b as f64 / (b as f64 - 1.0)),
        };
        let v = self.push(
            "batch_norm",
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                shift,
                xhat,
                inv_std,
            },
        )?;
        Ok((v, stats))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        shift: Var,
        running_mean: &Array1<f64>,
        running_var: &Array1<f64>,
    ) -> Result<Var> {
        self.check_bn(x, gamma, shift)?;
        let inv_std = running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = (self.value(x) - running_mean) * &inv_std;
        let out = &xhat * self.value(gamma) + self.value(shift);
        self.push(
            "batch_norm",
            out,
            Op::BatchNormEval {
                x,
                gamma,
                shift,
                xhat,
                inv_std,
            },
        )
    }

    /// Elementwise product with a constant, e.g. a dropout mask.
    pub fn mul_const(&mut self, x: Var, c: Array2<f64>) -> Result<Var> {
        if self.value(x).dim() != c.dim() {
            return Err(Error::Shape {
                op: "mul_const",
                lhs: shape(self.value(x)),
                rhs: shape(&c),
            });
        }
        let v = self.value(x) * &c;
        self.push("mul_const", v, Op::MulConst(x, c))
    }

    /// Gradients of the 1×1 `loss` with respect to every recorded parameter.
    /// The result has `n_params` slots; parameters absent from the tape get
    /// zero gradients of shape 0×0.
    pub fn backward(&self, loss: Var, n_params: usize) -> Result<Vec<Array2<f64>>> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                lhs: shape(self.value(loss)),
                rhs: [1, 1],
            });
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); n_params];

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            finite("gradient", &g)?;
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Param(p) => {
                    if out[*p].is_empty() {
                        out[*p] = g;
                    } else {
                        out[*p] += &g;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *b, gb);
                    acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Scale(s, x) => {
                    let gs = (&g * self.value(*x)).sum();
                    let gx = &g * self.value(*s)[[0, 0]];
                    acc(&mut grads, *s, Array2::from_elem((1, 1), gs));
                    acc(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let mask = self.value(*x).mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *x, g * mask);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(ndarray::s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::Mse(pred, target) => {
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let d = (p - t) * (2.0 * g[[0, 0]] / p.len() as f64);
                    acc(&mut grads, *target, -&d);
                    acc(&mut grads, *pred, d);
                }
                Op::SpMatMul(a, x) => {
                    acc(&mut grads, *x, a.transpose_matmul_dense(&g)?);
                }
                Op::GatherRows(x, rows) => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut row = gx.row_mut(src);
                        row += &g.row(r);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::BatchNormTrain {
                    x,
                    gamma,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    let b = xhat.nrows() as f64;
                    acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *shift, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let gxhat = &g * self.value(*gamma);
                    let sum_g = gxhat.sum_axis(Axis(0));
                    let sum_gx = (&gxhat * xhat).sum_axis(Axis(0));
                    let gx = (gxhat * b - &sum_g - xhat * &sum_gx) * &(inv_std / b);
                    acc(&mut grads, *x, gx);
                }
                Op::BatchNormEval {
                    x,
                    gamma,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *shift, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let gx = &g * self.value(*gamma) * inv_std;
                    acc(&mut grads, *x, gx);
                }
                Op::MulConst(x, c) => {
                    acc(&mut grads, *x, g * c);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{check_gradients, GRADCHECK_H};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::collections::BTreeMap;

    fn random(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        let n = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_fn(shape, |_| n.sample(rng))
    }

    #[test]
    fn relu_definition_and_subgradient() {
        let mut t = Tape::new();
        let x = t.param(0, &array![[-1.0, 0.0, 2.0]]).unwrap();
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y), &array![[0.0, 0.0, 2.0]]);
        // d/dx Σ relu(x) via mse against relu(x) - 1/2: 2 (r - t) / 3 = 1/3
        let target = t.constant(t.value(y) - 0.5).unwrap();
        let loss = t.mse(y, target).unwrap();
        let g = t.backward(loss, 1).unwrap();
        assert_eq!(g[0], array![[0.0, 0.0, 1.0 / 3.0]]);
    }

    #[test]
    fn mse_identity_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.param(0, &array![[1.0, 2.0]]).unwrap();
        let b = t.constant(array![[1.0, 2.0]]).unwrap();
        let l = t.mse(a, b).unwrap();
        assert_eq!(t.value(l)[[0, 0]], 0.0);
        assert_eq!(t.backward(l, 1).unwrap()[0], array![[0.0, 0.0]]);
    }

    #[test]
    fn shape_errors_name_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Array2::zeros((2, 3))).unwrap();
        let b = t.constant(Array2::zeros((2, 3))).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"), "{err}");
        let s = t.constant(Array2::zeros((1, 2))).unwrap();
        assert!(t.scale(s, a).is_err());
        assert!(t.constant(array![[f64::NAN]]).is_err());
    }

    #[test]
    fn zero_variance_column_normalizes_to_zero() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]).unwrap();
        let g = t.constant(array![[1.0, 1.0]]).unwrap();
        let s = t.constant(array![[0.0, 0.0]]).unwrap();
        let (y, _) = t.batch_norm_train(x, g, s).unwrap();
        assert!(t.value(y).column(1).iter().all(|&v| v == 0.0));
        let one = t.constant(array![[1.0, 5.0]]).unwrap();
        assert!(matches!(t.batch_norm_train(one, g, s), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn batch_norm_standardizes_large_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw = random((5000, 3), &mut rng) * 4.0 + 7.0;
        let mut t = Tape::new();
        let x = t.constant(raw).unwrap();
        let g = t.constant(array![[1.0, 1.0, 1.0]]).unwrap();
        let s = t.constant(array![[0.0, 0.0, 0.0]]).unwrap();
        let (y, _) = t.batch_norm_train(x, g, s).unwrap();
        for col in t.value(y).columns() {
            let m = col.mean().unwrap();
            let v = col.mapv(|c| (c - m) * (c - m)).mean().unwrap();
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-6, "var {v}");
        }
    }

    /// Each op on three random shapes against central differences.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shapes = [(2, 3), (4, 2), (5, 4)];
        let mut adj_entries = BTreeMap::new();
        for &(r, c, v) in &[(0, 1, 0.5), (1, 0, 0.5), (1, 2, 0.3), (2, 2, 1.0), (3, 0, 0.2), (4, 4, 0.7)] {
            adj_entries.insert((r, c), v);
        }
        // leaked so the boxed cases can borrow it for any tape lifetime
        let adj: &'static SparseMatrix = Box::leak(Box::new(SparseMatrix::from_triplets(5, 5, &adj_entries)));
        for &(r, c) in &shapes {
            let target = random((r, c), &mut rng);
            let mask = Array2::from_shape_fn((r, c), |(i, j)| if (i + j) % 3 == 0 { 0.0 } else { 2.0 });
            let tgt = |t: &mut Tape, v: Var, target: &Array2<f64>| {
                let tv = t.constant(target.clone())?;
                t.mse(v, tv)
            };
            type Case<'c> = (&'static str, Vec<Array2<f64>>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'c>);
            let cases: Vec<Case> = vec![
                (
                    "matmul",
                    vec![random((r, 3), &mut rng), random((3, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let y = t.matmul(v[0], v[1])?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "add_row",
                    vec![random((r, c), &mut rng), random((1, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let y = t.add_row(v[0], v[1])?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "add",
                    vec![random((r, c), &mut rng), random((r, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let y = t.add(v[0], v[1])?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "scale",
                    vec![random((1, 1), &mut rng), random((r, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let y = t.scale(v[0], v[1])?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "relu",
                    vec![random((r, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let y = t.relu(v[0])?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "concat",
                    vec![random((r, 1), &mut rng), random((r, c - 1), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let y = t.concat(&[v[0], v[1]])?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "mse",
                    vec![random((r, c), &mut rng), random((r, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| t.mse(v[0], v[1])),
                ),
                (
                    "sp_matmul",
                    vec![random((5, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let y = t.sp_matmul(adj, v[0])?;
                        let y = t.gather_rows(y, &(0..r).collect::<Vec<_>>())?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "gather_rows",
                    vec![random((3, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let rows: Vec<usize> = (0..r).map(|k| (k * 2) % 3).collect();
                        let y = t.gather_rows(v[0], &rows)?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "batch_norm_train",
                    vec![random((r, c), &mut rng), random((1, c), &mut rng), random((1, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let (y, _) = t.batch_norm_train(v[0], v[1], v[2])?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "batch_norm_eval",
                    vec![random((r, c), &mut rng), random((1, c), &mut rng), random((1, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let rm = Array1::from_elem(c, 0.3);
                        let rv = Array1::from_elem(c, 1.7);
                        let y = t.batch_norm_eval(v[0], v[1], v[2], &rm, &rv)?;
                        tgt(t, y, &target)
                    }),
                ),
                (
                    "mul_const",
                    vec![random((r, c), &mut rng)],
                    Box::new(|t: &mut Tape, v: &[Var]| {
                        let y = t.mul_const(v[0], mask.clone())?;
                        tgt(t, y, &target)
                    }),
                ),
            ];
            for (name, inputs, f) in cases {
                let err = check_gradients(&inputs, |t, v| f(t, v), GRADCHECK_H).unwrap();
                assert!(err < 1e-5, "{name} on {r}x{c}: {err:e}");
            }
        }
    }
}
