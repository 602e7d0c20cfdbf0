//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value. `backward`
//! replays the tape in reverse and accumulates vector-Jacobian products.
//! The op set is exactly what the encoder/decoder graphs and the objectives
//! in this crate need; it is not a general tensor library.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    WrapMod(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    BceLogits(Var, Var),
    MwsLogQ { z: Var, mu: Var, logvar: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Square(..) => "square",
            Op::Abs(..) => "abs",
            Op::Clamp(..) => "clamp",
            Op::WrapMod(..) => "wrap_mod",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::BceLogits(..) => "bce_logits",
            Op::MwsLogQ { .. } => "mws_log_q",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
}

/// Recording of one forward computation.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    poisoned: Option<(usize, &'static str)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: operand shapes differ ({:?} vs {:?})",
        a.shape(),
        b.shape()
    );
}

fn c<T: Real>(v: f64) -> T {
    T::from_f64c(v)
}

/// `1 − 2/(e^{2x} + 1)`; several times faster than libm `tanh` and exact
/// to a few ulps, saturating cleanly at ±1.
fn fast_tanh<T: Real>(x: T) -> T {
    let two = T::one() + T::one();
    T::one() - two / ((x + x).exp() + T::one())
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            poisoned: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let id = self.nodes.len();
        if self.poisoned.is_none() && !value.is_finite() {
            self.poisoned = Some((id, op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(id)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// Fails with the first node that produced a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        match self.poisoned {
            Some((node, op)) => Err(Error::Numeric { node, op }),
            None => Ok(()),
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: T) -> Var {
        self.push(Tensor::scalar(value), Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), false, self.value(b), false)?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x [r×c] + bias [1×c]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.len() != xv.cols() {
            return Err(Error::Dimension(format!(
                "bias width {} vs input width {}",
                bv.len(),
                xv.cols()
            )));
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(cols) {
            for (v, &b) in row.iter_mut().zip(bv.data()) {
                *v = *v + b;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "add");
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "sub");
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "mul");
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let kk: T = c(k);
        let out = self.value(a).map(|x| x * kk);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let kk: T = c(k);
        let out = self.value(a).map(|x| x + kk);
        self.push(out, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(fast_tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        self.push(out, Op::Exp(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.sin());
        self.push(out, Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.cos());
        self.push(out, Op::Cos(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.abs());
        self.push(out, Op::Abs(a))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h): (T, T) = (c(lo), c(hi));
        let out = self.value(a).map(|x| x.max(l).min(h));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// `x mod n` into `[0, n)`. The gradient is the identity: the reduction
    /// only subtracts integer multiples of `n`.
    pub fn wrap_mod(&mut self, a: Var, n: f64) -> Var {
        let nn: T = c(n);
        let out = self.value(a).map(|x| {
            let r = x - nn * (x / nn).floor();
            if r >= nn {
                r - nn
            } else {
                r
            }
        });
        self.push(out, Op::WrapMod(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / c(v.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// `[r×c] -> [r×1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let rows = v.rows();
        let data = (0..rows)
            .map(|r| v.row(r).iter().fold(T::zero(), |s, &x| s + x))
            .collect();
        let out = Tensor::new(vec![rows, 1], data).expect("row_sum shape");
        self.push(out, Op::RowSum(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Dimension("concat_cols row counts differ".into()));
        }
        let rows = av.rows();
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for r in 0..rows {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Tensor::new(vec![rows, av.cols() + bv.cols()], data)?;
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::Dimension(format!(
                "column slice {start}..{} beyond width {}",
                start + len,
                av.cols()
            )));
        }
        let rows = av.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Stacks matrices of equal width vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(Error::Dimension("concat_rows of nothing".into())),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::Dimension("concat_rows widths differ".into()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(Error::Dimension(format!(
                "row slice {start}..{} beyond {} rows",
                start + len,
                av.rows()
            )));
        }
        let cols = av.cols();
        let data = av.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new(vec![len, cols], data)?;
        Ok(self.push(out, Op::SliceRows(a, start)))
    }

    /// Bernoulli cross-entropy of `targets` under `sigmoid(logits)`, summed
    /// over columns and averaged over rows. Targets receive no gradient.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Var {
        let (lv, tv) = (self.value(logits), self.value(targets));
        same_shape(lv, tv, "bce_with_logits");
        let rows = lv.rows();
        let mut total = T::zero();
        for (&l, &t) in lv.data().iter().zip(tv.data()) {
            total = total + l.max(T::zero()) - l * t + (T::one() + (-l.abs()).exp()).ln();
        }
        let out = Tensor::scalar(total / c(rows as f64));
        self.push(out, Op::BceLogits(logits, targets))
    }

    /// Minibatch-weighted-sampling estimates used by the total-correlation
    /// objective. For a batch of samples `z` with posteriors `(mu, logvar)`,
    /// returns a `[B × (1+d)]` matrix: column 0 holds `log q(z_i)` and
    /// column `1+k` holds `log q(z_ik)`, both normalized by
    /// `log(dataset_size · B)`.
    pub fn mws_log_q(&mut self, z: Var, mu: Var, logvar: Var, dataset_size: usize) -> Var {
        let (zv, mv, lv) = (self.value(z), self.value(mu), self.value(logvar));
        same_shape(zv, mv, "mws_log_q");
        same_shape(zv, lv, "mws_log_q");
        let b = zv.rows();
        let d = zv.cols();
        let norm = ((dataset_size * b) as f64).ln();
        let dens = pair_log_density(zv, mv, lv);
        let mut out = vec![T::zero(); b * (1 + d)];
        let mut joint = vec![T::zero(); b];
        let mut marg = vec![T::zero(); b];
        for i in 0..b {
            for (j, slot) in joint.iter_mut().enumerate() {
                *slot = dens[(i * b + j) * d..(i * b + j + 1) * d]
                    .iter()
                    .fold(T::zero(), |s, &x| s + x);
            }
            out[i * (1 + d)] = log_sum_exp(&joint) - c(norm);
            for k in 0..d {
                for (j, slot) in marg.iter_mut().enumerate() {
                    *slot = dens[(i * b + j) * d + k];
                }
                out[i * (1 + d) + 1 + k] = log_sum_exp(&marg) - c(norm);
            }
        }
        let t = Tensor::new(vec![b, 1 + d], out).expect("mws shape");
        self.push(t, Op::MwsLogQ { z, mu, logvar })
    }

    /// Reverse pass from a scalar node. Returns one gradient slot per node.
    pub fn backward(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        self.check_finite()?;
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let y = &node.value;
        match node.op.clone() {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ga = matmul(g, false, self.value(b), true)?;
                let gb = matmul(self.value(a), true, g, false)?;
                acc(grads, a, ga);
                acc(grads, b, gb);
            }
            Op::AddBias(x, b) => {
                let cols = g.cols();
                let mut gb = vec![T::zero(); cols];
                for r in 0..g.rows() {
                    for (s, &v) in gb.iter_mut().zip(g.row(r)) {
                        *s = *s + v;
                    }
                }
                let shape = self.value(b).shape().to_vec();
                acc(grads, x, g.clone());
                acc(grads, b, Tensor::new(shape, gb)?);
            }
            Op::Add(a, b) => {
                acc(grads, a, g.clone());
                acc(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, a, g.clone());
                acc(grads, b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(grads, a, g.zip_map(self.value(b), |gv, bv| gv * bv));
                acc(grads, b, g.zip_map(self.value(a), |gv, av| gv * av));
            }
            Op::Scale(a, k) => {
                let kk: T = c(k);
                acc(grads, a, g.map(|v| v * kk));
            }
            Op::AddScalar(a) | Op::WrapMod(a) => acc(grads, a, g.clone()),
            Op::Tanh(a) => acc(grads, a, g.zip_map(y, |gv, yv| gv * (T::one() - yv * yv))),
            Op::Relu(a) => acc(
                grads,
                a,
                g.zip_map(self.value(a), |gv, x| if x > T::zero() { gv } else { T::zero() }),
            ),
            Op::Sigmoid(a) => acc(grads, a, g.zip_map(y, |gv, yv| gv * yv * (T::one() - yv))),
            Op::Exp(a) => acc(grads, a, g.zip_map(y, |gv, yv| gv * yv)),
            Op::Sin(a) => acc(grads, a, g.zip_map(self.value(a), |gv, x| gv * x.cos())),
            Op::Cos(a) => acc(grads, a, g.zip_map(self.value(a), |gv, x| -gv * x.sin())),
            Op::Square(a) => acc(
                grads,
                a,
                g.zip_map(self.value(a), |gv, x| gv * (x + x)),
            ),
            Op::Abs(a) => acc(
                grads,
                a,
                g.zip_map(self.value(a), |gv, x| {
                    if x > T::zero() {
                        gv
                    } else if x < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Clamp(a, lo, hi) => {
                let (l, h): (T, T) = (c(lo), c(hi));
                acc(
                    grads,
                    a,
                    g.zip_map(self.value(a), |gv, x| if x > l && x < h { gv } else { T::zero() }),
                )
            }
            Op::Sum(a) => {
                let shape = self.value(a).shape().to_vec();
                acc(grads, a, Tensor::full(&shape, g.data()[0]));
            }
            Op::Mean(a) => {
                let av = self.value(a);
                let v = g.data()[0] / c(av.len() as f64);
                acc(grads, a, Tensor::full(av.shape(), v));
            }
            Op::RowSum(a) => {
                let av = self.value(a);
                let cols = av.cols();
                let data = (0..av.len()).map(|i| g.data()[i / cols]).collect();
                acc(grads, a, Tensor::new(av.shape().to_vec(), data)?);
            }
            Op::ConcatCols(a, b) => {
                let (ac, bc) = (self.value(a).cols(), self.value(b).cols());
                let rows = g.rows();
                let mut ga = Vec::with_capacity(rows * ac);
                let mut gb = Vec::with_capacity(rows * bc);
                for r in 0..rows {
                    let row = g.row(r);
                    ga.extend_from_slice(&row[..ac]);
                    gb.extend_from_slice(&row[ac..]);
                }
                acc(grads, a, Tensor::new(vec![rows, ac], ga)?);
                acc(grads, b, Tensor::new(vec![rows, bc], gb)?);
            }
            Op::SliceCols(a, start) => {
                let av = self.value(a);
                let (rows, cols, len) = (av.rows(), av.cols(), g.cols());
                let mut ga = Tensor::zeros(av.shape());
                for r in 0..rows {
                    ga.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(g.row(r));
                }
                acc(grads, a, ga);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(p).rows();
                    let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    acc(grads, p, Tensor::new(vec![rows, cols], data)?);
                    offset += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let av = self.value(a);
                let cols = av.cols();
                let mut ga = Tensor::zeros(av.shape());
                ga.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                acc(grads, a, ga);
            }
            Op::BceLogits(l, t) => {
                let lv = self.value(l);
                let scale = g.data()[0] / c(lv.rows() as f64);
                acc(
                    grads,
                    l,
                    lv.zip_map(self.value(t), |x, tv| (sigmoid(x) - tv) * scale),
                );
            }
            Op::MwsLogQ { z, mu, logvar } => {
                let (gz, gmu, glv) = self.mws_backward(g, z, mu, logvar);
                acc(grads, z, gz);
                acc(grads, mu, gmu);
                acc(grads, logvar, glv);
            }
        }
        Ok(())
    }

    fn mws_backward(
        &self,
        g: &Tensor<T>,
        z: Var,
        mu: Var,
        logvar: Var,
    ) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let (zv, mv, lv) = (self.value(z), self.value(mu), self.value(logvar));
        let b = zv.rows();
        let d = zv.cols();
        let dens = pair_log_density(zv, mv, lv);
        let mut gz = Tensor::zeros(zv.shape());
        let mut gmu = Tensor::zeros(mv.shape());
        let mut glv = Tensor::zeros(lv.shape());
        let half: T = c(0.5);
        let mut joint = vec![T::zero(); b];
        let mut wj = vec![T::zero(); b];
        let mut marg = vec![T::zero(); b];
        let mut wm = vec![T::zero(); b * d];
        for i in 0..b {
            let g0 = g.data()[i * (1 + d)];
            for (j, slot) in joint.iter_mut().enumerate() {
                *slot = dens[(i * b + j) * d..(i * b + j + 1) * d]
                    .iter()
                    .fold(T::zero(), |s, &x| s + x);
            }
            softmax_into(&joint, &mut wj);
            for k in 0..d {
                for (j, slot) in marg.iter_mut().enumerate() {
                    *slot = dens[(i * b + j) * d + k];
                }
                let mut w = vec![T::zero(); b];
                softmax_into(&marg, &mut w);
                for j in 0..b {
                    wm[j * d + k] = w[j];
                }
            }
            for j in 0..b {
                for k in 0..d {
                    let a = g0 * wj[j] + g.data()[i * (1 + d) + 1 + k] * wm[j * d + k];
                    if a == T::zero() {
                        continue;
                    }
                    let diff = zv.get2(i, k) - mv.get2(j, k);
                    let prec = (-lv.get2(j, k)).exp();
                    gz.data_mut()[i * d + k] = gz.data()[i * d + k] - a * diff * prec;
                    gmu.data_mut()[j * d + k] = gmu.data()[j * d + k] + a * diff * prec;
                    glv.data_mut()[j * d + k] =
                        glv.data()[j * d + k] + a * (-half + half * diff * diff * prec);
                }
            }
        }
        (gz, gmu, glv)
    }

    /// Convenience: `-0.5·(log 2π + logvar + (z − mu)²·exp(−logvar))`.
    pub fn gaussian_log_density(&mut self, z: Var, mu: Var, logvar: Var) -> Var {
        let diff = self.sub(z, mu);
        let sq = self.square(diff);
        let neg = self.scale(logvar, -1.0);
        let prec = self.exp(neg);
        let maha = self.mul(sq, prec);
        let s = self.add(maha, logvar);
        let s = self.add_scalar(s, (2.0 * PI).ln());
        self.scale(s, -0.5)
    }
}

fn acc<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e = *e + *x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// `dens[(i·B + j)·d + k] = log N(z_ik; mu_jk, exp(logvar_jk))`.
fn pair_log_density<T: Real>(z: &Tensor<T>, mu: &Tensor<T>, logvar: &Tensor<T>) -> Vec<T> {
    let b = z.rows();
    let d = z.cols();
    let log2pi: T = c((2.0 * PI).ln());
    let half: T = c(0.5);
    let mut out = Vec::with_capacity(b * b * d);
    for i in 0..b {
        for j in 0..b {
            for k in 0..d {
                let diff = z.get2(i, k) - mu.get2(j, k);
                let lv = logvar.get2(j, k);
                out.push(-half * (log2pi + lv + diff * diff * (-lv).exp()));
            }
        }
    }
    out
}

pub(crate) fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    if !m.is_finite() {
        return m;
    }
    let s = xs.iter().fold(T::zero(), |a, &x| a + (x - m).exp());
    m + s.ln()
}

fn softmax_into<T: Real>(xs: &[T], out: &mut [T]) {
    let m = xs.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        s = s + *o;
    }
    for o in out.iter_mut() {
        *o = *o / s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_leaf_has_unit_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 2], &[1., -2., 3., 4.]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g[x.index()].as_ref().unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn non_finite_node_is_reported() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1], &[1000.0]));
        let e = tape.exp(x);
        let s = tape.sum(e);
        match tape.backward(s) {
            Err(Error::Numeric { node, op }) => {
                assert_eq!(node, e.index());
                assert_eq!(op, "exp");
            }
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn wrap_mod_reduces_into_range() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 3], &[10.0, -0.5, 9.0]));
        let y = tape.wrap_mod(x, 10.0);
        assert_eq!(tape.value(y).data(), &[0.0, 9.5, 9.0]);
    }

    #[test]
    fn bce_is_minimized_at_target_logits() {
        let target = [0.2, 0.7, 0.5];
        let logits: Vec<f64> = target.iter().map(|p: &f64| (p / (1.0 - p)).ln()).collect();
        let mut tape = Tape::<f64>::new();
        let l = tape.leaf(t(&[1, 3], &logits));
        let tv = tape.leaf(t(&[1, 3], &target));
        let loss = tape.bce_with_logits(l, tv);
        let entropy: f64 = target
            .iter()
            .map(|p| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln()))
            .sum();
        assert!((tape.scalar(loss) - entropy).abs() < 1e-12);
        let g = tape.backward(loss).unwrap();
        for v in g[l.index()].as_ref().unwrap().data() {
            assert!(v.abs() < 1e-12);
        }
    }
}
