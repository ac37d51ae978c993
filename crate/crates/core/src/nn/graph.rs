//! Tape-based reverse-mode differentiation.
//!
//! Sequence tensors use the layout `[batch, time, channels]`; a rank-2
//! `[time, channels]` tensor is treated as a batch of one.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::gemm::{gemm, Layout};
use super::{NnError, ParamId, ParameterSet, Tensor};

/// Index of a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

type CustomBackward = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

enum Op {
    Leaf,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
        cols: Vec<f64>,
    },
    Act(Var, Activation),
    Add(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    LastStep(Var),
    SliceTime {
        x: Var,
        start: usize,
    },
    MaskTime {
        x: Var,
        mask: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations and their values for one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `(batch, time, channels)` of a rank-2 or rank-3 sequence tensor.
fn seq_dims(t: &Tensor) -> Result<(usize, usize, usize), NnError> {
    match *t.shape() {
        [time, ch] => Ok((1, time, ch)),
        [n, time, ch] => Ok((n, time, ch)),
        ref s => Err(NnError::Shape(format!(
            "expected a [batch, time, channels] or [time, channels] tensor, got {s:?}"
        ))),
    }
}

fn seq_shape(like: &Tensor, n: usize, time: usize, ch: usize) -> Vec<usize> {
    if like.shape().len() == 2 {
        vec![time, ch]
    } else {
        vec![n, time, ch]
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

/// Applies an activation outside of a graph.
pub fn activate(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => x.max(0.0),
        Activation::Gelu => gelu(x),
    }
}

fn activation_grad(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Gelu => gelu_grad(x),
    }
}

/// Builds the causal im2col matrix `[n*time, cin*k]`: column `c*k + j` of
/// row `(b, t)` holds `x[b, t - (k-1-j)*dilation, c]`, zero before the start.
fn im2col(x: &[f64], n: usize, time: usize, cin: usize, k: usize, dilation: usize) -> Vec<f64> {
    let width = cin * k;
    let mut cols = vec![0.0; n * time * width];
    for b in 0..n {
        for t in 0..time {
            let row = &mut cols[(b * time + t) * width..(b * time + t + 1) * width];
            for j in 0..k {
                let shift = (k - 1 - j) * dilation;
                if shift > t {
                    continue;
                }
                let src = &x[(b * time + t - shift) * cin..(b * time + t - shift + 1) * cin];
                for (c, &v) in src.iter().enumerate() {
                    row[c * k + j] = v;
                }
            }
        }
    }
    cols
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; receives no gradient outside the graph.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter; its gradient is written back by [`Graph::backward`].
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        self.push(params.value(id).clone(), Op::Param(id))
    }

    /// Affine map over the trailing axis: `x · wᵀ + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let xv = self.value(x);
        let wv = self.value(w);
        let [dout, din] = *wv.shape() else {
            return Err(NnError::Shape(format!(
                "linear weight must be [out, in], got {:?}",
                wv.shape()
            )));
        };
        if xv.shape().is_empty() || xv.last_dim() != din {
            return Err(NnError::Shape(format!(
                "linear expects trailing extent {din}, input has shape {:?}",
                xv.shape()
            )));
        }
        let rows = xv.len() / din;
        let mut out = vec![0.0; rows * dout];
        gemm(
            rows,
            din,
            dout,
            1.0,
            xv.data(),
            Layout::rows(din),
            wv.data(),
            Layout::transposed(din),
            0.0,
            &mut out,
            Layout::rows(dout),
        );
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != dout {
                return Err(NnError::Shape(format!(
                    "linear bias has {} values, expected {dout}",
                    bv.len()
                )));
            }
            for row in out.chunks_mut(dout) {
                for (o, bias) in row.iter_mut().zip(bv.data()) {
                    *o += bias;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Causal dilated convolution; `w: [out, in, k]`, output keeps the time length.
    pub fn conv1d_causal(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        dilation: usize,
    ) -> Result<Var, NnError> {
        if dilation == 0 {
            return Err(NnError::Config("dilation must be at least 1".into()));
        }
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, time, cin) = seq_dims(xv)?;
        let [cout, wcin, k] = *wv.shape() else {
            return Err(NnError::Shape(format!(
                "conv weight must be [out, in, kernel], got {:?}",
                wv.shape()
            )));
        };
        if k == 0 || time == 0 {
            return Err(NnError::Config("kernel size and time length must be positive".into()));
        }
        if wcin != cin {
            return Err(NnError::Config(format!(
                "conv declared {wcin} input channels, input has {cin}"
            )));
        }
        let bv = self.value(b);
        if bv.len() != cout {
            return Err(NnError::Shape(format!(
                "conv bias has {} values, expected {cout}",
                bv.len()
            )));
        }
        let cols = im2col(xv.data(), n, time, cin, k, dilation);
        let rows = n * time;
        let width = cin * k;
        let mut out = vec![0.0; rows * cout];
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(bv.data());
        }
        gemm(
            rows,
            width,
            cout,
            1.0,
            &cols,
            Layout::rows(width),
            wv.data(),
            Layout::transposed(width),
            1.0,
            &mut out,
            Layout::rows(cout),
        );
        let value = Tensor::new(&seq_shape(xv, n, time, cout), out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                dilation,
                cols,
            },
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| activate(kind, v)).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        self.push(value, Op::Act(x, kind))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Gelu)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::Shape(format!(
                "add of {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        self.push(value, Op::Scale(x, c))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * v).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        self.push(value, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().sum::<f64>() / xv.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// `[n, time, c] -> [n, c]` at the final time step.
    pub fn last_step(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let (n, time, c) = seq_dims(xv)?;
        if time == 0 {
            return Err(NnError::Shape("last_step of an empty sequence".into()));
        }
        let mut data = Vec::with_capacity(n * c);
        for b in 0..n {
            let off = (b * time + time - 1) * c;
            data.extend_from_slice(&xv.data()[off..off + c]);
        }
        let value = Tensor::new(&[n, c], data)?;
        Ok(self.push(value, Op::LastStep(x)))
    }

    /// Time steps `[start, start + len)` of a sequence tensor.
    pub fn slice_time(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        let (n, time, c) = seq_dims(xv)?;
        if start + len > time {
            return Err(NnError::Shape(format!(
                "time slice [{start}, {}) exceeds length {time}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(n * len * c);
        for b in 0..n {
            let off = (b * time + start) * c;
            data.extend_from_slice(&xv.data()[off..off + len * c]);
        }
        let value = Tensor::new(&seq_shape(xv, n, len, c), data)?;
        Ok(self.push(value, Op::SliceTime { x, start }))
    }

    /// Multiplies every channel vector at `(b, t)` by `mask[b * time + t]`.
    pub fn mask_time(&mut self, x: Var, mask: Vec<f64>) -> Result<Var, NnError> {
        let xv = self.value(x);
        let (n, time, c) = seq_dims(xv)?;
        if mask.len() != n * time {
            return Err(NnError::Shape(format!(
                "mask has {} entries, expected {}",
                mask.len(),
                n * time
            )));
        }
        let mut data = xv.data().to_vec();
        for (chunk, &m) in data.chunks_mut(c).zip(&mask) {
            chunk.iter_mut().for_each(|v| *v *= m);
        }
        let value = Tensor::new(xv.shape(), data)?;
        Ok(self.push(value, Op::MaskTime { x, mask }))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var, NnError> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(NnError::Usage(format!(
                "mse of prediction {:?} against target {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        let loss = mse(pv.data(), target.data());
        if !loss.is_finite() {
            return Err(NnError::NonFinite(format!("mse loss is {loss}")));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
        ))
    }

    /// Node with a caller-supplied value and vector-Jacobian product.
    ///
    /// `backward` receives the upstream gradient (shaped like `value`) and
    /// returns one gradient per input, shaped like that input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        backward: impl Fn(&Tensor) -> Vec<Tensor> + 'static,
    ) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward: Box::new(backward),
            },
        )
    }

    /// Propagates `d loss / d node` through the tape and writes parameter
    /// gradients into `params`.
    pub fn backward(&self, loss: Var, params: &mut ParameterSet) -> Result<(), NnError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.all_finite() {
            return Err(NnError::NonFinite(format!("loss is {}", lv.data()[0])));
        }
        params.begin_backward()?;
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if !g.all_finite() {
                        return Err(NnError::NonFinite(format!(
                            "gradient of parameter {}",
                            params.name(*id)
                        )));
                    }
                    let slot = params.grad_mut(*id);
                    for (s, v) in slot.data_mut().iter_mut().zip(g.data()) {
                        *s += v;
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (dout, din) = (wv.shape()[0], wv.shape()[1]);
                    let rows = xv.len() / din;
                    let mut dx = vec![0.0; xv.len()];
                    gemm(
                        rows,
                        dout,
                        din,
                        1.0,
                        g.data(),
                        Layout::rows(dout),
                        wv.data(),
                        Layout::rows(din),
                        0.0,
                        &mut dx,
                        Layout::rows(din),
                    );
                    let mut dw = vec![0.0; dout * din];
                    gemm(
                        dout,
                        rows,
                        din,
                        1.0,
                        g.data(),
                        Layout::transposed(dout),
                        xv.data(),
                        Layout::rows(din),
                        0.0,
                        &mut dw,
                        Layout::rows(din),
                    );
                    accumulate(&mut grads, *x, xv.shape(), dx);
                    accumulate(&mut grads, *w, wv.shape(), dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, *b, &[dout], column_sums(g.data(), dout));
                    }
                }
                Op::Conv {
                    x,
                    w,
                    b,
                    dilation,
                    cols,
                } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let (n, time, cin) = seq_dims(xv)?;
                    let (cout, k) = (wv.shape()[0], wv.shape()[2]);
                    let rows = n * time;
                    let width = cin * k;
                    let mut dw = vec![0.0; cout * width];
                    gemm(
                        cout,
                        rows,
                        width,
                        1.0,
                        g.data(),
                        Layout::transposed(cout),
                        cols,
                        Layout::rows(width),
                        0.0,
                        &mut dw,
                        Layout::rows(width),
                    );
                    let mut dcols = vec![0.0; rows * width];
                    gemm(
                        rows,
                        cout,
                        width,
                        1.0,
                        g.data(),
                        Layout::rows(cout),
                        wv.data(),
                        Layout::rows(width),
                        0.0,
                        &mut dcols,
                        Layout::rows(width),
                    );
                    let mut dx = vec![0.0; xv.len()];
                    for bi in 0..n {
                        for t in 0..time {
                            let row = &dcols[(bi * time + t) * width..(bi * time + t + 1) * width];
                            for j in 0..k {
                                let shift = (k - 1 - j) * dilation;
                                if shift > t {
                                    continue;
                                }
                                let dst = (bi * time + t - shift) * cin;
                                for c in 0..cin {
                                    dx[dst + c] += row[c * k + j];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, xv.shape(), dx);
                    accumulate(&mut grads, *w, wv.shape(), dw);
                    accumulate(&mut grads, *b, &[cout], column_sums(g.data(), cout));
                }
                Op::Act(x, kind) => {
                    let xv = self.value(*x);
                    let dx = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &up)| up * activation_grad(*kind, v))
                        .collect();
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::Add(a, b) => {
                    let shape = g.shape().to_vec();
                    accumulate(&mut grads, *a, &shape, g.data().to_vec());
                    accumulate(&mut grads, *b, &shape, g.into_data());
                }
                Op::Scale(x, c) => {
                    let dx = g.data().iter().map(|v| v * c).collect();
                    accumulate(&mut grads, *x, g.shape(), dx);
                }
                Op::Square(x) => {
                    let xv = self.value(*x);
                    let dx = xv.data().iter().zip(g.data()).map(|(v, up)| 2.0 * v * up).collect();
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, xv.shape(), vec![g.data()[0]; xv.len()]);
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let v = g.data()[0] / xv.len().max(1) as f64;
                    accumulate(&mut grads, *x, xv.shape(), vec![v; xv.len()]);
                }
                Op::LastStep(x) => {
                    let xv = self.value(*x);
                    let (n, time, c) = seq_dims(xv)?;
                    let mut dx = vec![0.0; xv.len()];
                    for bi in 0..n {
                        let off = (bi * time + time - 1) * c;
                        dx[off..off + c].copy_from_slice(&g.data()[bi * c..(bi + 1) * c]);
                    }
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::SliceTime { x, start } => {
                    let xv = self.value(*x);
                    let (n, time, c) = seq_dims(xv)?;
                    let len = g.len() / (n * c).max(1);
                    let mut dx = vec![0.0; xv.len()];
                    for bi in 0..n {
                        let off = (bi * time + start) * c;
                        dx[off..off + len * c]
                            .copy_from_slice(&g.data()[bi * len * c..(bi + 1) * len * c]);
                    }
                    accumulate(&mut grads, *x, xv.shape(), dx);
                }
                Op::MaskTime { x, mask } => {
                    let c = g.last_dim();
                    let mut dx = g.data().to_vec();
                    for (chunk, &m) in dx.chunks_mut(c).zip(mask) {
                        chunk.iter_mut().for_each(|v| *v *= m);
                    }
                    accumulate(&mut grads, *x, g.shape(), dx);
                }
                Op::Mse { pred, target } => {
                    let pv = self.value(*pred);
                    let scale = 2.0 * g.data()[0] / pv.len().max(1) as f64;
                    let dx = pv
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(p, t)| scale * (p - t))
                        .collect();
                    accumulate(&mut grads, *pred, pv.shape(), dx);
                }
                Op::Custom { inputs, backward } => {
                    let input_grads = backward(&g);
                    if input_grads.len() != inputs.len() {
                        return Err(NnError::Usage(format!(
                            "custom op returned {} gradients for {} inputs",
                            input_grads.len(),
                            inputs.len()
                        )));
                    }
                    for (v, dg) in inputs.iter().zip(input_grads) {
                        let shape = self.value(*v).shape().to_vec();
                        if dg.len() != shape.iter().product::<usize>() {
                            return Err(NnError::Shape(format!(
                                "custom op gradient {:?} for input {shape:?}",
                                dg.shape()
                            )));
                        }
                        accumulate(&mut grads, *v, &shape, dg.into_data());
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape, delta).expect("gradient shape")),
    }
}

fn column_sums(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in data.chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Mean of squared elementwise differences.
pub fn mse(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len().max(1) as f64
}
