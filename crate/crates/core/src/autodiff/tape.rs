use crate::scalar::{sigmoid, softplus, Scalar};
use crate::tensor::Tensor;

use super::kernels::{self, ConvGeom, PoolKind, PoolOut};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Sum(Vec<Var>),
    Scale(Var, T),
    AddConst(Var),
    MulConst(Var, Tensor<T>),
    Mul(Var, Var),
    Relu(Var),
    Softplus(Var),
    Square(Var),
    SmoothL1(Var),
    SumAll(Var),
    MeanAll(Var),
    Softmax(Var),
    Row(Var, usize),
    WeightedSum { inputs: Vec<Var>, weights: Var },
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    Pool { x: Var, kind: PoolKind, window: usize, stride: usize, dims: [usize; 4], saved: PoolOut<T> },
    Subsample2 { x: Var, dims: [usize; 4] },
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    Linear { x: Var, w: Var, b: Var },
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of executed primitives.
///
/// Parents always precede children, so recording order is a topological
/// order and the backward pass is a single reverse sweep.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn contract(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Contract(msg.into())
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records an input. Trainable parameters pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(contract(format!("{what}: shapes {:?} and {:?} differ", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let rg = self.requires_grad(a);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "add")?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "sub")?;
        let mut value = self.value(a).clone();
        value.axpy(-T::one(), self.value(b));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise sum of equally shaped inputs, accumulated left to right.
    pub fn sum(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let (&first, rest) = inputs.split_first().ok_or_else(|| contract("sum of no inputs"))?;
        let mut value = self.value(first).clone();
        for &v in rest {
            self.same_shape(first, v, "sum")?;
            value.add_assign(self.value(v));
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::Sum(inputs.to_vec()), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        self.unary(a, |v| v * factor, Op::Scale(a, factor))
    }

    /// `a + c` for a constant tensor `c` of the same shape.
    pub fn add_const(&mut self, a: Var, c: &Tensor<T>) -> Result<Var, AutodiffError> {
        if self.shape(a) != c.shape() {
            return Err(contract(format!("add_const: shapes {:?} and {:?} differ", self.shape(a), c.shape())));
        }
        let mut value = self.value(a).clone();
        value.add_assign(c);
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::AddConst(a), rg))
    }

    /// `a * c` elementwise for a constant tensor `c` of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Result<Var, AutodiffError> {
        if self.shape(a) != c.shape() {
            return Err(contract(format!("mul_const: shapes {:?} and {:?} differ", self.shape(a), c.shape())));
        }
        let data = self.value(a).data().iter().zip(c.data()).map(|(&x, &k)| x * k).collect();
        let value = Tensor::from_vec(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::from_vec(self.shape(a).to_vec(), data).expect("same shape");
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(T::zero()), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |v| v * v, Op::Square(a))
    }

    /// Elementwise Huber function with unit threshold: `x^2/2` inside `[-1, 1]`, `|x| - 1/2` outside.
    pub fn smooth_l1(&mut self, a: Var) -> Var {
        self.unary(a, smooth_l1_value, Op::SmoothL1(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.requires_grad(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / T::lit(t.numel() as f64));
        let rg = self.requires_grad(a);
        self.push(value, Op::MeanAll(a), rg)
    }

    /// Softmax over the last axis, row by row.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let q = *t.shape().last().expect("non-empty shape");
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(q) {
            data.extend(softmax_row(row));
        }
        let value = Tensor::from_vec(t.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(a);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Row `r` of a 2-D tensor.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || r >= shape[0] {
            return Err(contract(format!("row {r} of tensor with shape {shape:?}")));
        }
        let q = shape[1];
        let value = Tensor::from_vec([q], self.value(a).data()[r * q..(r + 1) * q].to_vec()).expect("row");
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Row(a, r), rg))
    }

    /// `sum_k weights[k] * inputs[k]` with a weight vector recorded on the tape.
    pub fn weighted_sum(&mut self, inputs: &[Var], weights: Var) -> Result<Var, AutodiffError> {
        let q = self.value(weights).numel();
        if q != inputs.len() {
            return Err(contract(format!("weighted_sum: {} weights for {} inputs", q, inputs.len())));
        }
        let first = *inputs.first().ok_or_else(|| contract("weighted_sum of no inputs"))?;
        let w = self.value(weights).data().to_vec();
        let mut value = Tensor::zeros(self.shape(first).to_vec());
        for (&v, &wk) in inputs.iter().zip(&w) {
            self.same_shape(first, v, "weighted_sum")?;
            value.axpy(wk, self.value(v));
        }
        let rg = self.any_grad(inputs) || self.requires_grad(weights);
        Ok(self.push(value, Op::WeightedSum { inputs: inputs.to_vec(), weights }, rg))
    }

    /// Cross-correlation of `x` `[N, C_in, H, W]` with `w` `[C_out, C_in / groups, k, k]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        dilation: usize,
        groups: usize,
    ) -> Result<Var, AutodiffError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(contract(format!("conv2d expects NCHW input and OIHW weights, got {xs:?} and {ws:?}")));
        }
        if !matches!(stride, 1 | 2) || !matches!(dilation, 1 | 2) {
            return Err(contract(format!("conv2d: stride {stride} / dilation {dilation} unsupported")));
        }
        if groups == 0 || xs[1] % groups != 0 || ws[0] % groups != 0 {
            return Err(contract(format!("conv2d: {groups} groups incompatible with channels {} -> {}", xs[1], ws[0])));
        }
        if ws[1] * groups != xs[1] {
            return Err(contract(format!(
                "conv2d channel mismatch: input has {} channels, weights expect {}",
                xs[1],
                ws[1] * groups
            )));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(contract(format!("conv2d: kernel {}x{} must be odd", ws[2], ws[3])));
        }
        let geom = ConvGeom {
            n: xs[0],
            cin: xs[1],
            h: xs[2],
            w: xs[3],
            cout: ws[0],
            kh: ws[2],
            kw: ws[3],
            stride,
            dilation,
            groups,
        };
        let out = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data());
        let value = Tensor::from_vec([geom.n, geom.cout, geom.out_h(), geom.out_w()], out).expect("conv shape");
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(value, Op::Conv2d { x, w, geom }, rg))
    }

    pub fn pool2d(&mut self, x: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var, AutodiffError> {
        let dims = self.nchw(x, "pool2d")?;
        if window % 2 == 0 || !matches!(stride, 1 | 2) {
            return Err(contract(format!("pool2d: window {window} stride {stride} unsupported")));
        }
        let saved = kernels::pool2d_forward(kind, dims, window, stride, self.value(x).data());
        let oh = kernels::out_extent(dims[2], window, 1, stride);
        let ow = kernels::out_extent(dims[3], window, 1, stride);
        let value = Tensor::from_vec([dims[0], dims[1], oh, ow], saved.values.clone()).expect("pool shape");
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Pool { x, kind, window, stride, dims, saved }, rg))
    }

    /// 2x2 block average with stride 2.
    pub fn subsample2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let dims = self.nchw(x, "subsample2")?;
        let out = kernels::subsample2_forward(dims, self.value(x).data());
        let value =
            Tensor::from_vec([dims[0], dims[1], dims[2].div_ceil(2), dims[3].div_ceil(2)], out).expect("subsample");
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Subsample2 { x, dims }, rg))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let first = *inputs.first().ok_or_else(|| contract("concat of no inputs"))?;
        let [n, _, h, w] = self.nchw(first, "concat")?;
        let mut channels = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.nchw(v, "concat")?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(contract(format!("concat: {:?} vs {:?}", self.shape(v), self.shape(first))));
            }
            channels += vc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * channels * plane);
        for b in 0..n {
            for &v in inputs {
                let c = self.shape(v)[1];
                data.extend_from_slice(&self.value(v).data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::from_vec([n, channels, h, w], data).expect("concat shape");
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::Concat(inputs.to_vec()), rg))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let [n, c, h, w] = self.nchw(x, "global_avg_pool")?;
        let inv = T::lit(1.0 / (h * w) as f64);
        let data = self.value(x).data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::from_vec([n, c], data).expect("gap shape");
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::GlobalAvgPool(x), rg))
    }

    /// `x [N, D] * w^T [D, O] + b [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || bs != [ws[0]] {
            return Err(contract(format!("linear: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n, d, o) = (xs[0], xs[1], ws[0]);
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * o);
        for i in 0..n {
            let xr = &xv[i * d..(i + 1) * d];
            for j in 0..o {
                let wr = &wv[j * d..(j + 1) * d];
                data.push(bv[j] + xr.iter().zip(wr).map(|(&a, &b)| a * b).sum::<T>());
            }
        }
        let value = Tensor::from_vec([n, o], data).expect("linear shape");
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(x).clone().reshape(shape.to_vec()).map_err(|e| contract(e.to_string()))?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    fn nchw(&self, x: Var, what: &str) -> Result<[usize; 4], AutodiffError> {
        match *self.shape(x) {
            [n, c, h, w] => Ok([n, c, h, w]),
            ref s => Err(contract(format!("{what} expects NCHW, got {s:?}"))),
        }
    }

    /// Reverse sweep from a scalar `loss`; d loss / d loss = 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if !self.value(loss).is_scalar() {
            return Err(contract(format!("backward from non-scalar of shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(idx, &node.op, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], child: usize, parent: Var, g: Tensor<T>) -> Result<(), AutodiffError> {
        if parent.0 >= child {
            return Err(AutodiffError::Cycle { node: child, parent: parent.0 });
        }
        if !self.nodes[parent.0].requires_grad {
            return Ok(());
        }
        match &mut grads[parent.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, g: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let data = self.value(a).data().iter().zip(g.data()).map(|(&x, &gv)| f(x, gv)).collect();
        Tensor::from_vec(self.shape(a).to_vec(), data).expect("same shape")
    }

    fn propagate(
        &self,
        idx: usize,
        op: &Op<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), AutodiffError> {
        let reshape_like = |v: Var, data: Vec<T>| Tensor::from_vec(self.shape(v).to_vec(), data).expect("grad shape");
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, idx, *a, g.clone())?;
                self.accumulate(grads, idx, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, idx, *a, g.clone())?;
                self.accumulate(grads, idx, *b, g.map(|v| -v))?;
            }
            Op::Sum(inputs) => {
                for &v in inputs {
                    self.accumulate(grads, idx, v, g.clone())?;
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, idx, *a, g.map(|v| v * *k))?,
            Op::AddConst(a) => self.accumulate(grads, idx, *a, g.clone())?,
            Op::MulConst(a, c) => {
                let data = g.data().iter().zip(c.data()).map(|(&gv, &k)| gv * k).collect();
                self.accumulate(grads, idx, *a, reshape_like(*a, data))?;
            }
            Op::Mul(a, b) => {
                let ga = self.zip_map(*b, g, |y, gv| y * gv);
                let gb = self.zip_map(*a, g, |x, gv| x * gv);
                self.accumulate(grads, idx, *a, ga)?;
                self.accumulate(grads, idx, *b, gb)?;
            }
            Op::Relu(a) => {
                let ga = self.zip_map(*a, g, |x, gv| if x > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, idx, *a, ga)?;
            }
            Op::Softplus(a) => {
                let ga = self.zip_map(*a, g, |x, gv| sigmoid(x) * gv);
                self.accumulate(grads, idx, *a, ga)?;
            }
            Op::Square(a) => {
                let two = T::lit(2.0);
                let ga = self.zip_map(*a, g, |x, gv| two * x * gv);
                self.accumulate(grads, idx, *a, ga)?;
            }
            Op::SmoothL1(a) => {
                let ga = self.zip_map(*a, g, |x, gv| smooth_l1_slope(x) * gv);
                self.accumulate(grads, idx, *a, ga)?;
            }
            Op::SumAll(a) => {
                let ga = Tensor::full(self.shape(*a).to_vec(), g.item());
                self.accumulate(grads, idx, *a, ga)?;
            }
            Op::MeanAll(a) => {
                let n = T::lit(self.value(*a).numel() as f64);
                let ga = Tensor::full(self.shape(*a).to_vec(), g.item() / n);
                self.accumulate(grads, idx, *a, ga)?;
            }
            Op::Softmax(a) => {
                let y = &self.nodes[idx].value;
                let q = *y.shape().last().expect("shape");
                let mut data = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(q).zip(g.data().chunks(q)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    data.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                self.accumulate(grads, idx, *a, reshape_like(*a, data))?;
            }
            Op::Row(a, r) => {
                let q = g.numel();
                let mut full = Tensor::zeros(self.shape(*a).to_vec());
                full.data_mut()[r * q..(r + 1) * q].copy_from_slice(g.data());
                self.accumulate(grads, idx, *a, full)?;
            }
            Op::WeightedSum { inputs, weights } => {
                let w = self.value(*weights).data();
                let mut gw = Vec::with_capacity(inputs.len());
                for (&v, &wk) in inputs.iter().zip(w) {
                    gw.push(self.value(v).dot(g));
                    if self.requires_grad(v) {
                        self.accumulate(grads, idx, v, g.map(|x| x * wk))?;
                    }
                }
                self.accumulate(grads, idx, *weights, reshape_like(*weights, gw))?;
            }
            Op::Conv2d { x, w, geom } => {
                let (gx, gw) = kernels::conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), g.data());
                self.accumulate(grads, idx, *x, reshape_like(*x, gx))?;
                self.accumulate(grads, idx, *w, reshape_like(*w, gw))?;
            }
            Op::Pool { x, kind, window, stride, dims, saved } => {
                let gx = kernels::pool2d_backward(*kind, *dims, *window, *stride, saved, g.data());
                self.accumulate(grads, idx, *x, reshape_like(*x, gx))?;
            }
            Op::Subsample2 { x, dims } => {
                let gx = kernels::subsample2_backward(*dims, g.data());
                self.accumulate(grads, idx, *x, reshape_like(*x, gx))?;
            }
            Op::Concat(inputs) => {
                let [n, total, h, w] = match *g.shape() {
                    [a, b, c, d] => [a, b, c, d],
                    _ => unreachable!("concat output is NCHW"),
                };
                let plane = h * w;
                let mut offset = 0;
                for &v in inputs {
                    let c = self.shape(v)[1];
                    let mut data = Vec::with_capacity(n * c * plane);
                    for b in 0..n {
                        let start = (b * total + offset) * plane;
                        data.extend_from_slice(&g.data()[start..start + c * plane]);
                    }
                    offset += c;
                    self.accumulate(grads, idx, v, reshape_like(v, data))?;
                }
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let plane = s[2] * s[3];
                let inv = T::lit(1.0 / plane as f64);
                let mut data = Vec::with_capacity(self.value(*x).numel());
                for &gv in g.data() {
                    data.extend(std::iter::repeat_n(gv * inv, plane));
                }
                self.accumulate(grads, idx, *x, reshape_like(*x, data))?;
            }
            Op::Linear { x, w, b } => {
                let (n, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[0];
                let (xv, wv, gv) = (self.value(*x).data(), self.value(*w).data(), g.data());
                if self.requires_grad(*x) {
                    let mut gx = vec![T::zero(); n * d];
                    for i in 0..n {
                        for j in 0..o {
                            let gij = gv[i * o + j];
                            for k in 0..d {
                                gx[i * d + k] = gx[i * d + k] + gij * wv[j * d + k];
                            }
                        }
                    }
                    self.accumulate(grads, idx, *x, reshape_like(*x, gx))?;
                }
                let mut gw = vec![T::zero(); o * d];
                let mut gb = vec![T::zero(); o];
                for i in 0..n {
                    for j in 0..o {
                        let gij = gv[i * o + j];
                        gb[j] = gb[j] + gij;
                        for k in 0..d {
                            gw[j * d + k] = gw[j * d + k] + gij * xv[i * d + k];
                        }
                    }
                }
                self.accumulate(grads, idx, *w, reshape_like(*w, gw))?;
                self.accumulate(grads, idx, *b, reshape_like(*b, gb))?;
            }
            Op::Reshape(x) => {
                self.accumulate(grads, idx, *x, reshape_like(*x, g.data().to_vec()))?;
            }
        }
        Ok(())
    }
}

pub(crate) fn smooth_l1_value<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    if x.abs() < T::one() {
        half * x * x
    } else {
        x.abs() - half
    }
}

fn smooth_l1_slope<T: Scalar>(x: T) -> T {
    if x.abs() < T::one() {
        x
    } else {
        x.signum()
    }
}

/// Max-shifted softmax of one row.
pub fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}
