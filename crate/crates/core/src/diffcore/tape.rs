use super::kernels::{self, ConvDims};
use super::params::{GradientMap, ParamTensor};
use super::tensor::{Real, Tensor};
use super::DiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    Conv2d { x: Var, k: Var, b: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Relu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Reshape(Var),
    Column { x: Var, col: usize },
    Element { x: Var, index: usize },
    LnClamped { x: Var, floor: T },
    Sum(Var),
    Mean(Var),
    Scale { x: Var, c: T },
    Add(Var, Var),
    Mul(Var, Var),
    WeightedRows { a: Var, h: Var },
    MeanRows(Var),
    GroupedKl { a: Var, groups: Vec<Vec<usize>> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine { .. } => "affine",
            Op::Conv2d { .. } => "conv2d_valid",
            Op::MaxPool2 { .. } => "maxpool2",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Reshape(_) => "reshape",
            Op::Column { .. } => "column",
            Op::Element { .. } => "element",
            Op::LnClamped { .. } => "ln_clamped",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Scale { .. } => "scale",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::WeightedRows { .. } => "weighted_rows",
            Op::MeanRows(_) => "mean_rows",
            Op::GroupedKl { .. } => "grouped_kl_uniform",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

struct ParamEntry {
    var: Var,
    name: String,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// Reverse-mode recording of a computation over tensors.
///
/// Every operator validates shapes and rejects non-finite outputs, so a
/// failure always names the operator that produced it.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<ParamEntry>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> DiffError {
    DiffError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
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

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite {
                op: op.name(),
                detail: format!("forward output of node {}", self.nodes.len()),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, DiffError> {
        self.push(value, Op::Leaf)
    }

    /// Records a parameter leaf. Gradients are reported under its name.
    pub fn param(&mut self, p: &ParamTensor) -> Result<Var, DiffError> {
        let value = Tensor::from_f64(&p.shape, &p.values)?;
        let var = self.push(value, Op::Leaf)?;
        self.params.push(ParamEntry {
            var,
            name: p.name.clone(),
            shape: p.shape.clone(),
            requires_grad: p.requires_grad,
        });
        Ok(var)
    }

    /// `x · wᵀ + b` for `x` of shape `[n, in]` (or `[in]`), `w` of shape `[out, in]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        let xt = self.value(x);
        let wt = self.value(w);
        let (n, fan_in) = xt
            .as_matrix()
            .ok_or_else(|| shape_err("affine", xt.shape(), wt.shape()))?;
        let (out, w_in) = match wt.shape() {
            [o, i] => (*o, *i),
            _ => return Err(shape_err("affine", xt.shape(), wt.shape())),
        };
        if w_in != fan_in {
            return Err(shape_err("affine", xt.shape(), wt.shape()));
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [out] {
                return Err(shape_err("affine", wt.shape(), bs));
            }
        }
        let mut y = vec![T::zero(); n * out];
        let xd = xt.data();
        let wd = wt.data();
        for i in 0..n {
            let row = &xd[i * fan_in..][..fan_in];
            for o in 0..out {
                y[i * out + o] = kernels::dot(row, &wd[o * fan_in..][..fan_in]);
            }
        }
        if let Some(b) = b {
            let bd = self.value(b).data();
            for i in 0..n {
                for o in 0..out {
                    y[i * out + o] += bd[o];
                }
            }
        }
        let shape = if xt.rank() == 1 { vec![out] } else { vec![n, out] };
        self.push(Tensor::new(shape, y)?, Op::Affine { x, w, b })
    }

    /// Valid (unpadded, stride 1) 2-D convolution. `x: [n, c, h, w]`,
    /// `k: [o, c, kh, kw]`, `b: [o]` → `[n, o, h-kh+1, w-kw+1]`.
    pub fn conv2d_valid(&mut self, x: Var, k: Var, b: Var) -> Result<Var, DiffError> {
        let dims = self.conv_dims(x, k, b)?;
        let mut out = vec![T::zero(); dims.batch * dims.out_ch * dims.out_h() * dims.out_w()];
        kernels::conv2d_forward(
            &dims,
            self.value(x).data(),
            self.value(k).data(),
            self.value(b).data(),
            &mut out,
        );
        let shape = vec![dims.batch, dims.out_ch, dims.out_h(), dims.out_w()];
        self.push(Tensor::new(shape, out)?, Op::Conv2d { x, k, b })
    }

    fn conv_dims(&self, x: Var, k: Var, b: Var) -> Result<ConvDims, DiffError> {
        let xs = self.shape(x);
        let ks = self.shape(k);
        let (&[n, c, h, w], &[o, kc, kh, kw]) = (xs, ks) else {
            return Err(shape_err("conv2d_valid", xs, ks));
        };
        if kc != c || kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(shape_err("conv2d_valid", xs, ks));
        }
        if self.shape(b) != [o] {
            return Err(shape_err("conv2d_valid", ks, self.shape(b)));
        }
        Ok(ConvDims {
            batch: n,
            in_ch: c,
            in_h: h,
            in_w: w,
            out_ch: o,
            k_h: kh,
            k_w: kw,
        })
    }

    /// 2×2 max pooling with stride 2 over `[n, c, h, w]`; odd trailing
    /// rows/columns are dropped. Ties go to the first element in row-major
    /// order within the window.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var, DiffError> {
        let xt = self.value(x);
        let &[n, c, h, w] = xt.shape() else {
            return Err(shape_err("maxpool2", xt.shape(), &[0, 0, 0, 0]));
        };
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(shape_err("maxpool2", xt.shape(), &[n, c, 2, 2]));
        }
        let xd = xt.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + (2 * i) * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        self.push(Tensor::new(vec![n, c, oh, ow], out)?, Op::MaxPool2 { x, argmax })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, DiffError> {
        let xt = self.value(x);
        let data = xt
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        self.push(Tensor::new(xt.shape().to_vec(), data)?, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, DiffError> {
        let xt = self.value(x);
        let data = xt.data().iter().map(|v| v.tanh()).collect();
        self.push(Tensor::new(xt.shape().to_vec(), data)?, Op::Tanh(x))
    }

    /// Softmax over the last axis (each row of a matrix, or the whole vector).
    pub fn softmax(&mut self, x: Var) -> Result<Var, DiffError> {
        let xt = self.value(x);
        let (rows, cols) = xt.as_matrix().ok_or_else(|| shape_err("softmax", xt.shape(), &[]))?;
        let mut data = xt.data().to_vec();
        for r in 0..rows {
            softmax_in_place(&mut data[r * cols..][..cols]);
        }
        self.push(Tensor::new(xt.shape().to_vec(), data)?, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, DiffError> {
        let xt = self.value(x);
        let (rows, cols) = xt
            .as_matrix()
            .ok_or_else(|| shape_err("log_softmax", xt.shape(), &[]))?;
        let mut data = xt.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..][..cols];
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        self.push(Tensor::new(xt.shape().to_vec(), data)?, Op::LogSoftmax(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let xt = self.value(x);
        if shape.iter().product::<usize>() != xt.len() {
            return Err(shape_err("reshape", xt.shape(), shape));
        }
        let t = xt.reshaped(shape.to_vec());
        self.push(t, Op::Reshape(x))
    }

    /// Column `col` of a `[rows, cols]` matrix as a `[rows]` vector.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var, DiffError> {
        let xt = self.value(x);
        let (rows, cols) = match xt.shape() {
            [r, c] if col < *c => (*r, *c),
            _ => return Err(shape_err("column", xt.shape(), &[col])),
        };
        let data = (0..rows).map(|r| xt.data()[r * cols + col]).collect();
        self.push(Tensor::new(vec![rows], data)?, Op::Column { x, col })
    }

    /// Single element (flat row-major index) as a scalar.
    pub fn element(&mut self, x: Var, index: usize) -> Result<Var, DiffError> {
        let xt = self.value(x);
        let Some(&v) = xt.data().get(index) else {
            return Err(shape_err("element", xt.shape(), &[index]));
        };
        self.push(Tensor::scalar(v), Op::Element { x, index })
    }

    /// `ln(max(x, floor))` elementwise; the gradient is zero where clamped.
    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Result<Var, DiffError> {
        let floor = T::lit(floor);
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| v.max(floor).ln()).collect();
        self.push(Tensor::new(xt.shape().to_vec(), data)?, Op::LnClamped { x, floor })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = kernels::sum(self.value(x).data());
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, DiffError> {
        let xt = self.value(x);
        if xt.is_empty() {
            return Err(shape_err("mean", xt.shape(), &[]));
        }
        let m = kernels::sum(xt.data()) / T::lit(xt.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, DiffError> {
        let c = T::lit(c);
        let xt = self.value(x);
        let data = xt.data().iter().map(|&v| v * c).collect();
        self.push(Tensor::new(xt.shape().to_vec(), data)?, Op::Scale { x, c })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("add", at.shape(), bt.shape()));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| x + y).collect();
        self.push(Tensor::new(at.shape().to_vec(), data)?, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err("mul", at.shape(), bt.shape()));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| x * y).collect();
        self.push(Tensor::new(at.shape().to_vec(), data)?, Op::Mul(a, b))
    }

    /// `Σ_n a_n · h_n` for weights `a: [n]` and rows `h: [n, l]`.
    pub fn weighted_rows(&mut self, a: Var, h: Var) -> Result<Var, DiffError> {
        let (at, ht) = (self.value(a), self.value(h));
        let (n, l) = match ht.shape() {
            [n, l] if at.shape() == [*n] => (*n, *l),
            _ => return Err(shape_err("weighted_rows", at.shape(), ht.shape())),
        };
        let mut z = vec![T::zero(); l];
        for i in 0..n {
            kernels::axpy(&mut z, at.data()[i], &ht.data()[i * l..][..l]);
        }
        self.push(Tensor::new(vec![l], z)?, Op::WeightedRows { a, h })
    }

    /// `(1/n) Σ_n h_n` for `h: [n, l]`.
    pub fn mean_rows(&mut self, h: Var) -> Result<Var, DiffError> {
        let ht = self.value(h);
        let (n, l) = match ht.shape() {
            [n, l] if *n > 0 => (*n, *l),
            _ => return Err(shape_err("mean_rows", ht.shape(), &[])),
        };
        let mut z = vec![T::zero(); l];
        for i in 0..n {
            kernels::axpy(&mut z, T::one(), &ht.data()[i * l..][..l]);
        }
        let inv = T::one() / T::lit(n as f64);
        z.iter_mut().for_each(|v| *v *= inv);
        self.push(Tensor::new(vec![l], z)?, Op::MeanRows(h))
    }

    /// Mean over groups with at least two members of `KL(p_g ‖ uniform)`,
    /// where `p_g` is `a` restricted to the group and renormalized.
    /// Singleton groups are ignored; with no eligible group the result is 0.
    pub fn grouped_kl_uniform(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var, DiffError> {
        let at = self.value(a);
        if at.rank() != 1 {
            return Err(shape_err("grouped_kl_uniform", at.shape(), &[]));
        }
        let n = at.len();
        if groups.iter().flatten().any(|&i| i >= n) {
            return Err(DiffError::Contract(format!(
                "grouped_kl_uniform: group index out of range for {n} weights"
            )));
        }
        let groups: Vec<Vec<usize>> = groups.iter().filter(|g| g.len() >= 2).cloned().collect();
        let mut total = T::zero();
        for g in &groups {
            let s: T = g.iter().map(|&i| at.data()[i]).sum();
            let m = T::lit(g.len() as f64);
            let mut kl = T::zero();
            for &i in g {
                let p = at.data()[i] / s;
                kl += p * (p * m).ln();
            }
            total += kl;
        }
        let value = if groups.is_empty() {
            T::zero()
        } else {
            total / T::lit(groups.len() as f64)
        };
        self.push(Tensor::scalar(value), Op::GroupedKl { a, groups })
    }

    /// Reverse pass from a scalar node. Every registered parameter with
    /// `requires_grad` appears in the result; parameters off the loss path
    /// get zeros.
    pub fn backward(&self, loss: Var) -> Result<GradientMap, DiffError> {
        let grads = self.backward_raw(loss)?;
        let mut map = GradientMap::new();
        for p in self.params.iter().filter(|p| p.requires_grad) {
            let values = match grads.get(p.var.0).and_then(Option::as_ref) {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; p.shape.iter().product()],
            };
            map.insert(p.name.clone(), p.shape.clone(), values);
        }
        Ok(map)
    }

    /// Gradients for every node (None where no gradient flows).
    pub fn backward_raw(&self, loss: Var) -> Result<Vec<Option<Vec<T>>>, DiffError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(DiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = node.value.data();
            let mut contrib: Vec<(Var, Vec<T>)> = Vec::new();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let xt = self.value(*x);
                    let wt = self.value(*w);
                    let (n, fan_in) = xt.as_matrix().expect("checked in forward");
                    let out = wt.shape()[0];
                    let mut gx = vec![T::zero(); n * fan_in];
                    let mut gw = vec![T::zero(); out * fan_in];
                    for i in 0..n {
                        let xrow = &xt.data()[i * fan_in..][..fan_in];
                        for o in 0..out {
                            let go = g[i * out + o];
                            if go == T::zero() {
                                continue;
                            }
                            kernels::axpy(&mut gx[i * fan_in..][..fan_in], go, &wt.data()[o * fan_in..][..fan_in]);
                            kernels::axpy(&mut gw[o * fan_in..][..fan_in], go, xrow);
                        }
                    }
                    contrib.push((*x, gx));
                    contrib.push((*w, gw));
                    if let Some(b) = b {
                        let mut gb = vec![T::zero(); out];
                        for i in 0..n {
                            for o in 0..out {
                                gb[o] += g[i * out + o];
                            }
                        }
                        contrib.push((*b, gb));
                    }
                }
                Op::Conv2d { x, k, b } => {
                    let dims = self.conv_dims(*x, *k, *b)?;
                    let mut gx = vec![T::zero(); self.value(*x).len()];
                    let mut gk = vec![T::zero(); self.value(*k).len()];
                    let mut gb = vec![T::zero(); self.value(*b).len()];
                    kernels::conv2d_backward(
                        &dims,
                        self.value(*x).data(),
                        self.value(*k).data(),
                        &g,
                        Some(&mut gx),
                        Some(&mut gk),
                        Some(&mut gb),
                    );
                    contrib.push((*x, gx));
                    contrib.push((*k, gk));
                    contrib.push((*b, gb));
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut gx = vec![T::zero(); self.value(*x).len()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += g[o];
                    }
                    contrib.push((*x, gx));
                }
                Op::Relu(x) => {
                    let gx = g
                        .iter()
                        .zip(y)
                        .map(|(&gi, &yi)| if yi > T::zero() { gi } else { T::zero() })
                        .collect();
                    contrib.push((*x, gx));
                }
                Op::Tanh(x) => {
                    let gx = g.iter().zip(y).map(|(&gi, &yi)| gi * (T::one() - yi * yi)).collect();
                    contrib.push((*x, gx));
                }
                Op::Softmax(x) => {
                    let (rows, cols) = node.value.as_matrix().expect("checked in forward");
                    let mut gx = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        let yr = &y[r * cols..][..cols];
                        let gr = &g[r * cols..][..cols];
                        let dotp = kernels::dot(gr, yr);
                        for c in 0..cols {
                            gx[r * cols + c] = yr[c] * (gr[c] - dotp);
                        }
                    }
                    contrib.push((*x, gx));
                }
                Op::LogSoftmax(x) => {
                    let (rows, cols) = node.value.as_matrix().expect("checked in forward");
                    let mut gx = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        let yr = &y[r * cols..][..cols];
                        let gr = &g[r * cols..][..cols];
                        let gsum: T = gr.iter().copied().sum();
                        for c in 0..cols {
                            gx[r * cols + c] = gr[c] - yr[c].exp() * gsum;
                        }
                    }
                    contrib.push((*x, gx));
                }
                Op::Reshape(x) => contrib.push((*x, g)),
                Op::Column { x, col } => {
                    let cols = self.shape(*x)[1];
                    let mut gx = vec![T::zero(); self.value(*x).len()];
                    for (r, &gi) in g.iter().enumerate() {
                        gx[r * cols + col] = gi;
                    }
                    contrib.push((*x, gx));
                }
                Op::Element { x, index } => {
                    let mut gx = vec![T::zero(); self.value(*x).len()];
                    gx[*index] = g[0];
                    contrib.push((*x, gx));
                }
                Op::LnClamped { x, floor } => {
                    let xd = self.value(*x).data();
                    let gx = g
                        .iter()
                        .zip(xd)
                        .map(|(&gi, &xi)| if xi > *floor { gi / xi } else { T::zero() })
                        .collect();
                    contrib.push((*x, gx));
                }
                Op::Sum(x) => contrib.push((*x, vec![g[0]; self.value(*x).len()])),
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    contrib.push((*x, vec![g[0] / T::lit(n as f64); n]));
                }
                Op::Scale { x, c } => contrib.push((*x, g.iter().map(|&v| v * *c).collect())),
                Op::Add(a, b) => {
                    contrib.push((*a, g.clone()));
                    contrib.push((*b, g));
                }
                Op::Mul(a, b) => {
                    let ad = self.value(*a).data();
                    let bd = self.value(*b).data();
                    contrib.push((*a, g.iter().zip(bd).map(|(&gi, &bi)| gi * bi).collect()));
                    contrib.push((*b, g.iter().zip(ad).map(|(&gi, &ai)| gi * ai).collect()));
                }
                Op::WeightedRows { a, h } => {
                    let ad = self.value(*a).data();
                    let ht = self.value(*h);
                    let (n, l) = (ht.shape()[0], ht.shape()[1]);
                    let mut ga = vec![T::zero(); n];
                    let mut gh = vec![T::zero(); n * l];
                    for i in 0..n {
                        ga[i] = kernels::dot(&g, &ht.data()[i * l..][..l]);
                        kernels::axpy(&mut gh[i * l..][..l], ad[i], &g);
                    }
                    contrib.push((*a, ga));
                    contrib.push((*h, gh));
                }
                Op::MeanRows(h) => {
                    let hs = self.shape(*h);
                    let (n, l) = (hs[0], hs[1]);
                    let inv = T::one() / T::lit(n as f64);
                    let mut gh = vec![T::zero(); n * l];
                    for i in 0..n {
                        kernels::axpy(&mut gh[i * l..][..l], inv, &g);
                    }
                    contrib.push((*h, gh));
                }
                Op::GroupedKl { a, groups } => {
                    let ad = self.value(*a).data();
                    let mut ga = vec![T::zero(); ad.len()];
                    if !groups.is_empty() {
                        let scale = g[0] / T::lit(groups.len() as f64);
                        for grp in groups {
                            let s: T = grp.iter().map(|&i| ad[i]).sum();
                            let ent: T = grp
                                .iter()
                                .map(|&i| {
                                    let p = ad[i] / s;
                                    p * p.ln()
                                })
                                .sum();
                            for &i in grp {
                                let p = ad[i] / s;
                                ga[i] += scale * (p.ln() - ent) / s;
                            }
                        }
                    }
                    contrib.push((*a, ga));
                }
            }
            for (var, gv) in contrib {
                if gv.iter().any(|v| !v.is_finite()) {
                    return Err(DiffError::NonFinite {
                        op: node.op.name(),
                        detail: format!("backward through node {idx}"),
                    });
                }
                match &mut grads[var.0] {
                    Some(acc) => kernels::axpy(acc, T::one(), &gv),
                    slot @ None => *slot = Some(gv),
                }
            }
        }
        Ok(grads)
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    let inv = T::one() / s;
    row.iter_mut().for_each(|v| *v *= inv);
}
