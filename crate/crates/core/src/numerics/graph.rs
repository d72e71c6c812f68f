//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters are
//! read from a borrowed [`ParamStore`]; calling [`Graph::backward`] on a scalar
//! node returns the gradient of every parameter block that was touched.

use std::collections::BTreeMap;

use super::kernels::{layer_norm_into, masked_softmax_into, sigmoid};
use super::params::{GradBlock, Gradients, ParamId, ParamStore};
use super::tensor::{matmul_at_into, matmul_bt_into, matmul_into, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise activation applied after a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

enum Op {
    Input,
    Param(ParamId),
    Embed {
        table: ParamId,
        indices: Vec<usize>,
    },
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    MaskedSoftmax {
        x: Var,
        mask: Vec<bool>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Row {
        x: Var,
        index: usize,
    },
    PadCols(Var),
    LstmCell {
        pre: Var,
        c_prev: Var,
        acts: Vec<f64>,
    },
    LogClamp {
        x: Var,
        eps: f64,
    },
    Pick {
        x: Var,
        cols: Vec<usize>,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_cache: Vec<Option<Var>>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_cache: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient outside the graph.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf node bound to a parameter block. Repeated calls reuse one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_cache[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id));
        self.param_cache[id.0] = Some(v);
        v
    }

    /// Gathers rows of an embedding table.
    pub fn embed(&mut self, table: ParamId, indices: &[usize]) -> Var {
        let t = self.store.get(table);
        let mut out = Tensor::zeros(indices.len(), t.cols());
        for (r, &i) in indices.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(i));
        }
        self.push(
            out,
            Op::Embed {
                table,
                indices: indices.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b)).expect("matmul shape");
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols(), bv.cols(), "matmul_bt inner dimension");
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = Tensor::zeros(m, n);
        matmul_bt_into(av.data(), bv.data(), out.data_mut(), m, k, n);
        self.push(out, Op::MatMulBt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.same_shape(bv), "add shape mismatch");
        let mut out = av.clone();
        out.add_assign(bv);
        self.push(out, Op::Add(a, b))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(bv.rows() == 1 && bv.cols() == av.cols(), "add_row shape");
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (x, y) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.same_shape(bv), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data).unwrap();
        self.push(out, Op::Mul(a, b))
    }

    /// Elementwise product with a constant tensor (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let av = self.value(a);
        assert!(av.same_shape(&c), "mul_const shape mismatch");
        let data = av.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data).unwrap();
        self.push(out, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Relu => self.relu(a),
            Activation::Tanh => self.tanh(a),
            Activation::Identity => a,
        }
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Row-wise softmax where `mask[r * cols + c]` marks allowed entries.
    pub fn masked_softmax(&mut self, x: Var, mask: Vec<bool>) -> Var {
        let xv = self.value(x);
        assert_eq!(mask.len(), xv.len(), "mask shape mismatch");
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            masked_softmax_into(
                xv.row(r),
                &mask[r * cols..(r + 1) * cols],
                out.row_mut(r),
            );
        }
        self.push(out, Op::MaskedSoftmax { x, mask })
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.masked_softmax(x, vec![true; n])
    }

    /// Row-wise layer normalization with `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, cols) = (xv.rows(), xv.cols());
        assert!(gv.shape() == [1, cols] && bv.shape() == [1, cols], "layer_norm shape");
        let mut out = Tensor::zeros(rows, cols);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            inv_std[r] = layer_norm_into(
                xv.row(r),
                gv.data(),
                bv.data(),
                eps,
                out.row_mut(r),
                &mut xhat[r * cols..(r + 1) * cols],
            );
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), cols, "stack_rows column mismatch");
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor::from_vec(rows, cols, data).unwrap();
        self.push(out, Op::StackRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start })
    }

    pub fn row(&mut self, x: Var, index: usize) -> Var {
        let out = Tensor::row_vector(self.value(x).row(index).to_vec());
        self.push(out, Op::Row { x, index })
    }

    /// Zero-pads columns on the right up to `width`.
    pub fn pad_cols(&mut self, x: Var, width: usize) -> Var {
        let xv = self.value(x);
        assert!(width >= xv.cols(), "pad_cols narrower than input");
        let mut out = Tensor::zeros(xv.rows(), width);
        for r in 0..xv.rows() {
            out.row_mut(r)[..xv.cols()].copy_from_slice(xv.row(r));
        }
        self.push(out, Op::PadCols(x))
    }

    /// Fused LSTM cell update from gate pre-activations (`1 x 4k`, ordered
    /// input, forget, candidate, output). Returns `[h ; c]` as a `1 x 2k` row.
    pub fn lstm_cell(&mut self, pre: Var, c_prev: Var) -> Var {
        let (pv, cv) = (self.value(pre), self.value(c_prev));
        let k = cv.cols();
        assert_eq!(pv.shape(), [1, 4 * k], "lstm_cell pre-activation shape");
        let p = pv.data();
        let mut acts = vec![0.0; 5 * k];
        let mut out = Tensor::zeros(1, 2 * k);
        for j in 0..k {
            let i = sigmoid(p[j]);
            let f = sigmoid(p[k + j]);
            let g = p[2 * k + j].tanh();
            let o = sigmoid(p[3 * k + j]);
            let c = f * cv.data()[j] + i * g;
            let tc = c.tanh();
            acts[j] = i;
            acts[k + j] = f;
            acts[2 * k + j] = g;
            acts[3 * k + j] = o;
            acts[4 * k + j] = tc;
            out.data_mut()[j] = o * tc;
            out.data_mut()[k + j] = c;
        }
        self.push(out, Op::LstmCell { pre, c_prev, acts })
    }

    /// `ln(max(x, eps))` elementwise.
    pub fn log_clamp(&mut self, x: Var, eps: f64) -> Var {
        let out = self.value(x).map(|v| v.max(eps).ln());
        self.push(out, Op::LogClamp { x, eps })
    }

    /// Column `cols[r]` of each row `r`, as an `rows x 1` column.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(cols.len(), xv.rows(), "pick needs one column per row");
        let data = cols.iter().enumerate().map(|(r, &c)| xv.get(r, c)).collect();
        let out = Tensor::from_vec(cols.len(), 1, data).unwrap();
        self.push(
            out,
            Op::Pick {
                x,
                cols: cols.to_vec(),
            },
        )
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::row_vector(vec![s]), Op::Sum(x))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on a non-scalar node");
        t.data()[0]
    }

    /// Backpropagates from scalar node `root` and collects parameter gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        self.backward_scaled(root, 1.0)
    }

    /// Backpropagation seeded with `d root = seed`.
    pub fn backward_scaled(&self, root: Var, seed: f64) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::filled(1, 1, seed));
        let mut out = Gradients::new(self.store.len());
        let mut embed_rows: BTreeMap<ParamId, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate_dense(*id, &g),
                Op::Embed { table, indices } => {
                    let rows = embed_rows.entry(*table).or_default();
                    for (r, &i) in indices.iter().enumerate() {
                        let acc = rows.entry(i).or_insert_with(|| vec![0.0; g.cols()]);
                        for (a, b) in acc.iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    // dA = G · Bᵀ, dB = Aᵀ · G
                    matmul_bt_into(g.data(), bv.data(), slot(&mut grads, *a, av).data_mut(), m, n, k);
                    matmul_at_into(av.data(), g.data(), slot(&mut grads, *b, bv).data_mut(), m, k, n);
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                    // C = A Bᵀ: dA = G · B, dB = Gᵀ · A
                    matmul_into(g.data(), bv.data(), slot(&mut grads, *a, av).data_mut(), m, n, k);
                    matmul_at_into(g.data(), av.data(), slot(&mut grads, *b, bv).data_mut(), m, n, k);
                }
                Op::Transpose(a) => {
                    slot(&mut grads, *a, self.value(*a)).add_assign(&g.transpose());
                }
                Op::Add(a, b) => {
                    slot(&mut grads, *a, self.value(*a)).add_assign(&g);
                    slot(&mut grads, *b, self.value(*b)).add_assign(&g);
                }
                Op::AddRow(a, b) => {
                    slot(&mut grads, *a, self.value(*a)).add_assign(&g);
                    let gb = slot(&mut grads, *b, self.value(*b));
                    for r in 0..g.rows() {
                        for (x, y) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, av);
                    for ((x, gi), bi) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *x += gi * bi;
                    }
                    let gb = slot(&mut grads, *b, bv);
                    for ((x, gi), ai) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *x += gi * ai;
                    }
                }
                Op::MulConst(a, c) => {
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for ((x, gi), ci) in ga.data_mut().iter_mut().zip(g.data()).zip(c.data()) {
                        *x += gi * ci;
                    }
                }
                Op::Scale(a, s) => {
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for (x, gi) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += gi * s;
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for ((x, gi), yi) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = slot(&mut grads, *a, self.value(*a));
                    for ((x, gi), yi) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += gi * (1.0 - yi * yi);
                    }
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let ga = slot(&mut grads, *a, av);
                    for ((x, gi), ai) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        if *ai > 0.0 {
                            *x += gi;
                        }
                    }
                }
                Op::MaskedSoftmax { x, mask } => {
                    let y = &node.value;
                    let cols = y.cols();
                    let gx = slot(&mut grads, *x, self.value(*x));
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            if mask[r * cols + c] {
                                out[c] += yr[c] * (gr[c] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let cols = gv.cols();
                    let n = cols as f64;
                    {
                        let gg = slot(&mut grads, *gain, gv);
                        for r in 0..g.rows() {
                            for c in 0..cols {
                                gg.data_mut()[c] += g.get(r, c) * xhat[r * cols + c];
                            }
                        }
                    }
                    {
                        let gb = slot(&mut grads, *bias, self.value(*bias));
                        for r in 0..g.rows() {
                            for (x, y) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                    }
                    let gx = slot(&mut grads, *x, self.value(*x));
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..g.rows() {
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dxhat[c] = g.get(r, c) * gv.data()[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n;
                        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            out[c] += inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let w = pv.cols();
                        let gp = slot(&mut grads, *p, pv);
                        for r in 0..g.rows() {
                            for (x, y) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *x += y;
                            }
                        }
                        offset += w;
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let n = pv.len();
                        let gp = slot(&mut grads, *p, pv);
                        for (x, y) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *x += y;
                        }
                        offset += n;
                    }
                }
                Op::SliceCols { x, start } => {
                    let gx = slot(&mut grads, *x, self.value(*x));
                    for r in 0..g.rows() {
                        for (a, b) in gx.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                            *a += b;
                        }
                    }
                }
                Op::Row { x, index } => {
                    let gx = slot(&mut grads, *x, self.value(*x));
                    for (a, b) in gx.row_mut(*index).iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                Op::PadCols(x) => {
                    let xv = self.value(*x);
                    let w = xv.cols();
                    let gx = slot(&mut grads, *x, xv);
                    for r in 0..g.rows() {
                        for (a, b) in gx.row_mut(r).iter_mut().zip(&g.row(r)[..w]) {
                            *a += b;
                        }
                    }
                }
                Op::LstmCell { pre, c_prev, acts } => {
                    let cv = self.value(*c_prev);
                    let k = cv.cols();
                    let mut dpre = vec![0.0; 4 * k];
                    let mut dc_prev = vec![0.0; k];
                    for j in 0..k {
                        let (i, f, gg, o, tc) = (
                            acts[j],
                            acts[k + j],
                            acts[2 * k + j],
                            acts[3 * k + j],
                            acts[4 * k + j],
                        );
                        let dh = g.data()[j];
                        let dc = g.data()[k + j] + dh * o * (1.0 - tc * tc);
                        let d_o = dh * tc;
                        let d_i = dc * gg;
                        let d_f = dc * cv.data()[j];
                        let d_g = dc * i;
                        dc_prev[j] = dc * f;
                        dpre[j] = d_i * i * (1.0 - i);
                        dpre[k + j] = d_f * f * (1.0 - f);
                        dpre[2 * k + j] = d_g * (1.0 - gg * gg);
                        dpre[3 * k + j] = d_o * o * (1.0 - o);
                    }
                    for (a, b) in slot(&mut grads, *pre, self.value(*pre)).data_mut().iter_mut().zip(&dpre) {
                        *a += b;
                    }
                    for (a, b) in slot(&mut grads, *c_prev, cv).data_mut().iter_mut().zip(&dc_prev) {
                        *a += b;
                    }
                }
                Op::LogClamp { x, eps } => {
                    let xv = self.value(*x);
                    let gx = slot(&mut grads, *x, xv);
                    for ((a, gi), xi) in gx.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                        if *xi > *eps {
                            *a += gi / xi;
                        }
                    }
                }
                Op::Pick { x, cols } => {
                    let gx = slot(&mut grads, *x, self.value(*x));
                    for (r, &c) in cols.iter().enumerate() {
                        let v = gx.get(r, c) + g.data()[r];
                        gx.set(r, c, v);
                    }
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    let gx = slot(&mut grads, *x, self.value(*x));
                    for a in gx.data_mut() {
                        *a += s;
                    }
                }
            }
        }

        for (table, entries) in embed_rows {
            let t = self.store.get(table);
            out.accumulate(
                table,
                GradBlock::Rows {
                    rows: t.rows(),
                    cols: t.cols(),
                    entries,
                },
            );
        }
        out
    }
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], v: Var, like: &Tensor) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.rows(), like.cols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::kernels::{lstm_step, LstmWeights};
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of every entry of every block.
    fn check(store: &mut ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let analytic = {
            let mut g = Graph::new(store);
            let root = f(&mut g);
            g.backward(root)
        };
        let eps = 1e-6;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let ga = analytic.dense(id, store);
            for i in 0..store.get(id).len() {
                let orig = store.get(id).data()[i];
                store.get_mut(id).data_mut()[i] = orig + eps;
                let fp = {
                    let mut g = Graph::new(store);
                    let r = f(&mut g);
                    g.scalar(r)
                };
                store.get_mut(id).data_mut()[i] = orig - eps;
                let fm = {
                    let mut g = Graph::new(store);
                    let r = f(&mut g);
                    g.scalar(r)
                };
                store.get_mut(id).data_mut()[i] = orig;
                let num = (fp - fm) / (2.0 * eps);
                let a = ga.data()[i];
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
                assert!(
                    rel < 1e-5 || (a - num).abs() < 1e-9,
                    "{} [{i}]: analytic {a}, numeric {num}",
                    store.name(id)
                );
            }
        }
    }

    #[test]
    fn gradients_of_dense_ops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut s = ParamStore::new();
        let a = s.register("a", rand_tensor(&mut rng, 3, 4)).unwrap();
        let b = s.register("b", rand_tensor(&mut rng, 4, 2)).unwrap();
        let c = s.register("c", rand_tensor(&mut rng, 5, 4)).unwrap();
        let bias = s.register("bias", rand_tensor(&mut rng, 1, 2)).unwrap();
        let gain = s.register("gain", rand_tensor(&mut rng, 1, 4)).unwrap();
        let lb = s.register("lb", rand_tensor(&mut rng, 1, 4)).unwrap();
        check(&mut s, |g| {
            let av = g.param(a);
            let h = g.affine(av, b, bias);
            let h = g.tanh(h);
            let cv = g.param(c);
            let sc = g.matmul_bt(av, cv);
            let mask: Vec<bool> = (0..15).map(|i| i % 4 != 1).collect();
            let p = g.masked_softmax(sc, mask);
            let ctx = g.matmul(p, cv);
            let gv = g.param(gain);
            let lbv = g.param(lb);
            let ln = g.layer_norm(ctx, gv, lbv, 1e-5);
            let ln = g.sigmoid(ln);
            let cat = g.concat_cols(&[h, ln]);
            let r0 = g.row(cat, 1);
            let r2 = g.row(cat, 2);
            let st = g.stack_rows(&[r2, r0]);
            let sl = g.slice_cols(st, 1, 4);
            let t = g.transpose(sl);
            let sq = g.mul(t, t);
            let sc = g.scale(sq, 0.7);
            let pad = g.pad_cols(sc, 4);
            let m = g.mul_const(pad, Tensor::filled(4, 4, 1.5));
            g.sum(m)
        });
    }

    #[test]
    fn gradients_of_lstm_and_loss_ops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut s = ParamStore::new();
        let k = 3;
        let x = s.register("x", rand_tensor(&mut rng, 4, 2)).unwrap();
        let wx = s.register("wx", rand_tensor(&mut rng, 2, 4 * k)).unwrap();
        let wh = s.register("wh", rand_tensor(&mut rng, k, 4 * k)).unwrap();
        let b = s.register("b", rand_tensor(&mut rng, 1, 4 * k)).unwrap();
        let emb = s.register("emb", rand_tensor(&mut rng, 5, 2)).unwrap();
        check(&mut s, |g| {
            let xv = g.param(x);
            let e = g.embed(emb, &[1, 3, 1, 4]);
            let xin = g.add(xv, e);
            let proj = g.affine(xin, wx, b);
            let whv = g.param(wh);
            let mut h = g.input(Tensor::zeros(1, k));
            let mut c = g.input(Tensor::zeros(1, k));
            let mut hs = Vec::new();
            for t in 0..4 {
                let row = g.row(proj, t);
                let rec = g.matmul(h, whv);
                let pre = g.add(row, rec);
                let hc = g.lstm_cell(pre, c);
                h = g.slice_cols(hc, 0, k);
                c = g.slice_cols(hc, k, k);
                hs.push(h);
            }
            let hmat = g.stack_rows(&hs);
            let p = g.softmax(hmat);
            let lp = g.log_clamp(p, 1e-12);
            let picked = g.pick(lp, &[0, 2, 1, 1]);
            let s = g.sum(picked);
            g.scale(s, -0.25)
        });
    }

    #[test]
    fn relu_and_masked_softmax_zero_gradients() {
        let mut s = ParamStore::new();
        let x = s
            .register("x", Tensor::row_vector(vec![0.3, -2.0, 1.0, 4.0]))
            .unwrap();
        let mut g = Graph::new(&s);
        let xv = g.param(x);
        let p = g.masked_softmax(xv, vec![true, true, false, true]);
        let w = g.input(Tensor::row_vector(vec![1.0, 2.0, 3.0, 4.0]));
        let m = g.mul(p, w);
        let r = g.sum(m);
        let grads = g.backward(r);
        let gx = grads.dense(x, &s);
        assert_eq!(gx.data()[2], 0.0);
        assert!(gx.data()[0] != 0.0);
    }

    #[test]
    fn fused_cell_matches_value_level_step() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let k = 4;
        let mut s = ParamStore::new();
        let wx = s.register("wx", rand_tensor(&mut rng, 3, 4 * k)).unwrap();
        let wh = s.register("wh", rand_tensor(&mut rng, k, 4 * k)).unwrap();
        let b = s.register("b", rand_tensor(&mut rng, 1, 4 * k)).unwrap();
        let x = rand_tensor(&mut rng, 1, 3);
        let h0 = rand_tensor(&mut rng, 1, k);
        let c0 = rand_tensor(&mut rng, 1, k);
        let w = LstmWeights {
            w_input: s.get(wx).data(),
            w_hidden: s.get(wh).data(),
            bias: s.get(b).data(),
            input_dim: 3,
            hidden: k,
        };
        let (h, c) = lstm_step(x.data(), h0.data(), c0.data(), &w).unwrap();

        let mut g = Graph::new(&s);
        let xv = g.input(x);
        let hv = g.input(h0);
        let cv = g.input(c0);
        let proj = g.affine(xv, wx, b);
        let whv = g.param(wh);
        let rec = g.matmul(hv, whv);
        let pre = g.add(proj, rec);
        let hc = g.lstm_cell(pre, cv);
        let out = g.value(hc).data();
        for j in 0..k {
            assert!((out[j] - h[j]).abs() < 1e-14);
            assert!((out[k + j] - c[j]).abs() < 1e-14);
        }
    }
}
