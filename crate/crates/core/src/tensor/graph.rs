//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Graph::backward`] is a single reverse sweep.
//! Parameters are bound by caller-chosen keys; binding the same key twice
//! (the two Siamese branches) sums both contributions into one gradient.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::kernels::{
    self, avg_pool_bwd, avg_pool_fwd, conv3d_bwd, conv3d_fwd, dense_bwd, dense_fwd, ConvGeom,
    PoolGeom, PROB_FLOOR,
};
use super::{Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Mse,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    AvgPool {
        x: Var,
        geom: PoolGeom,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
        dims: [usize; 3],
    },
    Relu(Var),
    Reshape(Var),
    Softmax {
        x: Var,
        cols: usize,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
        classes: usize,
    },
    Mse {
        probs: Var,
        labels: Vec<usize>,
        classes: usize,
    },
    Sum(Var),
    Square(Var),
    MeanGroups {
        x: Var,
        groups: Vec<Vec<usize>>,
        row: usize,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
        row: usize,
    },
    PairConcat {
        protos: Var,
        queries: Var,
        classes: usize,
        row: usize,
    },
    Concat {
        xs: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
    param: Option<usize>,
}

/// A recorded forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn take(lo: &mut [Option<Vec<f64>>], sizes: &[usize], v: Var) -> Vec<f64> {
    lo[v.0].take().unwrap_or_else(|| vec![0.0; sizes[v.0]])
}

fn put(lo: &mut [Option<Vec<f64>>], v: Var, buf: Vec<f64>) {
    match &mut lo[v.0] {
        Some(existing) => existing.iter_mut().zip(&buf).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(buf),
    }
}

fn row_len(t: &Tensor) -> usize {
    t.shape()[1..].iter().product()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool, param: Option<usize>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            tracked,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input: no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false, None)
    }

    /// A free leaf whose gradient is kept and readable via [`Graph::grad`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true, None)
    }

    /// Binds parameter `key` with its current value.
    pub fn param(&mut self, key: usize, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.clear_grad();
        self.push(value, Op::Leaf, true, Some(key))
    }

    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let geom = ConvGeom::new(xv.dims5()?, wv.dims5()?, stride, pad)?;
        if bv.len() != geom.out_ch {
            return Err(TensorError::ShapeMismatch {
                axis: "bias length",
                expected: geom.out_ch,
                actual: bv.len(),
            });
        }
        let shape = geom.out_shape();
        let mut out = vec![0.0; shape.iter().product()];
        conv3d_fwd(&geom, xv.data(), wv.data(), bv.data(), &mut out);
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Conv3d { x, w, b, geom },
            tracked,
            None,
        ))
    }

    pub fn avg_pool3d(&mut self, x: Var, window: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let xv = self.value(x);
        let in_shape = xv.dims5()?;
        let geom = PoolGeom::new(in_shape, window, stride)?;
        let shape = geom.out_shape(in_shape);
        let mut out = vec![0.0; shape.iter().product()];
        avg_pool_fwd(&geom, xv.data(), &mut out);
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::AvgPool { x, geom },
            tracked,
            None,
        ))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let [rows, in_dim] = xv.dims2()?;
        let [out_dim, w_in] = wv.dims2()?;
        if w_in != in_dim {
            return Err(TensorError::ShapeMismatch {
                axis: "dense input dimension",
                expected: w_in,
                actual: in_dim,
            });
        }
        if bv.len() != out_dim {
            return Err(TensorError::ShapeMismatch {
                axis: "bias length",
                expected: out_dim,
                actual: bv.len(),
            });
        }
        let mut out = vec![0.0; rows * out_dim];
        dense_fwd(
            rows,
            in_dim,
            out_dim,
            xv.data(),
            wv.data(),
            bv.data(),
            &mut out,
        );
        let tracked = self.tracked(x) || self.tracked(w) || self.tracked(b);
        let dims = [rows, in_dim, out_dim];
        Ok(self.push(
            Tensor::new(&[rows, out_dim], out)?,
            Op::Dense { x, w, b, dims },
            tracked,
            None,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = super::relu(self.value(x));
        let tracked = self.tracked(x);
        self.push(out, Op::Relu(x), tracked, None)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let tracked = self.tracked(x);
        Ok(self.push(out, Op::Reshape(x), tracked, None))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = super::softmax(self.value(x))?;
        let cols = out.shape()[1];
        let tracked = self.tracked(x);
        Ok(self.push(out, Op::Softmax { x, cols }, tracked, None))
    }

    pub fn loss(&mut self, kind: LossKind, probs: Var, labels: &[usize]) -> Result<Var> {
        match kind {
            LossKind::CrossEntropy => self.cross_entropy(probs, labels),
            LossKind::Mse => self.mse(probs, labels),
        }
    }

    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        let [rows, classes] = pv.dims2()?;
        kernels::check_labels(labels, rows, classes)?;
        let value = kernels::cross_entropy_value(classes, pv.data(), labels);
        let tracked = self.tracked(probs);
        let op = Op::CrossEntropy {
            probs,
            labels: labels.to_vec(),
            classes,
        };
        Ok(self.push(Tensor::scalar(value), op, tracked, None))
    }

    pub fn mse(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        let [rows, classes] = pv.dims2()?;
        kernels::check_labels(labels, rows, classes)?;
        let value = kernels::mse_value(classes, pv.data(), labels);
        let tracked = self.tracked(probs);
        let op = Op::Mse {
            probs,
            labels: labels.to_vec(),
            classes,
        };
        Ok(self.push(Tensor::scalar(value), op, tracked, None))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(total), Op::Sum(x), tracked, None)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * v).collect();
        let out = Tensor::new(xv.shape(), data).expect("same shape");
        let tracked = self.tracked(x);
        self.push(out, Op::Square(x), tracked, None)
    }

    /// Elementwise mean over groups of batch rows: `out[g] = mean(x[i] for i in groups[g])`.
    pub fn mean_groups(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.shape()[0];
        let row = row_len(xv);
        if groups.is_empty() || groups.iter().any(|g| g.is_empty()) {
            return Err(TensorError::InvalidArgument("mean over an empty group"));
        }
        if let Some(&bad) = groups.iter().flatten().find(|&&i| i >= n) {
            return Err(TensorError::ShapeMismatch {
                axis: "batch row",
                expected: n,
                actual: bad,
            });
        }
        let mut out = vec![0.0; groups.len() * row];
        for (g, rows) in groups.iter().enumerate() {
            let dst = &mut out[g * row..(g + 1) * row];
            for &i in rows {
                dst.iter_mut()
                    .zip(&xv.data()[i * row..(i + 1) * row])
                    .for_each(|(d, s)| *d += s);
            }
            let inv = 1.0 / rows.len() as f64;
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = groups.len();
        let tracked = self.tracked(x);
        let op = Op::MeanGroups {
            x,
            groups: groups.to_vec(),
            row,
        };
        Ok(self.push(Tensor::new(&shape, out)?, op, tracked, None))
    }

    /// Gathers batch rows, in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.shape()[0];
        let row = row_len(xv);
        if rows.is_empty() {
            return Err(TensorError::InvalidArgument("empty row selection"));
        }
        let mut out = Vec::with_capacity(rows.len() * row);
        for &i in rows {
            if i >= n {
                return Err(TensorError::ShapeMismatch {
                    axis: "batch row",
                    expected: n,
                    actual: i,
                });
            }
            out.extend_from_slice(&xv.data()[i * row..(i + 1) * row]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = rows.len();
        let tracked = self.tracked(x);
        let op = Op::SelectRows {
            x,
            rows: rows.to_vec(),
            row,
        };
        Ok(self.push(Tensor::new(&shape, out)?, op, tracked, None))
    }

    /// Pairs every query with every prototype, stacking the prototype's
    /// channels before the query's. Output row `qi * k + ki` holds
    /// `[protos[ki] ; queries[qi]]`, so the channel axis doubles.
    pub fn pair_concat(&mut self, protos: Var, queries: Var) -> Result<Var> {
        let (pv, qv) = (self.value(protos), self.value(queries));
        if pv.rank() < 2 || pv.shape()[1..] != qv.shape()[1..] {
            return Err(TensorError::ShapeMismatch {
                axis: "feature shape",
                expected: row_len(pv),
                actual: row_len(qv),
            });
        }
        let (k, q, row) = (pv.shape()[0], qv.shape()[0], row_len(pv));
        let mut out = Vec::with_capacity(q * k * 2 * row);
        for qi in 0..q {
            let qrow = &qv.data()[qi * row..(qi + 1) * row];
            for ki in 0..k {
                out.extend_from_slice(&pv.data()[ki * row..(ki + 1) * row]);
                out.extend_from_slice(qrow);
            }
        }
        let mut shape = pv.shape().to_vec();
        shape[0] = q * k;
        shape[1] *= 2;
        let tracked = self.tracked(protos) || self.tracked(queries);
        let op = Op::PairConcat {
            protos,
            queries,
            classes: k,
            row,
        };
        Ok(self.push(Tensor::new(&shape, out)?, op, tracked, None))
    }

    /// Concatenates along the batch axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or(TensorError::InvalidArgument("concat of nothing"))?;
        let rest = self.value(*first).shape()[1..].to_vec();
        let mut data = Vec::new();
        let mut n = 0;
        for &x in xs {
            let v = self.value(x);
            if v.shape()[1..] != rest[..] {
                return Err(TensorError::ShapeMismatch {
                    axis: "concat row shape",
                    expected: rest.iter().product(),
                    actual: row_len(v),
                });
            }
            n += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&rest);
        let tracked = xs.iter().any(|&x| self.tracked(x));
        Ok(self.push(
            Tensor::new(&shape, data)?,
            Op::Concat { xs: xs.to_vec() },
            tracked,
            None,
        ))
    }

    /// Back-propagates from a scalar `loss` through every tracked node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.len()));
        }
        if !self.tracked(loss) {
            return Err(TensorError::Detached);
        }
        let sizes: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            let node = &self.nodes[i];
            let tracked = |v: Var| self.nodes[v.0].tracked;
            match &node.op {
                Op::Leaf => {}
                Op::Conv3d { x, w, b, geom } => {
                    let mut gx = tracked(*x).then(|| take(lo, &sizes, *x));
                    let mut gw = tracked(*w).then(|| take(lo, &sizes, *w));
                    let mut gb = tracked(*b).then(|| take(lo, &sizes, *b));
                    conv3d_bwd(
                        geom,
                        self.nodes[x.0].value.data(),
                        self.nodes[w.0].value.data(),
                        g,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    for (v, buf) in [(*x, gx), (*w, gw), (*b, gb)] {
                        if let Some(buf) = buf {
                            put(lo, v, buf);
                        }
                    }
                }
                Op::AvgPool { x, geom } => {
                    if tracked(*x) {
                        let mut gx = take(lo, &sizes, *x);
                        avg_pool_bwd(geom, g, &mut gx);
                        put(lo, *x, gx);
                    }
                }
                Op::Dense { x, w, b, dims } => {
                    let [rows, in_dim, out_dim] = *dims;
                    let mut gx = tracked(*x).then(|| take(lo, &sizes, *x));
                    let mut gw = tracked(*w).then(|| take(lo, &sizes, *w));
                    let mut gb = tracked(*b).then(|| take(lo, &sizes, *b));
                    dense_bwd(
                        rows,
                        in_dim,
                        out_dim,
                        self.nodes[x.0].value.data(),
                        self.nodes[w.0].value.data(),
                        g,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    for (v, buf) in [(*x, gx), (*w, gw), (*b, gb)] {
                        if let Some(buf) = buf {
                            put(lo, v, buf);
                        }
                    }
                }
                Op::Relu(x) => {
                    if tracked(*x) {
                        let mut gx = take(lo, &sizes, *x);
                        for ((d, &o), &gi) in gx.iter_mut().zip(node.value.data()).zip(g) {
                            if o > 0.0 {
                                *d += gi;
                            }
                        }
                        put(lo, *x, gx);
                    }
                }
                Op::Reshape(x) => {
                    if tracked(*x) {
                        put(lo, *x, g.to_vec());
                    }
                }
                Op::Softmax { x, cols } => {
                    if tracked(*x) {
                        let mut gx = take(lo, &sizes, *x);
                        kernels::softmax_rows_bwd(*cols, node.value.data(), g, &mut gx);
                        put(lo, *x, gx);
                    }
                }
                Op::CrossEntropy {
                    probs,
                    labels,
                    classes,
                } => {
                    let pv = self.nodes[probs.0].value.data();
                    let mut gp = take(lo, &sizes, *probs);
                    let scale = g[0] / labels.len() as f64;
                    for (r, &l) in labels.iter().enumerate() {
                        let p = pv[r * classes + l];
                        if p > PROB_FLOOR {
                            gp[r * classes + l] -= scale / p;
                        }
                    }
                    put(lo, *probs, gp);
                }
                Op::Mse {
                    probs,
                    labels,
                    classes,
                } => {
                    let pv = self.nodes[probs.0].value.data();
                    let mut gp = take(lo, &sizes, *probs);
                    let scale = 2.0 * g[0] / (labels.len() * classes) as f64;
                    for (r, &l) in labels.iter().enumerate() {
                        for c in 0..*classes {
                            let target = if c == l { 1.0 } else { 0.0 };
                            gp[r * classes + c] += scale * (pv[r * classes + c] - target);
                        }
                    }
                    put(lo, *probs, gp);
                }
                Op::Sum(x) => {
                    if tracked(*x) {
                        put(lo, *x, vec![g[0]; sizes[x.0]]);
                    }
                }
                Op::Square(x) => {
                    if tracked(*x) {
                        let xv = self.nodes[x.0].value.data();
                        put(
                            lo,
                            *x,
                            xv.iter().zip(g).map(|(v, gi)| 2.0 * v * gi).collect(),
                        );
                    }
                }
                Op::MeanGroups { x, groups, row } => {
                    if tracked(*x) {
                        let mut gx = take(lo, &sizes, *x);
                        for (gi, rows) in groups.iter().enumerate() {
                            let inv = 1.0 / rows.len() as f64;
                            let src = &g[gi * row..(gi + 1) * row];
                            for &r in rows {
                                gx[r * row..(r + 1) * row]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(d, s)| *d += s * inv);
                            }
                        }
                        put(lo, *x, gx);
                    }
                }
                Op::SelectRows { x, rows, row } => {
                    if tracked(*x) {
                        let mut gx = take(lo, &sizes, *x);
                        for (j, &r) in rows.iter().enumerate() {
                            gx[r * row..(r + 1) * row]
                                .iter_mut()
                                .zip(&g[j * row..(j + 1) * row])
                                .for_each(|(d, s)| *d += s);
                        }
                        put(lo, *x, gx);
                    }
                }
                Op::PairConcat {
                    protos,
                    queries,
                    classes,
                    row,
                } => {
                    let (k, row) = (*classes, *row);
                    let mut gp = tracked(*protos).then(|| take(lo, &sizes, *protos));
                    let mut gq = tracked(*queries).then(|| take(lo, &sizes, *queries));
                    for (pair, chunk) in g.chunks_exact(2 * row).enumerate() {
                        let (qi, ki) = (pair / k, pair % k);
                        if let Some(gp) = gp.as_deref_mut() {
                            gp[ki * row..(ki + 1) * row]
                                .iter_mut()
                                .zip(&chunk[..row])
                                .for_each(|(d, s)| *d += s);
                        }
                        if let Some(gq) = gq.as_deref_mut() {
                            gq[qi * row..(qi + 1) * row]
                                .iter_mut()
                                .zip(&chunk[row..])
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                    for (v, buf) in [(*protos, gp), (*queries, gq)] {
                        if let Some(buf) = buf {
                            put(lo, v, buf);
                        }
                    }
                }
                Op::Concat { xs } => {
                    let mut offset = 0;
                    for &x in xs {
                        let n = sizes[x.0];
                        if tracked(x) {
                            put(lo, x, g[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                }
            }
            // Interior gradients are not needed once propagated.
            if !matches!(node.op, Op::Leaf) {
                hi[0] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Accumulates the gradient of every bound parameter into
    /// `params[key].grad`. Parameters unreachable from the loss receive zeros.
    pub fn write_param_grads(&self, params: &mut [&mut Tensor]) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            let Some(key) = node.param else { continue };
            let target = params
                .get_mut(key)
                .ok_or(TensorError::InvalidArgument("parameter key out of range"))?;
            match self.grads.get(i).and_then(|g| g.as_deref()) {
                Some(g) => target.accumulate_grad(g)?,
                None => target.accumulate_grad(&vec![0.0; node.value.len()])?,
            }
        }
        Ok(())
    }
}
