//! Forward evaluation and reverse-mode differentiation of a [`Graph`].

use std::collections::BTreeMap;

use crate::error::{DiffError, Result};
use crate::graph::{rows_last, Graph, NodeId, Op};
use crate::kernels::{self, ConvGeom};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Named input tensors for one evaluation.
#[derive(Clone, Debug, Default)]
pub struct Inputs {
    tensors: BTreeMap<String, Tensor>,
}

impl Inputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn with(mut self, name: impl Into<String>, tensor: Tensor) -> Self {
        self.insert(name, tensor);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }
}

/// Forward values of every node of a graph.
#[derive(Clone, Debug)]
pub struct Evaluation {
    values: Vec<Tensor>,
}

impl Evaluation {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.index()]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.values[id.index()].item()
    }
}

/// Gradients of a scalar loss with respect to parameters and differentiable inputs.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub params: BTreeMap<String, Tensor>,
    pub inputs: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn input(&self, name: &str) -> Option<&Tensor> {
        self.inputs.get(name)
    }

    /// Largest absolute gradient entry across all parameters.
    pub fn max_abs(&self) -> f64 {
        self.params
            .values()
            .flat_map(|t| t.data().iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Sums `other` into `self`, entry by entry.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (map, src) in [
            (&mut self.params, &other.params),
            (&mut self.inputs, &other.inputs),
        ] {
            for (name, g) in src {
                match map.get_mut(name) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        map.insert(name.clone(), g.clone());
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Computes every node's value. Pure: identical bindings give bit-identical results.
    pub fn evaluate(&self, params: &ParamSet, inputs: &Inputs) -> Result<Evaluation> {
        let mut eval = Evaluation {
            values: Vec::with_capacity(self.nodes.len()),
        };
        self.extend_evaluation(&mut eval, params, inputs)?;
        Ok(eval)
    }

    /// Evaluates only the nodes appended since `eval` was produced.
    ///
    /// Lets a caller inspect intermediate values, grow the graph with nodes that
    /// depend on them (as constants or index lists), and finish the pass without
    /// recomputing the prefix. `params` and `inputs` must be the same bindings.
    pub fn extend_evaluation(
        &self,
        eval: &mut Evaluation,
        params: &ParamSet,
        inputs: &Inputs,
    ) -> Result<()> {
        if eval.values.len() > self.nodes.len() {
            return Err(DiffError::StaleEvaluation {
                values: eval.values.len(),
                nodes: self.nodes.len(),
            });
        }
        let start = eval.values.len();
        let values = &mut eval.values;
        for (idx, node) in self.nodes.iter().enumerate().skip(start) {
            let v = |id: NodeId| -> &Tensor { &values[id.index()] };
            let shape = node.shape.clone();
            let data: Vec<f64> = match &node.op {
                Op::Input { name, .. } => {
                    let t = inputs
                        .get(name)
                        .ok_or_else(|| DiffError::MissingInput(name.clone()))?;
                    check_binding("input", name, &node.shape, t)?;
                    t.data().to_vec()
                }
                Op::Param(name) => {
                    let t = params
                        .get(name)
                        .ok_or_else(|| DiffError::MissingParameter(name.clone()))?;
                    check_binding("parameter", name, &node.shape, t)?;
                    t.data().to_vec()
                }
                Op::Constant(t) => t.data().to_vec(),
                Op::Affine { x, weight, bias } => {
                    let (rows, k) = rows_last(v(*x).shape());
                    let m = v(*bias).len();
                    kernels::affine(v(*x).data(), v(*weight).data(), v(*bias).data(), rows, k, m)
                }
                Op::MatMulT { a, b } => {
                    let (n, d) = rows_last(v(*a).shape());
                    let m = v(*b).shape()[0];
                    kernels::matmul_t(v(*a).data(), v(*b).data(), n, m, d)
                }
                Op::Conv2d {
                    x,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let geom =
                        conv_geom(v(*x).shape(), v(*weight).shape(), &shape, *stride, *padding);
                    kernels::conv2d_forward(&geom, v(*x).data(), v(*weight).data(), v(*bias).data())
                }
                Op::Reshape(x) | Op::StopGradient(x) => v(*x).data().to_vec(),
                Op::Relu(x) => v(*x).data().iter().map(|&a| a.max(0.0)).collect(),
                Op::Tanh(x) => v(*x).data().iter().map(|a| a.tanh()).collect(),
                Op::Exp(x) => v(*x).data().iter().map(|a| a.exp()).collect(),
                Op::Softmax(x) | Op::LogSoftmax(x) => {
                    let src = v(*x);
                    let d = src.last_dim();
                    let mut out = vec![0.0; src.len()];
                    let log = matches!(node.op, Op::LogSoftmax(_));
                    for (o, r) in out.chunks_mut(d).zip(src.data().chunks(d)) {
                        if log {
                            kernels::log_softmax_row(r, o);
                        } else {
                            kernels::softmax_row(r, o);
                        }
                    }
                    out
                }
                Op::Add(a, b) => zip(v(*a), v(*b), |p, q| p + q),
                Op::Sub(a, b) => zip(v(*a), v(*b), |p, q| p - q),
                Op::Mul(a, b) => zip(v(*a), v(*b), |p, q| p * q),
                Op::Minimum(a, b) => zip(v(*a), v(*b), |p, q| if p <= q { p } else { q }),
                Op::Scale(x, c) => v(*x).data().iter().map(|a| a * c).collect(),
                Op::Clamp { x, lo, hi } => v(*x).data().iter().map(|a| a.clamp(*lo, *hi)).collect(),
                Op::L2Norm(x) => rows(v(*x)).map(norm).collect(),
                Op::NormalizeRows(x) => rows(v(*x))
                    .flat_map(|r| {
                        let n = norm(r);
                        r.iter().map(move |a| a / n)
                    })
                    .collect(),
                Op::CosineSimilarity(a, b) => rows(v(*a))
                    .zip(rows(v(*b)))
                    .map(|(p, q)| kernels::dot(p, q) / (norm(p) * norm(q)))
                    .collect(),
                Op::SquaredDistance(a, b) => rows(v(*a))
                    .zip(rows(v(*b)))
                    .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum())
                    .collect(),
                Op::CrossEntropy { target, log_probs } => rows(v(*target))
                    .zip(rows(v(*log_probs)))
                    .map(|(t, l)| -kernels::dot(t, l))
                    .collect(),
                Op::SumRows(x) => rows(v(*x)).map(|r| r.iter().sum()).collect(),
                Op::Sum(x) => vec![v(*x).data().iter().sum()],
                Op::Mean(x) => vec![v(*x).data().iter().sum::<f64>() / v(*x).len() as f64],
                Op::GatherRows { x, indices } => {
                    let src = v(*x);
                    indices
                        .iter()
                        .flat_map(|&i| src.row(i).iter().copied())
                        .collect()
                }
                Op::PickColumns { x, columns } => {
                    let src = v(*x);
                    columns
                        .iter()
                        .enumerate()
                        .map(|(r, &c)| src.row(r)[c])
                        .collect()
                }
            };
            if data.iter().any(|a| !a.is_finite()) {
                return Err(DiffError::NonFinite {
                    node: idx,
                    op: node.op.name(),
                });
            }
            values.push(Tensor::new(shape, data)?);
        }
        Ok(())
    }

    /// Exact reverse-mode gradients of scalar node `loss`.
    ///
    /// Every parameter leaf gets an entry (zero when unreachable); nodes behind a
    /// stop-gradient marker receive nothing.
    pub fn backward(&self, eval: &Evaluation, loss: NodeId) -> Result<Gradients> {
        if eval.values.len() != self.nodes.len() {
            return Err(DiffError::StaleEvaluation {
                values: eval.values.len(),
                nodes: self.nodes.len(),
            });
        }
        let loss_shape = &self.nodes[loss.index()].shape;
        if eval.values[loss.index()].len() != 1 {
            return Err(DiffError::NonScalarLoss {
                node: loss.index(),
                shape: loss_shape.clone(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.index() + 1];
        adj[loss.index()] = Some(vec![1.0]);
        let mut grads = Gradients::default();

        for idx in (0..=loss.index()).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let val = |id: NodeId| -> &Tensor { &eval.values[id.index()] };
            let y = &eval.values[idx];
            let send = |target: NodeId, g: Vec<f64>, adj: &mut Vec<Option<Vec<f64>>>| {
                if !self.nodes[target.index()].needs_grad {
                    return;
                }
                match &mut adj[target.index()] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Input { name, .. } => accumulate(&mut grads.inputs, name, &node.shape, dy),
                Op::Param(name) => accumulate(&mut grads.params, name, &node.shape, dy),
                Op::Constant(_) | Op::StopGradient(_) => {}
                Op::Affine { x, weight, bias } => {
                    let (rows, k) = rows_last(val(*x).shape());
                    let m = val(*bias).len();
                    let (xd, wd) = (val(*x).data(), val(*weight).data());
                    if self.nodes[x.index()].needs_grad {
                        let mut dx = vec![0.0; rows * k];
                        for r in 0..rows {
                            let g = &dy[r * m..(r + 1) * m];
                            for i in 0..k {
                                dx[r * k + i] = kernels::dot(g, &wd[i * m..(i + 1) * m]);
                            }
                        }
                        send(*x, dx, &mut adj);
                    }
                    let mut dw = vec![0.0; k * m];
                    let mut db = vec![0.0; m];
                    for r in 0..rows {
                        let g = &dy[r * m..(r + 1) * m];
                        for (b, gv) in db.iter_mut().zip(g) {
                            *b += gv;
                        }
                        for i in 0..k {
                            let xv = xd[r * k + i];
                            if xv == 0.0 {
                                continue;
                            }
                            for (w, gv) in dw[i * m..(i + 1) * m].iter_mut().zip(g) {
                                *w += xv * gv;
                            }
                        }
                    }
                    send(*weight, dw, &mut adj);
                    send(*bias, db, &mut adj);
                }
                Op::MatMulT { a, b } => {
                    let (n, d) = rows_last(val(*a).shape());
                    let m = val(*b).shape()[0];
                    let (ad, bd) = (val(*a).data(), val(*b).data());
                    let mut da = vec![0.0; n * d];
                    let mut db = vec![0.0; m * d];
                    for i in 0..n {
                        for j in 0..m {
                            let g = dy[i * m + j];
                            if g == 0.0 {
                                continue;
                            }
                            for t in 0..d {
                                da[i * d + t] += g * bd[j * d + t];
                                db[j * d + t] += g * ad[i * d + t];
                            }
                        }
                    }
                    send(*a, da, &mut adj);
                    send(*b, db, &mut adj);
                }
                Op::Conv2d {
                    x,
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let geom = conv_geom(
                        val(*x).shape(),
                        val(*weight).shape(),
                        &node.shape,
                        *stride,
                        *padding,
                    );
                    let want_dx = self.nodes[x.index()].needs_grad;
                    let (dx, dw, db) = kernels::conv2d_backward(
                        &geom,
                        val(*x).data(),
                        val(*weight).data(),
                        &dy,
                        want_dx,
                    );
                    if let Some(dx) = dx {
                        send(*x, dx, &mut adj);
                    }
                    send(*weight, dw, &mut adj);
                    send(*bias, db, &mut adj);
                }
                Op::Reshape(x) => send(*x, dy, &mut adj),
                Op::Relu(x) => {
                    let g = dy
                        .iter()
                        .zip(val(*x).data())
                        .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
                        .collect();
                    send(*x, g, &mut adj);
                }
                Op::Tanh(x) => {
                    let g = dy
                        .iter()
                        .zip(y.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    send(*x, g, &mut adj);
                }
                Op::Exp(x) => {
                    let g = dy.iter().zip(y.data()).map(|(g, e)| g * e).collect();
                    send(*x, g, &mut adj);
                }
                Op::Softmax(x) => {
                    let d = y.last_dim();
                    let mut g = vec![0.0; dy.len()];
                    for ((o, gy), s) in g.chunks_mut(d).zip(dy.chunks(d)).zip(y.data().chunks(d)) {
                        let inner = kernels::dot(gy, s);
                        for ((o, gv), sv) in o.iter_mut().zip(gy).zip(s) {
                            *o = sv * (gv - inner);
                        }
                    }
                    send(*x, g, &mut adj);
                }
                Op::LogSoftmax(x) => {
                    let d = y.last_dim();
                    let mut g = vec![0.0; dy.len()];
                    for ((o, gy), l) in g.chunks_mut(d).zip(dy.chunks(d)).zip(y.data().chunks(d)) {
                        let total: f64 = gy.iter().sum();
                        for ((o, gv), lv) in o.iter_mut().zip(gy).zip(l) {
                            *o = gv - lv.exp() * total;
                        }
                    }
                    send(*x, g, &mut adj);
                }
                Op::Add(a, b) => {
                    send(*b, dy.clone(), &mut adj);
                    send(*a, dy, &mut adj);
                }
                Op::Sub(a, b) => {
                    send(*b, dy.iter().map(|g| -g).collect(), &mut adj);
                    send(*a, dy, &mut adj);
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (val(*a).data(), val(*b).data());
                    send(
                        *a,
                        dy.iter().zip(bd).map(|(g, q)| g * q).collect(),
                        &mut adj,
                    );
                    send(
                        *b,
                        dy.iter().zip(ad).map(|(g, p)| g * p).collect(),
                        &mut adj,
                    );
                }
                Op::Minimum(a, b) => {
                    let (ad, bd) = (val(*a).data(), val(*b).data());
                    let mut ga = vec![0.0; dy.len()];
                    let mut gb = vec![0.0; dy.len()];
                    for i in 0..dy.len() {
                        if ad[i] <= bd[i] {
                            ga[i] = dy[i];
                        } else {
                            gb[i] = dy[i];
                        }
                    }
                    send(*a, ga, &mut adj);
                    send(*b, gb, &mut adj);
                }
                Op::Scale(x, c) => send(*x, dy.iter().map(|g| g * c).collect(), &mut adj),
                Op::Clamp { x, lo, hi } => {
                    let g = dy
                        .iter()
                        .zip(val(*x).data())
                        .map(|(g, a)| if *a >= *lo && *a <= *hi { *g } else { 0.0 })
                        .collect();
                    send(*x, g, &mut adj);
                }
                Op::L2Norm(x) => {
                    let src = val(*x);
                    let d = src.last_dim();
                    let mut g = Vec::with_capacity(src.len());
                    for (r, (gv, n)) in rows(src).zip(dy.iter().zip(y.data())) {
                        g.extend(r.iter().map(|a| gv * a / n));
                    }
                    debug_assert_eq!(g.len() % d.max(1), 0);
                    send(*x, g, &mut adj);
                }
                Op::NormalizeRows(x) => {
                    let src = val(*x);
                    let d = src.last_dim();
                    let mut g = vec![0.0; src.len()];
                    for (((o, r), gy), u) in g
                        .chunks_mut(d)
                        .zip(rows(src))
                        .zip(dy.chunks(d))
                        .zip(y.data().chunks(d))
                    {
                        let n = norm(r);
                        let inner = kernels::dot(u, gy);
                        for ((o, gv), uv) in o.iter_mut().zip(gy).zip(u) {
                            *o = (gv - uv * inner) / n;
                        }
                    }
                    send(*x, g, &mut adj);
                }
                Op::CosineSimilarity(a, b) => {
                    let (sa, sb) = (val(*a), val(*b));
                    let d = sa.last_dim();
                    let mut ga = vec![0.0; sa.len()];
                    let mut gb = vec![0.0; sb.len()];
                    for (i, (p, q)) in rows(sa).zip(rows(sb)).enumerate() {
                        let (np, nq) = (norm(p), norm(q));
                        let c = y.data()[i];
                        let g = dy[i];
                        for t in 0..d {
                            ga[i * d + t] = g * (q[t] / (np * nq) - c * p[t] / (np * np));
                            gb[i * d + t] = g * (p[t] / (np * nq) - c * q[t] / (nq * nq));
                        }
                    }
                    send(*a, ga, &mut adj);
                    send(*b, gb, &mut adj);
                }
                Op::SquaredDistance(a, b) => {
                    let (sa, sb) = (val(*a), val(*b));
                    let d = sa.last_dim();
                    let mut ga = vec![0.0; sa.len()];
                    for (i, (p, q)) in rows(sa).zip(rows(sb)).enumerate() {
                        for t in 0..d {
                            ga[i * d + t] = 2.0 * dy[i] * (p[t] - q[t]);
                        }
                    }
                    send(*b, ga.iter().map(|g| -g).collect(), &mut adj);
                    send(*a, ga, &mut adj);
                }
                Op::CrossEntropy { target, log_probs } => {
                    let (st, sl) = (val(*target), val(*log_probs));
                    let d = st.last_dim();
                    let mut gt = vec![0.0; st.len()];
                    let mut gl = vec![0.0; sl.len()];
                    for i in 0..st.rows() {
                        for t in 0..d {
                            gt[i * d + t] = -dy[i] * sl.data()[i * d + t];
                            gl[i * d + t] = -dy[i] * st.data()[i * d + t];
                        }
                    }
                    send(*target, gt, &mut adj);
                    send(*log_probs, gl, &mut adj);
                }
                Op::SumRows(x) => {
                    let d = val(*x).last_dim();
                    let g = dy.iter().flat_map(|g| std::iter::repeat_n(*g, d)).collect();
                    send(*x, g, &mut adj);
                }
                Op::Sum(x) => send(*x, vec![dy[0]; val(*x).len()], &mut adj),
                Op::Mean(x) => {
                    let n = val(*x).len();
                    send(*x, vec![dy[0] / n as f64; n], &mut adj);
                }
                Op::GatherRows { x, indices } => {
                    let src = val(*x);
                    let d = src.last_dim();
                    let mut g = vec![0.0; src.len()];
                    for (k, &i) in indices.iter().enumerate() {
                        for t in 0..d {
                            g[i * d + t] += dy[k * d + t];
                        }
                    }
                    send(*x, g, &mut adj);
                }
                Op::PickColumns { x, columns } => {
                    let src = val(*x);
                    let d = src.last_dim();
                    let mut g = vec![0.0; src.len()];
                    for (r, &c) in columns.iter().enumerate() {
                        g[r * d + c] = dy[r];
                    }
                    send(*x, g, &mut adj);
                }
            }
        }

        // Parameters the loss does not reach still get an (exactly zero) entry.
        for node in &self.nodes {
            if let Op::Param(name) = &node.op {
                grads
                    .params
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(&node.shape));
            }
        }
        Ok(grads)
    }

    /// Evaluates and differentiates in one call, returning the loss value too.
    pub fn value_and_grad(
        &self,
        params: &ParamSet,
        inputs: &Inputs,
        loss: NodeId,
    ) -> Result<(f64, Gradients)> {
        let eval = self.evaluate(params, inputs)?;
        let grads = self.backward(&eval, loss)?;
        Ok((eval.scalar(loss), grads))
    }
}

fn check_binding(kind: &'static str, name: &str, expected: &[usize], t: &Tensor) -> Result<()> {
    if t.shape() != expected {
        return Err(DiffError::BindingShape {
            kind,
            name: name.to_string(),
            expected: expected.to_vec(),
            actual: t.shape().to_vec(),
        });
    }
    if !t.is_finite() {
        return Err(DiffError::NonFiniteInput {
            kind,
            name: name.to_string(),
        });
    }
    Ok(())
}

fn accumulate(map: &mut BTreeMap<String, Tensor>, name: &str, shape: &[usize], g: Vec<f64>) {
    match map.get_mut(name) {
        Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => {
            map.insert(
                name.to_string(),
                Tensor::new(shape.to_vec(), g).expect("gradient matches node shape"),
            );
        }
    }
}

fn conv_geom(xs: &[usize], ws: &[usize], ys: &[usize], stride: usize, pad: usize) -> ConvGeom {
    ConvGeom {
        n: xs[0],
        c: xs[1],
        h: xs[2],
        w: xs[3],
        o: ws[0],
        kh: ws[2],
        kw: ws[3],
        oh: ys[2],
        ow: ys[3],
        stride,
        pad,
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| f(p, q))
        .collect()
}

fn rows(t: &Tensor) -> std::slice::Chunks<'_, f64> {
    t.data().chunks(t.last_dim().max(1))
}

fn norm(r: &[f64]) -> f64 {
    kernels::dot(r, r).sqrt()
}
