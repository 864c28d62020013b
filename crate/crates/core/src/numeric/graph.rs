//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly, so values are available as
//! soon as an op returns. [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients for every node that contributed to the output.

use std::collections::HashMap;

use super::tensor::{log_softmax, softmax, Tensor, NORM_EPS};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    NormalizeRows(Var),
    GatherRows(Var, Vec<usize>),
    Detach,
    WeightedInfoNce {
        input: Var,
        coeffs: Vec<f64>,
        probs: Vec<f64>,
        tau: f64,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    KlDiv {
        student: Var,
        teacher_probs: Vec<f64>,
        student_probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("{op:?}").chars().take(40).collect()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Differentiable leaf registered under `name`. Binding the same name twice
    /// returns the original node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Result<Var> {
        if let Some(&var) = self.params.get(name) {
            return Ok(var);
        }
        let var = self.push(value.clone(), Op::Leaf)?;
        self.params.insert(name.to_string(), var);
        Ok(var)
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_transposed(self.value(b))?;
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.value(a).add_row(self.value(bias))?;
        self.push(value, Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).relu();
        self.push(value, Op::Relu(a))
    }

    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (value, _) = self.value(a).normalize_rows()?;
        self.push(value, Op::NormalizeRows(a))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(a).gather_rows(indices)?;
        self.push(value, Op::GatherRows(a, indices.to_vec()))
    }

    /// Copies `a` into a leaf that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).clone();
        self.push(value, Op::Detach)
    }

    /// `-Σ_{j,p} C[j,p] · log softmax_{a≠j}(h_a·h_j/τ)[p]` over unit rows `h`.
    ///
    /// `coeffs` is a row-major `N×N` matrix with a zero diagonal. Every
    /// supervised and self-supervised contrastive objective in the crate is an
    /// instance of this op with a different coefficient matrix.
    pub fn weighted_info_nce(&mut self, input: Var, coeffs: Vec<f64>, tau: f64) -> Result<Var> {
        let h = self.value(input);
        let n = h.rows();
        if n < 2 {
            return Err(Error::Capacity("contrastive term needs at least two items".into()));
        }
        if coeffs.len() != n * n {
            return Err(Error::dim(
                "weighted_info_nce",
                format!("{} coefficients for {n} items", coeffs.len()),
            ));
        }
        if !(tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        let sims = h.matmul_transposed(h)?;
        let mut probs = vec![0.0; n * n];
        let mut loss = 0.0;
        for j in 0..n {
            let row = sims.row(j);
            let max = (0..n)
                .filter(|&a| a != j)
                .map(|a| row[a] / tau)
                .fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = (0..n).filter(|&a| a != j).map(|a| (row[a] / tau - max).exp()).sum();
            let lse = max + denom.ln();
            for a in 0..n {
                if a == j {
                    continue;
                }
                let log_p = row[a] / tau - lse;
                probs[j * n + a] = log_p.exp();
                let c = coeffs[j * n + a];
                if c != 0.0 {
                    loss -= c * log_p;
                }
            }
        }
        self.push(
            Tensor::scalar(loss),
            Op::WeightedInfoNce {
                input,
                coeffs,
                probs,
                tau,
            },
        )
    }

    /// Mean cross-entropy of each logit row against its target column.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let (b, c) = z.dims2();
        if targets.len() != b {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} targets for {b} rows", targets.len()),
            ));
        }
        let mut probs = Vec::with_capacity(b * c);
        let mut loss = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::Bounds { index: t, len: c });
            }
            let log_p = log_softmax(z.row(i));
            loss -= log_p[t];
            probs.extend(log_p.iter().map(|v| v.exp()));
        }
        loss /= b as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean over rows of `KL(softmax(teacher) ‖ softmax(student))`.
    ///
    /// Gradients reach `student` only; the teacher side is a constant.
    pub fn kl_div(&mut self, teacher: Var, student: Var) -> Result<Var> {
        let t = self.value(teacher);
        let s = self.value(student);
        if t.shape() != s.shape() {
            return Err(Error::Shape(format!(
                "teacher {:?} vs student {:?}",
                t.shape(),
                s.shape()
            )));
        }
        let (b, c) = s.dims2();
        let mut teacher_probs = Vec::with_capacity(b * c);
        let mut student_probs = Vec::with_capacity(b * c);
        let mut loss = 0.0;
        for i in 0..b {
            let log_t = log_softmax(t.row(i));
            let log_s = log_softmax(s.row(i));
            for k in 0..c {
                let pt = log_t[k].exp();
                if pt > 0.0 {
                    loss += pt * (log_t[k] - log_s[k]);
                }
                teacher_probs.push(pt);
                student_probs.push(log_s[k].exp());
            }
        }
        loss /= b as f64;
        self.push(
            Tensor::scalar(loss.max(0.0)),
            Op::KlDiv {
                student,
                teacher_probs,
                student_probs,
            },
        )
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Detach) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf | Op::Detach => unreachable!(),
                Op::MatMul(a, b) => {
                    let da = upstream.matmul_transposed(self.value(*b))?;
                    let db = self.value(*a).transpose().matmul(&upstream)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // out = a bᵀ ⇒ da = g b, db = gᵀ a
                    let da = upstream.matmul(self.value(*b))?;
                    let db = upstream.transpose().matmul(self.value(*a))?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, bias) => {
                    let (m, n) = upstream.dims2();
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for (d, g) in db.iter_mut().zip(upstream.row(i)) {
                            *d += g;
                        }
                    }
                    let bias_shape = self.value(*bias).shape().to_vec();
                    accumulate(&mut grads, *bias, Tensor::new(bias_shape, db)?);
                    accumulate(&mut grads, *a, upstream);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, upstream.clone());
                    accumulate(&mut grads, *a, upstream);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, upstream.scale(*s)),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut g = upstream;
                    for (gv, &xv) in g.values_mut().iter_mut().zip(x.values()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::NormalizeRows(a) => {
                    // y = x/‖x‖ ⇒ dx = (g − y (y·g)) / ‖x‖
                    let x = self.value(*a);
                    let y = &node.value;
                    let (m, n) = y.dims2();
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let norm = super::tensor::l2_norm(x.row(i)).max(NORM_EPS);
                        let yr = y.row(i);
                        let gr = upstream.row(i);
                        let proj = super::tensor::dot(yr, gr);
                        for k in 0..n {
                            dx[i * n + k] = (gr[k] - yr[k] * proj) / norm;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), dx)?);
                }
                Op::GatherRows(a, indices) => {
                    let x = self.value(*a);
                    let mut dx = Tensor::zeros(x.shape());
                    for (r, &i) in indices.iter().enumerate() {
                        for (d, g) in dx.row_mut(i).iter_mut().zip(upstream.row(r)) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::WeightedInfoNce {
                    input,
                    coeffs,
                    probs,
                    tau,
                } => {
                    let g = upstream.item();
                    let h = self.value(*input);
                    let n = h.rows();
                    // dL/dS[j,a] = (Σ_p C[j,p]) · P[j,a] − C[j,a], with S = h hᵀ / τ
                    let mut ds = vec![0.0; n * n];
                    for j in 0..n {
                        let row_weight: f64 = coeffs[j * n..(j + 1) * n].iter().sum();
                        for a in 0..n {
                            if a != j {
                                ds[j * n + a] = g * (row_weight * probs[j * n + a] - coeffs[j * n + a]) / tau;
                            }
                        }
                    }
                    let mut sym = vec![0.0; n * n];
                    for j in 0..n {
                        for a in 0..n {
                            sym[j * n + a] = ds[j * n + a] + ds[a * n + j];
                        }
                    }
                    let dh = Tensor::matrix(n, n, sym)?.matmul(h)?;
                    accumulate(&mut grads, *input, dh);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let g = upstream.item();
                    let z = self.value(*logits);
                    let (b, c) = z.dims2();
                    let mut dz = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        dz[i * c + t] -= 1.0;
                    }
                    let scale = g / b as f64;
                    dz.iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut grads, *logits, Tensor::new(z.shape().to_vec(), dz)?);
                }
                Op::KlDiv {
                    student,
                    teacher_probs,
                    student_probs,
                } => {
                    let g = upstream.item();
                    let s = self.value(*student);
                    let b = s.rows();
                    let scale = g / b as f64;
                    let ds = student_probs
                        .iter()
                        .zip(teacher_probs)
                        .map(|(ps, pt)| (ps - pt) * scale)
                        .collect();
                    accumulate(&mut grads, *student, Tensor::new(s.shape().to_vec(), ds)?);
                }
            }
        }
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, v) in existing.values_mut().iter_mut().zip(g.values()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Softmax of each row, exposed for callers building logits outside a graph.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let (m, n) = t.dims2();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        out.extend(softmax(t.row(i)));
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}
