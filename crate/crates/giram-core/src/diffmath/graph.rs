use indexmap::IndexMap;

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Row { table: Var, row: usize },
    MatVec { w: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, len: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Softmax(Var),
    CrossEntropyLogits { logits: Var, target: usize },
    SumSq(Var),
    AddN(Vec<Var>),
    Dot(Var, Var),
    ReconLoss { target: Vec<f64>, gen: Vec<Var> },
    KlStdNormal { mu: Var, logvar: Var },
    DiversityLoss { keys: Vec<Var>, eps: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    name: Option<String>,
}

/// Gradients keyed by parameter name after a backward pass.
#[derive(Debug, Default)]
pub struct GradMap {
    grads: IndexMap<String, Tensor>,
}

impl GradMap {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.grads.insert(name, grad);
    }

    /// Drop a gradient (how frozen tables are kept out of optimizer updates).
    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.grads.shift_remove(name)
    }
}

/// Computation tape. Values are computed eagerly as ops are recorded;
/// `backward` walks the tape in reverse and accumulates exact gradients.
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: IndexMap<String, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_leaves: IndexMap::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            name: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Record a constant input (no gradient is reported for it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Record a named parameter leaf, cloning its current value. Repeated
    /// calls with the same name return the same node, so gradients from all
    /// uses accumulate in one place.
    pub fn param(&mut self, name: &str, params: &ParameterSet) -> Result<Var> {
        if let Some(v) = self.param_leaves.get(name) {
            return Ok(*v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| Error::Shape(format!("unknown parameter {name:?}")))?
            .clone();
        let v = self.push(t, Op::Leaf);
        self.nodes[v.0].name = Some(name.to_string());
        self.param_leaves.insert(name.to_string(), v);
        Ok(v)
    }

    /// Row lookup into a rank-2 leaf; the backward pass scatters into that
    /// row only.
    pub fn row(&mut self, table: Var, row: usize) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(Error::Shape("row lookup needs a rank-2 tensor".into()));
        }
        if row >= t.rows() {
            return Err(Error::Shape(format!(
                "row {row} out of range for table with {} rows",
                t.rows()
            )));
        }
        let out = Tensor::vector(t.row(row).to_vec());
        Ok(self.push(out, Op::Row { table, row }))
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wt, xt) = (self.value(w), self.value(x));
        if wt.shape().len() != 2 || wt.cols() != xt.len() {
            return Err(Error::Shape(format!(
                "matvec: {:?} x {:?}",
                wt.shape(),
                xt.shape()
            )));
        }
        let (m, n) = (wt.rows(), wt.cols());
        let mut out = vec![0.0; m];
        let wd = wt.data();
        let xd = xt.data();
        for i in 0..m {
            let mut acc = 0.0;
            let base = i * n;
            for j in 0..n {
                acc += wd[base + j] * xd[j];
            }
            out[i] = acc;
        }
        Ok(self.push(Tensor::vector(out), Op::MatVec { w, x }))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.len() != bt.len() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let out: Vec<f64> = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(self.push(Tensor::vector(out), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * c).collect();
        self.push(Tensor::vector(out), Op::Scale(x, c))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        self.push(Tensor::vector(out), Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        if start + len > xt.len() {
            return Err(Error::Shape(format!(
                "slice {start}..{} of length-{} tensor",
                start + len,
                xt.len()
            )));
        }
        let out = xt.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(out), Op::Slice { x, start, len }))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| f(*v)).collect();
        self.push(Tensor::vector(out), op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, super::forward::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = super::forward::softmax(self.value(x).data());
        self.push(Tensor::vector(out), Op::Softmax(x))
    }

    /// Numerically stable `log-sum-exp(logits) - logits[target]`.
    pub fn cross_entropy_logits(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lt = self.value(logits);
        if target >= lt.len() {
            return Err(Error::Shape(format!(
                "target {target} out of range for {} logits",
                lt.len()
            )));
        }
        let d = lt.data();
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = d.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let loss = lse - d[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyLogits { logits, target },
        ))
    }

    /// Scalar sum of squared components.
    pub fn sum_sq(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSq(x))
    }

    /// Elementwise sum of same-shape vars (used to accumulate scalar losses).
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Shape("add_n of empty list".into()));
        }
        let len = self.value(xs[0]).len();
        let mut out = vec![0.0; len];
        for x in xs {
            let xt = self.value(*x);
            if xt.len() != len {
                return Err(Error::Shape("add_n of mismatched shapes".into()));
            }
            for (o, v) in out.iter_mut().zip(xt.data()) {
                *o += v;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::AddN(xs.to_vec())))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.len() != bt.len() {
            return Err(Error::Shape("dot of mismatched shapes".into()));
        }
        let s: f64 = at.data().iter().zip(bt.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    /// Squared distance between `target` and the mean of `gen`.
    pub fn recon_loss(&mut self, target: &[f64], gen: &[Var]) -> Result<Var> {
        if gen.is_empty() {
            return Err(Error::Shape("recon_loss with no generated keys".into()));
        }
        let len = target.len();
        let mut mean = vec![0.0; len];
        for g in gen {
            let gt = self.value(*g);
            if gt.len() != len {
                return Err(Error::Shape("recon_loss shape mismatch".into()));
            }
            for (m, v) in mean.iter_mut().zip(gt.data()) {
                *m += v;
            }
        }
        let n = gen.len() as f64;
        let loss: f64 = target
            .iter()
            .zip(&mean)
            .map(|(t, m)| {
                let d = t - m / n;
                d * d
            })
            .sum();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::ReconLoss {
                target: target.to_vec(),
                gen: gen.to_vec(),
            },
        ))
    }

    /// KL divergence of a diagonal Gaussian from the standard normal:
    /// `0.5 * sum(exp(logvar) + mu^2 - 1 - logvar)`.
    pub fn kl_std_normal(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        let (mt, lt) = (self.value(mu), self.value(logvar));
        if mt.len() != lt.len() {
            return Err(Error::Shape("kl_std_normal shape mismatch".into()));
        }
        let s: f64 = mt
            .data()
            .iter()
            .zip(lt.data())
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum();
        Ok(self.push(
            Tensor::scalar(0.5 * s),
            Op::KlStdNormal { mu, logvar },
        ))
    }

    /// Pairwise inverse squared distances: `sum_{i<j} 1/(||k_i-k_j||^2 + eps)`.
    pub fn diversity_loss(&mut self, keys: &[Var], eps: f64) -> Result<Var> {
        if keys.is_empty() {
            return Err(Error::Shape("diversity_loss with no keys".into()));
        }
        let mut s = 0.0;
        for i in 0..keys.len() {
            for j in (i + 1)..keys.len() {
                let d2 = sq_dist(self.value(keys[i]).data(), self.value(keys[j]).data());
                s += 1.0 / (d2 + eps);
            }
        }
        Ok(self.push(
            Tensor::scalar(s),
            Op::DiversityLoss {
                keys: keys.to_vec(),
                eps,
            },
        ))
    }

    /// `W x + b`.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Reverse pass from a scalar output. Returns gradients for every named
    /// leaf that participates in the result.
    pub fn backward(&mut self, out: Var) -> Result<GradMap> {
        if self.value(out).len() != 1 {
            return Err(Error::Shape("backward requires a scalar output".into()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[out.0] = Some(vec![1.0]);

        for idx in (0..n).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Row { table, row } => {
                    let (table, row) = (*table, *row);
                    let cols = self.nodes[table.0].value.cols();
                    let len = self.nodes[table.0].value.len();
                    let buf = grads[table.0].get_or_insert_with(|| vec![0.0; len]);
                    for (j, gv) in g.iter().enumerate() {
                        buf[row * cols + j] += gv;
                    }
                }
                Op::MatVec { w, x } => {
                    let (w, x) = (*w, *x);
                    let (m, nn) = {
                        let wt = &self.nodes[w.0].value;
                        (wt.rows(), wt.cols())
                    };
                    {
                        let xd = self.nodes[x.0].value.data().to_vec();
                        let buf = grads[w.0].get_or_insert_with(|| vec![0.0; m * nn]);
                        for i in 0..m {
                            let gi = g[i];
                            let base = i * nn;
                            for j in 0..nn {
                                buf[base + j] += gi * xd[j];
                            }
                        }
                    }
                    {
                        let wd = self.nodes[w.0].value.data().to_vec();
                        let buf = grads[x.0].get_or_insert_with(|| vec![0.0; nn]);
                        for i in 0..m {
                            let gi = g[i];
                            let base = i * nn;
                            for j in 0..nn {
                                buf[j] += wd[base + j] * gi;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, &g, self.nodes[a.0].value.len());
                    accumulate(&mut grads, b, &g, self.nodes[b.0].value.len());
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, &g, self.nodes[a.0].value.len());
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, b, &neg, self.nodes[b.0].value.len());
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ad = self.nodes[a.0].value.data().to_vec();
                    let bd = self.nodes[b.0].value.data().to_vec();
                    let ga: Vec<f64> = g.iter().zip(&bd).map(|(gv, bv)| gv * bv).collect();
                    let gb: Vec<f64> = g.iter().zip(&ad).map(|(gv, av)| gv * av).collect();
                    accumulate(&mut grads, a, &ga, ad.len());
                    accumulate(&mut grads, b, &gb, bd.len());
                }
                Op::Scale(x, c) => {
                    let (x, c) = (*x, *c);
                    let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut grads, x, &gx, self.nodes[x.0].value.len());
                }
                Op::Concat(parts) => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        accumulate(&mut grads, p, &g[off..off + len], len);
                        off += len;
                    }
                }
                Op::Slice { x, start, len } => {
                    let (x, start, len) = (*x, *start, *len);
                    let total = self.nodes[x.0].value.len();
                    let buf = grads[x.0].get_or_insert_with(|| vec![0.0; total]);
                    for k in 0..len {
                        buf[start + k] += g[k];
                    }
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let y = self.nodes[idx].value.data().to_vec();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&y)
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect();
                    accumulate(&mut grads, x, &gx, y.len());
                }
                Op::Tanh(x) => {
                    let x = *x;
                    let y = self.nodes[idx].value.data().to_vec();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&y)
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect();
                    accumulate(&mut grads, x, &gx, y.len());
                }
                Op::Relu(x) => {
                    let x = *x;
                    let inp = self.nodes[x.0].value.data().to_vec();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&inp)
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x, &gx, inp.len());
                }
                Op::Exp(x) => {
                    let x = *x;
                    let y = self.nodes[idx].value.data().to_vec();
                    let gx: Vec<f64> = g.iter().zip(&y).map(|(gv, yv)| gv * yv).collect();
                    accumulate(&mut grads, x, &gx, y.len());
                }
                Op::Softmax(x) => {
                    let x = *x;
                    let y = self.nodes[idx].value.data().to_vec();
                    let dot: f64 = g.iter().zip(&y).map(|(gv, yv)| gv * yv).sum();
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(&y)
                        .map(|(gv, yv)| yv * (gv - dot))
                        .collect();
                    accumulate(&mut grads, x, &gx, y.len());
                }
                Op::CrossEntropyLogits { logits, target } => {
                    let (logits, target) = (*logits, *target);
                    let probs = super::forward::softmax(self.nodes[logits.0].value.data());
                    let gs = g[0];
                    let mut gx = probs;
                    gx[target] -= 1.0;
                    for v in gx.iter_mut() {
                        *v *= gs;
                    }
                    accumulate(&mut grads, logits, &gx, gx.len());
                }
                Op::SumSq(x) => {
                    let x = *x;
                    let xd = self.nodes[x.0].value.data().to_vec();
                    let gs = g[0];
                    let gx: Vec<f64> = xd.iter().map(|v| 2.0 * v * gs).collect();
                    accumulate(&mut grads, x, &gx, xd.len());
                }
                Op::AddN(xs) => {
                    let xs = xs.clone();
                    for x in xs {
                        let len = self.nodes[x.0].value.len();
                        accumulate(&mut grads, x, &g, len);
                    }
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let ad = self.nodes[a.0].value.data().to_vec();
                    let bd = self.nodes[b.0].value.data().to_vec();
                    let gs = g[0];
                    let ga: Vec<f64> = bd.iter().map(|v| v * gs).collect();
                    let gb: Vec<f64> = ad.iter().map(|v| v * gs).collect();
                    accumulate(&mut grads, a, &ga, ad.len());
                    accumulate(&mut grads, b, &gb, bd.len());
                }
                Op::ReconLoss { target, gen } => {
                    let target = target.clone();
                    let gen = gen.clone();
                    let n = gen.len() as f64;
                    let len = target.len();
                    let mut mean = vec![0.0; len];
                    for gv in &gen {
                        for (m, v) in mean.iter_mut().zip(self.nodes[gv.0].value.data()) {
                            *m += v / n;
                        }
                    }
                    let gs = g[0];
                    // d/d gen_k[j] = -(2/n) * (target[j] - mean[j])
                    let per: Vec<f64> = target
                        .iter()
                        .zip(&mean)
                        .map(|(t, m)| -(2.0 / n) * (t - m) * gs)
                        .collect();
                    for gv in gen {
                        accumulate(&mut grads, gv, &per, len);
                    }
                }
                Op::KlStdNormal { mu, logvar } => {
                    let (mu, logvar) = (*mu, *logvar);
                    let md = self.nodes[mu.0].value.data().to_vec();
                    let ld = self.nodes[logvar.0].value.data().to_vec();
                    let gs = g[0];
                    let gm: Vec<f64> = md.iter().map(|m| m * gs).collect();
                    let gl: Vec<f64> = ld.iter().map(|lv| 0.5 * (lv.exp() - 1.0) * gs).collect();
                    accumulate(&mut grads, mu, &gm, md.len());
                    accumulate(&mut grads, logvar, &gl, ld.len());
                }
                Op::DiversityLoss { keys, eps } => {
                    let keys = keys.clone();
                    let eps = *eps;
                    let gs = g[0];
                    let len = self.nodes[keys[0].0].value.len();
                    let vals: Vec<Vec<f64>> = keys
                        .iter()
                        .map(|k| self.nodes[k.0].value.data().to_vec())
                        .collect();
                    let mut gbuf = vec![vec![0.0; len]; keys.len()];
                    for i in 0..keys.len() {
                        for j in (i + 1)..keys.len() {
                            let d2 = sq_dist(&vals[i], &vals[j]);
                            let denom = d2 + eps;
                            let coef = -2.0 / (denom * denom) * gs;
                            for t in 0..len {
                                let diff = vals[i][t] - vals[j][t];
                                gbuf[i][t] += coef * diff;
                                gbuf[j][t] -= coef * diff;
                            }
                        }
                    }
                    for (k, gb) in keys.iter().zip(gbuf) {
                        accumulate(&mut grads, *k, &gb, len);
                    }
                }
            }
        }

        let mut map = GradMap::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.name {
                if let Some(g) = &grads[i] {
                    let t = Tensor::from_vec(node.value.shape(), g.clone())?;
                    map.insert(name.clone(), t);
                }
            }
        }
        Ok(map)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], len: usize) {
    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
    for (b, gv) in buf.iter_mut().zip(g) {
        *b += gv;
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// LSTM parameter leaves on a graph; gates stacked as [input, forget, cell,
/// output] along rows.
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

impl Graph {
    /// One LSTM step, built from primitive ops so gradients come for free.
    pub fn lstm_step(&mut self, p: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hidden = self.value(h).len();
        let ih = self.matvec(p.w_ih, x)?;
        let hh = self.matvec(p.w_hh, h)?;
        let s = self.add(ih, hh)?;
        let pre = self.add(s, p.b)?;
        let i_pre = self.slice(pre, 0, hidden)?;
        let f_pre = self.slice(pre, hidden, hidden)?;
        let g_pre = self.slice(pre, 2 * hidden, hidden)?;
        let o_pre = self.slice(pre, 3 * hidden, hidden)?;
        let i = self.sigmoid(i_pre);
        let f = self.sigmoid(f_pre);
        let g = self.tanh(g_pre);
        let o = self.sigmoid(o_pre);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_new = self.add(fc, ig)?;
        let ct = self.tanh(c_new);
        let h_new = self.mul(o, ct)?;
        Ok((h_new, c_new))
    }

    /// Run an LSTM over a sequence of input vars; returns the hidden state
    /// after every step.
    pub fn lstm_sequence(&mut self, p: &LstmVars, inputs: &[Var]) -> Result<Vec<Var>> {
        if inputs.is_empty() {
            return Err(Error::Shape("lstm_sequence on empty input".into()));
        }
        let hidden = self.value(p.w_hh).cols();
        let mut h = self.input(Tensor::zeros(&[hidden]));
        let mut c = self.input(Tensor::zeros(&[hidden]));
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (h2, c2) = self.lstm_step(p, *x, h, c)?;
            h = h2;
            c = c2;
            out.push(h);
        }
        Ok(out)
    }
}
