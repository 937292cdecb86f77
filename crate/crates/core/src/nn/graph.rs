//! Define-by-run reverse-mode tape over [`Tensor`] values.
//!
//! A [`Graph`] borrows a [`ParamStore`] read-only; weights are referenced by
//! [`ParamId`] and their gradients come back in a [`Grads`] from
//! [`Graph::backward`], so many graphs may run over one store concurrently.

use super::kernels::{self, ConvGeom, PoolGeom, PoolKind};
use super::params::{BnUpdate, Grads, ParamId, ParamStore, StatsId};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// How batchnorm layers normalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with the current batch's statistics.
    Batch,
    /// Normalize with the stored running statistics.
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphMode {
    pub bn: BnMode,
    /// Record batch statistics for a later running-average update.
    pub record_stats: bool,
}

impl GraphMode {
    pub const TRAIN: GraphMode = GraphMode { bn: BnMode::Batch, record_stats: true };
    pub const EVAL: GraphMode = GraphMode { bn: BnMode::Running, record_stats: false };
    /// Batch statistics without recording; used for shared-weight evaluation.
    pub const EVAL_BATCH: GraphMode = GraphMode { bn: BnMode::Batch, record_stats: false };
}

/// Batchnorm parameters: optional affine terms plus running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BnParams {
    pub gamma: Option<ParamId>,
    pub beta: Option<ParamId>,
    pub stats: StatsId,
}

#[derive(Debug)]
enum Op {
    Input,
    Conv {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        geom: ConvGeom,
        /// 1×1 only: input channel `i` uses weight column `cols[i]`.
        cols: Option<Vec<usize>>,
    },
    BatchNorm {
        x: Var,
        bn: BnParams,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    Relu(Var),
    Pool {
        x: Var,
        kind: PoolKind,
        geom: PoolGeom,
        argmax: Vec<u32>,
    },
    Subsample {
        x: Var,
        stride: usize,
    },
    Add(Var, Var),
    Concat(Vec<Var>),
    GlobalAvgPool(Var),
    Flatten(Var),
    Dense {
        x: Var,
        w: ParamId,
        b: ParamId,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    mode: GraphMode,
    nodes: Vec<Node>,
    bn_updates: Vec<BnUpdate>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore, mode: GraphMode) -> Self {
        Graph { store, mode, nodes: Vec::new(), bn_updates: Vec::new() }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    /// Batchnorm statistics recorded by this pass.
    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn conv(&mut self, x: Var, w: ParamId, b: Option<ParamId>, geom: ConvGeom) -> Var {
        let value = kernels::conv2d_forward(
            self.value(x),
            self.store.value(w),
            b.map(|b| self.store.value(b)),
            &geom,
        );
        self.push(value, Op::Conv { x, w, b, geom, cols: None })
    }

    /// 1×1 convolution reading a column subset of a wider weight matrix.
    pub fn conv_cols(&mut self, x: Var, w: ParamId, b: Option<ParamId>, stride: usize, cols: Vec<usize>) -> Var {
        let c_in = self.value(x).c();
        assert_eq!(cols.len(), c_in, "column map must cover every input channel");
        let full = self.store.param(w);
        let c_out = full.shape[0];
        let width = full.value.len() / c_out;
        let sel = select_cols(&full.value, c_out, width, &cols);
        let geom = ConvGeom::pointwise(c_in, c_out, stride);
        let value = kernels::conv2d_forward(self.value(x), &sel, b.map(|b| self.store.value(b)), &geom);
        self.push(value, Op::Conv { x, w, b, geom, cols: Some(cols) })
    }

    pub fn batch_norm(&mut self, x: Var, bn: BnParams) -> Var {
        let gamma = bn.gamma.map(|g| self.store.value(g));
        let beta = bn.beta.map(|b| self.store.value(b));
        match self.mode.bn {
            BnMode::Batch => {
                let (y, xhat, inv_std, mean, var) = kernels::batchnorm_train(self.value(x), gamma, beta);
                if self.mode.record_stats {
                    self.bn_updates.push(BnUpdate { stats: bn.stats, mean, var });
                }
                self.push(y, Op::BatchNorm { x, bn, xhat, inv_std })
            }
            BnMode::Running => {
                let s = self.store.stats(bn.stats);
                let y = kernels::batchnorm_eval(self.value(x), gamma, beta, &s.mean, &s.var);
                // running-stat normalization is affine: xhat and inv_std suffice for backward
                let inv_std: Vec<f32> = s.var.iter().map(|v| 1.0 / (v + kernels::BN_EPS).sqrt()).collect();
                self.push(y, Op::BatchNorm { x, bn, xhat: Vec::new(), inv_std })
            }
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        for v in y.data_mut() {
            *v = v.max(0.0);
        }
        self.push(y, Op::Relu(x))
    }

    pub fn pool(&mut self, x: Var, kind: PoolKind, geom: PoolGeom) -> Var {
        let (y, argmax) = kernels::pool_forward(self.value(x), kind, &geom);
        self.push(y, Op::Pool { x, kind, geom, argmax })
    }

    /// Keeps every `stride`-th pixel along both axes (ceiling output size).
    pub fn subsample(&mut self, x: Var, stride: usize) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for ni in 0..n {
            for ci in 0..c {
                let p = t.channel(ni, ci);
                for oy in 0..oh {
                    for ox in 0..ow {
                        out.push(p[oy * stride * w + ox * stride]);
                    }
                }
            }
        }
        self.push(Tensor::from_vec([n, c, oh, ow], out), Op::Subsample { x, stride })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        assert_eq!(y.shape(), self.value(b).shape(), "add shape mismatch");
        for (o, v) in y.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += v;
        }
        self.push(y, Op::Add(a, b))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let [n, _, h, w] = self.shape(parts[0]);
        let c: usize = parts.iter().map(|&p| self.value(p).c()).sum();
        let mut out = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for &p in &parts {
                let t = self.value(p);
                assert_eq!([t.n(), t.h(), t.w()], [n, h, w], "concat shape mismatch");
                out.extend_from_slice(t.row(ni));
            }
        }
        self.push(Tensor::from_vec([n, c, h, w], out), Op::Concat(parts))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, _, _] = t.shape();
        let plane = t.plane() as f32;
        let mut out = Vec::with_capacity(n * c);
        for ni in 0..n {
            for ci in 0..c {
                out.push(t.channel(ni, ci).iter().sum::<f32>() / plane);
            }
        }
        self.push(Tensor::from_vec([n, c, 1, 1], out), Op::GlobalAvgPool(x))
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        let [n, _, _, _] = t.shape();
        let f = t.sample_len();
        self.push(t.reshaped([n, f, 1, 1]), Op::Flatten(x))
    }

    /// `y = W x + b` on flat features; `W` is `[out, in]`.
    pub fn dense(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let t = self.value(x);
        let n = t.n();
        let fin = t.sample_len();
        let wv = self.store.value(w);
        let bv = self.store.value(b);
        let fout = bv.len();
        debug_assert_eq!(wv.len(), fin * fout);
        let mut out = vec![0.0f32; n * fout];
        for ni in 0..n {
            let xr = t.row(ni);
            for o in 0..fout {
                let wr = &wv[o * fin..][..fin];
                out[ni * fout + o] = bv[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f32>();
            }
        }
        self.push(Tensor::from_vec([n, fout, 1, 1], out), Op::Dense { x, w, b })
    }

    /// Mean softmax cross-entropy over the batch; a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let t = self.value(logits);
        let n = t.n();
        assert_eq!(labels.len(), n);
        let k = t.sample_len();
        let mut probs = vec![0.0f32; n * k];
        let mut loss = 0.0f64;
        for ni in 0..n {
            let row = t.row(ni);
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let z: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
            for (j, &v) in row.iter().enumerate() {
                probs[ni * k + j] = (((v - max) as f64).exp() / z) as f32;
            }
            loss += z.ln() - (row[labels[ni]] - max) as f64;
        }
        let value = Tensor::from_vec([1, 1, 1, 1], vec![(loss / n as f64) as f32]);
        self.push(value, Op::CrossEntropy { logits, labels: labels.to_vec(), probs })
    }

    /// Gradients of the scalar node `loss` with respect to every referenced weight.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads = Grads::new(self.store.len());
        let mut node_grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |v: Var, g: Vec<f32>| accumulate(&mut node_grads[v.0], g);
            match &node.op {
                Op::Input => {}
                Op::Conv { x, w, b, geom, cols } => {
                    let xin = &self.nodes[x.0].value;
                    let full = self.store.param(*w);
                    let (dx, dw, db) = match cols {
                        None => kernels::conv2d_backward(xin, &full.value, &dy, geom),
                        Some(cols) => {
                            let c_out = full.shape[0];
                            let width = full.value.len() / c_out;
                            let sel = select_cols(&full.value, c_out, width, cols);
                            let (dx, dsel, db) = kernels::conv2d_backward(xin, &sel, &dy, geom);
                            let mut dw = vec![0.0f32; full.value.len()];
                            for o in 0..c_out {
                                for (i, &col) in cols.iter().enumerate() {
                                    dw[o * width + col] += dsel[o * cols.len() + i];
                                }
                            }
                            (dx, dw, db)
                        }
                    };
                    add_into(grads.slot(*w, full.value.len()), &dw);
                    if let Some(b) = b {
                        add_into(grads.slot(*b, db.len()), &db);
                    }
                    send(*x, dx);
                }
                Op::BatchNorm { x, bn, xhat, inv_std } => {
                    let gamma = bn.gamma.map(|g| self.store.value(g));
                    let shape = node.value.shape();
                    let (dx, dgamma, dbeta) = if xhat.is_empty() {
                        running_bn_backward(&dy, &self.nodes[x.0].value, self.store.stats(bn.stats), inv_std, gamma)
                    } else {
                        kernels::batchnorm_backward(&dy, xhat, inv_std, gamma, shape)
                    };
                    if let Some(g) = bn.gamma {
                        add_into(grads.slot(g, dgamma.len()), &dgamma);
                    }
                    if let Some(b) = bn.beta {
                        add_into(grads.slot(b, dbeta.len()), &dbeta);
                    }
                    send(*x, dx);
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let dx = dy.iter().zip(y).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                    send(*x, dx);
                }
                Op::Pool { x, kind, geom, argmax } => {
                    let dout = Tensor::from_vec(node.value.shape(), dy);
                    let dx = kernels::pool_backward(self.nodes[x.0].value.shape(), &dout, *kind, geom, argmax);
                    send(*x, dx);
                }
                Op::Subsample { x, stride } => {
                    let [n, c, h, w] = self.nodes[x.0].value.shape();
                    let (oh, ow) = (node.value.h(), node.value.w());
                    let mut dx = vec![0.0f32; n * c * h * w];
                    for nc in 0..n * c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                dx[nc * h * w + oy * stride * w + ox * stride] = dy[(nc * oh + oy) * ow + ox];
                            }
                        }
                    }
                    send(*x, dx);
                }
                Op::Add(a, b) => {
                    send(*a, dy.clone());
                    send(*b, dy);
                }
                Op::Concat(parts) => {
                    let n = node.value.n();
                    let total = node.value.sample_len();
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.sample_len();
                        let mut dp = Vec::with_capacity(n * len);
                        for ni in 0..n {
                            dp.extend_from_slice(&dy[ni * total + offset..][..len]);
                        }
                        offset += len;
                        send(p, dp);
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let xin = &self.nodes[x.0].value;
                    let plane = xin.plane();
                    let mut dx = vec![0.0f32; xin.len()];
                    for (i, g) in dy.iter().enumerate() {
                        dx[i * plane..][..plane].fill(g / plane as f32);
                    }
                    send(*x, dx);
                }
                Op::Flatten(x) => send(*x, dy),
                Op::Dense { x, w, b } => {
                    let xin = &self.nodes[x.0].value;
                    let n = xin.n();
                    let fin = xin.sample_len();
                    let fout = node.value.sample_len();
                    let wv = self.store.value(*w);
                    let mut dx = vec![0.0f32; n * fin];
                    let mut dw = vec![0.0f32; fin * fout];
                    let mut db = vec![0.0f32; fout];
                    for ni in 0..n {
                        let xr = xin.row(ni);
                        let dxr = &mut dx[ni * fin..][..fin];
                        for o in 0..fout {
                            let g = dy[ni * fout + o];
                            db[o] += g;
                            let wr = &wv[o * fin..][..fin];
                            let dwr = &mut dw[o * fin..][..fin];
                            for j in 0..fin {
                                dwr[j] += g * xr[j];
                                dxr[j] += g * wr[j];
                            }
                        }
                    }
                    add_into(grads.slot(*w, dw.len()), &dw);
                    add_into(grads.slot(*b, db.len()), &db);
                    send(*x, dx);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let n = labels.len();
                    let k = probs.len() / n;
                    let scale = dy[0] / n as f32;
                    let mut dx = probs.clone();
                    for (ni, &l) in labels.iter().enumerate() {
                        dx[ni * k + l] -= 1.0;
                    }
                    for v in &mut dx {
                        *v *= scale;
                    }
                    send(*logits, dx);
                }
            }
        }
        grads
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, g: Vec<f32>) {
    match slot {
        Some(acc) => add_into(acc, &g),
        None => *slot = Some(g),
    }
}

fn add_into(acc: &mut [f32], g: &[f32]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn select_cols(w: &[f32], rows: usize, width: usize, cols: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(rows * cols.len());
    for r in 0..rows {
        for &c in cols {
            out.push(w[r * width + c]);
        }
    }
    out
}

fn running_bn_backward(
    dy: &[f32],
    x: &Tensor,
    stats: &super::params::BnStats,
    inv_std: &[f32],
    gamma: Option<&[f32]>,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let [n, c, _, _] = x.shape();
    let plane = x.plane();
    let mut dx = vec![0.0f32; dy.len()];
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for ni in 0..n {
        for ci in 0..c {
            let gm = gamma.map_or(1.0, |g| g[ci]);
            let base = (ni * c + ci) * plane;
            for i in base..base + plane {
                let xh = (x.data()[i] - stats.mean[ci]) * inv_std[ci];
                dgamma[ci] += dy[i] * xh;
                dbeta[ci] += dy[i];
                dx[i] = dy[i] * gm * inv_std[ci];
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{Init, ParamKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Small network touching every op; returns the scalar loss.
    fn loss_of(store: &ParamStore, ids: &Ids, x: &Tensor, labels: &[usize]) -> (f32, Grads) {
        let mut g = Graph::new(store, GraphMode::TRAIN);
        let xi = g.input(x.clone());
        let c1 = g.conv(xi, ids.stem, Some(ids.stem_b), ConvGeom::dense(2, 4, 3, 1, 1));
        let b1 = g.batch_norm(c1, ids.bn);
        let r = g.relu(b1);
        let dw = g.conv(r, ids.dw, None, ConvGeom::depthwise(4, 5, 2));
        let pw = g.conv_cols(dw, ids.pw, None, 1, vec![5, 0, 2, 3]);
        let mp = g.pool(r, PoolKind::Max, PoolGeom { kernel: 3, stride: 2, pad: 1 });
        let ap = g.pool(r, PoolKind::Avg, PoolGeom { kernel: 3, stride: 2, pad: 1 });
        let ss = g.subsample(r, 2);
        let s = g.add(mp, ap);
        let s = g.add(s, ss);
        let cat = g.concat(vec![pw, s]);
        let gp = g.global_avg_pool(cat);
        let fl = g.flatten(gp);
        let d = g.dense(fl, ids.fc, ids.fc_b);
        let loss = g.cross_entropy(d, labels);
        let value = g.value(loss).data()[0];
        (value, g.backward(loss))
    }

    struct Ids {
        stem: ParamId,
        stem_b: ParamId,
        bn: BnParams,
        dw: ParamId,
        pw: ParamId,
        fc: ParamId,
        fc_b: ParamId,
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let k = ParamKind::ConvWeight;
        let ids = Ids {
            stem: store.add("stem", k, false, &[4, 2, 3, 3], Init::HeNormal(18), &mut rng),
            stem_b: store.add("stem_b", ParamKind::ConvBias, false, &[4], Init::FanInUniform(4), &mut rng),
            bn: BnParams {
                gamma: Some(store.add("g", ParamKind::BnGamma, false, &[4], Init::FanInUniform(1), &mut rng)),
                beta: Some(store.add("b", ParamKind::BnBeta, false, &[4], Init::FanInUniform(1), &mut rng)),
                stats: store.add_stats(4),
            },
            dw: store.add("dw", k, false, &[4, 1, 5, 5], Init::HeNormal(25), &mut rng),
            pw: store.add("pw", k, false, &[3, 6], Init::HeNormal(4), &mut rng),
            fc: store.add("fc", ParamKind::DenseWeight, false, &[3, 7], Init::FanInUniform(7), &mut rng),
            fc_b: store.add("fc_b", ParamKind::DenseBias, false, &[3], Init::FanInUniform(7), &mut rng),
        };
        let x = Tensor::from_vec([3, 2, 5, 6], (0..180).map(|i| ((i * 31 % 17) as f32 - 8.0) / 4.0).collect());
        let labels = [0, 2, 1];
        let (_, grads) = loss_of(&store, &ids, &x, &labels);
        let eps = 2e-3f32;
        let mut worst = 0.0f32;
        for pid in 0..store.len() {
            let id = ParamId(pid);
            let analytic = grads.get(id).expect("every param used").to_vec();
            for j in 0..analytic.len() {
                let orig = store.value(id)[j];
                store.param_mut(id).value[j] = orig + eps;
                let (lp, _) = loss_of(&store, &ids, &x, &labels);
                store.param_mut(id).value[j] = orig - eps;
                let (lm, _) = loss_of(&store, &ids, &x, &labels);
                store.param_mut(id).value[j] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                let err = (numeric - analytic[j]).abs() / (numeric.abs().max(analytic[j].abs()).max(1e-2));
                if err > 5e-2 {
                    eprintln!("{} [{j}]: analytic {} numeric {numeric}", store.param(id).name, analytic[j]);
                }
                worst = worst.max(err);
            }
        }
        assert!(worst < 5e-2, "worst relative gradient error {worst}");
    }
}
