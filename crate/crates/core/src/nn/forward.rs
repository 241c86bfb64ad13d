//! Batched forward and backward passes, plus an allocation-light single-row
//! path used inside MCMC loops.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::arch::LayerShape;
use super::params::NetParams;
use crate::error::{Error, Result};

/// Objective minimized by [`NetParams::loss_and_gradient`]; always mean-reduced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `(ŷ − y)²`
    Mse,
    /// Binary cross-entropy on a logit output, labels in {0, 1}.
    Logistic,
}

impl Loss {
    fn value_and_slope(self, out: f64, label: f64) -> (f64, f64) {
        match self {
            Loss::Mse => {
                let r = out - label;
                (r * r, 2.0 * r)
            }
            Loss::Logistic => {
                let softplus = out.max(0.0) + (-out.abs()).exp().ln_1p();
                let sigmoid = 1.0 / (1.0 + (-out).exp());
                (softplus - label * out, sigmoid - label)
            }
        }
    }
}

/// Intermediate activations kept for backprop.
struct Trace {
    batch: usize,
    set_size: usize,
    /// Standardized set points, `(batch · K) × point_dim`.
    points: Option<Array2<f64>>,
    /// Embedding hidden pre-activations.
    embed_pre: Vec<Array2<f64>>,
    trunk_in: Array2<f64>,
    /// Residual: block input states `h_k` (len n+1). Plain: hidden pre-activations.
    states: Vec<Array2<f64>>,
    /// Residual only: inner pre-activations `z_k` of each block.
    inner: Vec<Array2<f64>>,
    out: Array1<f64>,
}

fn relu(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(|v| v.max(0.0))
}

fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Writes `dW = dyᵀ x` and `db = Σ dy` into `grad`, returns `dx = dy W` when asked.
fn affine_backward(
    x: ArrayView2<f64>,
    dy: &Array2<f64>,
    w: ArrayView2<f64>,
    l: &LayerShape,
    grad: &mut [f64],
    need_dx: bool,
) -> Option<Array2<f64>> {
    let dw = dy.t().dot(&x);
    ArrayViewMut2::from_shape((l.rows, l.cols), &mut grad[l.offset..l.bias_offset()])
        .expect("layer shape")
        .assign(&dw);
    let db = dy.sum_axis(Axis(0));
    grad[l.bias_offset()..l.end()].copy_from_slice(db.as_slice().expect("contiguous"));
    need_dx.then(|| dy.dot(&w))
}

fn mask_relu(d: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(d).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

impl NetParams {
    fn trace(&self, rows: ArrayView2<f64>) -> Result<Trace> {
        let arch = &self.arch;
        let batch = rows.nrows();
        if batch == 0 {
            return Err(Error::Empty("network input batch"));
        }
        let k = arch.set_size(rows.ncols())?;
        let d = arch.input_dim;
        let std = &self.standardizer;

        let mut trunk_in = Array2::<f64>::zeros((batch, arch.trunk_input_dim()));
        for (b, row) in rows.rows().into_iter().enumerate() {
            for c in 0..d {
                trunk_in[[b, c]] = std.direct(c, row[c]);
            }
        }

        let mut points = None;
        let mut embed_pre = Vec::new();
        if let Some(e) = &arch.embedding {
            let pd = e.point_dim;
            let mut pts = Array2::<f64>::zeros((batch * k, pd));
            for (b, row) in rows.rows().into_iter().enumerate() {
                for j in 0..k {
                    for c in 0..pd {
                        pts[[b * k + j, c]] = std.point(c, row[d + j * pd + c]);
                    }
                }
            }
            let n_hidden = self.layout.embed.len() - 1;
            let mut act = pts.clone();
            for l in &self.layout.embed[..n_hidden] {
                let pre = affine(act.view(), self.weight(l), self.bias(l));
                act = relu(&pre);
                embed_pre.push(pre);
            }
            let l_out = &self.layout.embed[n_hidden];
            let emb = affine(act.view(), self.weight(l_out), self.bias(l_out));
            let pooled = emb
                .to_shape(((batch, k * e.out_dim), ndarray::Order::RowMajor))
                .expect("embedding output has batch × k rows");
            let mut target = trunk_in.slice_mut(s![.., d..]);
            for j in 0..k {
                target += &pooled.slice(s![.., j * e.out_dim..(j + 1) * e.out_dim]);
            }
            target /= k as f64;
            points = Some(pts);
        }

        let mut states = Vec::new();
        let mut inner = Vec::new();
        let last = if arch.residual {
            let l0 = &self.layout.trunk[0];
            let mut h = affine(trunk_in.view(), self.weight(l0), self.bias(l0));
            for pair in self.layout.trunk[1..].chunks(2) {
                let z = affine(relu(&h).view(), self.weight(&pair[0]), self.bias(&pair[0]));
                let mut next = affine(relu(&z).view(), self.weight(&pair[1]), self.bias(&pair[1]));
                next += &h;
                states.push(h);
                inner.push(z);
                h = next;
            }
            states.push(h.clone());
            h
        } else {
            let mut act = trunk_in.clone();
            for l in &self.layout.trunk {
                let pre = affine(act.view(), self.weight(l), self.bias(l));
                act = relu(&pre);
                states.push(pre);
            }
            act
        };
        let head = &self.layout.head;
        let out = affine(last.view(), self.weight(head), self.bias(head)).column(0).to_owned();
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(Trace {
            batch,
            set_size: k,
            points,
            embed_pre,
            trunk_in,
            states,
            inner,
            out,
        })
    }

    /// Predictions for every row of `rows`.
    pub fn forward_batch(&self, rows: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.trace(rows)?.out)
    }

    pub fn loss(&self, rows: ArrayView2<f64>, labels: ArrayView1<f64>, loss: Loss) -> Result<f64> {
        check_labels(rows.nrows(), labels)?;
        let out = self.forward_batch(rows)?;
        let total: f64 = out
            .iter()
            .zip(labels.iter())
            .map(|(o, y)| loss.value_and_slope(*o, *y).0)
            .sum();
        Ok(total / out.len() as f64)
    }

    /// Gradient of the mean squared error over the batch.
    pub fn mse_gradient(&self, rows: ArrayView2<f64>, labels: ArrayView1<f64>) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(rows, labels, Loss::Mse)?.1)
    }

    /// Mean loss over the batch and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        rows: ArrayView2<f64>,
        labels: ArrayView1<f64>,
        loss: Loss,
    ) -> Result<(f64, Vec<f64>)> {
        check_labels(rows.nrows(), labels)?;
        let t = self.trace(rows)?;
        let n = t.batch as f64;
        let mut total = 0.0;
        let mut dout = Array2::<f64>::zeros((t.batch, 1));
        for (i, (o, y)) in t.out.iter().zip(labels.iter()).enumerate() {
            let (v, slope) = loss.value_and_slope(*o, *y);
            total += v;
            dout[[i, 0]] = slope / n;
        }
        let mut grad = vec![0.0; self.len()];
        let arch = &self.arch;

        let head = &self.layout.head;
        let d_trunk_in = if arch.residual {
            let last = t.states.last().expect("residual states");
            let mut dh = affine_backward(last.view(), &dout, self.weight(head), head, &mut grad, true)
                .expect("dx requested");
            for (bi, pair) in self.layout.trunk[1..].chunks(2).enumerate().rev() {
                let h = &t.states[bi];
                let z = &t.inner[bi];
                let a2 = relu(z);
                let mut dz = affine_backward(a2.view(), &dh, self.weight(&pair[1]), &pair[1], &mut grad, true)
                    .expect("dx requested");
                mask_relu(&mut dz, z);
                let a1 = relu(h);
                let mut da1 = affine_backward(a1.view(), &dz, self.weight(&pair[0]), &pair[0], &mut grad, true)
                    .expect("dx requested");
                mask_relu(&mut da1, h);
                dh += &da1;
            }
            let l0 = &self.layout.trunk[0];
            affine_backward(t.trunk_in.view(), &dh, self.weight(l0), l0, &mut grad, arch.embedding.is_some())
        } else {
            let n_layers = self.layout.trunk.len();
            let mut dact = {
                let last = relu(&t.states[n_layers - 1]);
                affine_backward(last.view(), &dout, self.weight(head), head, &mut grad, true)
                    .expect("dx requested")
            };
            let mut d_in = None;
            for li in (0..n_layers).rev() {
                mask_relu(&mut dact, &t.states[li]);
                let l = &self.layout.trunk[li];
                let input = if li == 0 { t.trunk_in.clone() } else { relu(&t.states[li - 1]) };
                let need = li > 0 || arch.embedding.is_some();
                let dx = affine_backward(input.view(), &dact, self.weight(l), l, &mut grad, need);
                if li == 0 {
                    d_in = dx;
                } else {
                    dact = dx.expect("dx requested");
                }
            }
            d_in
        };

        if let (Some(e), Some(pts)) = (&arch.embedding, &t.points) {
            let d_trunk_in = d_trunk_in.expect("embedding gradient requested");
            let k = t.set_size;
            let d_pooled = d_trunk_in.slice(s![.., arch.input_dim..]);
            let mut d_emb = Array2::<f64>::zeros((t.batch * k, e.out_dim));
            for b in 0..t.batch {
                for j in 0..k {
                    let mut row = d_emb.row_mut(b * k + j);
                    row.assign(&d_pooled.row(b));
                    row /= k as f64;
                }
            }
            let n_hidden = self.layout.embed.len() - 1;
            let mut dact = d_emb;
            for li in (0..=n_hidden).rev() {
                let l = &self.layout.embed[li];
                let input = if li == 0 { pts.clone() } else { relu(&t.embed_pre[li - 1]) };
                let dx = affine_backward(input.view(), &dact, self.weight(l), l, &mut grad, li > 0);
                if li > 0 {
                    dact = dx.expect("dx requested");
                    mask_relu(&mut dact, &t.embed_pre[li - 1]);
                }
            }
        }

        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        Ok((total / n, grad))
    }

    /// Prediction for a single raw input row.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        let k = self.arch.set_size(row.len())?;
        let d = self.arch.input_dim;
        let mut trunk_in = vec![0.0; self.arch.trunk_input_dim()];
        for c in 0..d {
            trunk_in[c] = self.standardizer.direct(c, row[c]);
        }
        if self.arch.embedding.is_some() {
            self.embed_set(&row[d..], k, &mut trunk_in[d..]);
        }
        let l0 = &self.layout.trunk[0];
        let mut h0 = vec![0.0; l0.rows];
        dense(self, l0, &trunk_in, &mut h0);
        let out = self.finish_trunk(h0);
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::NonFinite("network output".into()))
        }
    }

    /// Mean-pooled embedding of `k` raw points written into `pooled`.
    fn embed_set(&self, raw: &[f64], k: usize, pooled: &mut [f64]) {
        let e = self.arch.embedding.as_ref().expect("embedding present");
        let pd = e.point_dim;
        pooled.iter_mut().for_each(|v| *v = 0.0);
        let mut a = vec![0.0; pd];
        let mut b = Vec::new();
        for j in 0..k {
            a.clear();
            a.extend((0..pd).map(|c| self.standardizer.point(c, raw[j * pd + c])));
            let n_hidden = self.layout.embed.len() - 1;
            for (li, l) in self.layout.embed.iter().enumerate() {
                b.resize(l.rows, 0.0);
                dense(self, l, &a, &mut b);
                if li < n_hidden {
                    b.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                std::mem::swap(&mut a, &mut b);
            }
            for (p, v) in pooled.iter_mut().zip(&a) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|v| *v /= k as f64);
    }

    /// Runs the trunk given the output of its first affine layer.
    fn finish_trunk(&self, mut h: Vec<f64>) -> f64 {
        let hd = self.arch.hidden_dim;
        let mut a = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        if self.arch.residual {
            for pair in self.layout.trunk[1..].chunks(2) {
                for (ai, hi) in a.iter_mut().zip(&h) {
                    *ai = hi.max(0.0);
                }
                dense(self, &pair[0], &a, &mut z);
                for zi in z.iter_mut() {
                    *zi = zi.max(0.0);
                }
                dense(self, &pair[1], &z, &mut a);
                for (hi, ai) in h.iter_mut().zip(&a) {
                    *hi += ai;
                }
            }
        } else {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            for l in &self.layout.trunk[1..] {
                dense(self, l, &h, &mut a);
                for (hi, ai) in h.iter_mut().zip(&a) {
                    *hi = ai.max(0.0);
                }
            }
        }
        let mut out = [0.0];
        dense(self, &self.layout.head, &h, &mut out);
        out[0]
    }

    /// Fixes every input column from `free_dim` onward, precomputing their
    /// contribution to the first trunk layer. Only the leading `free_dim`
    /// direct columns are supplied at evaluation time.
    pub fn condition(&self, free_dim: usize, fixed_tail: &[f64]) -> Result<Conditioned<'_>> {
        let d = self.arch.input_dim;
        if free_dim > d {
            return Err(Error::dims("free input columns", d, free_dim));
        }
        let k = self.arch.set_size(free_dim + fixed_tail.len())?;
        let mut tail = vec![0.0; self.arch.trunk_input_dim() - free_dim];
        for c in free_dim..d {
            tail[c - free_dim] = self.standardizer.direct(c, fixed_tail[c - free_dim]);
        }
        if self.arch.embedding.is_some() {
            self.embed_set(&fixed_tail[d - free_dim..], k, &mut tail[d - free_dim..]);
        }
        let l0 = self.layout.trunk[0];
        let w = self.weight(&l0);
        let b = self.bias(&l0);
        let offset: Vec<f64> = (0..l0.rows)
            .map(|r| {
                let wr = w.row(r);
                b[r] + tail.iter().enumerate().map(|(i, t)| wr[free_dim + i] * t).sum::<f64>()
            })
            .collect();
        Ok(Conditioned {
            net: self,
            free_dim,
            first_offset: offset,
        })
    }
}

/// Network with a fixed input suffix (for example a fixed observation);
/// evaluates the remaining leading columns cheaply.
#[derive(Clone, Debug)]
pub struct Conditioned<'a> {
    net: &'a NetParams,
    free_dim: usize,
    first_offset: Vec<f64>,
}

impl Conditioned<'_> {
    pub fn free_dim(&self) -> usize {
        self.free_dim
    }

    pub fn predict(&self, free: &[f64]) -> Result<f64> {
        if free.len() != self.free_dim {
            return Err(Error::dims("conditioned input", self.free_dim, free.len()));
        }
        let net = self.net;
        let l0 = &net.layout.trunk[0];
        let w = &net.values[l0.offset..l0.bias_offset()];
        let zs: Vec<f64> = free
            .iter()
            .enumerate()
            .map(|(c, v)| net.standardizer.direct(c, *v))
            .collect();
        let h0: Vec<f64> = (0..l0.rows)
            .map(|r| {
                let row = &w[r * l0.cols..r * l0.cols + self.free_dim];
                self.first_offset[r] + row.iter().zip(&zs).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let out = net.finish_trunk(h0);
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::NonFinite("network output".into()))
        }
    }
}

#[inline]
fn dense(p: &NetParams, l: &LayerShape, x: &[f64], y: &mut [f64]) {
    let w = &p.values[l.offset..l.bias_offset()];
    let b = &p.values[l.bias_offset()..l.end()];
    for r in 0..l.rows {
        let row = &w[r * l.cols..(r + 1) * l.cols];
        y[r] = b[r] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

fn check_labels(n_rows: usize, labels: ArrayView1<f64>) -> Result<()> {
    if labels.len() != n_rows {
        return Err(Error::dims("labels", n_rows, labels.len()));
    }
    if !labels.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("labels".into()));
    }
    Ok(())
}
