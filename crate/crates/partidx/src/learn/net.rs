//! Feed-forward network internals: affine, batch-norm, ReLU, dropout blocks
//! with a softmax + KL head, trained by Adam.
//!
//! Everything computes in f64 with fixed reduction orders (ascending index),
//! so results are bit-reproducible across runs. Parameters are exposed
//! through a flat index space for the optimizer and for finite-difference
//! gradient checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Probability floor applied to predictions inside the KL loss.
pub const Q_FLOOR: f64 = 1e-12;

/// y = xW + b with W stored row-major as din × dout.
#[derive(Debug, Clone)]
pub struct Affine {
    pub din: usize,
    pub dout: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Affine {
    /// Glorot-uniform weights: U(−a, a) with a = sqrt(6/(din+dout)), so the
    /// variance is 2/(din+dout). Biases start at zero.
    fn glorot(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Affine {
        let a = (6.0 / (din + dout) as f64).sqrt();
        let w = (0..din * dout).map(|_| rng.random_range(-a..a)).collect();
        Affine {
            din,
            dout,
            w,
            b: vec![0.0; dout],
        }
    }

    /// out[i] = x[i]·W + b, batch-major. Accumulation over the input index is
    /// ascending for every output element.
    fn forward(&self, x: &[f64], batch: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(batch * self.dout, 0.0);
        for i in 0..batch {
            let xi = &x[i * self.din..(i + 1) * self.din];
            let oi = &mut out[i * self.dout..(i + 1) * self.dout];
            oi.copy_from_slice(&self.b);
            for (k, &xv) in xi.iter().enumerate() {
                let wrow = &self.w[k * self.dout..(k + 1) * self.dout];
                for j in 0..self.dout {
                    oi[j] += xv * wrow[j];
                }
            }
        }
    }

    /// Backward pass: fills dw, db and returns dx.
    fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        batch: usize,
        dw: &mut [f64],
        db: &mut [f64],
    ) -> Vec<f64> {
        debug_assert_eq!(dw.len(), self.w.len());
        debug_assert_eq!(db.len(), self.b.len());
        for i in 0..batch {
            let dyi = &dy[i * self.dout..(i + 1) * self.dout];
            let xi = &x[i * self.din..(i + 1) * self.din];
            for j in 0..self.dout {
                db[j] += dyi[j];
            }
            for (k, &xv) in xi.iter().enumerate() {
                let dwrow = &mut dw[k * self.dout..(k + 1) * self.dout];
                for j in 0..self.dout {
                    dwrow[j] += xv * dyi[j];
                }
            }
        }
        let mut dx = vec![0.0; batch * self.din];
        for i in 0..batch {
            let dyi = &dy[i * self.dout..(i + 1) * self.dout];
            let dxi = &mut dx[i * self.din..(i + 1) * self.din];
            for k in 0..self.din {
                let wrow = &self.w[k * self.dout..(k + 1) * self.dout];
                let mut acc = 0.0;
                for j in 0..self.dout {
                    acc += dyi[j] * wrow[j];
                }
                dxi[k] = acc;
            }
        }
        dx
    }
}

/// Batch normalization with learned scale/shift and EMA running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub dim: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Training-mode cache needed by the backward pass.
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> BatchNorm {
        BatchNorm {
            dim,
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    /// Normalizes by batch statistics; optionally folds them into the running
    /// averages (biased variance normalizes, unbiased feeds the EMA).
    fn forward_train(
        &mut self,
        x: &[f64],
        batch: usize,
        update_stats: bool,
        out: &mut Vec<f64>,
    ) -> BnCache {
        let d = self.dim;
        let bf = batch as f64;
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for i in 0..batch {
            let xi = &x[i * d..(i + 1) * d];
            for j in 0..d {
                mean[j] += xi[j];
            }
        }
        for mj in mean.iter_mut() {
            *mj /= bf;
        }
        for i in 0..batch {
            let xi = &x[i * d..(i + 1) * d];
            for j in 0..d {
                let c = xi[j] - mean[j];
                var[j] += c * c;
            }
        }
        for vj in var.iter_mut() {
            *vj /= bf;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        if update_stats {
            // PyTorch convention: unbiased variance in the running average
            let unbias = if batch > 1 { bf / (bf - 1.0) } else { 1.0 };
            for j in 0..d {
                self.running_mean[j] =
                    (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * mean[j];
                self.running_var[j] =
                    (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * var[j] * unbias;
            }
        }
        out.clear();
        out.resize(batch * d, 0.0);
        let mut xhat = vec![0.0; batch * d];
        for i in 0..batch {
            for j in 0..d {
                let h = (x[i * d + j] - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out[i * d + j] = self.gamma[j] * h + self.beta[j];
            }
        }
        BnCache { xhat, inv_std }
    }

    fn forward_eval(&self, x: &[f64], batch: usize, out: &mut Vec<f64>) {
        let d = self.dim;
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|&v| 1.0 / (v + BN_EPS).sqrt())
            .collect();
        out.clear();
        out.resize(batch * d, 0.0);
        for i in 0..batch {
            for j in 0..d {
                out[i * d + j] =
                    self.gamma[j] * (x[i * d + j] - self.running_mean[j]) * inv_std[j] + self.beta[j];
            }
        }
    }

    /// Gradient through the batch statistics:
    /// dx = inv_std/B · (B·dxhat − Σdxhat − xhat·Σ(dxhat⊙xhat)).
    fn backward(
        &self,
        cache: &BnCache,
        dy: &[f64],
        batch: usize,
        dgamma: &mut [f64],
        dbeta: &mut [f64],
    ) -> Vec<f64> {
        let d = self.dim;
        let bf = batch as f64;
        let mut sum_dxhat = vec![0.0; d];
        let mut sum_dxhat_xhat = vec![0.0; d];
        let mut dxhat = vec![0.0; batch * d];
        for i in 0..batch {
            for j in 0..d {
                let idx = i * d + j;
                dgamma[j] += dy[idx] * cache.xhat[idx];
                dbeta[j] += dy[idx];
                let dh = dy[idx] * self.gamma[j];
                dxhat[idx] = dh;
                sum_dxhat[j] += dh;
                sum_dxhat_xhat[j] += dh * cache.xhat[idx];
            }
        }
        let mut dx = vec![0.0; batch * d];
        for i in 0..batch {
            for j in 0..d {
                let idx = i * d + j;
                dx[idx] = cache.inv_std[j] / bf
                    * (bf * dxhat[idx] - sum_dxhat[j] - cache.xhat[idx] * sum_dxhat_xhat[j]);
            }
        }
        dx
    }
}

/// One hidden block: affine → batch-norm → ReLU → dropout.
#[derive(Debug, Clone)]
pub struct Block {
    pub lin: Affine,
    pub bn: BatchNorm,
}

/// The full model: `blocks` hidden blocks followed by an affine head and
/// softmax. Zero blocks is exactly multinomial softmax regression.
#[derive(Debug, Clone)]
pub struct Network {
    pub d: usize,
    pub m: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub blocks: Vec<Block>,
    pub head: Affine,
}

/// Per-batch intermediate state retained for the backward pass.
struct Tape {
    // per block: input, bn cache, post-relu (pre-dropout), dropout mask
    inputs: Vec<Vec<f64>>,
    bn_caches: Vec<BnCache>,
    relu_out: Vec<Vec<f64>>,
    drop_mask: Vec<Vec<bool>>,
    drop_active: bool,
    head_in: Vec<f64>,
    probs: Vec<f64>,
}

impl Network {
    pub fn new(d: usize, m: usize, blocks: usize, hidden: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Network {
        assert!(d >= 1 && m >= 1);
        assert!((0.0..1.0).contains(&dropout));
        let mut layers = Vec::with_capacity(blocks);
        let mut din = d;
        for _ in 0..blocks {
            layers.push(Block {
                lin: Affine::glorot(din, hidden, rng),
                bn: BatchNorm::new(hidden),
            });
            din = hidden;
        }
        let head = Affine::glorot(din, m, rng);
        Network {
            d,
            m,
            hidden,
            dropout,
            blocks: layers,
            head,
        }
    }

    /// Row-wise softmax with max-subtraction.
    fn softmax(logits: &[f64], batch: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; batch * m];
        for i in 0..batch {
            let li = &logits[i * m..(i + 1) * m];
            let mx = li.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let oi = &mut out[i * m..(i + 1) * m];
            let mut z = 0.0;
            for j in 0..m {
                let e = (li[j] - mx).exp();
                oi[j] = e;
                z += e;
            }
            for v in oi.iter_mut() {
                *v /= z;
            }
        }
        out
    }

    /// Mean KL(p‖q) over the batch, with q floored at `Q_FLOOR`.
    fn kl_mean(targets: &[f64], probs: &[f64], batch: usize, m: usize) -> f64 {
        let mut total = 0.0;
        for i in 0..batch {
            for j in 0..m {
                let p = targets[i * m + j];
                if p > 0.0 {
                    let q = probs[i * m + j].max(Q_FLOOR);
                    total += p * (p / q).ln();
                }
            }
        }
        total / batch as f64
    }

    /// Inference: running-statistics batch-norm, no dropout.
    pub fn predict(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for block in &self.blocks {
            block.lin.forward(&cur, batch, &mut next);
            std::mem::swap(&mut cur, &mut next);
            block.bn.forward_eval(&cur, batch, &mut next);
            std::mem::swap(&mut cur, &mut next);
            for v in cur.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        self.head.forward(&cur, batch, &mut next);
        Self::softmax(&next, batch, self.m)
    }

    /// Training-mode forward. Dropout draws from `drop_rng` when provided;
    /// `None` disables dropout (used by gradient checks).
    fn forward_train(
        &mut self,
        x: &[f64],
        batch: usize,
        update_stats: bool,
        mut drop_rng: Option<&mut ChaCha8Rng>,
    ) -> Tape {
        let nb = self.blocks.len();
        let drop_active = self.dropout > 0.0 && drop_rng.is_some();
        let mut tape = Tape {
            inputs: Vec::with_capacity(nb),
            bn_caches: Vec::with_capacity(nb),
            relu_out: Vec::with_capacity(nb),
            drop_mask: Vec::with_capacity(nb),
            drop_active,
            head_in: Vec::new(),
            probs: Vec::new(),
        };
        let keep = 1.0 - self.dropout;
        let mut cur = x.to_vec();
        for bi in 0..nb {
            let mut z = Vec::new();
            self.blocks[bi].lin.forward(&cur, batch, &mut z);
            tape.inputs.push(std::mem::take(&mut cur));
            let mut h = Vec::new();
            let cache = self.blocks[bi].bn.forward_train(&z, batch, update_stats, &mut h);
            tape.bn_caches.push(cache);
            for v in h.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let mut a = h.clone();
            let mask: Vec<bool> = if drop_active {
                let rng = drop_rng.as_deref_mut().unwrap();
                let mask: Vec<bool> = (0..h.len()).map(|_| rng.random::<f64>() < keep).collect();
                // inverted dropout: kept units scale by 1/keep
                for (v, &keepit) in a.iter_mut().zip(&mask) {
                    *v = if keepit { *v / keep } else { 0.0 };
                }
                mask
            } else {
                vec![true; h.len()]
            };
            tape.relu_out.push(h);
            tape.drop_mask.push(mask);
            cur = a;
        }
        let mut logits = Vec::new();
        self.head.forward(&cur, batch, &mut logits);
        tape.head_in = cur;
        tape.probs = Self::softmax(&logits, batch, self.m);
        tape
    }

    /// Flat length of block `bi`'s parameter segment (w, b, gamma, beta).
    fn block_param_len(&self, bi: usize) -> usize {
        let b = &self.blocks[bi];
        b.lin.w.len() + b.lin.b.len() + b.bn.gamma.len() + b.bn.beta.len()
    }

    /// Training loss and the full flat parameter gradient.
    pub fn loss_and_grad(
        &mut self,
        x: &[f64],
        batch: usize,
        targets: &[f64],
        update_stats: bool,
        drop_rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, Vec<f64>) {
        assert_eq!(x.len(), batch * self.d);
        assert_eq!(targets.len(), batch * self.m);
        let tape = self.forward_train(x, batch, update_stats, drop_rng);
        let loss = Self::kl_mean(targets, &tape.probs, batch, self.m);
        let mut grads = vec![0.0; self.param_count()];
        // d(mean KL)/d(logit) = (q − p)/batch
        let bf = batch as f64;
        let mut dlogits = vec![0.0; batch * self.m];
        for idx in 0..batch * self.m {
            dlogits[idx] = (tape.probs[idx] - targets[idx]) / bf;
        }
        let nb = self.blocks.len();
        let head_off: usize = (0..nb).map(|bi| self.block_param_len(bi)).sum();
        let mut dcur = {
            let seg = &mut grads[head_off..];
            let (dw, db) = seg.split_at_mut(self.head.w.len());
            self.head.backward(&tape.head_in, &dlogits, batch, dw, db)
        };
        let keep = 1.0 - self.dropout;
        let mut seg_off = head_off;
        for bi in (0..nb).rev() {
            seg_off -= self.block_param_len(bi);
            if tape.drop_active {
                for (v, &keepit) in dcur.iter_mut().zip(&tape.drop_mask[bi]) {
                    *v = if keepit { *v / keep } else { 0.0 };
                }
            }
            // relu backward (mask from the kept pre-dropout activations)
            for (v, &h) in dcur.iter_mut().zip(&tape.relu_out[bi]) {
                if h <= 0.0 {
                    *v = 0.0;
                }
            }
            let block = &self.blocks[bi];
            let seg = &mut grads[seg_off..seg_off + self.block_param_len(bi)];
            let (dw, seg) = seg.split_at_mut(block.lin.w.len());
            let (db, seg) = seg.split_at_mut(block.lin.b.len());
            let (dgamma, dbeta) = seg.split_at_mut(block.bn.gamma.len());
            let dz = block
                .bn
                .backward(&tape.bn_caches[bi], &dcur, batch, dgamma, dbeta);
            dcur = block.lin.backward(&tape.inputs[bi], &dz, batch, dw, db);
        }
        (loss, grads)
    }

    /// Flat parameter layout: per block (w, b, gamma, beta), then head (w, b).
    /// Running statistics are not parameters.
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        for b in &self.blocks {
            count += b.lin.w.len() + b.lin.b.len() + b.bn.gamma.len() + b.bn.beta.len();
        }
        count + self.head.w.len() + self.head.b.len()
    }

    /// Visits every parameter in flat order.
    pub fn for_each_param<F: FnMut(&mut f64)>(&mut self, mut f: F) {
        for b in &mut self.blocks {
            b.lin.w.iter_mut().for_each(&mut f);
            b.lin.b.iter_mut().for_each(&mut f);
            b.bn.gamma.iter_mut().for_each(&mut f);
            b.bn.beta.iter_mut().for_each(&mut f);
        }
        self.head.w.iter_mut().for_each(&mut f);
        self.head.b.iter_mut().for_each(&mut f);
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let mut i = idx;
        for b in &self.blocks {
            for t in [&b.lin.w, &b.lin.b, &b.bn.gamma, &b.bn.beta] {
                if i < t.len() {
                    return t[i];
                }
                i -= t.len();
            }
        }
        for t in [&self.head.w, &self.head.b] {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index {} out of range", idx);
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let mut i = idx;
        for b in &mut self.blocks {
            for t in [&mut b.lin.w, &mut b.lin.b, &mut b.bn.gamma, &mut b.bn.beta] {
                if i < t.len() {
                    t[i] = v;
                    return;
                }
                i -= t.len();
            }
        }
        for t in [&mut self.head.w, &mut self.head.b] {
            if i < t.len() {
                t[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index {} out of range", idx);
    }

    /// Rounds every parameter and running statistic to its nearest f32 value
    /// so persistence (stored as f32) reproduces inference bit-exactly.
    pub fn freeze_to_f32(&mut self) {
        self.for_each_param(|v| *v = *v as f32 as f64);
        for b in &mut self.blocks {
            for t in [&mut b.bn.running_mean, &mut b.bn.running_var] {
                for v in t.iter_mut() {
                    *v = *v as f32 as f64;
                }
            }
        }
    }
}

/// Adam over the flat parameter space.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(param_count: usize) -> Adam {
        Adam {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &[f64], lr: f64) {
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut idx = 0;
        let (m, v) = (&mut self.m, &mut self.v);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        net.for_each_param(|p| {
            let g = grads[idx];
            m[idx] = b1 * m[idx] + (1.0 - b1) * g;
            v[idx] = b2 * v[idx] + (1.0 - b2) * g * g;
            let mhat = m[idx] / bc1;
            let vhat = v[idx] / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
            idx += 1;
        });
        debug_assert_eq!(idx, grads.len());
    }
}
