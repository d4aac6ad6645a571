//! Classifier extension of a graph partition: soft labels from the k-NN
//! graph, KL-divergence training of a softmax regression or a small MLP, and
//! ranked bin prediction for routing queries.

pub mod net;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::PointSet;
use crate::error::{Error, Result};
use crate::io::{atomic_write, Cur};
use crate::knn::KnnGraph;
use crate::partition::Partition;
use net::{Adam, Network};

pub const MODEL_MAGIC: &[u8; 4] = b"PHM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    SoftmaxRegression,
    Mlp,
}

impl ClassifierKind {
    pub fn tag(self) -> u32 {
        match self {
            ClassifierKind::SoftmaxRegression => 0,
            ClassifierKind::Mlp => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<ClassifierKind> {
        match tag {
            0 => Some(ClassifierKind::SoftmaxRegression),
            1 => Some(ClassifierKind::Mlp),
            _ => None,
        }
    }
}

/// Architecture and optimization settings. [`MlpConfig::top_level`] and
/// [`MlpConfig::second_level`] carry the reference configurations (3×512 and
/// 2×390 with 0.1 dropout); every field is tunable.
#[derive(Debug, Clone)]
pub struct MlpConfig {
    pub blocks: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub base_lr: f64,
    pub decay: f64,
    pub decay_interval: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl MlpConfig {
    /// Top-level network: 3 blocks of width 512.
    pub fn top_level() -> MlpConfig {
        MlpConfig {
            blocks: 3,
            hidden: 512,
            dropout: 0.1,
            epochs: 20,
            base_lr: 1e-3,
            decay: 0.5,
            decay_interval: 5,
            batch_size: 256,
            seed: 42,
        }
    }

    /// Second-level network: 2 blocks of width 390.
    pub fn second_level() -> MlpConfig {
        MlpConfig {
            blocks: 2,
            hidden: 390,
            ..MlpConfig::top_level()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParam("dropout must be in [0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.decay_interval == 0 {
            return Err(Error::InvalidParam(
                "epochs, batch_size, decay_interval must be >= 1".into(),
            ));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0)
            || !(self.decay.is_finite() && self.decay > 0.0)
        {
            return Err(Error::InvalidParam("learning rate and decay must be positive".into()));
        }
        Ok(())
    }
}

impl Default for MlpConfig {
    fn default() -> MlpConfig {
        MlpConfig::top_level()
    }
}

/// Per-point sparse distributions over bins; every probability is count/S.
#[derive(Debug, Clone)]
pub struct SoftLabelSet {
    // per point: (bin, count) with counts summing to s, bins ascending
    counts: Vec<Vec<(u32, u32)>>,
    s: u32,
    m: usize,
}

impl SoftLabelSet {
    pub fn n(&self) -> usize {
        self.counts.len()
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// One-hot labels straight from a partition (the S=1 special case).
    pub fn one_hot(part: &Partition) -> SoftLabelSet {
        SoftLabelSet {
            counts: part.labels().iter().map(|&l| vec![(l, 1)]).collect(),
            s: 1,
            m: part.m(),
        }
    }

    /// Sparse distribution of point `p` as (bin, probability) pairs.
    pub fn dist(&self, p: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let s = self.s as f64;
        self.counts[p].iter().map(move |&(b, c)| (b, c as f64 / s))
    }

    /// Writes the dense distribution of `p` into `out` (length m).
    pub fn fill_dense(&self, p: usize, out: &mut [f64]) {
        assert_eq!(out.len(), self.m);
        out.iter_mut().for_each(|v| *v = 0.0);
        let s = self.s as f64;
        for &(b, c) in &self.counts[p] {
            out[b as usize] = c as f64 / s;
        }
    }
}

/// Soft label of p: the bin histogram of {p} ∪ its first S−1 graph neighbors,
/// normalized by S.
pub fn make_soft_labels(g: &KnnGraph, part: &Partition, s: usize) -> Result<SoftLabelSet> {
    if part.n() != g.n() {
        return Err(Error::InvalidParam(format!(
            "partition covers {} points, graph has {}",
            part.n(),
            g.n()
        )));
    }
    if s == 0 {
        return Err(Error::InvalidParam("S must be >= 1".into()));
    }
    if s > g.k() + 1 {
        return Err(Error::InvalidParam(format!(
            "S={} needs {} graph neighbors but k={}; rebuild the graph with k >= S-1",
            s,
            s - 1,
            g.k()
        )));
    }
    let labels = part.labels();
    let mut counts = Vec::with_capacity(g.n());
    let mut scratch: Vec<(u32, u32)> = Vec::with_capacity(s);
    for p in 0..g.n() {
        scratch.clear();
        scratch.push((labels[p], 1));
        for &q in &g.list(p)[..s - 1] {
            scratch.push((labels[q as usize], 1));
        }
        scratch.sort_unstable_by_key(|&(b, _)| b);
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(scratch.len());
        for &(b, c) in scratch.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == b => last.1 += c,
                _ => merged.push((b, c)),
            }
        }
        counts.push(merged);
    }
    Ok(SoftLabelSet {
        counts,
        s: s as u32,
        m: part.m(),
    })
}

/// KL divergence Σ p_i·log(p_i/q_i) with q floored at 1e-12; 0·log 0 = 0.
pub fn kl_loss(target: &[f64], predicted: &[f64]) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(Error::DimMismatch {
            got: predicted.len(),
            want: target.len(),
        });
    }
    let mut total = 0.0;
    for (&p, &q) in target.iter().zip(predicted) {
        if p > 0.0 {
            total += p * (p / q.max(net::Q_FLOOR)).ln();
        }
    }
    Ok(total)
}

/// Bin IDs ranked by descending probability, ties by ascending ID; length b.
pub fn rank_bins(dist: &[f64], b: usize) -> Result<Vec<u32>> {
    if b == 0 || b > dist.len() {
        return Err(Error::InvalidParam(format!(
            "requested {} bins from a {}-bin distribution",
            b,
            dist.len()
        )));
    }
    let mut idx: Vec<u32> = (0..dist.len() as u32).collect();
    idx.sort_by(|&a, &c| {
        dist[c as usize]
            .partial_cmp(&dist[a as usize])
            .unwrap()
            .then(a.cmp(&c))
    });
    idx.truncate(b);
    Ok(idx)
}

/// A trained routing model: softmax regression or MLP.
#[derive(Debug, Clone)]
pub struct Classifier {
    kind: ClassifierKind,
    net: Network,
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        self.kind
    }

    pub fn d(&self) -> usize {
        self.net.d
    }

    pub fn m(&self) -> usize {
        self.net.m
    }

    #[cfg(test)]
    pub(crate) fn from_net(kind: ClassifierKind, net: Network) -> Classifier {
        Classifier { kind, net }
    }

    /// Probability vector over the m bins (softmax output, eval mode).
    pub fn predict_dist(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.net.d {
            return Err(Error::DimMismatch {
                got: x.len(),
                want: self.net.d,
            });
        }
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        Ok(self.net.predict(&xf, 1))
    }

    /// Batched prediction: `rows` is batch × d row-major; returns batch × m.
    pub fn predict_dist_batch(&self, rows: &[f32], batch: usize) -> Result<Vec<f64>> {
        if rows.len() != batch * self.net.d {
            return Err(Error::DimMismatch {
                got: rows.len(),
                want: batch * self.net.d,
            });
        }
        let xf: Vec<f64> = rows.iter().map(|&v| v as f64).collect();
        Ok(self.net.predict(&xf, batch))
    }

    /// The b top-ranked bins for query x.
    pub fn top_bins(&self, x: &[f32], b: usize) -> Result<Vec<u32>> {
        rank_bins(&self.predict_dist(x)?, b)
    }

    /// For a zero-block two-class model, the separating hyperplane (a, b_t):
    /// class 1 is predicted iff ⟨a, x⟩ > b_t. None for MLPs or m ≠ 2.
    pub fn decision_hyperplane(&self) -> Option<(Vec<f64>, f64)> {
        if !self.net.blocks.is_empty() || self.net.m != 2 {
            return None;
        }
        let w = &self.net.head.w; // d × 2 row-major
        let a = (0..self.net.d).map(|k| w[k * 2 + 1] - w[k * 2]).collect();
        Some((a, self.net.head.b[0] - self.net.head.b[1]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Classifier> {
        let buf = std::fs::read(path)?;
        Classifier::from_bytes(&buf, path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let net = &self.net;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MODEL_MAGIC);
        for v in [
            self.kind.tag(),
            net.d as u32,
            net.m as u32,
            net.blocks.len() as u32,
            net.hidden as u32,
        ] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut put = |t: &[f64]| {
            for &v in t {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        };
        for b in &net.blocks {
            put(&b.lin.w);
            put(&b.lin.b);
            put(&b.bn.gamma);
            put(&b.bn.beta);
            put(&b.bn.running_mean);
            put(&b.bn.running_var);
        }
        put(&net.head.w);
        put(&net.head.b);
        bytes
    }

    /// Parses the serialized form; `origin` names the containing file in
    /// error messages.
    pub fn from_bytes(buf: &[u8], origin: &Path) -> Result<Classifier> {
        let path = origin;
        let mut cur = Cur::new(buf, path);
        cur.expect_magic(MODEL_MAGIC, "PHM1")?;
        let kind_tag = cur.u32_le("kind")?;
        let kind = ClassifierKind::from_tag(kind_tag).ok_or_else(|| Error::BadHeader {
            path: cur.path().to_string(),
            what: format!("unknown classifier kind {}", kind_tag),
        })?;
        let d = cur.u32_le("d")? as usize;
        let m = cur.u32_le("m")? as usize;
        let blocks = cur.u32_le("blocks")? as usize;
        let hidden = cur.u32_le("hidden")? as usize;
        let bad = |what: String| Error::BadHeader {
            path: path.display().to_string(),
            what,
        };
        if d == 0 || m == 0 {
            return Err(bad(format!("bad shape d={} m={}", d, m)));
        }
        match kind {
            ClassifierKind::SoftmaxRegression if blocks != 0 => {
                return Err(bad("regression model with hidden blocks".into()));
            }
            ClassifierKind::Mlp if blocks == 0 || hidden == 0 => {
                return Err(bad("MLP needs blocks >= 1 and hidden >= 1".into()));
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new(d, m, blocks, hidden, 0.1, &mut rng);
        let read_into = |cur: &mut Cur, t: &mut [f64], what: &str| -> Result<()> {
            let vals = cur.f32_vec(t.len(), what)?;
            for (slot, v) in t.iter_mut().zip(vals) {
                if !v.is_finite() {
                    return Err(Error::BadHeader {
                        path: path.display().to_string(),
                        what: format!("non-finite value in {}", what),
                    });
                }
                *slot = v as f64;
            }
            Ok(())
        };
        for b in &mut net.blocks {
            read_into(&mut cur, &mut b.lin.w, "block weights")?;
            read_into(&mut cur, &mut b.lin.b, "block bias")?;
            read_into(&mut cur, &mut b.bn.gamma, "bn gamma")?;
            read_into(&mut cur, &mut b.bn.beta, "bn beta")?;
            read_into(&mut cur, &mut b.bn.running_mean, "bn running mean")?;
            read_into(&mut cur, &mut b.bn.running_var, "bn running var")?;
        }
        read_into(&mut cur, &mut net.head.w, "head weights")?;
        read_into(&mut cur, &mut net.head.b, "head bias")?;
        if !cur.is_eof() {
            return Err(bad("trailing bytes after payload".into()));
        }
        Ok(Classifier { kind, net })
    }
}

/// Central-difference audit of the backpropagated gradient: builds a freshly
/// initialized network and a random batch from `seed`, then returns the worst
/// relative error between the analytic gradient and central finite
/// differences over every parameter. Dropout is disabled — its mask would
/// differ between the two loss evaluations.
pub fn gradient_check(
    d: usize,
    m: usize,
    blocks: usize,
    hidden: usize,
    batch: usize,
    seed: u64,
) -> f64 {
    assert!(d >= 1 && m >= 2 && batch >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::new(d, m, blocks, hidden, 0.0, &mut rng);
    let x: Vec<f64> = (0..batch * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    // random soft targets on the simplex, bounded away from zero
    let mut targets = vec![0.0f64; batch * m];
    for row in targets.chunks_mut(m) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = rng.random::<f64>() + 0.05;
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    let (_, grads) = net.loss_and_grad(&x, batch, &targets, false, None);
    // small step: a wide one can straddle a ReLU kink, where the loss is not
    // differentiable and central differences go wrong
    let h = 1e-5;
    let mut worst = 0.0f64;
    for idx in 0..net.param_count() {
        let orig = net.get_param(idx);
        net.set_param(idx, orig + h);
        let (lp, _) = net.loss_and_grad(&x, batch, &targets, false, None);
        net.set_param(idx, orig - h);
        let (lm, _) = net.loss_and_grad(&x, batch, &targets, false, None);
        net.set_param(idx, orig);
        let fd = (lp - lm) / (2.0 * h);
        let denom = fd.abs().max(grads[idx].abs()).max(1e-6);
        worst = worst.max((fd - grads[idx]).abs() / denom);
    }
    worst
}

/// Trains a classifier on the point set with the given soft labels.
/// Deterministic given cfg.seed; parameters are frozen to f32-representable
/// values afterwards so persistence round-trips exactly.
pub fn train(
    ps: &PointSet,
    labels: &SoftLabelSet,
    kind: ClassifierKind,
    cfg: &MlpConfig,
) -> Result<Classifier> {
    cfg.validate()?;
    let n = ps.n();
    let d = ps.d();
    let m = labels.m();
    if labels.n() != n {
        return Err(Error::InvalidParam(format!(
            "labels cover {} points, dataset has {}",
            labels.n(),
            n
        )));
    }
    if m < 2 {
        return Err(Error::InvalidParam("training needs m >= 2 bins".into()));
    }
    let blocks = match kind {
        ClassifierKind::SoftmaxRegression => {
            if labels.s() != 1 {
                return Err(Error::InvalidParam(
                    "softmax regression trains on one-hot labels (S=1)".into(),
                ));
            }
            0
        }
        ClassifierKind::Mlp => {
            if cfg.blocks == 0 {
                return Err(Error::InvalidParam("MLP needs blocks >= 1".into()));
            }
            cfg.blocks
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = Network::new(d, m, blocks, cfg.hidden, cfg.dropout, &mut rng);
    let mut adam = Adam::new(net.param_count());
    let mut order: Vec<u32> = (0..n as u32).collect();
    let mut first_epoch_loss = f64::NAN;
    let mut xb: Vec<f64> = Vec::new();
    let mut tb: Vec<f64> = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.base_lr * cfg.decay.powi((epoch / cfg.decay_interval) as i32);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            xb.clear();
            tb.clear();
            tb.resize(b * m, 0.0);
            for (i, &p) in chunk.iter().enumerate() {
                xb.extend(ps.row(p as usize).iter().map(|&v| v as f64));
                labels.fill_dense(p as usize, &mut tb[i * m..(i + 1) * m]);
            }
            let (loss, grads) = net.loss_and_grad(&xb, b, &tb, true, Some(&mut rng));
            if !loss.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "training diverged: non-finite loss at epoch {}",
                    epoch
                )));
            }
            adam.step(&mut net, &grads, lr);
        }
        if epoch == 0 {
            first_epoch_loss = mean_eval_kl(&net, ps, labels, cfg.batch_size);
            log::debug!("epoch 0: mean KL {:.6}", first_epoch_loss);
        }
    }
    // epoch-mean KL measured in eval mode (no dropout noise, frozen BN stats);
    // with epochs == 1 this compares the same measurement to itself
    let last_epoch_loss = if cfg.epochs == 1 {
        first_epoch_loss
    } else {
        mean_eval_kl(&net, ps, labels, cfg.batch_size)
    };
    log::debug!("final epoch: mean KL {:.6}", last_epoch_loss);
    assert!(
        last_epoch_loss <= first_epoch_loss + 1e-9,
        "training made the loss worse: first epoch {:.6}, last {:.6}",
        first_epoch_loss,
        last_epoch_loss
    );
    net.freeze_to_f32();
    Ok(Classifier { kind, net })
}

/// Mean KL over the whole dataset with the network in inference mode.
fn mean_eval_kl(net: &Network, ps: &PointSet, labels: &SoftLabelSet, batch: usize) -> f64 {
    let (n, m) = (ps.n(), labels.m());
    let mut total = 0.0;
    let mut xb: Vec<f64> = Vec::new();
    let mut target = vec![0.0; m];
    let mut start = 0;
    while start < n {
        let b = batch.min(n - start);
        xb.clear();
        for p in start..start + b {
            xb.extend(ps.row(p).iter().map(|&v| v as f64));
        }
        let probs = net.predict(&xb, b);
        for (i, p) in (start..start + b).enumerate() {
            labels.fill_dense(p, &mut target);
            total += kl_loss(&target, &probs[i * m..(i + 1) * m]).unwrap();
        }
        start += b;
    }
    total / n as f64
}
