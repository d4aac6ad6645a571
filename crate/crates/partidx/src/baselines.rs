//! Comparison partitioners: k-means routing, hyperplane trees (PCA, random
//! projection, 2-means, regression rules), and random-hyperplane LSH.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::PointSet;
use crate::error::{Error, Result};
use crate::knn::build_knn_graph;
use crate::learn::{train, ClassifierKind, MlpConfig, SoftLabelSet};
use crate::partition::{partition_graph, Eta, Partition};

/// Splitmix finalizer: decorrelated per-node seeds from one tree seed.
fn mix_seed(seed: u64, node: u64) -> u64 {
    let mut z = seed ^ node.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub(crate) fn dot_f32(a: &[f32], x: &[f32]) -> f64 {
    a.iter()
        .zip(x)
        .map(|(&ai, &xi)| ai as f64 * xi as f64)
        .sum()
}

// ---------------------------------------------------------------------------
// k-means

/// Nearest-centroid router; bins ranked by centroid distance.
#[derive(Debug, Clone)]
pub struct KMeansRouter {
    d: usize,
    m: usize,
    centroids: Vec<f32>, // m × d
    assign: Vec<u32>,
}

impl KMeansRouter {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn centroid(&self, j: usize) -> &[f32] {
        &self.centroids[j * self.d..(j + 1) * self.d]
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    /// Per-point bin assignment (nearest centroid, ties to the lowest index).
    pub fn assignments(&self) -> &[u32] {
        &self.assign
    }

    pub(crate) fn from_parts(d: usize, m: usize, centroids: Vec<f32>, assign: Vec<u32>) -> KMeansRouter {
        KMeansRouter {
            d,
            m,
            centroids,
            assign,
        }
    }
}

fn sq_dist_to(cent: &[f64], row: &[f32]) -> f64 {
    cent.iter()
        .zip(row)
        .map(|(&c, &x)| {
            let diff = c - x as f64;
            diff * diff
        })
        .sum()
}

/// Index of the nearest centroid (f64 centroids), ties to the lowest index.
fn nearest(cents: &[f64], d: usize, m: usize, row: &[f32]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for j in 0..m {
        let dist = sq_dist_to(&cents[j * d..(j + 1) * d], row);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// Lloyd's algorithm from k-means++ seeding. The objective is asserted
/// non-increasing every iteration; empty clusters are repaired by stealing
/// the farthest point of the largest cluster. Centroids are frozen to f32
/// at the end and the final assignment is computed against the frozen values.
pub fn kmeans_fit(ps: &PointSet, m: usize, seed: u64, iters: usize) -> Result<KMeansRouter> {
    let (n, d) = (ps.n(), ps.d());
    if m == 0 || m > n {
        return Err(Error::InvalidParam(format!(
            "k-means needs 1 <= m <= n, got m={} n={}",
            m, n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut cents = vec![0.0f64; m * d];
    let first = rng.random_range(0..n);
    for (slot, &v) in cents[..d].iter_mut().zip(ps.row(first)) {
        *slot = v as f64;
    }
    let mut d2: Vec<f64> = (0..n)
        .map(|p| sq_dist_to(&cents[..d], ps.row(p)))
        .collect();
    for j in 1..m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut pick = n - 1;
            for (p, &w) in d2.iter().enumerate() {
                cum += w;
                if cum >= r {
                    pick = p;
                    break;
                }
            }
            pick
        } else {
            // every point coincides with a chosen centroid
            j % n
        };
        let (cj, row) = (&mut cents[j * d..(j + 1) * d], ps.row(pick));
        for (slot, &v) in cj.iter_mut().zip(row) {
            *slot = v as f64;
        }
        for (p, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist_to(&cents[j * d..(j + 1) * d], ps.row(p)));
        }
    }

    let mut assign: Vec<u32> = vec![0; n];
    let mut prev_obj = f64::INFINITY;
    for _ in 0..iters {
        let mut obj = 0.0;
        let mut changed = false;
        for p in 0..n {
            let (j, dist) = nearest(&cents, d, m, ps.row(p));
            obj += dist;
            if assign[p] != j as u32 {
                assign[p] = j as u32;
                changed = true;
            }
        }
        assert!(
            obj <= prev_obj * (1.0 + 1e-12) + 1e-12,
            "k-means objective increased: {} -> {}",
            prev_obj,
            obj
        );
        prev_obj = obj;

        let mut sizes = vec![0usize; m];
        for &a in &assign {
            sizes[a as usize] += 1;
        }
        for j in 0..m {
            if sizes[j] > 0 {
                continue;
            }
            // steal the farthest point of the largest cluster
            let big = (0..m).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
            let mut far = (usize::MAX, -1.0f64);
            for p in 0..n {
                if assign[p] as usize != big {
                    continue;
                }
                let dist = sq_dist_to(&cents[big * d..(big + 1) * d], ps.row(p));
                if dist > far.1 {
                    far = (p, dist);
                }
            }
            assign[far.0] = j as u32;
            sizes[big] -= 1;
            sizes[j] += 1;
            changed = true;
        }

        cents.iter_mut().for_each(|c| *c = 0.0);
        for p in 0..n {
            let cj = &mut cents[assign[p] as usize * d..(assign[p] as usize + 1) * d];
            for (slot, &v) in cj.iter_mut().zip(ps.row(p)) {
                *slot += v as f64;
            }
        }
        for j in 0..m {
            let inv = 1.0 / sizes[j] as f64;
            cents[j * d..(j + 1) * d].iter_mut().for_each(|c| *c *= inv);
        }
        if !changed {
            break;
        }
    }

    let centroids: Vec<f32> = cents.iter().map(|&c| c as f32).collect();
    let frozen: Vec<f64> = centroids.iter().map(|&c| c as f64).collect();
    for p in 0..n {
        assign[p] = nearest(&frozen, d, m, ps.row(p)).0 as u32;
    }
    Ok(KMeansRouter {
        d,
        m,
        centroids,
        assign,
    })
}

/// Bins ranked by ascending squared distance of q to the f32 centroids,
/// ties by bin index; first b returned.
pub(crate) fn rank_by_centroid(centroids: &[f32], d: usize, m: usize, q: &[f32], b: usize) -> Result<Vec<u32>> {
    if q.len() != d {
        return Err(Error::DimMismatch { got: q.len(), want: d });
    }
    if b == 0 || b > m {
        return Err(Error::InvalidParam(format!(
            "requested {} bins from a {}-bin router",
            b, m
        )));
    }
    let mut order: Vec<(f64, u32)> = (0..m)
        .map(|j| {
            let dist = centroids[j * d..(j + 1) * d]
                .iter()
                .zip(q)
                .map(|(&c, &x)| {
                    let diff = c as f64 - x as f64;
                    diff * diff
                })
                .sum::<f64>();
            (dist, j as u32)
        })
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    order.truncate(b);
    Ok(order.into_iter().map(|(_, j)| j).collect())
}

/// The b bins nearest to q by centroid distance, ties by bin index.
pub fn kmeans_top_bins(r: &KMeansRouter, q: &[f32], b: usize) -> Result<Vec<u32>> {
    rank_by_centroid(&r.centroids, r.d, r.m, q, b)
}

// ---------------------------------------------------------------------------
// hyperplane trees

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    Pca,
    Rp,
    TwoMeans,
    Regression,
}

impl SplitRule {
    pub fn tag(self) -> u32 {
        match self {
            SplitRule::Pca => 0,
            SplitRule::Rp => 1,
            SplitRule::TwoMeans => 2,
            SplitRule::Regression => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<SplitRule> {
        match tag {
            0 => Some(SplitRule::Pca),
            1 => Some(SplitRule::Rp),
            2 => Some(SplitRule::TwoMeans),
            3 => Some(SplitRule::Regression),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum TreeNode {
    Internal {
        a: Vec<f32>,
        b_t: f32,
        rule: SplitRule,
        left: u32,
        right: u32,
    },
    Leaf {
        points: Vec<u32>,
    },
}

/// Binary space-partitioning tree; a point goes left iff ⟨a, p⟩ ≤ b_t.
#[derive(Debug, Clone)]
pub struct HyperplaneTree {
    d: usize,
    pub(crate) nodes: Vec<TreeNode>, // root at index 0
}

impl HyperplaneTree {
    /// The split rule this tree was built with; None for a single-leaf tree.
    pub fn rule(&self) -> Option<SplitRule> {
        match self.nodes.first() {
            Some(TreeNode::Internal { rule, .. }) => Some(*rule),
            _ => None,
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub(crate) fn from_parts(d: usize, nodes: Vec<TreeNode>) -> HyperplaneTree {
        HyperplaneTree { d, nodes }
    }
}

/// Top principal direction of `pts` rows by power iteration on the centered
/// covariance (matrix-free). None when the points carry no variance.
fn pca_direction(ps: &PointSet, ids: &[u32], seed: u64) -> Option<Vec<f64>> {
    let d = ps.d();
    let cnt = ids.len();
    let mut mean = vec![0.0f64; d];
    for &p in ids {
        for (slot, &v) in mean.iter_mut().zip(ps.row(p as usize)) {
            *slot += v as f64;
        }
    }
    mean.iter_mut().for_each(|v| *v /= cnt as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);

    let mut lambda_prev = f64::INFINITY;
    let mut w = vec![0.0f64; d];
    for _ in 0..50 {
        w.iter_mut().for_each(|x| *x = 0.0);
        for &p in ids {
            let row = ps.row(p as usize);
            let mut proj = 0.0;
            for k in 0..d {
                proj += (row[k] as f64 - mean[k]) * v[k];
            }
            for k in 0..d {
                w[k] += (row[k] as f64 - mean[k]) * proj;
            }
        }
        w.iter_mut().for_each(|x| *x /= cnt as f64);
        let lambda = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lambda < 1e-300 {
            return None; // no variance along any direction reached
        }
        v.iter_mut().zip(&w).for_each(|(x, &wx)| *x = wx / lambda);
        if (lambda - lambda_prev).abs() <= 1e-8 * lambda.max(1e-12) {
            break;
        }
        lambda_prev = lambda;
    }
    Some(v)
}

/// The split hyperplane for one tree node, or None when the node cannot be
/// split (degenerate geometry or an infeasible balanced cut).
fn node_hyperplane(
    ps: &PointSet,
    ids: &[u32],
    rule: SplitRule,
    node_seed: u64,
) -> Result<Option<(Vec<f32>, f32)>> {
    let d = ps.d();
    match rule {
        SplitRule::Pca => {
            let Some(dir) = pca_direction(ps, ids, node_seed) else {
                return Ok(None);
            };
            let a: Vec<f32> = dir.iter().map(|&x| x as f32).collect();
            // median projection -> equal halves
            let mut proj: Vec<f64> = ids
                .iter()
                .map(|&p| dot_f32(&a, ps.row(p as usize)))
                .collect();
            proj.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let cnt = proj.len();
            let b_t = if cnt % 2 == 0 {
                (proj[cnt / 2 - 1] + proj[cnt / 2]) / 2.0
            } else {
                proj[cnt / 2]
            };
            Ok(Some((a, b_t as f32)))
        }
        SplitRule::Rp => {
            let mut rng = ChaCha8Rng::seed_from_u64(node_seed);
            let mut dir: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                return Ok(None);
            }
            dir.iter_mut().for_each(|x| *x /= norm);
            let a: Vec<f32> = dir.iter().map(|&x| x as f32).collect();
            // threshold 0 on data centered at the node mean
            let mut mean = vec![0.0f64; d];
            for &p in ids {
                for (slot, &v) in mean.iter_mut().zip(ps.row(p as usize)) {
                    *slot += v as f64;
                }
            }
            mean.iter_mut().for_each(|v| *v /= ids.len() as f64);
            let b_t: f64 = a.iter().zip(&mean).map(|(&ai, &mi)| ai as f64 * mi).sum();
            Ok(Some((a, b_t as f32)))
        }
        SplitRule::TwoMeans => {
            let sub = ps.subset(ids);
            let r = kmeans_fit(&sub, 2.min(ids.len()), node_seed, 25)?;
            if r.m() < 2 {
                return Ok(None);
            }
            let (c1, c2) = (r.centroid(0), r.centroid(1));
            let a: Vec<f32> = c1.iter().zip(c2).map(|(&x, &y)| y - x).collect();
            if a.iter().all(|&x| x == 0.0) {
                return Ok(None); // coincident centroids
            }
            let mid: Vec<f32> = c1.iter().zip(c2).map(|(&x, &y)| (x + y) / 2.0).collect();
            let b_t = dot_f32(&a, &mid);
            Ok(Some((a, b_t as f32)))
        }
        SplitRule::Regression => {
            if ids.len() < 2 {
                return Ok(None);
            }
            let sub = ps.subset(ids);
            let k = 10.min(ids.len() - 1);
            let g = build_knn_graph(&sub, k)?;
            let eta = Eta::new(1, 20).unwrap();
            let part = match partition_graph(&g, 2, eta, node_seed, 10) {
                Ok(p) => p,
                Err(Error::InfeasibleBalance { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let labels = SoftLabelSet::one_hot(&part);
            let cfg = MlpConfig {
                epochs: 60,
                base_lr: 0.05,
                batch_size: 64,
                decay_interval: 30,
                seed: node_seed,
                ..MlpConfig::top_level()
            };
            let c = train(&sub, &labels, ClassifierKind::SoftmaxRegression, &cfg)?;
            let (dir, thresh) = c.decision_hyperplane().expect("2-class zero-block model");
            let a: Vec<f32> = dir.iter().map(|&x| x as f32).collect();
            Ok(Some((a, thresh as f32)))
        }
    }
}

/// Builds a binary hyperplane tree of depth ≤ `depth` over the dataset.
/// Nodes with ≤ 1 point, or where the rule fails to separate the points,
/// become leaves.
pub fn build_hyperplane_tree(
    ps: &PointSet,
    depth: usize,
    rule: SplitRule,
    seed: u64,
) -> Result<HyperplaneTree> {
    if depth == 0 {
        return Err(Error::InvalidParam("tree depth must be >= 1".into()));
    }
    let mut nodes: Vec<TreeNode> = Vec::new();
    let all: Vec<u32> = (0..ps.n() as u32).collect();
    build_node(ps, all, rule, seed, depth, &mut nodes)?;
    Ok(HyperplaneTree { d: ps.d(), nodes })
}

fn build_node(
    ps: &PointSet,
    ids: Vec<u32>,
    rule: SplitRule,
    seed: u64,
    levels_left: usize,
    nodes: &mut Vec<TreeNode>,
) -> Result<u32> {
    let slot = nodes.len() as u32;
    nodes.push(TreeNode::Leaf { points: Vec::new() });
    if levels_left == 0 || ids.len() <= 1 {
        nodes[slot as usize] = TreeNode::Leaf { points: ids };
        return Ok(slot);
    }
    let node_seed = mix_seed(seed, slot as u64);
    let Some((a, b_t)) = node_hyperplane(ps, &ids, rule, node_seed)? else {
        nodes[slot as usize] = TreeNode::Leaf { points: ids };
        return Ok(slot);
    };
    let mut left_ids = Vec::new();
    let mut right_ids = Vec::new();
    for &p in &ids {
        if dot_f32(&a, ps.row(p as usize)) <= b_t as f64 {
            left_ids.push(p);
        } else {
            right_ids.push(p);
        }
    }
    if left_ids.is_empty() || right_ids.is_empty() {
        nodes[slot as usize] = TreeNode::Leaf { points: ids };
        return Ok(slot);
    }
    let left = build_node(ps, left_ids, rule, seed, levels_left - 1, nodes)?;
    let right = build_node(ps, right_ids, rule, seed, levels_left - 1, nodes)?;
    nodes[slot as usize] = TreeNode::Internal {
        a,
        b_t,
        rule,
        left,
        right,
    };
    Ok(slot)
}

/// Root-to-leaf descent: left iff ⟨a, q⟩ ≤ b_t. Returns the leaf's points.
pub fn tree_route<'t>(t: &'t HyperplaneTree, q: &[f32]) -> Result<&'t [u32]> {
    if q.len() != t.d {
        return Err(Error::DimMismatch {
            got: q.len(),
            want: t.d,
        });
    }
    let mut at = 0usize;
    loop {
        match &t.nodes[at] {
            TreeNode::Leaf { points } => return Ok(points),
            TreeNode::Internal {
                a, b_t, left, right, ..
            } => {
                at = if dot_f32(a, q) <= *b_t as f64 {
                    *left as usize
                } else {
                    *right as usize
                };
            }
        }
    }
}

// ---------------------------------------------------------------------------
// random-hyperplane LSH

/// The data-independent part of a random-hyperplane LSH: `bits` Gaussian
/// directions and the dataset mean, both frozen to f32 so routing behaves
/// identically before and after persistence.
#[derive(Debug, Clone)]
pub struct LshModel {
    pub(crate) bits: usize,
    pub(crate) dirs: Vec<f32>, // bits × d
    pub(crate) mean: Vec<f32>,
}

impl LshModel {
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn m(&self) -> usize {
        1 << self.bits
    }

    pub(crate) fn from_parts(bits: usize, dirs: Vec<f32>, mean: Vec<f32>) -> LshModel {
        LshModel { bits, dirs, mean }
    }

    /// Signed projections of x onto the directions, after mean-centering.
    pub(crate) fn projections(&self, x: &[f32]) -> Vec<f64> {
        let d = self.mean.len();
        self.dirs
            .chunks_exact(d)
            .map(|dir| {
                dir.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((&g, &v), &mu)| g as f64 * (v as f64 - mu as f64))
                    .sum()
            })
            .collect()
    }

    /// Bin ID: bit i set iff the i-th projection is positive.
    pub fn bin(&self, x: &[f32]) -> u32 {
        let mut id = 0u32;
        for (i, proj) in self.projections(x).into_iter().enumerate() {
            if proj > 0.0 {
                id |= 1 << i;
            }
        }
        id
    }
}

pub fn lsh_model(ps: &PointSet, bits: usize, seed: u64) -> Result<LshModel> {
    if bits == 0 {
        return Err(Error::InvalidParam("LSH needs bits >= 1".into()));
    }
    if bits > 24 {
        return Err(Error::InvalidParam(format!(
            "bits={} would allocate 2^{} bins",
            bits, bits
        )));
    }
    let (n, d) = (ps.n(), ps.d());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<f32> = (0..bits * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    let mut mean = vec![0.0f64; d];
    for p in 0..n {
        for (slot, &v) in mean.iter_mut().zip(ps.row(p)) {
            *slot += v as f64;
        }
    }
    let mean: Vec<f32> = mean.iter().map(|&v| (v / n as f64) as f32).collect();
    Ok(LshModel { bits, dirs, mean })
}

/// Sign-of-projection LSH over `bits` Gaussian directions through the data
/// mean; bin ID = the concatenated sign bits, m = 2^bits.
pub fn lsh_partition(ps: &PointSet, bits: usize, seed: u64) -> Result<Partition> {
    let model = lsh_model(ps, bits, seed)?;
    let labels: Vec<u32> = (0..ps.n()).map(|p| model.bin(ps.row(p))).collect();
    let m = model.m();
    // LSH offers no balance guarantee; record the smallest η that fits
    let mut sizes = vec![0usize; m];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    let max_size = sizes.iter().copied().max().unwrap_or(0) as u64;
    let eta = Eta::new((max_size * m as u64).saturating_sub(ps.n() as u64), ps.n() as u64)?;
    Partition::new(labels, m, eta)
}
