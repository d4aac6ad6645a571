//! The hierarchical partition index and its multi-probe query procedure,
//! plus the PHI1 persistence container shared with the baseline structures.
//!
//! Each internal tree node holds a router (a trained classifier or a set of
//! k-means centroids) over its m children; leaves hold dataset point indices.
//! A point always resides in the leaf its *training* assignment put it in,
//! even where the trained router would send it elsewhere.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;

use crate::baselines::{
    kmeans_fit, lsh_model, rank_by_centroid, HyperplaneTree, KMeansRouter, LshModel, SplitRule,
    TreeNode,
};
use crate::dataset::{dist_sq, Metric, PointSet};
use crate::error::{Error, Result};
use crate::io::{atomic_write, Cur};
use crate::knn::build_knn_graph;
use crate::learn::{make_soft_labels, train, Classifier, ClassifierKind, MlpConfig, SoftLabelSet};
use crate::partition::{partition_graph, Eta};

pub const INDEX_MAGIC: &[u8; 4] = b"PHI1";

// container kinds
const KIND_TREE: u32 = 0;
const KIND_KMEANS: u32 = 1;
const KIND_HTREE: u32 = 2;
const KIND_LSH: u32 = 3;

/// Router choice for one tree level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelKind {
    Regression,
    Mlp,
    KMeans,
}

impl LevelKind {
    pub fn tag(self) -> u32 {
        match self {
            LevelKind::Regression => 0,
            LevelKind::Mlp => 1,
            LevelKind::KMeans => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<LevelKind> {
        match tag {
            0 => Some(LevelKind::Regression),
            1 => Some(LevelKind::Mlp),
            2 => Some(LevelKind::KMeans),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LevelSpec {
    pub m: usize,
    pub kind: LevelKind,
}

/// Everything build_index needs besides the dataset.
#[derive(Debug, Clone)]
pub struct BuildParams {
    /// Graph degree for the per-node k-NN graphs. Raised to S−1 internally
    /// when soft labels need more neighbors than k provides.
    pub k: usize,
    pub levels: Vec<LevelSpec>,
    pub eta: Eta,
    /// Soft-label neighborhood size (MLP levels; regression is one-hot).
    pub s: usize,
    pub seed: u64,
    /// FM refinement budget per partitioning call.
    pub refine_iters: usize,
    /// Architecture/optimizer template for the root level.
    pub top_cfg: MlpConfig,
    /// Template for every level below the root.
    pub lower_cfg: MlpConfig,
}

impl Default for BuildParams {
    fn default() -> BuildParams {
        BuildParams {
            k: 10,
            levels: vec![LevelSpec {
                m: 16,
                kind: LevelKind::Mlp,
            }],
            eta: Eta::new(1, 20).unwrap(),
            s: 15,
            seed: 42,
            refine_iters: 10,
            top_cfg: MlpConfig::top_level(),
            lower_cfg: MlpConfig::second_level(),
        }
    }
}

#[derive(Debug, Clone)]
enum NodeRouter {
    Learned(Classifier),
    Centroids(Vec<f32>),
}

#[derive(Debug, Clone)]
struct Node {
    /// Some for internal nodes.
    router: Option<NodeRouter>,
    /// Child node ids, one per bin; empty for leaves. Children always have
    /// larger ids than their parent.
    children: Vec<u32>,
    /// Leaf membership; empty for internal nodes.
    points: Vec<u32>,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// What one query visit produced.
#[derive(Debug, Clone)]
pub struct QueryResult {
    /// Union of the visited leaves' point lists; distinct by construction.
    pub candidates: Vec<u32>,
    /// Number of leaves visited.
    pub probes: usize,
    /// Point/centroid distance evaluations spent.
    pub distances: u64,
}

/// Balance facts for one internal node, for auditing the size cap.
#[derive(Debug, Clone, Copy)]
pub struct BalanceRecord {
    pub level: usize,
    pub kind: LevelKind,
    pub n_node: usize,
    pub m: usize,
    pub max_child: usize,
}

#[derive(Debug, Clone)]
pub struct PartitionTree {
    d: usize,
    n: usize,
    metric: Metric,
    levels: Vec<LevelSpec>,
    eta: Eta,
    nodes: Vec<Node>,
}

/// Splitmix finalizer (same scheme as the baseline trees).
fn mix_seed(seed: u64, node: u64) -> u64 {
    let mut z = seed ^ node.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Builds the tree: per node, k-NN graph → balanced partition → trained
/// router (or a k-means fit where the level says so), recursing per bin.
/// Deterministic given params.seed.
pub fn build_index(ps: &PointSet, params: &BuildParams) -> Result<PartitionTree> {
    if params.levels.is_empty() {
        return Err(Error::InvalidParam("need at least one level".into()));
    }
    let mut product: u128 = 1;
    for spec in &params.levels {
        if spec.m < 2 {
            return Err(Error::InvalidParam("every branching factor must be >= 2".into()));
        }
        product = product.saturating_mul(spec.m as u128);
    }
    if product > ps.n() as u128 {
        return Err(Error::InvalidParam(format!(
            "total leaf count {} exceeds n = {}",
            product,
            ps.n()
        )));
    }
    if params.k == 0 || params.s == 0 {
        return Err(Error::InvalidParam("k and S must be >= 1".into()));
    }
    let mut tree = PartitionTree {
        d: ps.d(),
        n: ps.n(),
        metric: ps.metric(),
        levels: params.levels.clone(),
        eta: params.eta,
        nodes: Vec::new(),
    };
    let all: Vec<u32> = (0..ps.n() as u32).collect();
    build_node(ps, params, all, 0, &mut tree.nodes)?;
    Ok(tree)
}

fn build_node(
    ps: &PointSet,
    params: &BuildParams,
    ids: Vec<u32>,
    level: usize,
    nodes: &mut Vec<Node>,
) -> Result<u32> {
    let slot = nodes.len() as u32;
    nodes.push(Node {
        router: None,
        children: Vec::new(),
        points: Vec::new(),
    });
    let make_leaf = |nodes: &mut Vec<Node>, ids: Vec<u32>| {
        nodes[slot as usize].points = ids;
    };
    if level == params.levels.len() {
        make_leaf(nodes, ids);
        return Ok(slot);
    }
    let spec = params.levels[level];
    if ids.len() < spec.m {
        log::warn!(
            "node at level {} has {} points < branching factor {}; keeping it a leaf",
            level,
            ids.len(),
            spec.m
        );
        make_leaf(nodes, ids);
        return Ok(slot);
    }
    let node_seed = mix_seed(params.seed, slot as u64);
    let sub = ps.subset(&ids);

    let (labels, router) = match spec.kind {
        LevelKind::KMeans => {
            let r = kmeans_fit(&sub, spec.m, node_seed, 25)?;
            (r.assignments().to_vec(), NodeRouter::Centroids(r.centroids().to_vec()))
        }
        kind @ (LevelKind::Regression | LevelKind::Mlp) => {
            // the graph serves both the partition and the soft labels, so it
            // needs max(k, S−1) neighbors, clamped to what the node can give
            let want_k = match kind {
                LevelKind::Mlp => params.k.max(params.s.saturating_sub(1)),
                _ => params.k,
            };
            let k_node = want_k.min(sub.n() - 1).max(1);
            let g = build_knn_graph(&sub, k_node)?;
            let part = partition_graph(&g, spec.m, params.eta, node_seed, params.refine_iters)?;
            let cfg_template = if level == 0 {
                &params.top_cfg
            } else {
                &params.lower_cfg
            };
            let mut cfg = cfg_template.clone();
            cfg.seed = node_seed;
            let (ckind, soft) = match kind {
                LevelKind::Regression => {
                    (ClassifierKind::SoftmaxRegression, SoftLabelSet::one_hot(&part))
                }
                _ => {
                    let s_node = params.s.min(k_node + 1);
                    if s_node < params.s {
                        log::warn!(
                            "node at level {}: S clamped from {} to {} ({} points)",
                            level,
                            params.s,
                            s_node,
                            sub.n()
                        );
                    }
                    (ClassifierKind::Mlp, make_soft_labels(&g, &part, s_node)?)
                }
            };
            let c = train(&sub, &soft, ckind, &cfg)?;
            (part.labels().to_vec(), NodeRouter::Learned(c))
        }
    };

    // bucket the node's points by training assignment, preserving order
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); spec.m];
    for (local, &global) in ids.iter().enumerate() {
        bins[labels[local] as usize].push(global);
    }
    let mut children = Vec::with_capacity(spec.m);
    for bin in bins {
        children.push(build_node(ps, params, bin, level + 1, nodes)?);
    }
    nodes[slot as usize].router = Some(router);
    nodes[slot as usize].children = children;
    Ok(slot)
}

impl PartitionTree {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    pub fn eta(&self) -> Eta {
        self.eta
    }

    pub fn leaves(&self) -> impl Iterator<Item = &[u32]> {
        self.nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.points.as_slice())
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Per-internal-node balance facts (level, branching, largest child).
    pub fn balance_records(&self) -> Vec<BalanceRecord> {
        // subtree point counts, bottom-up (children always after parents)
        let mut size = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate().rev() {
            size[i] = if node.is_leaf() {
                node.points.len()
            } else {
                node.children.iter().map(|&c| size[c as usize]).sum()
            };
        }
        let mut level_of = vec![0usize; self.nodes.len()];
        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.is_leaf() {
                continue;
            }
            let level = level_of[i];
            for &c in &node.children {
                level_of[c as usize] = level + 1;
            }
            out.push(BalanceRecord {
                level,
                kind: self.levels[level].kind,
                n_node: size[i],
                m: node.children.len(),
                max_child: node.children.iter().map(|&c| size[c as usize]).max().unwrap(),
            });
        }
        out
    }

    /// Beam descent: at each level keep the top probes[level] bins of every
    /// frontier node; candidates are the union of all reached leaves.
    pub fn query(&self, q: &[f32], probes: &[usize]) -> Result<QueryResult> {
        if q.len() != self.d {
            return Err(Error::DimMismatch {
                got: q.len(),
                want: self.d,
            });
        }
        if probes.len() != self.levels.len() {
            return Err(Error::InvalidParam(format!(
                "{} probe counts for {} levels",
                probes.len(),
                self.levels.len()
            )));
        }
        for (b, spec) in probes.iter().zip(&self.levels) {
            if *b == 0 || *b > spec.m {
                return Err(Error::InvalidParam(format!(
                    "probe count {} out of range for a {}-way level",
                    b, spec.m
                )));
            }
        }
        let mut result = QueryResult {
            candidates: Vec::new(),
            probes: 0,
            distances: 0,
        };
        let mut frontier: Vec<u32> = vec![0];
        let mut next: Vec<u32> = Vec::new();
        for &b in probes {
            next.clear();
            for &id in &frontier {
                let node = &self.nodes[id as usize];
                if node.is_leaf() {
                    // an early leaf absorbs the rest of the descent
                    result.candidates.extend_from_slice(&node.points);
                    result.probes += 1;
                    continue;
                }
                let bins = match node.router.as_ref().unwrap() {
                    NodeRouter::Learned(c) => c.top_bins(q, b)?,
                    NodeRouter::Centroids(cents) => {
                        result.distances += node.children.len() as u64;
                        rank_by_centroid(cents, self.d, node.children.len(), q, b)?
                    }
                };
                next.extend(bins.iter().map(|&bin| node.children[bin as usize]));
            }
            std::mem::swap(&mut frontier, &mut next);
        }
        for &id in &frontier {
            let node = &self.nodes[id as usize];
            debug_assert!(node.is_leaf());
            result.candidates.extend_from_slice(&node.points);
            result.probes += 1;
        }
        Ok(result)
    }

    /// Query then exact re-rank: the k nearest candidates by a full distance
    /// scan. `short` flags a candidate set smaller than k.
    pub fn answer_knn(
        &self,
        ps: &PointSet,
        q: &[f32],
        k: usize,
        probes: &[usize],
    ) -> Result<KnnAnswer> {
        if k == 0 {
            return Err(Error::InvalidParam("k must be >= 1".into()));
        }
        let mut res = self.query(q, probes)?;
        res.distances += res.candidates.len() as u64;
        let ids = rerank(ps, q, &res.candidates, k);
        Ok(KnnAnswer {
            short: ids.len() < k,
            ids,
            distances: res.distances,
        })
    }
}

/// Exact top-k among `candidates` by (distance, index).
pub fn rerank(ps: &PointSet, q: &[f32], candidates: &[u32], k: usize) -> Vec<u32> {
    let mut scored: Vec<(f64, u32)> = candidates
        .iter()
        .map(|&p| (dist_sq(ps.row(p as usize), q), p))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, p)| p).collect()
}

#[derive(Debug, Clone)]
pub struct KnnAnswer {
    pub ids: Vec<u32>,
    /// True when fewer than k candidates were available.
    pub short: bool,
    pub distances: u64,
}

// ---------------------------------------------------------------------------
// baseline wrappers with point lists, so every method serves queries

/// k-means partition with per-bin point lists.
#[derive(Debug, Clone)]
pub struct KMeansIndex {
    metric: Metric,
    n: usize,
    router: KMeansRouter,
    bins: Vec<Vec<u32>>,
}

pub fn build_kmeans_index(ps: &PointSet, m: usize, seed: u64, iters: usize) -> Result<KMeansIndex> {
    let router = kmeans_fit(ps, m, seed, iters)?;
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); m];
    for (p, &a) in router.assignments().iter().enumerate() {
        bins[a as usize].push(p as u32);
    }
    Ok(KMeansIndex {
        metric: ps.metric(),
        n: ps.n(),
        router,
        bins,
    })
}

impl KMeansIndex {
    pub fn m(&self) -> usize {
        self.bins.len()
    }

    pub fn router(&self) -> &KMeansRouter {
        &self.router
    }

    pub fn bin_sizes(&self) -> Vec<usize> {
        self.bins.iter().map(|b| b.len()).collect()
    }

    /// Candidates from the b bins nearest by centroid distance.
    pub fn probe(&self, q: &[f32], b: usize) -> Result<QueryResult> {
        let order = rank_by_centroid(
            self.router.centroids(),
            self.router.d(),
            self.m(),
            q,
            b,
        )?;
        let mut candidates = Vec::new();
        for &j in &order {
            candidates.extend_from_slice(&self.bins[j as usize]);
        }
        Ok(QueryResult {
            candidates,
            probes: b,
            distances: self.m() as u64,
        })
    }
}

/// Hyperplane tree over a dataset; routing yields one leaf.
#[derive(Debug, Clone)]
pub struct HyperplaneIndex {
    metric: Metric,
    n: usize,
    pub tree: HyperplaneTree,
}

pub fn build_hyperplane_index(
    ps: &PointSet,
    depth: usize,
    rule: SplitRule,
    seed: u64,
) -> Result<HyperplaneIndex> {
    Ok(HyperplaneIndex {
        metric: ps.metric(),
        n: ps.n(),
        tree: crate::baselines::build_hyperplane_tree(ps, depth, rule, seed)?,
    })
}

impl HyperplaneIndex {
    pub fn probe(&self, q: &[f32]) -> Result<QueryResult> {
        let leaf = crate::baselines::tree_route(&self.tree, q)?;
        Ok(QueryResult {
            candidates: leaf.to_vec(),
            probes: 1,
            distances: 0,
        })
    }
}

/// Random-hyperplane LSH with per-bin point lists and query-directed
/// multi-probing (bins ordered by the total flipped-projection margin).
#[derive(Debug, Clone)]
pub struct LshIndex {
    metric: Metric,
    n: usize,
    d: usize,
    model: LshModel,
    bins: Vec<Vec<u32>>,
}

pub fn build_lsh_index(ps: &PointSet, bits: usize, seed: u64) -> Result<LshIndex> {
    let model = lsh_model(ps, bits, seed)?;
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); model.m()];
    for p in 0..ps.n() {
        bins[model.bin(ps.row(p)) as usize].push(p as u32);
    }
    Ok(LshIndex {
        metric: ps.metric(),
        n: ps.n(),
        d: ps.d(),
        model,
        bins,
    })
}

#[derive(Debug)]
struct ProbeState {
    penalty: f64,
    /// Mask over the sorted margin indices flipped in this state.
    mask: u32,
    last: usize,
}

impl PartialEq for ProbeState {
    fn eq(&self, other: &Self) -> bool {
        self.penalty == other.penalty && self.mask == other.mask
    }
}
impl Eq for ProbeState {}
impl PartialOrd for ProbeState {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for ProbeState {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.penalty
            .partial_cmp(&other.penalty)
            .unwrap()
            .then(self.mask.cmp(&other.mask))
    }
}

impl LshIndex {
    pub fn m(&self) -> usize {
        self.bins.len()
    }

    pub fn bits(&self) -> usize {
        self.model.bits()
    }

    /// The first b bin codes in ascending flip-penalty order: the query's own
    /// code first, then codes obtained by flipping sign bits with the
    /// smallest |projection| margins.
    fn probe_order(&self, q: &[f32], b: usize) -> Vec<u32> {
        let proj = self.model.projections(q);
        let mut base = 0u32;
        let mut margins: Vec<(f64, usize)> = Vec::with_capacity(proj.len());
        for (i, &p) in proj.iter().enumerate() {
            if p > 0.0 {
                base |= 1 << i;
            }
            margins.push((p.abs(), i));
        }
        margins.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut out = vec![base];
        let mut heap: BinaryHeap<Reverse<ProbeState>> = BinaryHeap::new();
        heap.push(Reverse(ProbeState {
            penalty: margins[0].0,
            mask: 1,
            last: 0,
        }));
        while out.len() < b {
            let Some(Reverse(state)) = heap.pop() else {
                break;
            };
            let mut code = base;
            for i in 0..margins.len() {
                if state.mask & (1 << i) != 0 {
                    code ^= 1 << margins[i].1;
                }
            }
            out.push(code);
            if state.last + 1 < margins.len() {
                let nxt = state.last + 1;
                heap.push(Reverse(ProbeState {
                    penalty: state.penalty + margins[nxt].0,
                    mask: state.mask | (1 << nxt),
                    last: nxt,
                }));
                heap.push(Reverse(ProbeState {
                    penalty: state.penalty - margins[state.last].0 + margins[nxt].0,
                    mask: (state.mask ^ (1 << state.last)) | (1 << nxt),
                    last: nxt,
                }));
            }
        }
        out
    }

    pub fn probe(&self, q: &[f32], b: usize) -> Result<QueryResult> {
        if q.len() != self.d {
            return Err(Error::DimMismatch {
                got: q.len(),
                want: self.d,
            });
        }
        if b == 0 || b > self.m() {
            return Err(Error::InvalidParam(format!(
                "requested {} probes of a {}-bin LSH table",
                b,
                self.m()
            )));
        }
        let mut candidates = Vec::new();
        for &code in &self.probe_order(q, b) {
            candidates.extend_from_slice(&self.bins[code as usize]);
        }
        Ok(QueryResult {
            candidates,
            probes: b,
            distances: 0,
        })
    }
}

/// Any structure the PHI1 container can hold.
#[derive(Debug, Clone)]
pub enum AnyIndex {
    Tree(PartitionTree),
    KMeans(KMeansIndex),
    HTree(HyperplaneIndex),
    Lsh(LshIndex),
}

impl AnyIndex {
    pub fn metric(&self) -> Metric {
        match self {
            AnyIndex::Tree(t) => t.metric,
            AnyIndex::KMeans(i) => i.metric,
            AnyIndex::HTree(i) => i.metric,
            AnyIndex::Lsh(i) => i.metric,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            AnyIndex::Tree(t) => t.n,
            AnyIndex::KMeans(i) => i.n,
            AnyIndex::HTree(i) => i.n,
            AnyIndex::Lsh(i) => i.n,
        }
    }

    /// Probe semantics per structure: trees take one entry per level;
    /// k-means and LSH take a single bin count; hyperplane trees route a
    /// single path and take [1].
    pub fn probe(&self, q: &[f32], probes: &[usize]) -> Result<QueryResult> {
        match self {
            AnyIndex::Tree(t) => t.query(q, probes),
            AnyIndex::KMeans(i) => match probes {
                [b] => i.probe(q, *b),
                _ => Err(Error::InvalidParam(
                    "k-means probing takes exactly one bin count".into(),
                )),
            },
            AnyIndex::HTree(i) => match probes {
                [1] => i.probe(q),
                _ => Err(Error::InvalidParam(
                    "a hyperplane tree routes a single path; probes must be [1]".into(),
                )),
            },
            AnyIndex::Lsh(i) => match probes {
                [b] => i.probe(q, *b),
                _ => Err(Error::InvalidParam(
                    "LSH probing takes exactly one bin count".into(),
                )),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<AnyIndex> {
        let buf = std::fs::read(path)?;
        AnyIndex::from_bytes(&buf, path)
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend_from_slice(INDEX_MAGIC);
        let put = |b: &mut Vec<u8>, v: u32| b.extend_from_slice(&v.to_le_bytes());
        let put_ids = |b: &mut Vec<u8>, ids: &[u32]| {
            put(b, ids.len() as u32);
            for &id in ids {
                put(b, id);
            }
        };
        let put_f32s = |b: &mut Vec<u8>, vs: &[f32]| {
            for &v in vs {
                b.extend_from_slice(&v.to_le_bytes());
            }
        };
        match self {
            AnyIndex::Tree(t) => {
                put(&mut b, KIND_TREE);
                put(&mut b, t.metric.tag());
                put(&mut b, t.d as u32);
                put(&mut b, t.n as u32);
                put(&mut b, t.levels.len() as u32);
                for spec in &t.levels {
                    put(&mut b, spec.m as u32);
                    put(&mut b, spec.kind.tag());
                }
                let (num, den) = (t.eta.num(), t.eta.den());
                if num > u32::MAX as u64 || den > u32::MAX as u64 {
                    return Err(Error::InvalidParam("eta too large to serialize".into()));
                }
                put(&mut b, num as u32);
                put(&mut b, den as u32);
                put(&mut b, t.nodes.len() as u32);
                for node in &t.nodes {
                    match (&node.router, node.is_leaf()) {
                        (None, true) => {
                            put(&mut b, 2);
                            put_ids(&mut b, &node.points);
                        }
                        (Some(NodeRouter::Learned(c)), false) => {
                            put(&mut b, 0);
                            put_ids(&mut b, &node.children);
                            let blob = c.to_bytes();
                            put(&mut b, blob.len() as u32);
                            b.extend_from_slice(&blob);
                        }
                        (Some(NodeRouter::Centroids(cents)), false) => {
                            put(&mut b, 1);
                            put_ids(&mut b, &node.children);
                            put_f32s(&mut b, cents);
                        }
                        _ => unreachable!("inconsistent node"),
                    }
                }
            }
            AnyIndex::KMeans(i) => {
                put(&mut b, KIND_KMEANS);
                put(&mut b, i.metric.tag());
                put(&mut b, i.router.d() as u32);
                put(&mut b, i.n as u32);
                put(&mut b, i.m() as u32);
                put_f32s(&mut b, i.router.centroids());
                for bin in &i.bins {
                    put_ids(&mut b, bin);
                }
            }
            AnyIndex::HTree(i) => {
                put(&mut b, KIND_HTREE);
                put(&mut b, i.metric.tag());
                put(&mut b, i.tree.d() as u32);
                put(&mut b, i.n as u32);
                put(&mut b, i.tree.nodes.len() as u32);
                for node in &i.tree.nodes {
                    match node {
                        TreeNode::Internal {
                            a,
                            b_t,
                            rule,
                            left,
                            right,
                        } => {
                            put(&mut b, 0);
                            put(&mut b, rule.tag());
                            put_f32s(&mut b, a);
                            b.extend_from_slice(&b_t.to_le_bytes());
                            put(&mut b, *left);
                            put(&mut b, *right);
                        }
                        TreeNode::Leaf { points } => {
                            put(&mut b, 1);
                            put_ids(&mut b, points);
                        }
                    }
                }
            }
            AnyIndex::Lsh(i) => {
                put(&mut b, KIND_LSH);
                put(&mut b, i.metric.tag());
                put(&mut b, i.d as u32);
                put(&mut b, i.n as u32);
                put(&mut b, i.model.bits() as u32);
                put_f32s(&mut b, &i.model.dirs);
                put_f32s(&mut b, &i.model.mean);
                for bin in &i.bins {
                    put_ids(&mut b, bin);
                }
            }
        }
        Ok(b)
    }

    fn from_bytes(buf: &[u8], path: &Path) -> Result<AnyIndex> {
        let mut cur = Cur::new(buf, path);
        cur.expect_magic(INDEX_MAGIC, "PHI1")?;
        let kind = cur.u32_le("container kind")?;
        let metric_tag = cur.u32_le("metric")?;
        let bad = |what: String| Error::BadHeader {
            path: path.display().to_string(),
            what,
        };
        let metric = Metric::from_tag(metric_tag)
            .ok_or_else(|| bad(format!("unknown metric tag {}", metric_tag)))?;
        let d = cur.u32_le("d")? as usize;
        let n = cur.u32_le("n")? as usize;
        if d == 0 || n == 0 {
            return Err(bad(format!("bad shape d={} n={}", d, n)));
        }
        let out = match kind {
            KIND_TREE => AnyIndex::Tree(read_tree(&mut cur, path, metric, d, n)?),
            KIND_KMEANS => {
                let m = cur.u32_le("m")? as usize;
                if m == 0 || m > n {
                    return Err(bad(format!("bad bin count {}", m)));
                }
                let centroids = cur.f32_vec(m * d, "centroids")?;
                let bins = read_bins(&mut cur, m, n, path)?;
                let mut assign = vec![0u32; n];
                for (j, bin) in bins.iter().enumerate() {
                    for &p in bin {
                        assign[p as usize] = j as u32;
                    }
                }
                AnyIndex::KMeans(KMeansIndex {
                    metric,
                    n,
                    router: KMeansRouter::from_parts(d, m, centroids, assign),
                    bins,
                })
            }
            KIND_HTREE => {
                let count = cur.u32_le("node count")? as usize;
                if count == 0 {
                    return Err(bad("empty tree".into()));
                }
                let mut nodes = Vec::with_capacity(count);
                for i in 0..count {
                    let tag = cur.u32_le("node tag")?;
                    match tag {
                        0 => {
                            let rule_tag = cur.u32_le("rule")?;
                            let rule = SplitRule::from_tag(rule_tag)
                                .ok_or_else(|| bad(format!("unknown rule tag {}", rule_tag)))?;
                            let a = cur.f32_vec(d, "direction")?;
                            let b_t =
                                f32::from_le_bytes(cur.take(4, "threshold")?.try_into().unwrap());
                            let left = cur.u32_le("left child")?;
                            let right = cur.u32_le("right child")?;
                            for c in [left, right] {
                                if c as usize <= i || c as usize >= count {
                                    return Err(bad(format!("bad child link {}", c)));
                                }
                            }
                            nodes.push(TreeNode::Internal {
                                a,
                                b_t,
                                rule,
                                left,
                                right,
                            });
                        }
                        1 => {
                            let points = read_id_list(&mut cur, n, path)?;
                            nodes.push(TreeNode::Leaf { points });
                        }
                        t => return Err(bad(format!("unknown node tag {}", t))),
                    }
                }
                check_cover(
                    nodes.iter().filter_map(|nd| match nd {
                        TreeNode::Leaf { points } => Some(points.as_slice()),
                        _ => None,
                    }),
                    n,
                    path,
                )?;
                AnyIndex::HTree(HyperplaneIndex {
                    metric,
                    n,
                    tree: HyperplaneTree::from_parts(d, nodes),
                })
            }
            KIND_LSH => {
                let bits = cur.u32_le("bits")? as usize;
                if bits == 0 || bits > 24 {
                    return Err(bad(format!("bad bit count {}", bits)));
                }
                let dirs = cur.f32_vec(bits * d, "directions")?;
                let mean = cur.f32_vec(d, "mean")?;
                let bins = read_bins(&mut cur, 1 << bits, n, path)?;
                AnyIndex::Lsh(LshIndex {
                    metric,
                    n,
                    d,
                    model: LshModel::from_parts(bits, dirs, mean),
                    bins,
                })
            }
            t => return Err(bad(format!("unknown container kind {}", t))),
        };
        if !cur.is_eof() {
            return Err(bad("trailing bytes after payload".into()));
        }
        Ok(out)
    }
}

fn read_id_list(cur: &mut Cur, n: usize, path: &Path) -> Result<Vec<u32>> {
    let count = cur.u32_le("id count")? as usize;
    if count > n {
        return Err(Error::BadHeader {
            path: path.display().to_string(),
            what: format!("id list of {} exceeds n = {}", count, n),
        });
    }
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let id = cur.u32_le("point id")?;
        if id as usize >= n {
            return Err(Error::BadHeader {
                path: path.display().to_string(),
                what: format!("point id {} out of range", id),
            });
        }
        ids.push(id);
    }
    Ok(ids)
}

fn read_bins(cur: &mut Cur, m: usize, n: usize, path: &Path) -> Result<Vec<Vec<u32>>> {
    let mut bins = Vec::with_capacity(m);
    for _ in 0..m {
        bins.push(read_id_list(cur, n, path)?);
    }
    check_cover(bins.iter().map(|b| b.as_slice()), n, path)?;
    Ok(bins)
}

/// Every point id in exactly one of the given lists.
fn check_cover<'a>(lists: impl Iterator<Item = &'a [u32]>, n: usize, path: &Path) -> Result<()> {
    let mut seen = vec![false; n];
    let mut total = 0usize;
    for list in lists {
        for &p in list {
            if seen[p as usize] {
                return Err(Error::BadHeader {
                    path: path.display().to_string(),
                    what: format!("point {} appears in two leaves", p),
                });
            }
            seen[p as usize] = true;
            total += 1;
        }
    }
    if total != n {
        return Err(Error::BadHeader {
            path: path.display().to_string(),
            what: format!("leaves cover {} of {} points", total, n),
        });
    }
    Ok(())
}

fn read_tree(
    cur: &mut Cur,
    path: &Path,
    metric: Metric,
    d: usize,
    n: usize,
) -> Result<PartitionTree> {
    let bad = |what: String| Error::BadHeader {
        path: path.display().to_string(),
        what,
    };
    let nlevels = cur.u32_le("level count")? as usize;
    if nlevels == 0 {
        return Err(bad("tree with zero levels".into()));
    }
    let mut levels = Vec::with_capacity(nlevels);
    for _ in 0..nlevels {
        let m = cur.u32_le("branching factor")? as usize;
        let tag = cur.u32_le("level kind")?;
        let kind =
            LevelKind::from_tag(tag).ok_or_else(|| bad(format!("unknown level kind {}", tag)))?;
        if m < 2 {
            return Err(bad(format!("branching factor {} < 2", m)));
        }
        levels.push(LevelSpec { m, kind });
    }
    let eta_num = cur.u32_le("eta numerator")? as u64;
    let eta_den = cur.u32_le("eta denominator")? as u64;
    let eta = Eta::new(eta_num, eta_den)?;
    let count = cur.u32_le("node count")? as usize;
    if count == 0 {
        return Err(bad("empty tree".into()));
    }
    let mut nodes = Vec::with_capacity(count);
    for i in 0..count {
        let tag = cur.u32_le("node tag")?;
        match tag {
            0 | 1 => {
                let children = {
                    let cnt = cur.u32_le("child count")? as usize;
                    let mut ids = Vec::with_capacity(cnt);
                    for _ in 0..cnt {
                        let c = cur.u32_le("child id")?;
                        if c as usize <= i || c as usize >= count {
                            return Err(bad(format!("bad child link {}", c)));
                        }
                        ids.push(c);
                    }
                    ids
                };
                if children.is_empty() {
                    return Err(bad("internal node with no children".into()));
                }
                let router = if tag == 0 {
                    let blob_len = cur.u32_le("model blob length")? as usize;
                    let blob = cur.take(blob_len, "model blob")?;
                    let c = Classifier::from_bytes(blob, path)?;
                    if c.d() != d || c.m() != children.len() {
                        return Err(bad(format!(
                            "embedded model shape {}x{} does not match node",
                            c.d(),
                            c.m()
                        )));
                    }
                    NodeRouter::Learned(c)
                } else {
                    NodeRouter::Centroids(cur.f32_vec(children.len() * d, "centroids")?)
                };
                nodes.push(Node {
                    router: Some(router),
                    children,
                    points: Vec::new(),
                });
            }
            2 => {
                let points = read_id_list(cur, n, path)?;
                nodes.push(Node {
                    router: None,
                    children: Vec::new(),
                    points,
                });
            }
            t => return Err(bad(format!("unknown node tag {}", t))),
        }
    }
    // structural walk: levels consistent, every node reachable exactly once
    let mut level_of = vec![usize::MAX; count];
    level_of[0] = 0;
    for i in 0..count {
        let level = level_of[i];
        if level == usize::MAX {
            return Err(bad(format!("orphan node {}", i)));
        }
        let node = &nodes[i];
        if node.is_leaf() {
            continue;
        }
        if level >= nlevels {
            return Err(bad("internal node below the last level".into()));
        }
        if node.children.len() != levels[level].m {
            return Err(bad(format!(
                "node at level {} has {} children, level branching is {}",
                level,
                node.children.len(),
                levels[level].m
            )));
        }
        for &c in &node.children {
            if level_of[c as usize] != usize::MAX {
                return Err(bad(format!("node {} reached twice", c)));
            }
            level_of[c as usize] = level + 1;
        }
    }
    check_cover(
        nodes.iter().filter(|nd| nd.is_leaf()).map(|nd| nd.points.as_slice()),
        n,
        path,
    )?;
    Ok(PartitionTree {
        d,
        n,
        metric,
        levels,
        eta,
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::brute_force_knn;
    use crate::QuerySet;

    /// Four tight 2-D blobs of `per` points each at the square corners.
    fn four_blobs(per: usize) -> PointSet {
        let mut data = Vec::new();
        let corners = [(0.0f32, 0.0f32), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)];
        for i in 0..per {
            let j = (i as f32 * 0.37) % 1.0;
            for &(cx, cy) in &corners {
                data.extend_from_slice(&[cx + j * 0.5, cy - j * 0.5]);
            }
        }
        PointSet::new(data, 2, Metric::Euclidean).unwrap()
    }

    fn quick_reg_params(levels: Vec<LevelSpec>, s: usize) -> BuildParams {
        let cfg = MlpConfig {
            blocks: 1,
            hidden: 8,
            epochs: 80,
            base_lr: 0.05,
            batch_size: 32,
            decay_interval: 40,
            ..MlpConfig::top_level()
        };
        BuildParams {
            k: 4,
            levels,
            eta: Eta::new(1, 4).unwrap(),
            s,
            seed: 42,
            refine_iters: 10,
            top_cfg: cfg.clone(),
            lower_cfg: cfg,
        }
    }

    #[test]
    fn one_level_tree_basics() {
        let ps = four_blobs(8); // 32 points
        let params = quick_reg_params(
            vec![LevelSpec {
                m: 4,
                kind: LevelKind::Regression,
            }],
            1,
        );
        let t = build_index(&ps, &params).unwrap();
        assert_eq!(t.leaf_count(), 4);
        // leaves partition the dataset
        let total: usize = t.leaves().map(|l| l.len()).sum();
        assert_eq!(total, 32);
        // full probing returns everything
        let r = t.query(ps.row(0), &[4]).unwrap();
        assert_eq!(r.candidates.len(), 32);
        assert_eq!(r.probes, 4);
        // balance respected
        for rec in t.balance_records() {
            assert!(rec.max_child <= params.eta.cap(rec.n_node, rec.m));
        }
        // well-separated blobs + trained regression: a data point's b=1 probe
        // returns exactly its training leaf
        for p in [0usize, 1, 2, 3] {
            let r = t.query(ps.row(p), &[1]).unwrap();
            let leaf = t
                .leaves()
                .find(|l| l.contains(&(p as u32)))
                .expect("point in some leaf");
            let mut got = r.candidates.clone();
            got.sort_unstable();
            let mut want = leaf.to_vec();
            want.sort_unstable();
            assert_eq!(got, want, "point {}", p);
        }
    }

    #[test]
    fn candidate_monotonicity() {
        let ps = four_blobs(8);
        let params = quick_reg_params(
            vec![LevelSpec {
                m: 4,
                kind: LevelKind::Regression,
            }],
            1,
        );
        let t = build_index(&ps, &params).unwrap();
        let q = [4.0f32, 6.0];
        let mut prev = 0;
        for b in 1..=4 {
            let r = t.query(&q, &[b]).unwrap();
            assert!(r.candidates.len() >= prev);
            prev = r.candidates.len();
        }
    }

    #[test]
    fn two_level_beam_visits_four_leaves() {
        let ps = four_blobs(16); // 64 points
        let params = quick_reg_params(
            vec![
                LevelSpec {
                    m: 4,
                    kind: LevelKind::Regression,
                },
                LevelSpec {
                    m: 4,
                    kind: LevelKind::KMeans,
                },
            ],
            1,
        );
        let t = build_index(&ps, &params).unwrap();
        assert_eq!(t.leaf_count(), 16);
        let r = t.query(&[5.0, 5.0], &[2, 2]).unwrap();
        assert_eq!(r.probes, 4); // 2 nodes × top-2 children
        let full = t.query(&[5.0, 5.0], &[4, 4]).unwrap();
        assert_eq!(full.candidates.len(), 64);
        // kmeans levels have no cap to audit; learned level obeys its cap
        for rec in t.balance_records() {
            if rec.kind != LevelKind::KMeans {
                assert!(rec.max_child <= params.eta.cap(rec.n_node, rec.m));
            }
        }
    }

    #[test]
    fn answer_knn_matches_brute_force_under_full_probing() {
        let ps = four_blobs(8);
        let params = quick_reg_params(
            vec![LevelSpec {
                m: 4,
                kind: LevelKind::Regression,
            }],
            1,
        );
        let t = build_index(&ps, &params).unwrap();
        let qs = QuerySet::new(vec![3.0, 3.0, 9.5, 9.5], 2, Metric::Euclidean).unwrap();
        let gt = brute_force_knn(&ps, &qs, 5).unwrap();
        for qi in 0..2 {
            let ans = t.answer_knn(&ps, qs.row(qi), 5, &[4]).unwrap();
            assert!(!ans.short);
            assert_eq!(ans.ids, gt.list(qi));
        }
    }

    #[test]
    fn answer_knn_restricted_to_probed_leaf() {
        // the 4-point line: leaves {0,1} and {2,3}; probing one bin near the
        // left pair must answer from that pair only
        let ps = PointSet::new(vec![0.0, 0.1, 10.0, 10.1], 1, Metric::Euclidean).unwrap();
        let params = BuildParams {
            k: 1,
            levels: vec![LevelSpec {
                m: 2,
                kind: LevelKind::Regression,
            }],
            eta: Eta::zero(),
            s: 1,
            seed: 7,
            refine_iters: 10,
            top_cfg: MlpConfig {
                epochs: 200,
                base_lr: 0.1,
                batch_size: 4,
                decay_interval: 100,
                ..MlpConfig::top_level()
            },
            lower_cfg: MlpConfig::second_level(),
        };
        let t = build_index(&ps, &params).unwrap();
        let mut leaves: Vec<Vec<u32>> = t.leaves().map(|l| l.to_vec()).collect();
        leaves.sort();
        assert_eq!(leaves, vec![vec![0, 1], vec![2, 3]]);
        let ans = t.answer_knn(&ps, &[0.05], 1, &[1]).unwrap();
        // 0 and 1 tie at distance 0.05; lower index wins
        assert_eq!(ans.ids, vec![0]);
        // q is a dataset point: k=1 returns the point itself
        let ans = t.answer_knn(&ps, ps.row(3), 1, &[1]).unwrap();
        assert_eq!(ans.ids, vec![3]);
        // short flag with a 2-point leaf and k=3
        let ans = t.answer_knn(&ps, &[0.05], 3, &[1]).unwrap();
        assert!(ans.short);
        assert_eq!(ans.ids.len(), 2);
    }

    #[test]
    fn early_leaves_from_tiny_bins() {
        // 21 coincident points + 4 spread ones: k-means at the top level
        // isolates the spread points into singleton bins, which then cannot
        // be split 5 ways and stay leaves
        let mut data = vec![0.0f32; 42];
        for v in [50.0f32, -50.0, 100.0, -100.0] {
            data.extend_from_slice(&[v, v]);
        }
        let ps = PointSet::new(data, 2, Metric::Euclidean).unwrap();
        let params = BuildParams {
            k: 2,
            levels: vec![
                LevelSpec {
                    m: 5,
                    kind: LevelKind::KMeans,
                },
                LevelSpec {
                    m: 5,
                    kind: LevelKind::KMeans,
                },
            ],
            eta: Eta::new(1, 1).unwrap(),
            s: 1,
            seed: 3,
            refine_iters: 5,
            top_cfg: MlpConfig::top_level(),
            lower_cfg: MlpConfig::second_level(),
        };
        let t = build_index(&ps, &params).unwrap();
        let total: usize = t.leaves().map(|l| l.len()).sum();
        assert_eq!(total, 25);
        assert!(t.leaf_count() < 25, "early leaves expected");
        let r = t.query(&[0.0, 0.0], &[5, 5]).unwrap();
        assert_eq!(r.candidates.len(), 25);
    }

    #[test]
    fn build_validation() {
        let ps = four_blobs(4); // 16 points
        let mut params = quick_reg_params(
            vec![LevelSpec {
                m: 4,
                kind: LevelKind::Regression,
            }],
            1,
        );
        // product > n
        params.levels = vec![
            LevelSpec {
                m: 5,
                kind: LevelKind::Regression,
            },
            LevelSpec {
                m: 4,
                kind: LevelKind::Regression,
            },
        ];
        assert!(build_index(&ps, &params).is_err());
        // m < 2
        params.levels = vec![LevelSpec {
            m: 1,
            kind: LevelKind::Regression,
        }];
        assert!(build_index(&ps, &params).is_err());
        // query validation on a good tree
        params.levels = vec![LevelSpec {
            m: 4,
            kind: LevelKind::Regression,
        }];
        let t = build_index(&ps, &params).unwrap();
        assert!(t.query(&[0.0], &[1]).is_err()); // dim mismatch
        assert!(t.query(&[0.0, 0.0], &[5]).is_err()); // b > m
        assert!(t.query(&[0.0, 0.0], &[1, 1]).is_err()); // wrong level count
        assert!(t.query(&[0.0, 0.0], &[0]).is_err());
    }

    #[test]
    fn tree_round_trip_preserves_queries() {
        let ps = four_blobs(16);
        let params = quick_reg_params(
            vec![
                LevelSpec {
                    m: 4,
                    kind: LevelKind::Regression,
                },
                LevelSpec {
                    m: 4,
                    kind: LevelKind::KMeans,
                },
            ],
            1,
        );
        let t = build_index(&ps, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.phi");
        let idx = AnyIndex::Tree(t);
        idx.save(&path).unwrap();
        let back = AnyIndex::load(&path).unwrap();
        for p in 0..ps.n() {
            for probes in [[1usize, 1], [2, 2], [4, 4]] {
                let a = idx.probe(ps.row(p), &probes).unwrap();
                let b = back.probe(ps.row(p), &probes).unwrap();
                assert_eq!(a.candidates, b.candidates);
                assert_eq!(a.probes, b.probes);
            }
        }
        // resave is byte-identical
        let bytes = std::fs::read(&path).unwrap();
        back.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }

    #[test]
    fn kmeans_and_lsh_containers_round_trip() {
        let ps = four_blobs(8);
        let dir = tempfile::tempdir().unwrap();

        let km = AnyIndex::KMeans(build_kmeans_index(&ps, 4, 9, 25).unwrap());
        let path = dir.path().join("km.phi");
        km.save(&path).unwrap();
        let back = AnyIndex::load(&path).unwrap();
        for p in 0..ps.n() {
            let a = km.probe(ps.row(p), &[2]).unwrap();
            let b = back.probe(ps.row(p), &[2]).unwrap();
            assert_eq!(a.candidates, b.candidates);
        }

        let lsh = AnyIndex::Lsh(build_lsh_index(&ps, 3, 11).unwrap());
        let path = dir.path().join("lsh.phi");
        lsh.save(&path).unwrap();
        let back = AnyIndex::load(&path).unwrap();
        for p in 0..ps.n() {
            for b in [1usize, 3, 8] {
                let x = lsh.probe(ps.row(p), &[b]).unwrap();
                let y = back.probe(ps.row(p), &[b]).unwrap();
                assert_eq!(x.candidates, y.candidates);
                // multi-probe candidate lists grow with b
                if b == 8 {
                    assert_eq!(x.candidates.len(), ps.n());
                }
            }
        }

        let ht = AnyIndex::HTree(build_hyperplane_index(&ps, 3, SplitRule::Pca, 13).unwrap());
        let path = dir.path().join("ht.phi");
        ht.save(&path).unwrap();
        let back = AnyIndex::load(&path).unwrap();
        for p in 0..ps.n() {
            let a = ht.probe(ps.row(p), &[1]).unwrap();
            let b = back.probe(ps.row(p), &[1]).unwrap();
            assert_eq!(a.candidates, b.candidates);
            assert!(a.candidates.contains(&(p as u32)));
        }
    }

    #[test]
    fn lsh_multiprobe_order_is_sane() {
        let ps = four_blobs(8);
        let idx = build_lsh_index(&ps, 4, 21).unwrap();
        let q = ps.row(5);
        // first probe is the query's own bin
        let order = idx.probe_order(q, 5);
        assert_eq!(order[0], idx.model.bin(q));
        // codes are distinct
        let mut seen = order.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), order.len());
        // probing everything yields every point
        let full = idx.probe(q, idx.m()).unwrap();
        assert_eq!(full.candidates.len(), ps.n());
    }

    #[test]
    fn corrupt_container_rejected() {
        let ps = four_blobs(4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("km.phi");
        AnyIndex::KMeans(build_kmeans_index(&ps, 2, 1, 10).unwrap())
            .save(&path)
            .unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // corrupt the container kind
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        let err = AnyIndex::load(&path).unwrap_err();
        assert!(err.is_format_violation());
        // truncation
        let ok_bytes = {
            AnyIndex::KMeans(build_kmeans_index(&ps, 2, 1, 10).unwrap())
                .save(&path)
                .unwrap();
            std::fs::read(&path).unwrap()
        };
        std::fs::write(&path, &ok_bytes[..ok_bytes.len() - 3]).unwrap();
        assert!(AnyIndex::load(&path).unwrap_err().is_format_violation());
    }
}
