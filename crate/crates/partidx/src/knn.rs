//! Exact k-NN graph construction and the brute-force oracle.
//!
//! Construction is exact O(n²d), blocked over target points so each pass
//! streams the dataset once per block instead of once per point. Neighbor
//! lists are ordered by distance with ties broken by ascending index, which
//! makes every downstream artifact deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use crate::dataset::{dist_sq, GroundTruth, PointSet, QuerySet};
use crate::error::{Error, Result};
use crate::io::{atomic_write, Cur};

pub const GRAPH_MAGIC: &[u8; 4] = b"PHG1";

/// Candidate entry ordered by (distance, index); the heap keeps the worst on top.
#[derive(PartialEq)]
struct Cand {
    dist: f64,
    idx: u32,
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        // distances are finite by PointSet construction
        self.dist
            .partial_cmp(&other.dist)
            .unwrap()
            .then(self.idx.cmp(&other.idx))
    }
}

/// Bounded top-k tracker over (distance, index) candidates.
struct Nearest {
    k: usize,
    heap: BinaryHeap<Cand>,
}

impl Nearest {
    fn new(k: usize) -> Nearest {
        Nearest {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, dist: f64, idx: u32) {
        if self.heap.len() < self.k {
            self.heap.push(Cand { dist, idx });
        } else {
            let worst = self.heap.peek().unwrap();
            if dist < worst.dist || (dist == worst.dist && idx < worst.idx) {
                self.heap.pop();
                self.heap.push(Cand { dist, idx });
            }
        }
    }

    fn into_sorted_ids(self) -> Vec<u32> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| c.idx)
            .collect()
    }
}

/// Directed exact k-NN graph; `ids` is row-major n × k, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    ids: Vec<u32>,
}

impl KnnGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor list of point `p`, nearest first.
    pub fn list(&self, p: usize) -> &[u32] {
        &self.ids[p * self.k..(p + 1) * self.k]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// |N_k(p) ∪ {p' : p ∈ N_k(p')}| — in- and out-neighbors, counted once.
    pub fn degree(&self, p: usize) -> Result<usize> {
        if p >= self.n {
            return Err(Error::InvalidParam(format!(
                "point index {} out of range (n={})",
                p, self.n
            )));
        }
        let mut mark = vec![false; self.n];
        let mut count = 0usize;
        for &q in self.list(p) {
            if !mark[q as usize] {
                mark[q as usize] = true;
                count += 1;
            }
        }
        for q in 0..self.n {
            if q != p && !mark[q] && self.list(q).contains(&(p as u32)) {
                mark[q] = true;
                count += 1;
            }
        }
        Ok(count)
    }

    /// Collapses the directed graph to its weighted undirected view:
    /// w{p,q} = number of directed edges between p and q (1 or 2).
    pub fn undirected(&self) -> UndirectedGraph {
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(self.n * self.k);
        for p in 0..self.n {
            let pu = p as u32;
            for &q in self.list(p) {
                pairs.push((pu.min(q), pu.max(q)));
            }
        }
        pairs.sort_unstable();
        let mut edges: Vec<(u32, u32, u8)> = Vec::with_capacity(pairs.len());
        for pair in pairs {
            match edges.last_mut() {
                Some(last) if (last.0, last.1) == pair => last.2 = 2,
                _ => edges.push((pair.0, pair.1, 1)),
            }
        }
        UndirectedGraph::from_edges(self.n, &edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(12 + self.ids.len() * 4);
        bytes.extend_from_slice(GRAPH_MAGIC);
        bytes.extend_from_slice(&(self.n as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.k as u32).to_le_bytes());
        for &id in &self.ids {
            bytes.extend_from_slice(&id.to_le_bytes());
        }
        atomic_write(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<KnnGraph> {
        let buf = std::fs::read(path)?;
        let mut cur = Cur::new(&buf, path);
        cur.expect_magic(GRAPH_MAGIC, "PHG1")?;
        let n = cur.u32_le("n")? as usize;
        let k = cur.u32_le("k")? as usize;
        if n == 0 || k == 0 || k >= n {
            return Err(Error::BadHeader {
                path: cur.path().to_string(),
                what: format!("bad shape n={} k={}", n, k),
            });
        }
        let payload = cur.take(n * k * 4, "neighbor ids")?;
        if !cur.is_eof() {
            return Err(Error::BadHeader {
                path: cur.path().to_string(),
                what: "trailing bytes after payload".into(),
            });
        }
        let ids: Vec<u32> = payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut scratch = vec![0u32; k];
        for p in 0..n {
            let list = &ids[p * k..(p + 1) * k];
            scratch.copy_from_slice(list);
            scratch.sort_unstable();
            for &id in list {
                if id as usize >= n {
                    return Err(Error::BadHeader {
                        path: path.display().to_string(),
                        what: format!("neighbor id {} out of range for point {}", id, p),
                    });
                }
                if id as usize == p {
                    return Err(Error::BadHeader {
                        path: path.display().to_string(),
                        what: format!("point {} lists itself", p),
                    });
                }
            }
            if scratch.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::BadHeader {
                    path: path.display().to_string(),
                    what: format!("duplicate neighbor in list of point {}", p),
                });
            }
        }
        Ok(KnnGraph { n, k, ids })
    }
}

/// Weighted undirected multigraph view in CSR form; weights are 1 or 2.
#[derive(Debug, Clone)]
pub struct UndirectedGraph {
    offsets: Vec<usize>,
    nbrs: Vec<u32>,
    weights: Vec<u8>,
}

impl UndirectedGraph {
    /// Builds the CSR from unique undirected edges (a < b, weight).
    pub fn from_edges(n: usize, edges: &[(u32, u32, u8)]) -> UndirectedGraph {
        let mut deg = vec![0usize; n];
        for &(a, b, _) in edges {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut nbrs = vec![0u32; offsets[n]];
        let mut weights = vec![0u8; offsets[n]];
        let mut fill = offsets.clone();
        for &(a, b, w) in edges {
            nbrs[fill[a as usize]] = b;
            weights[fill[a as usize]] = w;
            fill[a as usize] += 1;
            nbrs[fill[b as usize]] = a;
            weights[fill[b as usize]] = w;
            fill[b as usize] += 1;
        }
        UndirectedGraph {
            offsets,
            nbrs,
            weights,
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, p: usize) -> impl Iterator<Item = (u32, u8)> + '_ {
        let span = self.offsets[p]..self.offsets[p + 1];
        self.nbrs[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    /// Sum of incident edge weights of `p` (double edges count twice).
    pub fn weighted_degree(&self, p: usize) -> u64 {
        self.neighbors(p).map(|(_, w)| w as u64).sum()
    }
}

const TARGET_BLOCK: usize = 32;

/// Exact k-NN graph over `ps`; requires 1 ≤ k < n.
pub fn build_knn_graph(ps: &PointSet, k: usize) -> Result<KnnGraph> {
    let n = ps.n();
    if k == 0 || k >= n {
        return Err(Error::InvalidParam(format!(
            "graph k={} out of range for n={}",
            k, n
        )));
    }
    let mut ids = vec![0u32; n * k];
    for t0 in (0..n).step_by(TARGET_BLOCK) {
        let t1 = (t0 + TARGET_BLOCK).min(n);
        let mut near: Vec<Nearest> = (t0..t1).map(|_| Nearest::new(k)).collect();
        for j in 0..n {
            let rj = ps.row(j);
            for t in t0..t1 {
                if t == j {
                    continue;
                }
                near[t - t0].offer(dist_sq(ps.row(t), rj), j as u32);
            }
        }
        for (t, tracker) in (t0..t1).zip(near) {
            ids[t * k..(t + 1) * k].copy_from_slice(&tracker.into_sorted_ids());
        }
    }
    Ok(KnnGraph { n, k, ids })
}

/// Exact k nearest dataset indices per query; requires 1 ≤ k ≤ n. Queries
/// coincident with dataset points match them (no self-exclusion here).
pub fn brute_force_knn(ps: &PointSet, qs: &QuerySet, k: usize) -> Result<GroundTruth> {
    let n = ps.n();
    if k == 0 || k > n {
        return Err(Error::InvalidParam(format!(
            "oracle k={} out of range for n={}",
            k, n
        )));
    }
    qs.check_against(ps)?;
    let nq = qs.n();
    let mut ids = vec![0u32; nq * k];
    for t0 in (0..nq).step_by(TARGET_BLOCK) {
        let t1 = (t0 + TARGET_BLOCK).min(nq);
        let mut near: Vec<Nearest> = (t0..t1).map(|_| Nearest::new(k)).collect();
        for j in 0..n {
            let rj = ps.row(j);
            for t in t0..t1 {
                near[t - t0].offer(dist_sq(qs.row(t), rj), j as u32);
            }
        }
        for (t, tracker) in (t0..t1).zip(near) {
            ids[t * k..(t + 1) * k].copy_from_slice(&tracker.into_sorted_ids());
        }
    }
    GroundTruth::new(ids, k, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Metric;
    use proptest::prelude::*;

    fn ps_1d(xs: &[f32]) -> PointSet {
        PointSet::new(xs.to_vec(), 1, Metric::Euclidean).unwrap()
    }

    #[test]
    fn two_tight_pairs() {
        let ps = ps_1d(&[0.0, 0.1, 10.0, 10.1]);
        let g = build_knn_graph(&ps, 1).unwrap();
        assert_eq!(g.list(0), &[1]);
        assert_eq!(g.list(1), &[0]);
        assert_eq!(g.list(2), &[3]);
        assert_eq!(g.list(3), &[2]);
        // mutual pairs: union of in- and out-neighbors is a single point
        for p in 0..4 {
            assert_eq!(g.degree(p).unwrap(), 1);
        }
    }

    #[test]
    fn complete_graph_case() {
        let ps = ps_1d(&[0.0, 1.0, 3.0, 7.0]);
        let g = build_knn_graph(&ps, 3).unwrap();
        assert_eq!(g.list(0), &[1, 2, 3]);
        assert_eq!(g.list(1), &[0, 2, 3]);
        assert_eq!(g.list(2), &[1, 0, 3]);
        assert_eq!(g.list(3), &[2, 1, 0]);
        for p in 0..4 {
            assert_eq!(g.degree(p).unwrap(), 3);
        }
    }

    #[test]
    fn tie_broken_by_index() {
        let ps = ps_1d(&[0.0, 1.0, 2.0]);
        let g = build_knn_graph(&ps, 1).unwrap();
        assert_eq!(g.list(1), &[0]);
    }

    #[test]
    fn star_degrees() {
        let data = vec![0.0f32, 0.0, 1.0, 0.0, 0.0, 1.05, -1.1, 0.0];
        let ps = PointSet::new(data, 2, Metric::Euclidean).unwrap();
        let g = build_knn_graph(&ps, 1).unwrap();
        assert_eq!(g.list(0), &[1]);
        assert_eq!(g.list(1), &[0]);
        assert_eq!(g.list(2), &[0]);
        assert_eq!(g.list(3), &[0]);
        assert_eq!(g.degree(0).unwrap(), 3);
        assert_eq!(g.degree(1).unwrap(), 1);
        assert_eq!(g.degree(2).unwrap(), 1);
        assert_eq!(g.degree(3).unwrap(), 1);
        assert!(g.degree(4).is_err());
    }

    #[test]
    fn oracle_examples() {
        let ps = PointSet::new(vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], 2, Metric::Euclidean).unwrap();
        let qs = QuerySet::new(vec![0.9, 0.0], 2, Metric::Euclidean).unwrap();
        let gt = brute_force_knn(&ps, &qs, 2).unwrap();
        assert_eq!(gt.list(0), &[1, 0]);

        // query at a dataset point returns that point first
        let qs = QuerySet::new(vec![0.0, 1.0], 2, Metric::Euclidean).unwrap();
        let gt = brute_force_knn(&ps, &qs, 1).unwrap();
        assert_eq!(gt.list(0), &[2]);

        // k = n is a permutation of all indices
        let qs = QuerySet::new(vec![0.2, 0.3], 2, Metric::Euclidean).unwrap();
        let gt = brute_force_knn(&ps, &qs, 3).unwrap();
        let mut all = gt.list(0).to_vec();
        all.sort_unstable();
        assert_eq!(all, &[0, 1, 2]);
    }

    #[test]
    fn rejects_bad_k() {
        let ps = ps_1d(&[0.0, 1.0]);
        assert!(build_knn_graph(&ps, 0).is_err());
        assert!(build_knn_graph(&ps, 2).is_err());
        let qs = QuerySet::new(vec![0.5], 1, Metric::Euclidean).unwrap();
        assert!(brute_force_knn(&ps, &qs, 3).is_err());
        assert!(brute_force_knn(&ps, &qs, 2).is_ok());
    }

    #[test]
    fn undirected_view_weights() {
        // 0 and 1 are mutual; 2 points at 1 but 1 points at 0
        let ps = ps_1d(&[0.0, 0.4, 1.0]);
        let g = build_knn_graph(&ps, 1).unwrap();
        let u = g.undirected();
        let n0: Vec<(u32, u8)> = u.neighbors(0).collect();
        let n1: Vec<(u32, u8)> = u.neighbors(1).collect();
        let n2: Vec<(u32, u8)> = u.neighbors(2).collect();
        assert_eq!(n0, vec![(1, 2)]);
        assert_eq!(n1, vec![(0, 2), (2, 1)]);
        assert_eq!(n2, vec![(1, 1)]);
        assert_eq!(u.weighted_degree(1), 3);
    }

    #[test]
    fn graph_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.phg");
        let ps = ps_1d(&[0.0, 0.1, 10.0, 10.1, 5.0]);
        let g = build_knn_graph(&ps, 2).unwrap();
        g.save(&path).unwrap();
        let back = KnnGraph::load(&path).unwrap();
        assert_eq!(back, g);
        // byte-identical on re-save
        let first = std::fs::read(&path).unwrap();
        back.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn graph_load_rejects_self_loop() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.phg");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(GRAPH_MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes()); // point 0 lists itself
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            KnnGraph::load(&path),
            Err(Error::BadHeader { .. })
        ));
    }

    /// Graph lists derived from the brute-force oracle: take top k+1 with the
    /// dataset as its own query set, drop the point itself (or the last entry
    /// if enough coincident points pushed it out), keep k.
    pub(crate) fn graph_from_oracle(ps: &PointSet, k: usize) -> Vec<Vec<u32>> {
        let qs = QuerySet::from_points(ps.clone());
        let gt = brute_force_knn(ps, &qs, k + 1).unwrap();
        (0..ps.n())
            .map(|p| {
                let mut list: Vec<u32> = gt.list(p).to_vec();
                match list.iter().position(|&x| x as usize == p) {
                    Some(pos) => {
                        list.remove(pos);
                    }
                    None => {
                        list.pop();
                    }
                }
                list
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_oracle(
            (n, d, data) in (2usize..40, 1usize..4).prop_flat_map(|(n, d)| {
                (Just(n), Just(d), prop::collection::vec(-10.0f32..10.0, n * d))
            }),
            kf in 0.0f64..1.0,
        ) {
            let ps = PointSet::new(data, d, Metric::Euclidean).unwrap();
            let k = 1 + ((kf * (n - 1) as f64) as usize).min(n - 2);
            let g = build_knn_graph(&ps, k).unwrap();
            let want = graph_from_oracle(&ps, k);
            for p in 0..n {
                prop_assert_eq!(g.list(p), &want[p][..], "point {}", p);
            }
        }

        #[test]
        fn lists_well_formed(
            (n, data) in (3usize..30).prop_flat_map(|n| {
                (Just(n), prop::collection::vec(-5.0f32..5.0, n * 2))
            }),
        ) {
            let ps = PointSet::new(data, 2, Metric::Euclidean).unwrap();
            let k = (n / 2).max(1);
            let g = build_knn_graph(&ps, k).unwrap();
            for p in 0..n {
                let list = g.list(p);
                prop_assert_eq!(list.len(), k);
                prop_assert!(!list.contains(&(p as u32)));
                let mut sorted = list.to_vec();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), k, "duplicates in list of {}", p);
                // non-decreasing distances, ties by ascending index
                let dists: Vec<f64> = list
                    .iter()
                    .map(|&q| crate::dataset::distance_sq(ps.row(p), ps.row(q as usize)).unwrap())
                    .collect();
                for w in 0..k - 1 {
                    prop_assert!(
                        dists[w] < dists[w + 1]
                            || (dists[w] == dists[w + 1] && list[w] < list[w + 1])
                    );
                }
            }
            // determinism: a second run is identical
            let g2 = build_knn_graph(&ps, k).unwrap();
            prop_assert_eq!(g.ids(), g2.ids());
        }
    }
}
