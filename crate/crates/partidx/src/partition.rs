//! Balanced graph partitioning: multilevel coarsening, greedy growing,
//! FM local refinement, and a pair-swap polish for tight balance caps.
//!
//! The balance cap floor((1+η)·n/m) is evaluated in exact integer arithmetic
//! with η carried as a rational, so feasibility never depends on float
//! rounding. Cut weights, gains, and loads are all integers.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{atomic_write, Cur};
use crate::knn::{KnnGraph, UndirectedGraph};

pub const PARTITION_MAGIC: &[u8; 4] = b"PHP1";

/// Balance slack η as an exact non-negative rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eta {
    num: u64,
    den: u64,
}

impl Eta {
    pub fn new(num: u64, den: u64) -> Result<Eta> {
        if den == 0 {
            return Err(Error::InvalidParam("eta denominator must be nonzero".into()));
        }
        let g = if num == 0 { den } else { gcd(num, den) };
        Ok(Eta {
            num: num / g,
            den: den / g,
        })
    }

    pub fn zero() -> Eta {
        Eta { num: 0, den: 1 }
    }

    /// Parses a non-negative decimal like "0.05" into an exact rational.
    pub fn parse_decimal(s: &str) -> Result<Eta> {
        let bad = || Error::InvalidParam(format!("eta must be a non-negative decimal, got {:?}", s));
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || frac_part.len() > 12
        {
            return Err(bad());
        }
        let int_val: u64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let den = 10u64.pow(frac_part.len() as u32);
        let frac_val: u64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| bad())?
        };
        let num = int_val
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(bad)?;
        Eta::new(num, den)
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    /// floor((1 + η)·n / m), computed exactly.
    pub fn cap(&self, n: usize, m: usize) -> usize {
        assert!(m >= 1);
        let num = (self.den as u128 + self.num as u128) * n as u128;
        let den = self.den as u128 * m as u128;
        (num / den) as usize
    }
}

impl std::fmt::Display for Eta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Assignment of n points to m bins under the balance cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    labels: Vec<u32>,
    m: usize,
    eta: Eta,
}

impl Partition {
    /// Validates label range and the balance cap; warns on empty bins.
    pub fn new(labels: Vec<u32>, m: usize, eta: Eta) -> Result<Partition> {
        if m == 0 || labels.is_empty() {
            return Err(Error::InvalidParam("partition needs n >= 1, m >= 1".into()));
        }
        let n = labels.len();
        let cap = eta.cap(n, m);
        let mut sizes = vec![0usize; m];
        for (p, &l) in labels.iter().enumerate() {
            if l as usize >= m {
                return Err(Error::InvalidParam(format!(
                    "label {} of point {} out of range (m={})",
                    l, p, m
                )));
            }
            sizes[l as usize] += 1;
        }
        for (j, &s) in sizes.iter().enumerate() {
            if s > cap {
                return Err(Error::InfeasibleBalance { n, m, cap });
            }
            if s == 0 {
                log::warn!("partition bin {} is empty", j);
            }
        }
        Ok(Partition { labels, m, eta })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eta(&self) -> Eta {
        self.eta
    }

    pub fn cap(&self) -> usize {
        self.eta.cap(self.labels.len(), self.m)
    }

    pub fn bin_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.m];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(12 + self.labels.len() * 4);
        bytes.extend_from_slice(PARTITION_MAGIC);
        bytes.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.m as u32).to_le_bytes());
        for &l in &self.labels {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
        atomic_write(path, &bytes)
    }

    /// Loads labels; η is not stored, so the loosest η consistent with the
    /// observed bin sizes is inferred (cap = max bin size).
    pub fn load(path: &Path) -> Result<Partition> {
        let buf = std::fs::read(path)?;
        let mut cur = Cur::new(&buf, path);
        cur.expect_magic(PARTITION_MAGIC, "PHP1")?;
        let n = cur.u32_le("n")? as usize;
        let m = cur.u32_le("m")? as usize;
        if n == 0 || m == 0 {
            return Err(Error::BadHeader {
                path: cur.path().to_string(),
                what: format!("bad shape n={} m={}", n, m),
            });
        }
        let payload = cur.take(n * 4, "labels")?;
        if !cur.is_eof() {
            return Err(Error::BadHeader {
                path: cur.path().to_string(),
                what: "trailing bytes after payload".into(),
            });
        }
        let labels: Vec<u32> = payload
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut max_size = 0usize;
        let mut sizes = vec![0usize; m];
        for (p, &l) in labels.iter().enumerate() {
            if l as usize >= m {
                return Err(Error::BadHeader {
                    path: path.display().to_string(),
                    what: format!("label {} of point {} out of range (m={})", l, p, m),
                });
            }
            sizes[l as usize] += 1;
            max_size = max_size.max(sizes[l as usize]);
        }
        // smallest slack with cap >= max_size: η = (max_size·m − n) / n
        let num = (max_size * m).saturating_sub(n) as u64;
        let eta = Eta::new(num, n as u64)?;
        Partition::new(labels, m, eta)
    }
}

/// Cut measurements of a partition against the directed k-NN graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CutStats {
    /// Sum of undirected multigraph weights across bins.
    pub cut_weight: u64,
    /// Number of the n·k directed edges whose endpoints are separated.
    pub cut_directed: u64,
    /// cut_directed / (n·k).
    pub cut_fraction_directed: f64,
    pub bin_sizes: Vec<usize>,
}

/// Exact cut counts by full edge scan.
pub fn cut_stats(g: &KnnGraph, part: &Partition) -> CutStats {
    assert_eq!(part.labels().len(), g.n(), "partition/graph size mismatch");
    let labels = part.labels();
    let mut cut_directed = 0u64;
    for p in 0..g.n() {
        let lp = labels[p];
        for &q in g.list(p) {
            if labels[q as usize] != lp {
                cut_directed += 1;
            }
        }
    }
    // Each directed edge contributes exactly one unit of undirected multigraph
    // weight, so the cut weight equals the directed cut count.
    let cut_weight = cut_directed;
    let total = (g.n() * g.k()) as u64;
    CutStats {
        cut_weight,
        cut_directed,
        cut_fraction_directed: cut_directed as f64 / total as f64,
        bin_sizes: part.bin_sizes(),
    }
}

/// General weighted undirected graph in CSR form, with vertex weights.
/// Used as the partitioner's working representation at every level.
#[derive(Debug, Clone)]
pub struct WeightedGraph {
    offsets: Vec<usize>,
    nbrs: Vec<u32>,
    wts: Vec<u64>,
    vwts: Vec<u64>,
}

impl WeightedGraph {
    /// Builds from undirected edges (a, b, w); parallel edges accumulate.
    /// Vertex weights start at 1.
    pub fn from_edges(n: usize, edges: &[(u32, u32, u64)]) -> WeightedGraph {
        assert!(n >= 1);
        let mut pairs: Vec<(u32, u32, u64)> = Vec::with_capacity(edges.len());
        for &(a, b, w) in edges {
            assert!(a != b, "self loop {}-{}", a, b);
            assert!((a as usize) < n && (b as usize) < n);
            pairs.push((a.min(b), a.max(b), w));
        }
        pairs.sort_unstable();
        let mut merged: Vec<(u32, u32, u64)> = Vec::with_capacity(pairs.len());
        for (a, b, w) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == a && last.1 == b => last.2 += w,
                _ => merged.push((a, b, w)),
            }
        }
        let mut deg = vec![0usize; n];
        for &(a, b, _) in &merged {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut nbrs = vec![0u32; offsets[n]];
        let mut wts = vec![0u64; offsets[n]];
        let mut fill = offsets.clone();
        for &(a, b, w) in &merged {
            nbrs[fill[a as usize]] = b;
            wts[fill[a as usize]] = w;
            fill[a as usize] += 1;
            nbrs[fill[b as usize]] = a;
            wts[fill[b as usize]] = w;
            fill[b as usize] += 1;
        }
        WeightedGraph {
            offsets,
            nbrs,
            wts,
            vwts: vec![1; n],
        }
    }

    pub fn from_undirected(u: &UndirectedGraph) -> WeightedGraph {
        let n = u.n();
        let mut edges = Vec::new();
        for p in 0..n {
            for (q, w) in u.neighbors(p) {
                if (p as u32) < q {
                    edges.push((p as u32, q, w as u64));
                }
            }
        }
        WeightedGraph::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, p: usize) -> impl Iterator<Item = (u32, u64)> + '_ {
        let span = self.offsets[p]..self.offsets[p + 1];
        self.nbrs[span.clone()]
            .iter()
            .copied()
            .zip(self.wts[span].iter().copied())
    }

    pub fn vertex_weight(&self, p: usize) -> u64 {
        self.vwts[p]
    }

    pub fn total_edge_weight(&self) -> u64 {
        self.wts.iter().sum::<u64>() / 2
    }

    pub fn edge_count(&self) -> usize {
        self.nbrs.len() / 2
    }
}

/// Total weight of edges whose endpoints carry different labels.
pub fn cut_weight_of(g: &WeightedGraph, labels: &[u32]) -> u64 {
    let mut cut = 0u64;
    for p in 0..g.n() {
        for (q, w) in g.neighbors(p) {
            if (p as u32) < q && labels[p] != labels[q as usize] {
                cut += w;
            }
        }
    }
    cut
}

/// One level of heavy-edge-matching contraction with no vertex-weight limit.
/// Returns the coarse graph and the fine→coarse vertex mapping.
pub fn coarsen(g: &WeightedGraph) -> (WeightedGraph, Vec<u32>) {
    coarsen_limited(g, u64::MAX)
}

/// Heavy-edge matching, skipping contractions whose combined vertex weight
/// would exceed `limit`. Vertices are visited in ascending index order; each
/// unmatched vertex grabs its heaviest eligible unmatched neighbor (ties by
/// smallest index).
fn coarsen_limited(g: &WeightedGraph, limit: u64) -> (WeightedGraph, Vec<u32>) {
    let n = g.n();
    let mut mate: Vec<u32> = (0..n as u32).collect();
    for v in 0..n {
        if mate[v] != v as u32 {
            continue;
        }
        let mut best: Option<(u64, u32)> = None;
        for (q, w) in g.neighbors(v) {
            let qu = q as usize;
            if mate[qu] != q || qu == v {
                continue;
            }
            if g.vwts[v] + g.vwts[qu] > limit {
                continue;
            }
            best = match best {
                Some((bw, bq)) if (w, std::cmp::Reverse(q)) <= (bw, std::cmp::Reverse(bq)) => best,
                _ => Some((w, q)),
            };
        }
        if let Some((_, q)) = best {
            mate[v] = q;
            mate[q as usize] = v as u32;
        }
    }
    // assign coarse ids: the smaller endpoint of each matched pair owns the id
    let mut map = vec![u32::MAX; n];
    let mut nc = 0u32;
    for v in 0..n {
        if map[v] != u32::MAX {
            continue;
        }
        map[v] = nc;
        let q = mate[v] as usize;
        if q != v {
            map[q] = nc;
        }
        nc += 1;
    }
    let nc = nc as usize;
    let mut vwts = vec![0u64; nc];
    for v in 0..n {
        vwts[map[v] as usize] += g.vwts[v];
    }
    let mut edges = Vec::with_capacity(g.edge_count());
    for v in 0..n {
        for (q, w) in g.neighbors(v) {
            let (a, b) = (map[v], map[q as usize]);
            if a < b {
                edges.push((a, b, w));
            }
        }
    }
    let mut coarse = WeightedGraph::from_edges(nc.max(1), &edges);
    coarse.vwts = vwts;
    (coarse, map)
}

/// Candidate single-vertex move for the FM heap: ordered by gain descending,
/// then vertex ascending, then target bin ascending.
#[derive(PartialEq, Eq)]
struct Move {
    gain: i64,
    v: u32,
    bin: u32,
}

impl PartialOrd for Move {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Move {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .cmp(&other.gain)
            .then(other.v.cmp(&self.v))
            .then(other.bin.cmp(&self.bin))
    }
}

/// Scratch accumulator for per-vertex connectivity to bins.
struct BinConn {
    sums: Vec<u64>,
    touched: Vec<u32>,
}

impl BinConn {
    fn new(m: usize) -> BinConn {
        BinConn {
            sums: vec![0; m],
            touched: Vec::with_capacity(16),
        }
    }

    fn gather(&mut self, g: &WeightedGraph, labels: &[u32], v: usize) {
        for (q, w) in g.neighbors(v) {
            let b = labels[q as usize];
            if b as usize >= self.sums.len() {
                continue; // unassigned neighbor (greedy growing phase)
            }
            if self.sums[b as usize] == 0 {
                self.touched.push(b);
            }
            self.sums[b as usize] += w;
        }
    }

    fn clear(&mut self) {
        for &b in &self.touched {
            self.sums[b as usize] = 0;
        }
        self.touched.clear();
    }
}

/// Positive-gain moves of `v`, best candidates only.
fn positive_moves(g: &WeightedGraph, labels: &[u32], conn: &mut BinConn, v: usize) -> Vec<(i64, u32)> {
    conn.gather(g, labels, v);
    let cur = labels[v];
    let base = conn.sums[cur as usize] as i64;
    let mut out = Vec::new();
    for &b in &conn.touched {
        if b != cur {
            let gain = conn.sums[b as usize] as i64 - base;
            if gain > 0 {
                out.push((gain, b));
            }
        }
    }
    conn.clear();
    out
}

fn gain_of(g: &WeightedGraph, labels: &[u32], conn: &mut BinConn, v: usize, bin: u32) -> i64 {
    conn.gather(g, labels, v);
    let gain = conn.sums[bin as usize] as i64 - conn.sums[labels[v] as usize] as i64;
    conn.clear();
    gain
}

/// Rebuilds the full candidate set from scratch: feasible positive-gain moves
/// go to the heap, capped-out ones to the blocked list of their target bin.
/// Returns the number of feasible candidates found.
fn fm_rescan(
    g: &WeightedGraph,
    labels: &[u32],
    loads: &[u64],
    cap: u64,
    conn: &mut BinConn,
    heap: &mut BinaryHeap<Move>,
    blocked: &mut [Vec<Move>],
) -> usize {
    let mut feasible = 0;
    for v in 0..g.n() {
        for (gain, bin) in positive_moves(g, labels, conn, v) {
            let ent = Move {
                gain,
                v: v as u32,
                bin,
            };
            if loads[bin as usize] + g.vwts[v] <= cap {
                heap.push(ent);
                feasible += 1;
            } else {
                blocked[bin as usize].push(ent);
            }
        }
    }
    feasible
}

/// Greedy positive-gain single-vertex moves under the cap, highest gain first
/// (ties: lowest vertex, lowest bin). Runs until no feasible positive-gain
/// move remains or `budget` moves were applied. Returns moves applied.
fn fm_pass(
    g: &WeightedGraph,
    labels: &mut [u32],
    loads: &mut [u64],
    m: usize,
    cap: u64,
    budget: usize,
) -> usize {
    let mut conn = BinConn::new(m);
    let mut heap: BinaryHeap<Move> = BinaryHeap::new();
    let mut blocked: Vec<Vec<Move>> = (0..m).map(|_| Vec::new()).collect();
    fm_rescan(g, labels, loads, cap, &mut conn, &mut heap, &mut blocked);
    let mut moves = 0usize;
    while moves < budget {
        let ent = match heap.pop() {
            Some(e) => e,
            None => {
                // backstop: rebuild candidates from scratch; done if none fit
                for list in blocked.iter_mut() {
                    list.clear();
                }
                if fm_rescan(g, labels, loads, cap, &mut conn, &mut heap, &mut blocked) == 0 {
                    break;
                }
                continue;
            }
        };
        let v = ent.v as usize;
        let cur = labels[v];
        if ent.bin == cur {
            continue;
        }
        let fresh = gain_of(g, labels, &mut conn, v, ent.bin);
        if fresh != ent.gain || fresh <= 0 {
            continue; // stale; any live gain has its own entry
        }
        if loads[ent.bin as usize] + g.vwts[v] > cap {
            blocked[ent.bin as usize].push(ent);
            continue;
        }
        labels[v] = ent.bin;
        loads[cur as usize] -= g.vwts[v];
        loads[ent.bin as usize] += g.vwts[v];
        assert!(loads[ent.bin as usize] <= cap, "balance violated by move");
        moves += 1;
        // the source bin gained room: its blocked candidates are live again
        heap.extend(blocked[cur as usize].drain(..));
        for (gain, bin) in positive_moves(g, labels, &mut conn, v) {
            heap.push(Move {
                gain,
                v: v as u32,
                bin,
            });
        }
        for (q, _) in g.neighbors(v) {
            for (gain, bin) in positive_moves(g, labels, &mut conn, q as usize) {
                heap.push(Move { gain, v: q, bin });
            }
        }
    }
    moves
}

/// Best-improvement pair swaps for unit-weight graphs; rescues tight-balance
/// partitions where every single move is capped out. O(n²) per swap, so only
/// run on small graphs.
fn swap_pass(g: &WeightedGraph, labels: &mut [u32], m: usize, budget: usize) -> usize {
    debug_assert!(g.vwts.iter().all(|&w| w == 1));
    let n = g.n();
    let mut conn_mat = vec![0u64; n * m];
    let mut wrow = vec![0u64; n];
    let mut swaps = 0usize;
    while swaps < budget {
        conn_mat.iter_mut().for_each(|x| *x = 0);
        for v in 0..n {
            for (q, w) in g.neighbors(v) {
                conn_mat[v * m + labels[q as usize] as usize] += w;
            }
        }
        let mut best: Option<(i64, usize, usize)> = None;
        for u in 0..n {
            let lu = labels[u] as usize;
            for (q, w) in g.neighbors(u) {
                wrow[q as usize] = w;
            }
            let gu_base = conn_mat[u * m + lu] as i64;
            for v in u + 1..n {
                let lv = labels[v] as usize;
                if lv == lu {
                    continue;
                }
                let gu = conn_mat[u * m + lv] as i64 - gu_base;
                let gv = conn_mat[v * m + lu] as i64 - conn_mat[v * m + lv] as i64;
                let gain = gu + gv - 2 * wrow[v] as i64;
                if gain > 0 && best.map_or(true, |(bg, _, _)| gain > bg) {
                    best = Some((gain, u, v));
                }
            }
            for (q, _) in g.neighbors(u) {
                wrow[q as usize] = 0;
            }
        }
        match best {
            Some((_, u, v)) => {
                labels.swap(u, v);
                swaps += 1;
            }
            None => break,
        }
    }
    swaps
}

/// FM refinement as a standalone operation: feasibility under `cap` is
/// required on input (and `cap` must not exceed the partition's own cap),
/// cut weight never increases, and at most `max_iters` moves are applied.
pub fn refine_fm(
    g: &WeightedGraph,
    part: &Partition,
    cap: usize,
    max_iters: usize,
) -> Result<Partition> {
    if part.labels().len() != g.n() {
        return Err(Error::InvalidParam(format!(
            "partition has {} labels for a {}-vertex graph",
            part.labels().len(),
            g.n()
        )));
    }
    let m = part.m();
    let mut loads = vec![0u64; m];
    for (v, &l) in part.labels().iter().enumerate() {
        loads[l as usize] += g.vwts[v];
    }
    if loads.iter().any(|&l| l > cap as u64) {
        return Err(Error::InfeasibleBalance {
            n: g.n(),
            m,
            cap,
        });
    }
    let before = cut_weight_of(g, part.labels());
    let mut labels = part.labels().to_vec();
    fm_pass(g, &mut labels, &mut loads, m, cap as u64, max_iters);
    let after = cut_weight_of(g, &labels);
    assert!(after <= before, "refinement increased the cut");
    Partition::new(labels, m, part.eta())
}

/// Greedy balanced graph growing from randomly seeded regions. Returns None
/// if the attempt cannot reach feasibility (possible at coarse levels where
/// vertex weights are lumpy).
fn greedy_init(
    g: &WeightedGraph,
    m: usize,
    cap: u64,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<u32>> {
    let n = g.n();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(rng);
    let mut labels = vec![u32::MAX; n];
    let mut loads = vec![0u64; m];
    let total: u64 = g.vwts.iter().sum();
    let mut assigned = 0u64;
    let mut conn = vec![0u64; n];
    for j in 0..m {
        let remaining_bins = (m - j) as u64;
        let target = (total - assigned).div_ceil(remaining_bins).min(cap);
        // (conn, vertex) max-heap; ties prefer the smaller index
        let mut frontier: BinaryHeap<(u64, std::cmp::Reverse<u32>)> = BinaryHeap::new();
        let mut seed_scan = 0usize; // per-bin cursor over `order` for fresh seeds
        while loads[j] < target {
            let v = match frontier.pop() {
                Some((c, std::cmp::Reverse(v))) => {
                    let vu = v as usize;
                    if labels[vu] != u32::MAX || conn[vu] != c {
                        continue; // stale entry; a fresh one exists if still relevant
                    }
                    if loads[j] + g.vwts[vu] > cap {
                        continue; // too heavy for this bin; stays for later bins
                    }
                    vu
                }
                None => {
                    // frontier exhausted: seed with the next unassigned vertex
                    // that fits (skipped ones remain available to later bins)
                    let mut found = None;
                    while seed_scan < n {
                        let cand = order[seed_scan] as usize;
                        if labels[cand] == u32::MAX && loads[j] + g.vwts[cand] <= cap {
                            found = Some(cand);
                            break;
                        }
                        seed_scan += 1;
                    }
                    match found {
                        Some(v) => v,
                        None => break, // nothing fits; move on to the next bin
                    }
                }
            };
            labels[v] = j as u32;
            loads[j] += g.vwts[v];
            assigned += g.vwts[v];
            for (q, w) in g.neighbors(v) {
                let qu = q as usize;
                if labels[qu] == u32::MAX {
                    conn[qu] += w;
                    frontier.push((conn[qu], std::cmp::Reverse(q)));
                }
            }
        }
        // reset connectivity marks for the next bin's growth
        for c in conn.iter_mut() {
            *c = 0;
        }
    }
    // leftovers: greedily drop into the most-connected feasible bin
    let mut bc = BinConn::new(m);
    for idx in 0..n {
        let v = order[idx] as usize;
        if labels[v] != u32::MAX {
            continue;
        }
        bc.gather(g, &labels, v);
        let mut best: Option<(u64, usize)> = None;
        for j in 0..m {
            if loads[j] + g.vwts[v] > cap {
                continue;
            }
            let c = bc.sums[j];
            if best.map_or(true, |(bc_, _)| c > bc_) {
                best = Some((c, j));
            }
        }
        bc.clear();
        let j = best?.1; // no feasible bin anywhere: attempt failed
        labels[v] = j as u32;
        loads[j] += g.vwts[v];
    }
    Some(labels)
}

/// Multilevel balanced partitioning of an arbitrary unit-vertex-weight graph.
pub fn partition_weighted(
    g: &WeightedGraph,
    m: usize,
    eta: Eta,
    seed: u64,
    max_refine_iters: usize,
) -> Result<Partition> {
    let n = g.n();
    if m == 0 || m > n {
        return Err(Error::InvalidParam(format!(
            "m={} out of range for n={}",
            m, n
        )));
    }
    if max_refine_iters == 0 {
        return Err(Error::InvalidParam("max_refine_iters must be >= 1".into()));
    }
    if g.vwts.iter().any(|&w| w != 1) {
        return Err(Error::InvalidParam(
            "partition_weighted expects unit vertex weights (bin loads count points)".into(),
        ));
    }
    let cap = eta.cap(n, m);
    if m.checked_mul(cap).map_or(true, |t| t < n) {
        return Err(Error::InfeasibleBalance { n, m, cap });
    }
    if m == 1 {
        return Partition::new(vec![0; n], 1, eta);
    }
    if m == n {
        return Partition::new((0..n as u32).collect(), m, eta);
    }

    // coarsen until small; stop when matching stalls
    let coarse_target = (4 * m).max(64);
    let weight_limit = ((cap as u64) / 3).max(1);
    let mut graphs: Vec<WeightedGraph> = vec![g.clone()];
    let mut maps: Vec<Vec<u32>> = Vec::new();
    while graphs.last().unwrap().n() > coarse_target {
        let (coarse, map) = coarsen_limited(graphs.last().unwrap(), weight_limit);
        if coarse.n() == graphs.last().unwrap().n() {
            break;
        }
        maps.push(map);
        graphs.push(coarse);
    }

    // initial partition at the deepest level that admits a feasible greedy
    // assignment; lumpy coarse vertex weights can make a level unpackable,
    // in which case we retry one level finer (the finest always succeeds)
    let mut level = graphs.len() - 1;
    let (mut labels, init_cut) = loop {
        let gl = &graphs[level];
        let mut best: Option<(u64, Vec<u32>)> = None;
        for attempt in 0..4u64 {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E3779B97F4A7C15)));
            if let Some(cand) = greedy_init(gl, m, cap as u64, &mut rng) {
                let cut = cut_weight_of(gl, &cand);
                if best.as_ref().map_or(true, |(bc, _)| cut < *bc) {
                    best = Some((cut, cand));
                }
            }
        }
        match best {
            Some((cut, labels)) => break (labels, cut),
            None => {
                assert!(level > 0, "greedy init must succeed on unit weights");
                level -= 1;
            }
        }
    };

    // refine and project down to the finest level
    loop {
        let gl = &graphs[level];
        let mut loads = vec![0u64; m];
        for (v, &l) in labels.iter().enumerate() {
            loads[l as usize] += gl.vwts[v];
        }
        fm_pass(gl, &mut labels, &mut loads, m, cap as u64, max_refine_iters);
        if level == 0 {
            break;
        }
        level -= 1;
        let map = &maps[level];
        labels = map.iter().map(|&c| labels[c as usize]).collect();
    }

    // pair-swap polish where single moves are starved by a tight cap
    let slack = m * cap - n;
    if n <= 2048 && m <= 512 && slack < m {
        swap_pass(g, &mut labels, m, 256);
    }

    let final_cut = cut_weight_of(g, &labels);
    assert!(
        final_cut <= init_cut,
        "final cut {} exceeds initial greedy cut {}",
        final_cut,
        init_cut
    );
    Partition::new(labels, m, eta)
}

/// Balanced partitioning of the k-NN graph's weighted undirected view.
pub fn partition_graph(
    g: &KnnGraph,
    m: usize,
    eta: Eta,
    seed: u64,
    max_refine_iters: usize,
) -> Result<Partition> {
    let wg = WeightedGraph::from_undirected(&g.undirected());
    partition_weighted(&wg, m, eta, seed, max_refine_iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Metric, PointSet};
    use crate::knn::build_knn_graph;
    use proptest::prelude::*;

    /// Two 3-cliques joined by one bridge edge (2–3).
    pub(crate) fn two_cliques() -> WeightedGraph {
        WeightedGraph::from_edges(
            6,
            &[
                (0, 1, 1),
                (0, 2, 1),
                (1, 2, 1),
                (3, 4, 1),
                (3, 5, 1),
                (4, 5, 1),
                (2, 3, 1),
            ],
        )
    }

    #[test]
    fn eta_cap_exact() {
        let eta = Eta::parse_decimal("0.05").unwrap();
        assert_eq!(eta.cap(1000, 16), 65); // floor(1.05 * 62.5)
        assert_eq!(Eta::zero().cap(10, 3), 3);
        assert_eq!(Eta::zero().cap(6, 2), 3);
        let third = Eta::new(1, 3).unwrap();
        assert_eq!(third.cap(6, 2), 4); // floor(4/3 * 3)
        // no float rounding: η=0.1, n=1e9-ish scale still exact
        let tenth = Eta::parse_decimal("0.1").unwrap();
        assert_eq!(tenth.cap(999_999_937, 7), 157_142_847);
    }

    #[test]
    fn eta_parse_rejects_garbage() {
        assert!(Eta::parse_decimal("").is_err());
        assert!(Eta::parse_decimal(".").is_err());
        assert!(Eta::parse_decimal("-0.1").is_err());
        assert!(Eta::parse_decimal("1.2.3").is_err());
        assert!(Eta::parse_decimal("abc").is_err());
        assert_eq!(Eta::parse_decimal("0.05").unwrap(), Eta::new(1, 20).unwrap());
        assert_eq!(Eta::parse_decimal("2").unwrap(), Eta::new(2, 1).unwrap());
        assert_eq!(Eta::parse_decimal(".5").unwrap(), Eta::new(1, 2).unwrap());
    }

    #[test]
    fn two_cliques_exact_optimum() {
        let g = two_cliques();
        let part = partition_weighted(&g, 2, Eta::zero(), 42, 2000).unwrap();
        let labels = part.labels();
        assert_eq!(cut_weight_of(&g, labels), 1);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[1], labels[2]);
        assert_eq!(labels[3], labels[4]);
        assert_eq!(labels[4], labels[5]);
        assert_ne!(labels[0], labels[3]);
    }

    #[test]
    fn single_bin_and_singletons() {
        let g = two_cliques();
        let p1 = partition_weighted(&g, 1, Eta::zero(), 7, 10).unwrap();
        assert!(p1.labels().iter().all(|&l| l == 0));
        assert_eq!(cut_weight_of(&g, p1.labels()), 0);

        let pn = partition_weighted(&g, 6, Eta::zero(), 7, 10).unwrap();
        let mut seen = pn.labels().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(cut_weight_of(&g, pn.labels()), g.total_edge_weight());
    }

    #[test]
    fn rejects_bad_params() {
        let g = two_cliques();
        assert!(partition_weighted(&g, 0, Eta::zero(), 1, 10).is_err());
        assert!(partition_weighted(&g, 7, Eta::zero(), 1, 10).is_err());
        assert!(partition_weighted(&g, 2, Eta::zero(), 1, 0).is_err());
        // n=5, m=2, η=0: cap=2, 2·2 < 5 infeasible
        let small = WeightedGraph::from_edges(5, &[(0, 1, 1)]);
        assert!(matches!(
            partition_weighted(&small, 2, Eta::zero(), 1, 10),
            Err(Error::InfeasibleBalance { cap: 2, .. })
        ));
    }

    #[test]
    fn coarsen_single_edge() {
        let g = WeightedGraph::from_edges(2, &[(0, 1, 2)]);
        let (c, map) = coarsen(&g);
        assert_eq!(c.n(), 1);
        assert_eq!(c.vertex_weight(0), 2);
        assert_eq!(c.edge_count(), 0);
        assert_eq!(map, vec![0, 0]);
    }

    #[test]
    fn coarsen_path_prefers_heavy_edge() {
        // a-b weight 2, b-c weight 1: matching contracts {a,b}
        let g = WeightedGraph::from_edges(3, &[(0, 1, 2), (1, 2, 1)]);
        let (c, map) = coarsen(&g);
        assert_eq!(c.n(), 2);
        assert_eq!(map[0], map[1]);
        assert_ne!(map[0], map[2]);
        let ab = map[0] as usize;
        let cc = map[2] as usize;
        assert_eq!(c.vertex_weight(ab), 2);
        assert_eq!(c.vertex_weight(cc), 1);
        let edges: Vec<(u32, u64)> = c.neighbors(ab).collect();
        assert_eq!(edges, vec![(cc as u32, 1)]);
    }

    #[test]
    fn coarsen_edgeless_is_identity() {
        let g = WeightedGraph::from_edges(4, &[]);
        let (c, map) = coarsen(&g);
        assert_eq!(c.n(), 4);
        assert_eq!(c.edge_count(), 0);
        assert_eq!(map, vec![0, 1, 2, 3]);
    }

    #[test]
    fn coarsen_merges_parallel_edges() {
        // triangle with one heavy edge: contracting it folds the two
        // remaining edges into one coarse edge of summed weight
        let g = WeightedGraph::from_edges(3, &[(0, 1, 5), (0, 2, 1), (1, 2, 1)]);
        let (c, map) = coarsen(&g);
        assert_eq!(c.n(), 2);
        assert_eq!(map[0], map[1]);
        let ab = map[0] as usize;
        let edges: Vec<(u32, u64)> = c.neighbors(ab).collect();
        assert_eq!(edges, vec![(map[2], 2)]);
    }

    #[test]
    fn refine_converges_from_split_clique() {
        let g = two_cliques();
        // {0,1,3} | {2,4,5}: needs cap 4 so single moves can pass through
        let eta = Eta::new(1, 3).unwrap();
        let start = Partition::new(vec![0, 0, 1, 0, 1, 1], 2, eta).unwrap();
        assert_eq!(cut_weight_of(&g, start.labels()), 5);
        let out = refine_fm(&g, &start, 4, 2000).unwrap();
        assert_eq!(cut_weight_of(&g, out.labels()), 1);
        assert_eq!(out.labels()[0], out.labels()[1]);
        assert_eq!(out.labels()[1], out.labels()[2]);
    }

    #[test]
    fn refine_fixed_point_and_zero_iters() {
        let g = two_cliques();
        let eta = Eta::new(1, 3).unwrap();
        let opt = Partition::new(vec![0, 0, 0, 1, 1, 1], 2, eta).unwrap();
        let out = refine_fm(&g, &opt, 4, 2000).unwrap();
        assert_eq!(out.labels(), opt.labels());

        let start = Partition::new(vec![0, 0, 1, 0, 1, 1], 2, eta).unwrap();
        let out = refine_fm(&g, &start, 4, 0).unwrap();
        assert_eq!(out.labels(), start.labels());
    }

    #[test]
    fn refine_rejects_infeasible_input() {
        let g = two_cliques();
        let eta = Eta::new(1, 3).unwrap(); // own cap 4
        let part = Partition::new(vec![0, 0, 0, 0, 1, 1], 2, eta).unwrap();
        // stricter external cap 3 < bin size 4
        assert!(refine_fm(&g, &part, 3, 10).is_err());
    }

    #[test]
    fn cut_stats_examples() {
        let ps = PointSet::new(vec![0.0, 0.1, 10.0, 10.1], 1, Metric::Euclidean).unwrap();
        let g = build_knn_graph(&ps, 1).unwrap();

        let all_same = Partition::new(vec![0, 0, 0, 0], 1, Eta::zero()).unwrap();
        let s = cut_stats(&g, &all_same);
        assert_eq!(s.cut_fraction_directed, 0.0);
        assert_eq!(s.bin_sizes, vec![4]);

        let pairs = Partition::new(vec![0, 0, 1, 1], 2, Eta::zero()).unwrap();
        let s = cut_stats(&g, &pairs);
        assert_eq!(s.cut_directed, 0);
        assert_eq!(s.cut_weight, 0);

        let across = Partition::new(vec![0, 1, 0, 1], 2, Eta::zero()).unwrap();
        let s = cut_stats(&g, &across);
        assert_eq!(s.cut_directed, 4);
        assert_eq!(s.cut_fraction_directed, 1.0);
        assert_eq!(s.cut_weight, 4);
    }

    #[test]
    fn partition_validation_and_persistence() {
        assert!(Partition::new(vec![0, 2], 2, Eta::zero()).is_err()); // label range
        assert!(Partition::new(vec![0, 0, 0], 2, Eta::zero()).is_err()); // cap 1 < 3

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.php");
        let part = Partition::new(vec![0, 1, 0, 1, 2, 2], 3, Eta::zero()).unwrap();
        part.save(&path).unwrap();
        let back = Partition::load(&path).unwrap();
        assert_eq!(back.labels(), part.labels());
        assert_eq!(back.m(), 3);
        // inferred eta: max bin size 2 = cap exactly, slack 0
        assert_eq!(back.cap(), 2);

        // imbalanced file loads with inferred slack
        let skew = Partition::new(vec![0, 0, 0, 1], 2, Eta::new(1, 2).unwrap()).unwrap();
        skew.save(&path).unwrap();
        let back = Partition::load(&path).unwrap();
        assert_eq!(back.cap(), 3);

        // label out of range rejected
        let mut bytes = std::fs::read(&path).unwrap();
        let off = bytes.len() - 4;
        bytes[off..].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(Partition::load(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Random graphs: output is feasible, deterministic, and no worse
        /// than the greedy start (the assert inside partition_weighted).
        #[test]
        fn feasible_and_deterministic(
            (n, edges, m, eta_num, seed) in (4usize..40).prop_flat_map(|n| {
                let max_edges = n * (n - 1) / 2;
                (
                    Just(n),
                    prop::collection::vec((0..n as u32, 0..n as u32, 1u64..4), 0..max_edges.min(60)),
                    2usize..5,
                    0u64..3,
                    prop::num::u64::ANY,
                )
            }),
        ) {
            let edges: Vec<(u32, u32, u64)> = edges
                .into_iter()
                .filter(|(a, b, _)| a != b)
                .collect();
            let m = m.min(n);
            let g = WeightedGraph::from_edges(n, &edges);
            let eta = Eta::new(eta_num, 10).unwrap();
            let cap = eta.cap(n, m);
            prop_assume!(m * cap >= n);
            let p1 = partition_weighted(&g, m, eta, seed, 2000).unwrap();
            let p2 = partition_weighted(&g, m, eta, seed, 2000).unwrap();
            prop_assert_eq!(p1.labels(), p2.labels());
            let sizes = p1.bin_sizes();
            prop_assert!(sizes.iter().all(|&s| s <= cap));
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        }
    }
}
