//! Point sets, queries, ground truth, and the distance kernel.
//!
//! Coordinates are stored as `f32` row-major; all reductions accumulate in
//! `f64`. Cosine similarity is realized exclusively as Euclidean distance on
//! unit-normalized rows, so a single kernel serves both metrics.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn tag(self) -> u32 {
        match self {
            Metric::Euclidean => 0,
            Metric::Cosine => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Metric> {
        match tag {
            0 => Some(Metric::Euclidean),
            1 => Some(Metric::Cosine),
            _ => None,
        }
    }
}

/// Dense n × d matrix of dataset points, immutable after construction.
#[derive(Debug, Clone)]
pub struct PointSet {
    data: Vec<f32>,
    n: usize,
    d: usize,
    metric: Metric,
}

/// Tolerance on |row norm − 1| accepted under the cosine metric.
const UNIT_NORM_TOL: f64 = 1e-4;

impl PointSet {
    /// Validates shape, finiteness, and (for cosine) unit row norms.
    pub fn new(data: Vec<f32>, d: usize, metric: Metric) -> Result<PointSet> {
        if d == 0 {
            return Err(Error::InvalidParam("d must be >= 1".into()));
        }
        if data.is_empty() || data.len() % d != 0 {
            return Err(Error::InvalidParam(format!(
                "data length {} is not a positive multiple of d={}",
                data.len(),
                d
            )));
        }
        let n = data.len() / d;
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: i / d,
                    col: i % d,
                });
            }
        }
        if metric == Metric::Cosine {
            for row in 0..n {
                let norm = row_norm(&data[row * d..(row + 1) * d]);
                let dev = (norm - 1.0).abs();
                if dev > UNIT_NORM_TOL {
                    return Err(Error::NotUnitNorm { row, dev });
                }
            }
        }
        Ok(PointSet { data, n, d, metric })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The sub-point-set holding rows `ids`, in that order.
    pub(crate) fn subset(&self, ids: &[u32]) -> PointSet {
        let mut data = Vec::with_capacity(ids.len() * self.d);
        for &p in ids {
            data.extend_from_slice(self.row(p as usize));
        }
        PointSet::new(data, self.d, self.metric).expect("subset of a valid point set is valid")
    }
}

/// Query matrix; must share dimension and metric with the point set it targets.
#[derive(Debug, Clone)]
pub struct QuerySet {
    points: PointSet,
}

impl QuerySet {
    pub fn new(data: Vec<f32>, d: usize, metric: Metric) -> Result<QuerySet> {
        Ok(QuerySet {
            points: PointSet::new(data, d, metric)?,
        })
    }

    pub fn from_points(points: PointSet) -> QuerySet {
        QuerySet { points }
    }

    /// Errors unless dimension and metric agree with `ps`.
    pub fn check_against(&self, ps: &PointSet) -> Result<()> {
        if self.d() != ps.d() {
            return Err(Error::DimMismatch {
                got: self.d(),
                want: ps.d(),
            });
        }
        if self.metric() != ps.metric() {
            return Err(Error::InvalidParam(
                "query metric differs from dataset metric".into(),
            ));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.points.n()
    }

    pub fn d(&self) -> usize {
        self.points.d()
    }

    pub fn metric(&self) -> Metric {
        self.points.metric()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.points.row(i)
    }

    pub fn as_points(&self) -> &PointSet {
        &self.points
    }
}

/// True neighbor lists: k point indices per query, nearest first.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    ids: Vec<u32>,
    nq: usize,
    k: usize,
}

impl GroundTruth {
    /// `ids` is row-major nq × k; every index must be < `n` and each query's
    /// list must be duplicate-free.
    pub fn new(ids: Vec<u32>, k: usize, n: usize) -> Result<GroundTruth> {
        if k == 0 {
            return Err(Error::InvalidParam("ground truth k must be >= 1".into()));
        }
        if ids.is_empty() || ids.len() % k != 0 {
            return Err(Error::InvalidParam(format!(
                "ground truth length {} is not a positive multiple of k={}",
                ids.len(),
                k
            )));
        }
        let nq = ids.len() / k;
        let mut seen = vec![false; n];
        for q in 0..nq {
            let list = &ids[q * k..(q + 1) * k];
            for &id in list {
                if id as usize >= n {
                    return Err(Error::InvalidParam(format!(
                        "ground truth index {} out of range (n={})",
                        id, n
                    )));
                }
                if seen[id as usize] {
                    return Err(Error::InvalidParam(format!(
                        "duplicate index {} in ground truth for query {}",
                        id, q
                    )));
                }
                seen[id as usize] = true;
            }
            for &id in list {
                seen[id as usize] = false;
            }
        }
        Ok(GroundTruth { ids, nq, k })
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbor list of query `q`, nearest first.
    pub fn list(&self, q: usize) -> &[u32] {
        &self.ids[q * self.k..(q + 1) * self.k]
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Squared Euclidean distance with checked dimensions.
pub fn distance_sq(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            got: a.len(),
            want: b.len(),
        });
    }
    Ok(dist_sq(a, b))
}

/// Unchecked squared-distance kernel. Four independent accumulators keep the
/// reduction order fixed while letting the compiler vectorize.
#[inline]
pub(crate) fn dist_sq(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (pa, pb) in ca.zip(cb) {
        for lane in 0..4 {
            let diff = pa[lane] as f64 - pb[lane] as f64;
            acc[lane] += diff * diff;
        }
    }
    let mut tail = 0.0f64;
    for (&xa, &xb) in ra.iter().zip(rb) {
        let diff = xa as f64 - xb as f64;
        tail += diff * diff;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Divides every row by its Euclidean norm and tags the result as cosine.
pub fn normalize_rows(ps: &PointSet) -> Result<PointSet> {
    let d = ps.d();
    let mut out = Vec::with_capacity(ps.n() * d);
    for i in 0..ps.n() {
        let row = ps.row(i);
        let norm = row_norm(row);
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        out.extend(row.iter().map(|&x| (x as f64 / norm) as f32));
    }
    PointSet::new(out, d, Metric::Cosine)
}
