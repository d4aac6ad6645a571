//! Constructive verifier of the sparse-cut guarantee: for any dataset whose
//! k-NN graph is built, some axis-aligned hyperplane separates the points
//! into two parts whose normalized cut mass is at most sqrt(2α/β), where α is
//! the expected squared close-pair distance and β the expected squared
//! distance between independent points. The verifier builds that hyperplane
//! and checks the inequality instead of taking it on faith.

use crate::dataset::{dist_sq, PointSet};
use crate::error::{Error, Result};
use crate::knn::{KnnGraph, UndirectedGraph};

/// Tolerance for every inequality in this module; 64-bit math throughout.
pub const SPECTRAL_TOL: f64 = 1e-9;

/// Normalized adjacency view of a k-NN multigraph: entry (p,q) is
/// w(p,q)/(2kn) per direction, so all entries sum to 1.
#[derive(Debug, Clone)]
pub struct SpectralContext {
    und: UndirectedGraph,
    /// 1/(2kn)
    scale: f64,
    /// per-point mass: weighted degree × scale; sums to 1
    rho: Vec<f64>,
    alpha: f64,
    beta: f64,
}

impl SpectralContext {
    pub fn n(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// sqrt(2α/β), the right side of the guarantee.
    pub fn bound(&self) -> f64 {
        (2.0 * self.alpha / self.beta).sqrt()
    }

    /// Symmetric matrix entry for the ordered pair (p, q).
    pub fn a_entry(&self, p: usize, q: usize) -> f64 {
        self.und
            .neighbors(p)
            .find(|&(r, _)| r as usize == q)
            .map_or(0.0, |(_, w)| w as f64 * self.scale)
    }

    /// Sum of all (ordered) matrix entries; 1 up to rounding.
    pub fn a_total(&self) -> f64 {
        let mut total = 0.0;
        for p in 0..self.n() {
            for (_, w) in self.und.neighbors(p) {
                total += w as f64 * self.scale;
            }
        }
        total
    }
}

/// β by the O(n²) definition: Σ_{p,p'} ρ(p)ρ(p')‖p−p'‖². The oracle form.
pub fn beta_quadratic(ps: &PointSet, rho: &[f64]) -> f64 {
    let n = ps.n();
    let mut beta = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            beta += 2.0 * rho[p] * rho[q] * dist_sq(ps.row(p), ps.row(q));
        }
    }
    beta
}

/// β by the moment identity 2Σρ‖p‖² − 2‖Σρp‖²; O(nd).
pub fn beta_moments(ps: &PointSet, rho: &[f64]) -> f64 {
    let d = ps.d();
    let mut second = 0.0;
    let mut mean = vec![0.0f64; d];
    for p in 0..ps.n() {
        let row = ps.row(p);
        let mut norm2 = 0.0;
        for (k, &v) in row.iter().enumerate() {
            let v = v as f64;
            norm2 += v * v;
            mean[k] += rho[p] * v;
        }
        second += rho[p] * norm2;
    }
    let mean_norm2: f64 = mean.iter().map(|&v| v * v).sum();
    2.0 * second - 2.0 * mean_norm2
}

/// Cutover between the O(n²) β definition and the moment identity.
const BETA_EXACT_LIMIT: usize = 2000;

/// Builds the normalized matrices and the α, β statistics for a dataset and
/// its k-NN graph.
pub fn build_context(ps: &PointSet, g: &KnnGraph) -> Result<SpectralContext> {
    let n = ps.n();
    if g.n() != n {
        return Err(Error::InvalidParam(format!(
            "graph covers {} points, dataset has {}",
            g.n(),
            n
        )));
    }
    let k = g.k();
    let scale = 1.0 / (2.0 * k as f64 * n as f64);
    let und = g.undirected();
    let rho: Vec<f64> = (0..n)
        .map(|p| und.weighted_degree(p) as f64 * scale)
        .collect();

    // α over the directed neighbor lists: uniform point, uniform neighbor
    let mut alpha = 0.0;
    for p in 0..n {
        for &q in g.list(p) {
            alpha += dist_sq(ps.row(p), ps.row(q as usize));
        }
    }
    alpha /= (n * k) as f64;

    let beta = if n <= BETA_EXACT_LIMIT {
        beta_quadratic(ps, &rho)
    } else {
        beta_moments(ps, &rho)
    };
    Ok(SpectralContext {
        und,
        scale,
        rho,
        alpha,
        beta,
    })
}

/// The per-coordinate Rayleigh quotient pieces for axis i, after centering
/// the coordinate against ρ: (numerator, denominator), both in the ordered
/// double-sum convention so that Σ_i num_i = α and Σ_i den_i = β.
fn coordinate_quotient(ps: &PointSet, ctx: &SpectralContext, i: usize) -> (f64, f64) {
    let n = ctx.n();
    let c: f64 = (0..n)
        .map(|p| ctx.rho[p] * ps.row(p)[i] as f64)
        .sum();
    let mut num = 0.0;
    for p in 0..n {
        let yp = ps.row(p)[i] as f64;
        for (q, w) in ctx.und.neighbors(p) {
            let dyi = yp - ps.row(q as usize)[i] as f64;
            num += w as f64 * ctx.scale * dyi * dyi;
        }
    }
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for p in 0..n {
        let y = ps.row(p)[i] as f64 - c;
        m1 += ctx.rho[p] * y;
        m2 += ctx.rho[p] * y * y;
    }
    (num, 2.0 * (m2 - m1 * m1))
}

/// The axis whose quotient num_i/den_i is smallest; that minimum is at most
/// α/β (asserted). Axes with no spread are skipped.
pub fn best_coordinate(ps: &PointSet, ctx: &SpectralContext) -> Result<(usize, f64)> {
    if ctx.beta <= 0.0 {
        return Err(Error::InvalidParam(
            "degenerate dataset: all pairwise distances are zero".into(),
        ));
    }
    let n = ctx.n();
    let mut best: Option<(usize, f64)> = None;
    for i in 0..ps.d() {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for p in 0..n {
            let v = ps.row(p)[i];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            continue; // constant coordinate
        }
        let (num, den) = coordinate_quotient(ps, ctx, i);
        if den <= 0.0 {
            continue;
        }
        let q = num / den;
        if best.is_none_or(|(_, bq)| q < bq) {
            best = Some((i, q));
        }
    }
    let (i, q) = best.ok_or_else(|| {
        Error::InvalidParam("all coordinates are degenerate (no spread on any axis)".into())
    })?;
    assert!(
        q <= ctx.alpha / ctx.beta + SPECTRAL_TOL,
        "quotient {} exceeds alpha/beta = {}",
        q,
        ctx.alpha / ctx.beta
    );
    Ok((i, q))
}

/// One certified axis-aligned cut.
#[derive(Debug, Clone)]
pub struct SweepCutResult {
    /// Axis index of the separating hyperplane.
    pub coordinate: usize,
    /// Threshold in centered coordinates; the raw-space hyperplane is
    /// x[coordinate] = threshold + offset.
    pub threshold: f64,
    /// Centering scalar c = yᵗρ.
    pub offset: f64,
    /// Cut mass across the split over the smaller side's ρ-mass.
    pub lhs: f64,
    /// sqrt(2α/β).
    pub bound: f64,
    pub p1: Vec<u32>,
    pub p2: Vec<u32>,
}

/// Sweeps every threshold between consecutive distinct values of coordinate
/// `i` (after ρ-centering) and returns the cut with the smallest normalized
/// cut mass. The guarantee lhs ≤ sqrt(2α/β) is asserted, not assumed.
pub fn sweep_cut(ps: &PointSet, ctx: &SpectralContext, i: usize) -> Result<SweepCutResult> {
    if ctx.beta <= 0.0 {
        return Err(Error::InvalidParam(
            "degenerate dataset: all pairwise distances are zero".into(),
        ));
    }
    let n = ctx.n();
    let c: f64 = (0..n)
        .map(|p| ctx.rho[p] * ps.row(p)[i] as f64)
        .sum();
    let y: Vec<f64> = (0..n).map(|p| ps.row(p)[i] as f64 - c).collect();
    debug_assert!(
        y.iter().zip(&ctx.rho).map(|(&yp, &r)| yp * r).sum::<f64>().abs() <= SPECTRAL_TOL,
        "centering failed: y not orthogonal to rho"
    );
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        y[a as usize]
            .partial_cmp(&y[b as usize])
            .unwrap()
            .then(a.cmp(&b))
    });

    let rho_total: f64 = ctx.rho.iter().sum();
    let mut in_left = vec![false; n];
    let mut cross = 0.0;
    let mut rho_left = 0.0;
    let mut best: Option<(f64, f64, usize)> = None; // (lhs, threshold, prefix len)
    for t in 0..n - 1 {
        let v = order[t] as usize;
        for (q, w) in ctx.und.neighbors(v) {
            let aw = w as f64 * ctx.scale;
            if in_left[q as usize] {
                cross -= aw;
            } else {
                cross += aw;
            }
        }
        in_left[v] = true;
        rho_left += ctx.rho[v];
        let (yv, ynext) = (y[v], y[order[t + 1] as usize]);
        if yv == ynext {
            continue; // threshold must fall between distinct values
        }
        let lhs = cross.max(0.0) / rho_left.min(rho_total - rho_left);
        if best.is_none_or(|(bl, _, _)| lhs < bl) {
            best = Some((lhs, (yv + ynext) / 2.0, t + 1));
        }
    }
    let (lhs, threshold, prefix) = best.ok_or_else(|| {
        Error::InvalidParam(format!("coordinate {} has a single distinct value", i))
    })?;
    let bound = ctx.bound();
    assert!(
        lhs <= bound + SPECTRAL_TOL,
        "cut guarantee violated: lhs {} > bound {}",
        lhs,
        bound
    );
    let mut p1: Vec<u32> = order[..prefix].to_vec();
    let mut p2: Vec<u32> = order[prefix..].to_vec();
    p1.sort_unstable();
    p2.sort_unstable();
    Ok(SweepCutResult {
        coordinate: i,
        threshold,
        offset: c,
        lhs,
        bound,
        p1,
        p2,
    })
}

/// End-to-end certification: pick the best axis, sweep it, and return the
/// certified cut. Errors on datasets where all points coincide (β = 0).
pub fn verify_theorem(ps: &PointSet, g: &KnnGraph) -> Result<SweepCutResult> {
    let ctx = build_context(ps, g)?;
    let (i, _) = best_coordinate(ps, &ctx)?;
    sweep_cut(ps, &ctx, i)
}
