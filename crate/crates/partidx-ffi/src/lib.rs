//! C ABI for the partidx library.
//!
//! Every object crossing the boundary is an opaque handle created and
//! destroyed by this library. Fallible calls return a status code; on any
//! nonzero return the thread-local message from [`partidx_last_error`]
//! describes what went wrong. No call unwinds across the boundary.
//!
//! The generated header lands in `include/partidx.h` when the crate builds.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use partidx::io::{load_points, sniff_format};
use partidx::{
    build_index, cut_stats, normalize_rows, partition_graph, rerank, AnyIndex, BuildParams, Error,
    Eta, KnnGraph, LevelKind, LevelSpec, Metric, MlpConfig, Partition, PointSet,
};

/// Success.
pub const PARTIDX_OK: c_int = 0;
/// Internal error (including caught panics).
pub const PARTIDX_ERR: c_int = 1;
/// Invalid argument: null handle, bad parameter, dimension mismatch.
pub const PARTIDX_EINVAL: c_int = 2;
/// File system error (missing file, permissions, short write).
pub const PARTIDX_EIO: c_int = 3;
/// Malformed artifact: bad magic, truncated payload, inconsistent header.
pub const PARTIDX_EFORMAT: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let clean: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

fn code_of(e: &Error) -> c_int {
    if e.is_format_violation() {
        return PARTIDX_EFORMAT;
    }
    match e {
        Error::Io(_) => PARTIDX_EIO,
        Error::InvalidParam(_) | Error::DimMismatch { .. } | Error::InfeasibleBalance { .. } => {
            PARTIDX_EINVAL
        }
        _ => PARTIDX_ERR,
    }
}

fn fail(e: Error) -> c_int {
    let code = code_of(&e);
    set_error(e.to_string());
    code
}

fn einval(msg: &str) -> c_int {
    set_error(msg.to_string());
    PARTIDX_EINVAL
}

/// Runs a body that returns a status code, converting panics into
/// PARTIDX_ERR instead of unwinding into the caller.
fn guarded(body: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {}", msg));
            PARTIDX_ERR
        }
    }
}

/// # Safety
/// `path` must be a NUL-terminated string.
unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, c_int> {
    if path.is_null() {
        return Err(einval("path is null"));
    }
    match CStr::from_ptr(path).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(einval("path is not valid UTF-8")),
    }
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> c_int {
    if out.is_null() {
        return einval("out pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    PARTIDX_OK
}

/// Message for the most recent failure on this thread. Empty string if no
/// call has failed yet. The pointer stays valid until the next failing call
/// on the same thread.
#[no_mangle]
pub extern "C" fn partidx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn partidx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------- points

/// An immutable dataset of n d-dimensional f32 points.
pub struct PartidxPoints(PointSet);

/// Copies `n * d` floats into a new dataset. `metric` is 0 for Euclidean,
/// 1 for cosine (rows must already be unit length).
///
/// # Safety
/// `data` must point to `n * d` readable floats; `out` must be a valid
/// location to store the handle.
#[no_mangle]
pub unsafe extern "C" fn partidx_points_create(
    data: *const f32,
    n: usize,
    d: usize,
    metric: c_int,
    out: *mut *mut PartidxPoints,
) -> c_int {
    guarded(|| {
        if data.is_null() {
            return einval("data is null");
        }
        let metric = match metric {
            0 => Metric::Euclidean,
            1 => Metric::Cosine,
            _ => return einval("metric must be 0 (euclidean) or 1 (cosine)"),
        };
        let Some(len) = n.checked_mul(d) else {
            return einval("n * d overflows");
        };
        let vec = std::slice::from_raw_parts(data, len).to_vec();
        match PointSet::new(vec, d, metric) {
            Ok(ps) => write_out(out, PartidxPoints(ps)),
            Err(e) => fail(e),
        }
    })
}

/// Loads points from a file, accepting both .fvecs and the tagged raw
/// format (sniffed from the extension). With `normalize` nonzero, rows are
/// scaled to unit length and the set is tagged cosine.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_points_load(
    path: *const c_char,
    normalize: c_int,
    out: *mut *mut PartidxPoints,
) -> c_int {
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(c) => return c,
        };
        let loaded = load_points(&path, sniff_format(&path))
            .and_then(|ps| if normalize != 0 { normalize_rows(&ps) } else { Ok(ps) });
        match loaded {
            Ok(ps) => write_out(out, PartidxPoints(ps)),
            Err(e) => fail(e),
        }
    })
}

/// Number of points; 0 for a null handle.
#[no_mangle]
pub extern "C" fn partidx_points_n(ps: *const PartidxPoints) -> usize {
    unsafe { ps.as_ref().map_or(0, |p| p.0.n()) }
}

/// Point dimensionality; 0 for a null handle.
#[no_mangle]
pub extern "C" fn partidx_points_dim(ps: *const PartidxPoints) -> usize {
    unsafe { ps.as_ref().map_or(0, |p| p.0.d()) }
}

/// # Safety
/// `ps` must come from this library and not have been freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn partidx_points_free(ps: *mut PartidxPoints) {
    if !ps.is_null() {
        drop(Box::from_raw(ps));
    }
}

// ----------------------------------------------------------------- graph

/// An exact k-nearest-neighbor graph over a dataset.
pub struct PartidxGraph(KnnGraph);

/// Builds the exact k-NN graph (ties broken by ascending index).
///
/// # Safety
/// `ps` must be a live points handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_graph_build(
    ps: *const PartidxPoints,
    k: usize,
    out: *mut *mut PartidxGraph,
) -> c_int {
    guarded(|| {
        let Some(ps) = ps.as_ref() else {
            return einval("points handle is null");
        };
        match partidx::build_knn_graph(&ps.0, k) {
            Ok(g) => write_out(out, PartidxGraph(g)),
            Err(e) => fail(e),
        }
    })
}

/// Number of points in the graph; 0 for a null handle.
#[no_mangle]
pub extern "C" fn partidx_graph_n(g: *const PartidxGraph) -> usize {
    unsafe { g.as_ref().map_or(0, |g| g.0.n()) }
}

/// Neighbors per point; 0 for a null handle.
#[no_mangle]
pub extern "C" fn partidx_graph_k(g: *const PartidxGraph) -> usize {
    unsafe { g.as_ref().map_or(0, |g| g.0.k()) }
}

/// Borrows point p's neighbor list. The pointer is valid while the graph
/// handle lives.
///
/// # Safety
/// `g` must be live; `out_ids` and `out_len` must be valid locations.
#[no_mangle]
pub unsafe extern "C" fn partidx_graph_neighbors(
    g: *const PartidxGraph,
    p: usize,
    out_ids: *mut *const u32,
    out_len: *mut usize,
) -> c_int {
    guarded(|| {
        let Some(g) = g.as_ref() else {
            return einval("graph handle is null");
        };
        if p >= g.0.n() {
            return einval("point index out of range");
        }
        if out_ids.is_null() || out_len.is_null() {
            return einval("out pointer is null");
        }
        let list = g.0.list(p);
        *out_ids = list.as_ptr();
        *out_len = list.len();
        PARTIDX_OK
    })
}

/// # Safety
/// `g` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn partidx_graph_save(g: *const PartidxGraph, path: *const c_char) -> c_int {
    guarded(|| {
        let Some(g) = g.as_ref() else {
            return einval("graph handle is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(c) => return c,
        };
        match g.0.save(&path) {
            Ok(()) => PARTIDX_OK,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_graph_load(
    path: *const c_char,
    out: *mut *mut PartidxGraph,
) -> c_int {
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(c) => return c,
        };
        match KnnGraph::load(&path) {
            Ok(g) => write_out(out, PartidxGraph(g)),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// Handle from this library, not yet freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn partidx_graph_free(g: *mut PartidxGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

// ------------------------------------------------------------- partition

/// A balanced assignment of points to bins.
pub struct PartidxPartition(Partition);

/// Cuts a k-NN graph into `bins` bins, each holding at most
/// floor((1 + eta_num/eta_den) * n / bins) points.
///
/// # Safety
/// `g` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_partition_build(
    g: *const PartidxGraph,
    bins: usize,
    eta_num: u64,
    eta_den: u64,
    seed: u64,
    refine_iters: usize,
    out: *mut *mut PartidxPartition,
) -> c_int {
    guarded(|| {
        let Some(g) = g.as_ref() else {
            return einval("graph handle is null");
        };
        let eta = match Eta::new(eta_num, eta_den) {
            Ok(e) => e,
            Err(e) => return fail(e),
        };
        match partition_graph(&g.0, bins, eta, seed, refine_iters) {
            Ok(p) => write_out(out, PartidxPartition(p)),
            Err(e) => fail(e),
        }
    })
}

/// Number of bins; 0 for a null handle.
#[no_mangle]
pub extern "C" fn partidx_partition_bins(p: *const PartidxPartition) -> usize {
    unsafe { p.as_ref().map_or(0, |p| p.0.m()) }
}

/// Borrows the per-point bin labels (length = number of points).
///
/// # Safety
/// `p` must be live; `out_labels` and `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_partition_labels(
    p: *const PartidxPartition,
    out_labels: *mut *const u32,
    out_len: *mut usize,
) -> c_int {
    guarded(|| {
        let Some(p) = p.as_ref() else {
            return einval("partition handle is null");
        };
        if out_labels.is_null() || out_len.is_null() {
            return einval("out pointer is null");
        }
        let labels = p.0.labels();
        *out_labels = labels.as_ptr();
        *out_len = labels.len();
        PARTIDX_OK
    })
}

/// Fraction of directed graph edges crossing bins: the exact complement of
/// the recall this partition gives when points route by their own label.
///
/// # Safety
/// `g` and `p` must be live and refer to the same dataset; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_partition_cut_fraction(
    g: *const PartidxGraph,
    p: *const PartidxPartition,
    out: *mut f64,
) -> c_int {
    guarded(|| {
        let (Some(g), Some(p)) = (g.as_ref(), p.as_ref()) else {
            return einval("graph or partition handle is null");
        };
        if out.is_null() {
            return einval("out pointer is null");
        }
        if p.0.labels().len() != g.0.n() {
            return einval("partition and graph sizes differ");
        }
        *out = cut_stats(&g.0, &p.0).cut_fraction_directed;
        PARTIDX_OK
    })
}

/// # Safety
/// `p` live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn partidx_partition_save(
    p: *const PartidxPartition,
    path: *const c_char,
) -> c_int {
    guarded(|| {
        let Some(p) = p.as_ref() else {
            return einval("partition handle is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(c) => return c,
        };
        match p.0.save(&path) {
            Ok(()) => PARTIDX_OK,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_partition_load(
    path: *const c_char,
    out: *mut *mut PartidxPartition,
) -> c_int {
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(c) => return c,
        };
        match Partition::load(&path) {
            Ok(p) => write_out(out, PartidxPartition(p)),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// Handle from this library, not yet freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn partidx_partition_free(p: *mut PartidxPartition) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ----------------------------------------------------------------- index

/// A queryable nearest-neighbor index.
pub struct PartidxIndex(AnyIndex);

/// Build options for a single-level learned index. Get defaults from
/// [`partidx_build_options_default`] and override fields as needed.
#[repr(C)]
pub struct PartidxBuildOptions {
    /// Graph degree used while building.
    pub k: usize,
    /// Number of bins.
    pub bins: usize,
    /// Soft-label support size (1 = hard labels).
    pub soft_labels: usize,
    /// Balance slack numerator / denominator (1/20 = 5% slack).
    pub eta_num: u64,
    pub eta_den: u64,
    pub seed: u64,
    /// Local-search iteration cap during partitioning.
    pub refine_iters: usize,
    /// 1 trains the MLP router, 0 the linear softmax router.
    pub use_mlp: c_int,
    /// Residual blocks in the MLP router.
    pub blocks: usize,
    /// Hidden width of the MLP router.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam base learning rate.
    pub base_lr: f64,
}

/// The library's default build configuration.
#[no_mangle]
pub extern "C" fn partidx_build_options_default() -> PartidxBuildOptions {
    let p = BuildParams::default();
    let cfg = MlpConfig::top_level();
    PartidxBuildOptions {
        k: p.k,
        bins: 16,
        soft_labels: p.s,
        eta_num: p.eta.num(),
        eta_den: p.eta.den(),
        seed: p.seed,
        refine_iters: p.refine_iters,
        use_mlp: 1,
        blocks: cfg.blocks,
        hidden: cfg.hidden,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        base_lr: cfg.base_lr,
    }
}

/// Builds a single-level learned index over the dataset. Multi-level trees
/// are available through the Rust API and the command-line tool.
///
/// # Safety
/// `ps` must be live; `opts` must point to a valid options struct; `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_index_build(
    ps: *const PartidxPoints,
    opts: *const PartidxBuildOptions,
    out: *mut *mut PartidxIndex,
) -> c_int {
    guarded(|| {
        let Some(ps) = ps.as_ref() else {
            return einval("points handle is null");
        };
        let Some(o) = opts.as_ref() else {
            return einval("options pointer is null");
        };
        let eta = match Eta::new(o.eta_num, o.eta_den) {
            Ok(e) => e,
            Err(e) => return fail(e),
        };
        let kind = if o.use_mlp != 0 { LevelKind::Mlp } else { LevelKind::Regression };
        let cfg = MlpConfig {
            blocks: o.blocks,
            hidden: o.hidden,
            epochs: o.epochs,
            batch_size: o.batch_size,
            base_lr: o.base_lr,
            ..MlpConfig::top_level()
        };
        let params = BuildParams {
            k: o.k,
            levels: vec![LevelSpec { m: o.bins, kind }],
            eta,
            s: o.soft_labels,
            seed: o.seed,
            refine_iters: o.refine_iters,
            top_cfg: cfg,
            lower_cfg: MlpConfig::second_level(),
        };
        match build_index(&ps.0, &params) {
            Ok(t) => write_out(out, PartidxIndex(AnyIndex::Tree(t))),
            Err(e) => fail(e),
        }
    })
}

/// Number of indexed points; 0 for a null handle.
#[no_mangle]
pub extern "C" fn partidx_index_n(idx: *const PartidxIndex) -> usize {
    unsafe { idx.as_ref().map_or(0, |i| i.0.n()) }
}

/// Answers one query: probes the index, re-ranks the candidates against the
/// dataset, and writes up to `k` neighbor ids into `out_ids` (best first).
/// `*out_found` receives how many were written — fewer than `k` only when
/// the probed bins held fewer than `k` points.
///
/// `probes` holds one entry per index level: how many bins to descend at
/// that level (a single-level index takes one entry).
///
/// # Safety
/// `idx` and `ps` must be live handles over the same dataset; `q` must point
/// to `q_len` floats; `probes` to `n_probes` entries; `out_ids` must have
/// room for `k` ids; `out_found` must be valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_index_query(
    idx: *const PartidxIndex,
    ps: *const PartidxPoints,
    q: *const f32,
    q_len: usize,
    k: usize,
    probes: *const usize,
    n_probes: usize,
    out_ids: *mut u32,
    out_found: *mut usize,
) -> c_int {
    guarded(|| {
        let (Some(idx), Some(ps)) = (idx.as_ref(), ps.as_ref()) else {
            return einval("index or points handle is null");
        };
        if q.is_null() || probes.is_null() || out_ids.is_null() || out_found.is_null() {
            return einval("query argument is null");
        }
        if k == 0 {
            return einval("k must be >= 1");
        }
        let query = std::slice::from_raw_parts(q, q_len);
        let probes = std::slice::from_raw_parts(probes, n_probes);
        let res = match idx.0.probe(query, probes) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let ids = rerank(&ps.0, query, &res.candidates, k);
        for (i, &id) in ids.iter().enumerate() {
            *out_ids.add(i) = id;
        }
        *out_found = ids.len();
        PARTIDX_OK
    })
}

/// # Safety
/// `idx` live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn partidx_index_save(idx: *const PartidxIndex, path: *const c_char) -> c_int {
    guarded(|| {
        let Some(idx) = idx.as_ref() else {
            return einval("index handle is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(c) => return c,
        };
        match idx.0.save(&path) {
            Ok(()) => PARTIDX_OK,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `path` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn partidx_index_load(
    path: *const c_char,
    out: *mut *mut PartidxIndex,
) -> c_int {
    guarded(|| {
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(c) => return c,
        };
        match AnyIndex::load(&path) {
            Ok(i) => write_out(out, PartidxIndex(i)),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// Handle from this library, not yet freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn partidx_index_free(idx: *mut PartidxIndex) {
    if !idx.is_null() {
        drop(Box::from_raw(idx));
    }
}
