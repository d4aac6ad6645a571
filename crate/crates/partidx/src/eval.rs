//! Measurement harness: k-NN accuracy against candidate counts, averaged
//! and at the 0.95 quantile, emitted as CSV sweep tables.
//!
//! Accuracy is candidate-based — the fraction of a query's k true nearest
//! neighbors present among the candidates a probe returned — so re-ranking
//! cost never enters the numbers.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use crate::dataset::{GroundTruth, QuerySet};
use crate::error::{Error, Result};
use crate::index::AnyIndex;

/// One row of the sweep table.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub method: String,
    pub probes: Vec<usize>,
    pub knn_accuracy: f64,
    pub avg_candidates: f64,
    pub q95_candidates: u64,
    /// Informational only; zero unless timing was requested.
    pub mean_query_us: f64,
}

impl EvalRecord {
    /// Probe counts joined with '/' (multi-level trees), e.g. "2/4".
    pub fn probes_label(&self) -> String {
        self.probes
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join("/")
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Treat query i as dataset point i and drop it from its own ground
    /// truth before taking the top k.
    pub exclude_self: bool,
    /// Measure wall-clock per query. Off by default so CSV output is
    /// byte-reproducible.
    pub measure_time: bool,
}

/// Matched-neighbor count summed over queries: Σ_q |top-k(gt_q) ∩ cand_q|.
/// The integer numerator of knn_accuracy, exposed for exact identity checks.
pub fn knn_match_count(gt: &GroundTruth, candidates: &[Vec<u32>], k: usize) -> Result<u64> {
    knn_match_count_opt(gt, candidates, k, false)
}

fn knn_match_count_opt(
    gt: &GroundTruth,
    candidates: &[Vec<u32>],
    k: usize,
    exclude_self: bool,
) -> Result<u64> {
    if candidates.len() != gt.nq() {
        return Err(Error::InvalidParam(format!(
            "{} candidate lists for {} queries",
            candidates.len(),
            gt.nq()
        )));
    }
    if k == 0 || k > gt.k() {
        return Err(Error::InvalidParam(format!(
            "k = {} outside the ground truth depth {}",
            k,
            gt.k()
        )));
    }
    let mut total = 0u64;
    let mut cand_set = HashSet::new();
    for (q, cand) in candidates.iter().enumerate() {
        cand_set.clear();
        cand_set.extend(cand.iter().copied());
        let mut want = k;
        for &id in gt.list(q) {
            if exclude_self && id as usize == q {
                continue;
            }
            if want == 0 {
                break;
            }
            want -= 1;
            if cand_set.contains(&id) {
                total += 1;
            }
        }
        if want > 0 {
            return Err(Error::InvalidParam(format!(
                "query {}: ground truth too shallow for k = {} after self-exclusion",
                q, k
            )));
        }
    }
    Ok(total)
}

/// Mean over queries of |top-k ground truth ∩ candidates| / k.
pub fn knn_accuracy(gt: &GroundTruth, candidates: &[Vec<u32>], k: usize) -> Result<f64> {
    let total = knn_match_count(gt, candidates, k)?;
    Ok(total as f64 / (gt.nq() as u64 * k as u64) as f64)
}

/// Element at index ceil(0.95·len) − 1 of the ascending sort.
pub fn quantile_95(values: &[u64]) -> Result<u64> {
    quantile(values, 19, 20)
}

fn quantile(values: &[u64], num: usize, den: usize) -> Result<u64> {
    if values.is_empty() {
        return Err(Error::InvalidParam("quantile of an empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let idx = (num * values.len()).div_ceil(den) - 1;
    Ok(sorted[idx])
}

/// Runs every probe setting over the query set and tabulates one record per
/// setting, sorted by avg_candidates ascending. Asserts accuracy monotone in
/// probes for settings comparable component-wise, which candidate-set
/// monotonicity guarantees.
pub fn sweep(
    idx: &AnyIndex,
    method: &str,
    qs: &QuerySet,
    gt: &GroundTruth,
    k: usize,
    settings: &[Vec<usize>],
    opts: &SweepOptions,
) -> Result<Vec<EvalRecord>> {
    if gt.nq() != qs.n() {
        return Err(Error::InvalidParam(format!(
            "ground truth covers {} queries, query set has {}",
            gt.nq(),
            qs.n()
        )));
    }
    if settings.is_empty() {
        return Err(Error::InvalidParam("no probe settings given".into()));
    }
    let nq = qs.n();
    // (matches, counts, mean_us) per setting
    let mut per: Vec<(u64, Vec<u64>, f64)> = Vec::with_capacity(settings.len());
    for setting in settings {
        let mut lists: Vec<Vec<u32>> = Vec::with_capacity(nq);
        let mut spent = 0.0f64;
        for q in 0..nq {
            let started = opts.measure_time.then(Instant::now);
            let res = idx.probe(qs.row(q), setting).map_err(|e| {
                Error::InvalidParam(format!("probe setting {:?}: {}", setting, e))
            })?;
            if let Some(t) = started {
                spent += t.elapsed().as_secs_f64() * 1e6;
            }
            lists.push(res.candidates);
        }
        let matches = knn_match_count_opt(gt, &lists, k, opts.exclude_self)?;
        let counts: Vec<u64> = lists.iter().map(|l| l.len() as u64).collect();
        per.push((matches, counts, spent / nq as f64));
    }
    // candidate-set monotonicity: a component-wise larger setting cannot
    // match fewer true neighbors
    for i in 0..settings.len() {
        for j in 0..settings.len() {
            let (a, b) = (&settings[i], &settings[j]);
            if a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x <= y) {
                assert!(
                    per[i].0 <= per[j].0,
                    "accuracy not monotone: {:?} matched {}, {:?} matched {}",
                    a,
                    per[i].0,
                    b,
                    per[j].0
                );
            }
        }
    }
    let denom = (nq as u64 * k as u64) as f64;
    let mut records: Vec<EvalRecord> = settings
        .iter()
        .zip(per)
        .map(|(setting, (matches, counts, mean_us))| {
            let acc = matches as f64 / denom;
            let avg = counts.iter().sum::<u64>() as f64 / nq as f64;
            let q95 = quantile_95(&counts).expect("nq >= 1");
            assert!((0.0..=1.0).contains(&acc));
            assert!(q95 >= quantile(&counts, 1, 2).expect("nq >= 1"));
            Ok(EvalRecord {
                method: method.to_string(),
                probes: setting.clone(),
                knn_accuracy: acc,
                avg_candidates: avg,
                q95_candidates: q95,
                mean_query_us: mean_us,
            })
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| a.avg_candidates.partial_cmp(&b.avg_candidates).unwrap());
    Ok(records)
}

pub const CSV_HEADER: &str = "method,probes,knn_accuracy,avg_candidates,q95_candidates,mean_query_us";

/// UTF-8, LF line endings, header row first.
pub fn write_csv<W: Write>(w: &mut W, records: &[EvalRecord]) -> std::io::Result<()> {
    w.write_all(CSV_HEADER.as_bytes())?;
    w.write_all(b"\n")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.method,
            r.probes_label(),
            r.knn_accuracy,
            r.avg_candidates,
            r.q95_candidates,
            r.mean_query_us
        )?;
    }
    Ok(())
}
