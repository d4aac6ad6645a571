//! File formats: fvecs, ivecs, raw_f32 point files, and atomic writes.
//!
//! All integers and floats are little-endian. Files are slurped whole and
//! parsed from a cursor; the artifacts in this pipeline are small enough
//! that streaming buys nothing.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::dataset::{GroundTruth, Metric, PointSet};
use crate::error::{Error, Result};

/// Magic prefix of raw_f32 point files.
pub const POINTS_MAGIC: &[u8; 4] = b"PHV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFormat {
    Fvecs,
    RawF32,
}

/// Writes `bytes` to `path` via a temp file in the same directory plus an
/// atomic rename, so an interrupted run never leaves a partial artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Byte-slice cursor with path-aware truncation errors.
pub(crate) struct Cur<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cur<'a> {
    pub fn new(buf: &'a [u8], path: &Path) -> Cur<'a> {
        Cur {
            buf,
            pos: 0,
            path: path.display().to_string(),
        }
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn is_eof(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.clone(),
                context: format!(
                    "{}: wanted {} bytes, {} left",
                    context,
                    n,
                    self.buf.len() - self.pos
                ),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32_le(&mut self, context: &str) -> Result<u32> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn i32_le(&mut self, context: &str) -> Result<i32> {
        let b = self.take(4, context)?;
        Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn f32_vec(&mut self, count: usize, context: &str) -> Result<Vec<f32>> {
        let b = self.take(count * 4, context)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn expect_magic(&mut self, magic: &'static [u8; 4], name: &'static str) -> Result<()> {
        let got = self.take(4, "magic").map_err(|_| Error::BadMagic {
            path: self.path.clone(),
            want: name,
        })?;
        if got != magic {
            return Err(Error::BadMagic {
                path: self.path.clone(),
                want: name,
            });
        }
        Ok(())
    }
}

/// Parses an xvecs-layout file: records of `[i32 count][count × 4-byte payload]`.
/// Returns the flat payload bytes and the common per-record count.
fn parse_xvecs<'a>(buf: &'a [u8], path: &Path) -> Result<(Vec<&'a [u8]>, usize)> {
    let mut cur = Cur::new(buf, path);
    let mut records = Vec::new();
    let mut want: Option<usize> = None;
    while !cur.is_eof() {
        let record = records.len();
        let raw_d = cur.i32_le("record header")?;
        if raw_d <= 0 {
            return Err(Error::BadHeader {
                path: cur.path().to_string(),
                what: format!("record {} declares non-positive dimension {}", record, raw_d),
            });
        }
        let d = raw_d as usize;
        match want {
            None => want = Some(d),
            Some(w) if w != d => {
                return Err(Error::InconsistentDim {
                    path: cur.path().to_string(),
                    record,
                    got: d as u64,
                    want: w as u64,
                });
            }
            Some(_) => {}
        }
        records.push(cur.take(d * 4, "record payload")?);
    }
    let d = want.ok_or_else(|| Error::BadHeader {
        path: path.display().to_string(),
        what: "empty file".into(),
    })?;
    Ok((records, d))
}

/// Loads an fvecs file into a flat row-major matrix.
pub fn load_fvecs(path: &Path) -> Result<(Vec<f32>, usize)> {
    let buf = fs::read(path)?;
    let (records, d) = parse_xvecs(&buf, path)?;
    let mut out = Vec::with_capacity(records.len() * d);
    for rec in records {
        out.extend(
            rec.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    Ok((out, d))
}

pub fn save_fvecs(path: &Path, data: &[f32], d: usize) -> Result<()> {
    assert!(d >= 1 && data.len() % d == 0);
    let n = data.len() / d;
    let mut bytes = Vec::with_capacity(n * (4 + d * 4));
    for row in data.chunks_exact(d) {
        bytes.extend_from_slice(&(d as i32).to_le_bytes());
        for &v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

/// Loads an ivecs file into a flat row-major matrix.
pub fn load_ivecs(path: &Path) -> Result<(Vec<i32>, usize)> {
    let buf = fs::read(path)?;
    let (records, d) = parse_xvecs(&buf, path)?;
    let mut out = Vec::with_capacity(records.len() * d);
    for rec in records {
        out.extend(
            rec.chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    Ok((out, d))
}

pub fn save_ivecs(path: &Path, data: &[i32], d: usize) -> Result<()> {
    assert!(d >= 1 && data.len() % d == 0);
    let n = data.len() / d;
    let mut bytes = Vec::with_capacity(n * (4 + d * 4));
    for row in data.chunks_exact(d) {
        bytes.extend_from_slice(&(d as i32).to_le_bytes());
        for &v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

/// Loads a raw_f32 point file: "PHV1", u32 n, d, metric, then n·d floats.
pub fn load_raw_points(path: &Path) -> Result<PointSet> {
    let buf = fs::read(path)?;
    let mut cur = Cur::new(&buf, path);
    cur.expect_magic(POINTS_MAGIC, "PHV1")?;
    let n = cur.u32_le("n")? as usize;
    let d = cur.u32_le("d")? as usize;
    let metric_tag = cur.u32_le("metric")?;
    let metric = Metric::from_tag(metric_tag).ok_or_else(|| Error::BadHeader {
        path: cur.path().to_string(),
        what: format!("unknown metric tag {}", metric_tag),
    })?;
    if n == 0 || d == 0 {
        return Err(Error::BadHeader {
            path: cur.path().to_string(),
            what: format!("empty shape n={} d={}", n, d),
        });
    }
    let data = cur.f32_vec(n * d, "point payload")?;
    if !cur.is_eof() {
        return Err(Error::BadHeader {
            path: cur.path().to_string(),
            what: "trailing bytes after payload".into(),
        });
    }
    PointSet::new(data, d, metric)
}

pub fn save_raw_points(path: &Path, ps: &PointSet) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + ps.data().len() * 4);
    bytes.extend_from_slice(POINTS_MAGIC);
    bytes.extend_from_slice(&(ps.n() as u32).to_le_bytes());
    bytes.extend_from_slice(&(ps.d() as u32).to_le_bytes());
    bytes.extend_from_slice(&ps.metric().tag().to_le_bytes());
    for &v in ps.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Loads a point file in the given format. fvecs carries no metric tag and is
/// read as Euclidean; apply [`crate::normalize_rows`] afterwards for cosine.
pub fn load_points(path: &Path, format: PointFormat) -> Result<PointSet> {
    match format {
        PointFormat::Fvecs => {
            let (data, d) = load_fvecs(path)?;
            PointSet::new(data, d, Metric::Euclidean)
        }
        PointFormat::RawF32 => load_raw_points(path),
    }
}

/// Infers the format from the file extension, defaulting to fvecs.
pub fn sniff_format(path: &Path) -> PointFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("phv") | Some("raw") => PointFormat::RawF32,
        _ => PointFormat::Fvecs,
    }
}

/// Loads ground truth from an ivecs file, validating against dataset size `n`.
pub fn load_ground_truth(path: &Path, n: usize) -> Result<GroundTruth> {
    let (data, k) = load_ivecs(path)?;
    let mut ids = Vec::with_capacity(data.len());
    for (i, &v) in data.iter().enumerate() {
        if v < 0 {
            return Err(Error::BadHeader {
                path: path.display().to_string(),
                what: format!("negative index {} at entry {}", v, i),
            });
        }
        ids.push(v as u32);
    }
    GroundTruth::new(ids, k, n)
}

pub fn save_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    let data: Vec<i32> = gt.ids().iter().map(|&v| v as i32).collect();
    save_ivecs(path, &data, gt.k())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn fvecs_round_trip_bit_exact() {
        let dir = tmpdir();
        let path = dir.path().join("pts.fvecs");
        let data = vec![1.0f32, 2.0, 3.0, 4.0, -0.0, f32::MIN_POSITIVE];
        save_fvecs(&path, &data, 2).unwrap();
        let (back, d) = load_fvecs(&path).unwrap();
        assert_eq!(d, 2);
        // bit-exact, including the sign of -0.0
        assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn fvecs_example_two_records() {
        let dir = tmpdir();
        let path = dir.path().join("two.fvecs");
        let mut bytes = Vec::new();
        for rec in [[1.0f32, 2.0], [3.0, 4.0]] {
            bytes.extend_from_slice(&2i32.to_le_bytes());
            for v in rec {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(&path, &bytes).unwrap();
        let ps = load_points(&path, PointFormat::Fvecs).unwrap();
        assert_eq!((ps.n(), ps.d()), (2, 2));
        assert_eq!(ps.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn fvecs_inconsistent_dimension() {
        let dir = tmpdir();
        let path = dir.path().join("bad.fvecs");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&2.0f32.to_le_bytes());
        bytes.extend_from_slice(&3i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 12]);
        std::fs::write(&path, &bytes).unwrap();
        match load_fvecs(&path) {
            Err(Error::InconsistentDim {
                record: 1,
                got: 3,
                want: 2,
                ..
            }) => {}
            other => panic!("expected InconsistentDim, got {:?}", other),
        }
    }

    #[test]
    fn fvecs_truncated_payload() {
        let dir = tmpdir();
        let path = dir.path().join("trunc.fvecs");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(&4i32.to_le_bytes()).unwrap();
        f.write_all(&1.0f32.to_le_bytes()).unwrap(); // 3 floats short
        drop(f);
        assert!(matches!(load_fvecs(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn raw_round_trip_and_errors() {
        let dir = tmpdir();
        let path = dir.path().join("pts.phv");
        let ps = PointSet::new(vec![0.5f32; 12], 4, Metric::Euclidean).unwrap();
        save_raw_points(&path, &ps).unwrap();
        let back = load_raw_points(&path).unwrap();
        assert_eq!((back.n(), back.d(), back.metric()), (3, 4, Metric::Euclidean));
        assert_eq!(back.data(), ps.data());

        // corrupt the magic
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_raw_points(&path),
            Err(Error::BadMagic { .. })
        ));

        // truncate the payload
        let mut bytes = Vec::new();
        bytes.extend_from_slice(POINTS_MAGIC);
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_raw_points(&path),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn raw_rejects_non_finite_payload() {
        let dir = tmpdir();
        let path = dir.path().join("nan.phv");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(POINTS_MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_raw_points(&path),
            Err(Error::NonFinite { row: 0, col: 0 })
        ));
    }

    #[test]
    fn ivecs_ground_truth_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("gt.ivecs");
        let gt = GroundTruth::new(vec![4, 0, 2, 1, 3, 0], 3, 5).unwrap();
        save_ground_truth(&path, &gt).unwrap();
        let back = load_ground_truth(&path, 5).unwrap();
        assert_eq!(back.ids(), gt.ids());
        assert_eq!(back.k(), 3);
        // validation against a smaller dataset fails
        assert!(load_ground_truth(&path, 4).is_err());
    }

    #[test]
    fn atomic_write_replaces_existing() {
        let dir = tmpdir();
        let path = dir.path().join("out.bin");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_fvecs(Path::new("/nonexistent/nope.fvecs")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
        assert!(!err.is_format_violation());
    }
}
