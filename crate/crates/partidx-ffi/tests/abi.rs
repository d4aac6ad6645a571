//! Exercises the C ABI end to end: handle lifecycle, status codes, error
//! messages, and agreement with the underlying Rust API.

use std::ffi::{CStr, CString};
use std::ptr;

use partidx_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(partidx_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn c_path(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

/// Two well-separated 2-d blobs, 30 points each.
fn blob_data() -> Vec<f32> {
    let mut data = Vec::new();
    for i in 0..60 {
        let (cx, cy) = if i % 2 == 0 { (10.0, 10.0) } else { (-10.0, -10.0) };
        // deterministic jitter, no RNG needed at this scale
        let dx = (i as f32 * 0.37).sin();
        let dy = (i as f32 * 0.73).cos();
        data.push(cx + dx);
        data.push(cy + dy);
    }
    data
}

#[test]
fn full_pipeline_through_the_abi() {
    let data = blob_data();
    let tmp = tempfile::tempdir().unwrap();
    unsafe {
        let mut ps: *mut PartidxPoints = ptr::null_mut();
        assert_eq!(partidx_points_create(data.as_ptr(), 60, 2, 0, &mut ps), PARTIDX_OK);
        assert_eq!(partidx_points_n(ps), 60);
        assert_eq!(partidx_points_dim(ps), 2);

        let mut g: *mut PartidxGraph = ptr::null_mut();
        assert_eq!(partidx_graph_build(ps, 4, &mut g), PARTIDX_OK);
        assert_eq!(partidx_graph_n(g), 60);
        assert_eq!(partidx_graph_k(g), 4);

        // neighbor lists match the Rust API bit for bit
        let rust_ps = partidx::PointSet::new(data.clone(), 2, partidx::Metric::Euclidean).unwrap();
        let rust_g = partidx::build_knn_graph(&rust_ps, 4).unwrap();
        for p in 0..60 {
            let mut ids: *const u32 = ptr::null();
            let mut len = 0usize;
            assert_eq!(partidx_graph_neighbors(g, p, &mut ids, &mut len), PARTIDX_OK);
            assert_eq!(std::slice::from_raw_parts(ids, len), rust_g.list(p));
        }

        // partition: two blobs cut cleanly in two
        let mut part: *mut PartidxPartition = ptr::null_mut();
        assert_eq!(partidx_partition_build(g, 2, 0, 1, 42, 100, &mut part), PARTIDX_OK);
        assert_eq!(partidx_partition_bins(part), 2);
        let mut labels: *const u32 = ptr::null();
        let mut len = 0usize;
        assert_eq!(partidx_partition_labels(part, &mut labels, &mut len), PARTIDX_OK);
        assert_eq!(len, 60);
        let labels = std::slice::from_raw_parts(labels, len);
        for i in 0..60 {
            assert_eq!(labels[i] == labels[0], i % 2 == 0, "blobs must not be split");
        }
        let mut cut = f64::NAN;
        assert_eq!(partidx_partition_cut_fraction(g, part, &mut cut), PARTIDX_OK);
        assert_eq!(cut, 0.0, "separated blobs leave no cut edges");

        // round-trip every artifact through files
        let gp = c_path(&tmp.path().join("g.phg"));
        assert_eq!(partidx_graph_save(g, gp.as_ptr()), PARTIDX_OK);
        let mut g2: *mut PartidxGraph = ptr::null_mut();
        assert_eq!(partidx_graph_load(gp.as_ptr(), &mut g2), PARTIDX_OK);
        assert_eq!(partidx_graph_n(g2), 60);
        partidx_graph_free(g2);

        let pp = c_path(&tmp.path().join("p.php"));
        assert_eq!(partidx_partition_save(part, pp.as_ptr()), PARTIDX_OK);
        let mut part2: *mut PartidxPartition = ptr::null_mut();
        assert_eq!(partidx_partition_load(pp.as_ptr(), &mut part2), PARTIDX_OK);
        assert_eq!(partidx_partition_bins(part2), 2);
        partidx_partition_free(part2);

        // a small learned index answers queries correctly
        let mut opts = partidx_build_options_default();
        opts.k = 4;
        opts.bins = 2;
        opts.soft_labels = 3;
        opts.use_mlp = 0;
        opts.epochs = 60;
        opts.batch_size = 16;
        opts.base_lr = 0.05;
        let mut idx: *mut PartidxIndex = ptr::null_mut();
        assert_eq!(partidx_index_build(ps, &opts, &mut idx), PARTIDX_OK);
        assert_eq!(partidx_index_n(idx), 60);

        let q = [9.5f32, 10.5];
        let probes = [1usize];
        let mut ids = [u32::MAX; 5];
        let mut found = 0usize;
        assert_eq!(
            partidx_index_query(
                idx,
                ps,
                q.as_ptr(),
                2,
                5,
                probes.as_ptr(),
                1,
                ids.as_mut_ptr(),
                &mut found,
            ),
            PARTIDX_OK
        );
        assert_eq!(found, 5);
        for &id in &ids {
            assert_eq!(id % 2, 0, "all neighbors of (9.5, 10.5) sit in the first blob");
        }

        // persistence keeps answers identical
        let ip = c_path(&tmp.path().join("i.phi"));
        assert_eq!(partidx_index_save(idx, ip.as_ptr()), PARTIDX_OK);
        let mut idx2: *mut PartidxIndex = ptr::null_mut();
        assert_eq!(partidx_index_load(ip.as_ptr(), &mut idx2), PARTIDX_OK);
        let mut ids2 = [u32::MAX; 5];
        assert_eq!(
            partidx_index_query(
                idx2,
                ps,
                q.as_ptr(),
                2,
                5,
                probes.as_ptr(),
                1,
                ids2.as_mut_ptr(),
                &mut found,
            ),
            PARTIDX_OK
        );
        assert_eq!(ids, ids2);

        partidx_index_free(idx2);
        partidx_index_free(idx);
        partidx_partition_free(part);
        partidx_graph_free(g);
        partidx_points_free(ps);
    }
}

#[test]
fn status_codes_and_messages() {
    let tmp = tempfile::tempdir().unwrap();
    unsafe {
        // null arguments
        let mut ps: *mut PartidxPoints = ptr::null_mut();
        assert_eq!(
            partidx_points_create(ptr::null(), 4, 2, 0, &mut ps),
            PARTIDX_EINVAL
        );
        assert!(last_error().contains("null"), "got: {}", last_error());

        // bad metric code
        let data = [0.0f32; 8];
        assert_eq!(
            partidx_points_create(data.as_ptr(), 4, 2, 9, &mut ps),
            PARTIDX_EINVAL
        );

        // non-finite input is rejected by validation
        let bad = [f32::NAN; 4];
        assert_eq!(
            partidx_points_create(bad.as_ptr(), 2, 2, 0, &mut ps),
            PARTIDX_EFORMAT
        );

        // missing file
        let missing = c_path(&tmp.path().join("absent.phg"));
        let mut g: *mut PartidxGraph = ptr::null_mut();
        assert_eq!(partidx_graph_load(missing.as_ptr(), &mut g), PARTIDX_EIO);

        // malformed file
        let junk = tmp.path().join("junk.phg");
        std::fs::write(&junk, b"PHXZptrash").unwrap();
        let junk = c_path(&junk);
        assert_eq!(partidx_graph_load(junk.as_ptr(), &mut g), PARTIDX_EFORMAT);
        assert!(!last_error().is_empty());

        // infeasible balance: 5 points into 2 bins with zero slack
        let data = [0.0f32, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0];
        assert_eq!(partidx_points_create(data.as_ptr(), 5, 2, 0, &mut ps), PARTIDX_OK);
        assert_eq!(partidx_graph_build(ps, 2, &mut g), PARTIDX_OK);
        let mut part: *mut PartidxPartition = ptr::null_mut();
        assert_eq!(
            partidx_partition_build(g, 2, 0, 1, 42, 100, &mut part),
            PARTIDX_EINVAL
        );

        // querying with the wrong dimension
        let mut opts = partidx_build_options_default();
        opts.k = 2;
        opts.bins = 2;
        opts.soft_labels = 1;
        opts.use_mlp = 0;
        opts.epochs = 5;
        opts.batch_size = 5;
        opts.eta_num = 1;
        opts.eta_den = 1;
        let mut idx: *mut PartidxIndex = ptr::null_mut();
        assert_eq!(partidx_index_build(ps, &opts, &mut idx), PARTIDX_OK);
        let q = [0.0f32; 3];
        let probes = [1usize];
        let mut ids = [0u32; 2];
        let mut found = 0usize;
        assert_eq!(
            partidx_index_query(
                idx,
                ps,
                q.as_ptr(),
                3,
                2,
                probes.as_ptr(),
                1,
                ids.as_mut_ptr(),
                &mut found,
            ),
            PARTIDX_EINVAL
        );

        partidx_index_free(idx);
        partidx_graph_free(g);
        partidx_points_free(ps);

        // freeing null handles is a no-op
        partidx_points_free(ptr::null_mut());
        partidx_graph_free(ptr::null_mut());
        partidx_partition_free(ptr::null_mut());
        partidx_index_free(ptr::null_mut());
    }

    // version string is a readable semver
    let v = unsafe { CStr::from_ptr(partidx_version()) }.to_str().unwrap();
    assert!(v.split('.').count() >= 2);
}

#[test]
fn header_is_generated_and_current() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/partidx.h");
    let text = std::fs::read_to_string(&header).expect("header generated at build time");
    for symbol in [
        "partidx_last_error",
        "partidx_points_create",
        "partidx_graph_build",
        "partidx_partition_build",
        "partidx_index_query",
        "PartidxBuildOptions",
        "#define PARTIDX_EFORMAT 4",
    ] {
        assert!(text.contains(symbol), "header is missing {}", symbol);
    }
}
