//! Learned space partitions for nearest-neighbor search.
//!
//! The pipeline: build an exact k-NN graph over the dataset, cut it into
//! balanced parts with a multilevel graph partitioner, train a classifier to
//! extend the partition to unseen queries, then answer queries by probing the
//! top-ranked bins. Baseline routers (k-means, hyperplane trees, LSH) and a
//! numerical certifier for the spectral sparse-cut guarantee live alongside.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod index;
pub mod io;
pub mod knn;
pub mod learn;
pub mod partition;
pub mod spectral;

pub use baselines::{
    build_hyperplane_tree, kmeans_fit, kmeans_top_bins, lsh_partition, tree_route,
    HyperplaneTree, KMeansRouter, SplitRule,
};
pub use dataset::{distance_sq, normalize_rows, GroundTruth, Metric, PointSet, QuerySet};
pub use error::{Error, Result};
pub use eval::{
    knn_accuracy, knn_match_count, quantile_95, sweep, write_csv, EvalRecord, SweepOptions,
    CSV_HEADER,
};
pub use index::{
    build_hyperplane_index, build_index, build_kmeans_index, build_lsh_index, rerank, AnyIndex,
    BalanceRecord, BuildParams, HyperplaneIndex, KMeansIndex, KnnAnswer, LevelKind, LevelSpec,
    LshIndex, PartitionTree, QueryResult,
};
pub use knn::{build_knn_graph, brute_force_knn, KnnGraph};
pub use learn::{
    gradient_check, kl_loss, make_soft_labels, rank_bins, train, Classifier, ClassifierKind,
    MlpConfig, SoftLabelSet,
};
pub use partition::{cut_stats, partition_graph, CutStats, Eta, Partition};
pub use spectral::{
    best_coordinate, build_context, sweep_cut, verify_theorem, SpectralContext, SweepCutResult,
};
