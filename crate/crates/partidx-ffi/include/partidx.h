#ifndef PARTIDX_H
#define PARTIDX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define PARTIDX_OK 0

/**
 * Internal error (including caught panics).
 */
#define PARTIDX_ERR 1

/**
 * Invalid argument: null handle, bad parameter, dimension mismatch.
 */
#define PARTIDX_EINVAL 2

/**
 * File system error (missing file, permissions, short write).
 */
#define PARTIDX_EIO 3

/**
 * Malformed artifact: bad magic, truncated payload, inconsistent header.
 */
#define PARTIDX_EFORMAT 4

/**
 * An exact k-nearest-neighbor graph over a dataset.
 */
typedef struct PartidxGraph PartidxGraph;

/**
 * A queryable nearest-neighbor index.
 */
typedef struct PartidxIndex PartidxIndex;

/**
 * A balanced assignment of points to bins.
 */
typedef struct PartidxPartition PartidxPartition;

/**
 * An immutable dataset of n d-dimensional f32 points.
 */
typedef struct PartidxPoints PartidxPoints;

/**
 * Build options for a single-level learned index. Get defaults from
 * [`partidx_build_options_default`] and override fields as needed.
 */
typedef struct PartidxBuildOptions {
  /**
   * Graph degree used while building.
   */
  size_t k;
  /**
   * Number of bins.
   */
  size_t bins;
  /**
   * Soft-label support size (1 = hard labels).
   */
  size_t soft_labels;
  /**
   * Balance slack numerator / denominator (1/20 = 5% slack).
   */
  uint64_t eta_num;
  uint64_t eta_den;
  uint64_t seed;
  /**
   * Local-search iteration cap during partitioning.
   */
  size_t refine_iters;
  /**
   * 1 trains the MLP router, 0 the linear softmax router.
   */
  int use_mlp;
  /**
   * Residual blocks in the MLP router.
   */
  size_t blocks;
  /**
   * Hidden width of the MLP router.
   */
  size_t hidden;
  size_t epochs;
  size_t batch_size;
  /**
   * Adam base learning rate.
   */
  double base_lr;
} PartidxBuildOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread. Empty string if no
 * call has failed yet. The pointer stays valid until the next failing call
 * on the same thread.
 */
const char *partidx_last_error(void);

/**
 * Library version as a static string.
 */
const char *partidx_version(void);

/**
 * Copies `n * d` floats into a new dataset. `metric` is 0 for Euclidean,
 * 1 for cosine (rows must already be unit length).
 *
 * # Safety
 * `data` must point to `n * d` readable floats; `out` must be a valid
 * location to store the handle.
 */
int partidx_points_create(const float *data,
                          size_t n,
                          size_t d,
                          int metric,
                          struct PartidxPoints **out);

/**
 * Loads points from a file, accepting both .fvecs and the tagged raw
 * format (sniffed from the extension). With `normalize` nonzero, rows are
 * scaled to unit length and the set is tagged cosine.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
int partidx_points_load(const char *path, int normalize, struct PartidxPoints **out);

/**
 * Number of points; 0 for a null handle.
 */
size_t partidx_points_n(const struct PartidxPoints *ps);

/**
 * Point dimensionality; 0 for a null handle.
 */
size_t partidx_points_dim(const struct PartidxPoints *ps);

/**
 * # Safety
 * `ps` must come from this library and not have been freed; null is a no-op.
 */
void partidx_points_free(struct PartidxPoints *ps);

/**
 * Builds the exact k-NN graph (ties broken by ascending index).
 *
 * # Safety
 * `ps` must be a live points handle; `out` must be valid.
 */
int partidx_graph_build(const struct PartidxPoints *ps, size_t k, struct PartidxGraph **out);

/**
 * Number of points in the graph; 0 for a null handle.
 */
size_t partidx_graph_n(const struct PartidxGraph *g);

/**
 * Neighbors per point; 0 for a null handle.
 */
size_t partidx_graph_k(const struct PartidxGraph *g);

/**
 * Borrows point p's neighbor list. The pointer is valid while the graph
 * handle lives.
 *
 * # Safety
 * `g` must be live; `out_ids` and `out_len` must be valid locations.
 */
int partidx_graph_neighbors(const struct PartidxGraph *g,
                            size_t p,
                            const uint32_t **out_ids,
                            size_t *out_len);

/**
 * # Safety
 * `g` must be live; `path` NUL-terminated.
 */
int partidx_graph_save(const struct PartidxGraph *g, const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out` valid.
 */
int partidx_graph_load(const char *path, struct PartidxGraph **out);

/**
 * # Safety
 * Handle from this library, not yet freed; null is a no-op.
 */
void partidx_graph_free(struct PartidxGraph *g);

/**
 * Cuts a k-NN graph into `bins` bins, each holding at most
 * floor((1 + eta_num/eta_den) * n / bins) points.
 *
 * # Safety
 * `g` must be live; `out` must be valid.
 */
int partidx_partition_build(const struct PartidxGraph *g,
                            size_t bins,
                            uint64_t eta_num,
                            uint64_t eta_den,
                            uint64_t seed,
                            size_t refine_iters,
                            struct PartidxPartition **out);

/**
 * Number of bins; 0 for a null handle.
 */
size_t partidx_partition_bins(const struct PartidxPartition *p);

/**
 * Borrows the per-point bin labels (length = number of points).
 *
 * # Safety
 * `p` must be live; `out_labels` and `out_len` must be valid.
 */
int partidx_partition_labels(const struct PartidxPartition *p,
                             const uint32_t **out_labels,
                             size_t *out_len);

/**
 * Fraction of directed graph edges crossing bins: the exact complement of
 * the recall this partition gives when points route by their own label.
 *
 * # Safety
 * `g` and `p` must be live and refer to the same dataset; `out` valid.
 */
int partidx_partition_cut_fraction(const struct PartidxGraph *g,
                                   const struct PartidxPartition *p,
                                   double *out);

/**
 * # Safety
 * `p` live; `path` NUL-terminated.
 */
int partidx_partition_save(const struct PartidxPartition *p, const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out` valid.
 */
int partidx_partition_load(const char *path, struct PartidxPartition **out);

/**
 * # Safety
 * Handle from this library, not yet freed; null is a no-op.
 */
void partidx_partition_free(struct PartidxPartition *p);

/**
 * The library's default build configuration.
 */
struct PartidxBuildOptions partidx_build_options_default(void);

/**
 * Builds a single-level learned index over the dataset. Multi-level trees
 * are available through the Rust API and the command-line tool.
 *
 * # Safety
 * `ps` must be live; `opts` must point to a valid options struct; `out`
 * must be valid.
 */
int partidx_index_build(const struct PartidxPoints *ps,
                        const struct PartidxBuildOptions *opts,
                        struct PartidxIndex **out);

/**
 * Number of indexed points; 0 for a null handle.
 */
size_t partidx_index_n(const struct PartidxIndex *idx);

/**
 * Answers one query: probes the index, re-ranks the candidates against the
 * dataset, and writes up to `k` neighbor ids into `out_ids` (best first).
 * `*out_found` receives how many were written — fewer than `k` only when
 * the probed bins held fewer than `k` points.
 *
 * `probes` holds one entry per index level: how many bins to descend at
 * that level (a single-level index takes one entry).
 *
 * # Safety
 * `idx` and `ps` must be live handles over the same dataset; `q` must point
 * to `q_len` floats; `probes` to `n_probes` entries; `out_ids` must have
 * room for `k` ids; `out_found` must be valid.
 */
int partidx_index_query(const struct PartidxIndex *idx,
                        const struct PartidxPoints *ps,
                        const float *q,
                        size_t q_len,
                        size_t k,
                        const size_t *probes,
                        size_t n_probes,
                        uint32_t *out_ids,
                        size_t *out_found);

/**
 * # Safety
 * `idx` live; `path` NUL-terminated.
 */
int partidx_index_save(const struct PartidxIndex *idx, const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out` valid.
 */
int partidx_index_load(const char *path, struct PartidxIndex **out);

/**
 * # Safety
 * Handle from this library, not yet freed; null is a no-op.
 */
void partidx_index_free(struct PartidxIndex *idx);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARTIDX_H */
