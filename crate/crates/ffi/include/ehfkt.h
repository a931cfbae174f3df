#ifndef EHFKT_H
#define EHFKT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EhfStatus {
  EHF_STATUS_OK = 0,
  EHF_STATUS_NULL_POINTER = 1,
  EHF_STATUS_INVALID_ARGUMENT = 2,
  EHF_STATUS_FORMAT = 3,
  EHF_STATUS_IO = 4,
  EHF_STATUS_NUMERICAL = 5,
  EHF_STATUS_PANIC = 6,
} EhfStatus;

/**
 * Average-linkage dendrogram over cosine distance.
 */
typedef struct EhfDendrogram EhfDendrogram;

/**
 * A trained tracer together with the exercise features it reads.
 */
typedef struct EhfTracer EhfTracer;

/**
 * Per-tag BKT parameters.
 */
typedef struct EhfBktParams {
  double p_init;
  double p_learn;
  double p_guess;
  double p_slip;
} EhfBktParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next `ehf_*` call on the same thread.
 */
const char *ehf_last_error(void);

/**
 * NUL-terminated library version; static storage.
 */
const char *ehf_version(void);

/**
 * Rank AUC of `n` scores against 0/1 labels, ties counted half.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable elements; `out` to one
 * writable double.
 */
enum EhfStatus ehf_auc(const double *scores, const uint8_t *labels, size_t n, double *out_auc);

/**
 * One BKT step: the probability of a correct answer at mastery
 * `p_mastery`, then the mastery after observing `r` and the learning
 * transition.
 *
 * # Safety
 * `params` must be readable; `p_correct` and `p_next` writable.
 */
enum EhfStatus ehf_bkt_predict_update(const struct EhfBktParams *params,
                                      double p_mastery,
                                      uint8_t r,
                                      double *p_correct,
                                      double *p_next);

/**
 * Cluster `n` row vectors of length `dim` stored row-major in `vectors`.
 *
 * # Safety
 * `vectors` must hold `n * dim` doubles; `out` must be writable.
 */
enum EhfStatus ehf_dendrogram_new(const double *vectors,
                                  size_t n,
                                  size_t dim,
                                  struct EhfDendrogram **out_handle);

/**
 * Number of merges (`n - 1`).
 *
 * # Safety
 * `handle` must come from `ehf_dendrogram_new`.
 */
enum EhfStatus ehf_dendrogram_num_merges(const struct EhfDendrogram *handle, size_t *out_count);

/**
 * Merge `i`: the two joined node ids (leaves are `0..n`, merge `j` creates
 * node `n + j`) and the linkage height.
 *
 * # Safety
 * `handle` must come from `ehf_dendrogram_new`; outputs must be writable.
 */
enum EhfStatus ehf_dendrogram_merge(const struct EhfDendrogram *handle,
                                    size_t i,
                                    size_t *left,
                                    size_t *right,
                                    double *height);

/**
 * Cut into exactly `k` clusters; writes one label in `0..k` per leaf.
 *
 * # Safety
 * `labels` must have room for `n` entries, where `n` is the leaf count.
 */
enum EhfStatus ehf_dendrogram_cut(const struct EhfDendrogram *handle,
                                  size_t k,
                                  size_t *labels,
                                  size_t n);

/**
 * # Safety
 * `handle` must come from `ehf_dendrogram_new` and not be used afterwards.
 */
void ehf_dendrogram_free(struct EhfDendrogram *handle);

/**
 * Load a tracer checkpoint. `exercises` and `embeddings` name the corpus;
 * `knowledge`, `clusters` and `difficulty` are the feature files the
 * variant needs and may be NULL when it does not.
 *
 * # Safety
 * Strings must be NUL-terminated or NULL where allowed; `out` writable.
 */
enum EhfStatus ehf_tracer_load(const char *checkpoint,
                               const char *exercises,
                               const char *embeddings,
                               const char *knowledge,
                               const char *clusters,
                               const char *difficulty,
                               struct EhfTracer **out_handle);

/**
 * Probability that `next` is answered correctly after the `n` past
 * attempts `(history_ids[i], history_correct[i])`, `n >= 1`.
 *
 * # Safety
 * `history_ids` must hold `n` NUL-terminated strings and `history_correct`
 * `n` bytes; `out` writable.
 */
enum EhfStatus ehf_tracer_predict_next(const struct EhfTracer *handle,
                                       const char *const *history_ids,
                                       const uint8_t *history_correct,
                                       size_t n,
                                       const char *next,
                                       double *out_p);

/**
 * # Safety
 * `handle` must come from `ehf_tracer_load` and not be used afterwards.
 */
void ehf_tracer_free(struct EhfTracer *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EHFKT_H */
