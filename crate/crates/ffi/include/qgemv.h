#ifndef QGEMV_H
#define QGEMV_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QgStatus {
  QG_STATUS_OK = 0,
  QG_STATUS_NULL_POINTER = 1,
  QG_STATUS_INVALID_ARGUMENT = 2,
  QG_STATUS_SHAPE = 3,
  QG_STATUS_NON_FINITE = 4,
  QG_STATUS_FORMAT = 5,
  QG_STATUS_IO = 6,
  QG_STATUS_STATE = 7,
  QG_STATUS_PANIC = 8,
} QgStatus;

/**
 * Placement policies, passed as `uint32_t` to [`qg_executor_new`].
 */
enum QgPolicy
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : uint32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  QG_POLICY_BALANCING_ON = 0,
  QG_POLICY_ALL_OFF = 1,
  QG_POLICY_CORE_BINDING = 2,
  QG_POLICY_MEMORY_INTERLEAVE = 3,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum QgPolicy QgPolicy;
#else
typedef uint32_t QgPolicy;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * A synthetic decoder with its KV cache.
 */
typedef struct QgDecoder QgDecoder;

/**
 * A worker pool bound to one placement policy.
 */
typedef struct QgExecutor QgExecutor;

/**
 * A Q4 weight matrix.
 */
typedef struct QgMatrix QgMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *qg_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *qg_last_error_message(void);

/**
 * Quantizes a row-major `rows x cols` float matrix. `cols` must be a
 * multiple of 32.
 *
 * # Safety
 * `values` must point to `rows * cols` floats and `out` to writable storage.
 */
enum QgStatus qg_matrix_quantize(const float *values,
                                 size_t rows,
                                 size_t cols,
                                 struct QgMatrix **out);

/**
 * Reads a `.qmat` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum QgStatus qg_matrix_load(const char *path, struct QgMatrix **out);

/**
 * Writes `matrix` as a `.qmat` file.
 *
 * # Safety
 * `matrix` must be a live handle and `path` a NUL-terminated string.
 */
enum QgStatus qg_matrix_save(const struct QgMatrix *matrix, const char *path);

/**
 * Row count, or 0 for NULL.
 *
 * # Safety
 * `matrix` must be NULL or a live handle.
 */
size_t qg_matrix_rows(const struct QgMatrix *matrix);

/**
 * Column count, or 0 for NULL.
 *
 * # Safety
 * `matrix` must be NULL or a live handle.
 */
size_t qg_matrix_cols(const struct QgMatrix *matrix);

/**
 * # Safety
 * `matrix` must be NULL or a handle not yet freed.
 */
void qg_matrix_free(struct QgMatrix *matrix);

/**
 * Starts a pool of `threads` workers under `policy` (a [`QgPolicy`]).
 *
 * # Safety
 * `out` must be writable.
 */
enum QgStatus qg_executor_new(size_t threads, uint32_t policy, struct QgExecutor **out);

/**
 * Number of placement warnings the executor raised on this host.
 *
 * # Safety
 * `exec` must be NULL or a live handle.
 */
size_t qg_executor_warning_count(const struct QgExecutor *exec);

/**
 * Re-lays `matrix` out for `exec` (per-worker shards under memory
 * interleaving). Results are unchanged.
 *
 * # Safety
 * Both arguments must be live handles.
 */
enum QgStatus qg_executor_place(const struct QgExecutor *exec, struct QgMatrix *matrix);

/**
 * # Safety
 * `exec` must be NULL or a handle not yet freed.
 */
void qg_executor_free(struct QgExecutor *exec);

/**
 * `y = A x` with `x` quantized to Q8 on the fly. `exec` may be NULL to
 * run on the calling thread.
 *
 * # Safety
 * `matrix` must be live; `x` must hold `x_len` floats and `y` `y_len`.
 */
enum QgStatus qg_gemv(const struct QgExecutor *exec,
                      const struct QgMatrix *matrix,
                      const float *x,
                      size_t x_len,
                      float *y,
                      size_t y_len);

/**
 * Thin GEMM over `batch` column-major input vectors of length `cols`.
 * `y` receives `rows * batch` floats, also column-major. Column `j` equals
 * `qg_gemv` on column `j` bit for bit.
 *
 * # Safety
 * `matrix` must be live; `x` must hold `cols * batch` floats and `y`
 * `y_len`.
 */
enum QgStatus qg_gemm_thin(const struct QgExecutor *exec,
                           const struct QgMatrix *matrix,
                           const float *x,
                           size_t cols,
                           size_t batch,
                           float *y,
                           size_t y_len);

/**
 * Builds a seeded decoder for a preset name (`toy` or `llama8b-layer`).
 *
 * # Safety
 * `preset` must be a NUL-terminated string and `out` writable.
 */
enum QgStatus qg_decoder_new(const char *preset, uint64_t seed, struct QgDecoder **out);

/**
 * Builds a seeded decoder with explicit shapes.
 *
 * # Safety
 * `out` must be writable.
 */
enum QgStatus qg_decoder_new_shapes(size_t d_model,
                                    size_t d_ff,
                                    size_t n_layers,
                                    uint64_t seed,
                                    struct QgDecoder **out);

/**
 * Lays the decoder weights out for `exec`.
 *
 * # Safety
 * Both arguments must be live handles.
 */
enum QgStatus qg_decoder_place(struct QgDecoder *decoder, const struct QgExecutor *exec);

/**
 * Runs a fresh prompt of `prompt_len` tokens. Optionally returns the
 * throughput and the final token's hidden state (`d_model` floats).
 *
 * # Safety
 * `decoder` must be live; `exec` NULL or live; `tokens_per_second` NULL or
 * writable; `hidden` NULL or pointing to `hidden_len` floats.
 */
enum QgStatus qg_decoder_prefill(struct QgDecoder *decoder,
                                 const struct QgExecutor *exec,
                                 size_t prompt_len,
                                 double *tokens_per_second,
                                 float *hidden,
                                 size_t hidden_len);

/**
 * Generates `n_tokens` after a prefill.
 *
 * # Safety
 * `decoder` must be live; `exec` NULL or live; `tokens_per_second` NULL or
 * writable.
 */
enum QgStatus qg_decoder_generate(struct QgDecoder *decoder,
                                  const struct QgExecutor *exec,
                                  size_t n_tokens,
                                  double *tokens_per_second);

/**
 * Tokens held in the KV cache, or 0 for NULL.
 *
 * # Safety
 * `decoder` must be NULL or a live handle.
 */
size_t qg_decoder_kv_len(const struct QgDecoder *decoder);

/**
 * Writes the decoder as `.qmat` files plus a manifest into `dir`.
 *
 * # Safety
 * `decoder` must be live; `dir` and `name` NUL-terminated strings.
 */
enum QgStatus qg_decoder_export(const struct QgDecoder *decoder, const char *dir, const char *name);

/**
 * # Safety
 * `decoder` must be NULL or a handle not yet freed.
 */
void qg_decoder_free(struct QgDecoder *decoder);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QGEMV_H */
