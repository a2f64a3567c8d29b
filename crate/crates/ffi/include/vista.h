#ifndef VISTA_H
#define VISTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes; the non-zero values shared with the command-line tool
// keep its meaning.
typedef enum VistaStatus {
  VISTA_STATUS_OK = 0,
  VISTA_STATUS_CHECK_FAILED = 1,
  VISTA_STATUS_PARSE = 2,
  VISTA_STATUS_DIVERGENCE = 3,
  VISTA_STATUS_BUDGET = 4,
  VISTA_STATUS_MISMATCH = 5,
  VISTA_STATUS_OVERSIZE = 6,
  // Null pointer, bad enum value or an argument outside its domain.
  VISTA_STATUS_INVALID_ARGUMENT = 7,
  // Output buffer too small; the required length was still reported.
  VISTA_STATUS_BUFFER_TOO_SMALL = 8,
  // A quantity is undefined for these inputs.
  VISTA_STATUS_UNDEFINED = 9,
  // Internal panic caught at the boundary.
  VISTA_STATUS_INTERNAL = 10,
} VistaStatus;

// Position weighting selector.
typedef enum VistaScheme {
  VISTA_SCHEME_NORMALIZED = 0,
  VISTA_SCHEME_LINEAR = 1,
  // Uses the accompanying constant.
  VISTA_SCHEME_UNIFORM = 2,
} VistaScheme;

// Opaque discrete caption model.
typedef struct VistaDiscreteModel VistaDiscreteModel;

// Opaque trained model loaded from a checkpoint.
typedef struct VistaModel VistaModel;

// One row of an information curve; undefined cells hold NaN.
typedef struct VistaInfoRow {
  uint32_t t;
  double h_prefix;
  double h_step;
  double i_vis;
  double i_cond;
  double i_total;
  double ratio;
  double rho;
  double bound;
} VistaInfoRow;

// Extents of a loaded model.
typedef struct VistaModelDims {
  uint32_t vocab_size;
  uint32_t d_model;
  uint32_t n_layers;
  uint32_t n_heads;
  uint32_t n_image_tokens;
  uint32_t max_text_len;
  uint32_t d_image_feat;
  uint64_t seed;
  uint64_t num_params;
} VistaModelDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *vista_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`). Returns the full message length
// without the terminator, 0 when there is none.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t vista_last_error_message(char *buf, size_t len);

// Weight `f(t)` of position `t` (1-based) among `m` supervised tokens.
// `kind` is a `VistaScheme` value; `c` is used by the uniform scheme.
//
// # Safety
// `out` must be a valid pointer.
enum VistaStatus vista_weight(size_t t, size_t m, int32_t kind, double c, double *out);

// Mean of `f(1..=m)`, summed exactly.
//
// # Safety
// `out` must be a valid pointer.
enum VistaStatus vista_mean_weight(size_t m, int32_t kind, double c, double *out);

// Visual share after boosting the visual term by `1 + lambda`.
//
// # Safety
// `out` must be a valid pointer.
enum VistaStatus vista_rho(double i_vis, double i_cond, double lambda, double *out);

// Boost that brings the visual share to `rho`. `boost_needed` is set to
// 1 when the result is positive, else 0.
//
// # Safety
// `lambda` and `boost_needed` must be valid pointers.
enum VistaStatus vista_lambda_from_rho(double rho,
                                       double i_vis,
                                       double i_cond,
                                       double *lambda,
                                       int32_t *boost_needed);

// Builtin discrete model: `iid-uniform`, `strong-memory` or `copy-channel`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum VistaStatus vista_discrete_builtin(const char *name,
                                        size_t horizon,
                                        struct VistaDiscreteModel **out);

// Discrete model from its TOML description.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum VistaStatus vista_discrete_from_toml(const char *text, struct VistaDiscreteModel **out);

// # Safety
// `model` must be null or a handle from this library, freed once.
void vista_discrete_free(struct VistaDiscreteModel *model);

// Exact information curve for `t = 1..=horizon` with `λ_t = t/horizon`.
// Writes up to `cap` rows and the row count to `len`; returns
// `BufferTooSmall` (with `len` set) when `cap < horizon`.
//
// # Safety
// `model` must be a live handle, `rows` valid for `cap` elements (or null
// when `cap == 0`), `len` a valid pointer.
enum VistaStatus vista_info_curve(const struct VistaDiscreteModel *model,
                                  size_t horizon,
                                  double epsilon,
                                  struct VistaInfoRow *rows,
                                  size_t cap,
                                  size_t *len);

// Loads a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum VistaStatus vista_model_load(const char *path, struct VistaModel **out);

// Parses checkpoint bytes held in memory.
//
// # Safety
// `bytes` must be valid for `len` bytes and `out` a valid pointer.
enum VistaStatus vista_model_from_bytes(const uint8_t *bytes, size_t len, struct VistaModel **out);

// # Safety
// `model` must be null or a handle from this library, freed once.
void vista_model_free(struct VistaModel *model);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum VistaStatus vista_model_dims(const struct VistaModel *model, struct VistaModelDims *out);

// Text-by-image cosine similarities (row-major, `max_text_len` rows by
// `n_image_tokens` columns) for one example of the default task with seed
// `task_seed`, matching the command-line `heatmap`. Returns
// `BufferTooSmall` with `rows`/`cols` set when `cap` is short.
//
// # Safety
// `model` must be a live handle, `values` valid for `cap` elements (or
// null when `cap == 0`), `rows` and `cols` valid pointers.
enum VistaStatus vista_model_heatmap(const struct VistaModel *model,
                                     uint64_t task_seed,
                                     double *values,
                                     size_t cap,
                                     size_t *rows,
                                     size_t *cols);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VISTA_H */
