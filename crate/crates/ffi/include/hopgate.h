#ifndef HOPGATE_H
#define HOPGATE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define HG_CATEGORY_COUNT 10

/**
 * Indices into [`HgPrediction::flops_by_category`].
 */
typedef enum HgCategory {
  HG_CATEGORY_EMBED_STORY = 0,
  HG_CATEGORY_EMBED_QUERY = 1,
  HG_CATEGORY_INNER_PRODUCT = 2,
  HG_CATEGORY_SOFTMAX = 3,
  HG_CATEGORY_WEIGHTED_SUM = 4,
  HG_CATEGORY_KEY_SUM = 5,
  HG_CATEGORY_KEY_GEN = 6,
  HG_CATEGORY_FC = 7,
  HG_CATEGORY_ICN = 8,
  HG_CATEGORY_OTHER = 9,
} HgCategory;

typedef enum HgForceRoute {
  HG_FORCE_ROUTE_NONE = 0,
  HG_FORCE_ROUTE_EASY = 1,
  HG_FORCE_ROUTE_HARD = 2,
} HgForceRoute;

typedef enum HgMode {
  HG_MODE_PRE_EMBEDDED = 0,
  HG_MODE_INTERACTIVE = 1,
} HgMode;

typedef enum HgPolicy {
  HG_POLICY_ALL_HOPS = 0,
  HG_POLICY_ONE_HOP = 1,
  HG_POLICY_GATED = 2,
} HgPolicy;

typedef enum HgRoute {
  HG_ROUTE_EASY = 0,
  HG_ROUTE_HARD = 1,
  /**
   * The policy fixed the path; no gate was consulted.
   */
  HG_ROUTE_FORCED = 2,
} HgRoute;

/**
 * Result of every fallible call.
 */
typedef enum HgStatus {
  HG_STATUS_OK = 0,
  HG_STATUS_NULL_POINTER = 1,
  /**
   * Bad string encoding or an argument outside its domain.
   */
  HG_STATUS_INVALID_ARGUMENT = 2,
  HG_STATUS_IO = 3,
  HG_STATUS_PARSE = 4,
  HG_STATUS_DIMENSION = 5,
  HG_STATUS_OUT_OF_RANGE = 6,
  HG_STATUS_NON_FINITE = 7,
  HG_STATUS_PARAM = 8,
  HG_STATUS_CONFIG = 9,
  HG_STATUS_UNSUPPORTED = 10,
  HG_STATUS_CHECKPOINT = 11,
  HG_STATUS_PANIC = 12,
} HgStatus;

typedef enum HgVariant {
  HG_VARIANT_CONVENTIONAL = 0,
  HG_VARIANT_KEY_VALUE = 1,
} HgVariant;

/**
 * A gate configuration (mode and thresholds).
 */
typedef struct HgGate HgGate;

/**
 * A loaded checkpoint.
 */
typedef struct HgModel HgModel;

typedef struct HgOptions {
  enum HgPolicy policy;
  enum HgMode mode;
  /**
   * Zero-skip threshold; negative or NaN disables skipping.
   */
  double zero_skip;
  bool use_pruned;
  bool avoid_reembedding;
  enum HgForceRoute force_route;
} HgOptions;

typedef struct HgModelInfo {
  size_t vocab_size;
  size_t d;
  size_t n_s;
  size_t n_w;
  size_t hops;
  enum HgVariant variant;
  bool has_early_head;
  bool has_icn;
  bool has_pruned_heads;
  bool has_vocabulary;
} HgModelInfo;

/**
 * One query against a story of `n_s` rows by `n_w` token ids (row-major).
 */
typedef struct HgQuery {
  const uint32_t *cells;
  size_t n_s;
  size_t n_w;
  /**
   * Key-value models: one value token per row. Null otherwise.
   */
  const uint32_t *values;
  const uint32_t *query;
  size_t query_len;
  uint32_t task_id;
} HgQuery;

typedef struct HgPrediction {
  uint32_t answer;
  enum HgRoute route;
  uint32_t hops_executed;
  uint64_t flops_total;
  uint64_t flops_by_category[HG_CATEGORY_COUNT];
  /**
   * ICN class probabilities; NaN when the ICN did not run.
   */
  double p_easy;
  double p_hard;
} HgPrediction;

/**
 * Inputs to the closed-form FLOP model.
 */
typedef struct HgCostParams {
  uint64_t d;
  uint64_t v;
  uint64_t n_s;
  uint64_t n_w;
  uint64_t m;
  uint64_t l1;
  enum HgVariant variant;
  enum HgMode mode;
  double zeta_e;
  double p_r;
  double psi_e;
  double psi_h;
} HgCostParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length plus one, or 0 when
 * the last call succeeded.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t hg_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hg_version(void);

/**
 * Pre-embedded mode, no skipping, full heads.
 */
struct HgOptions hg_options_default(enum HgPolicy policy);

/**
 * Loads a JSON checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum HgStatus hg_model_load(const char *path, struct HgModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`hg_model_load`] and not be used afterwards.
 */
void hg_model_free(struct HgModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be valid for writes.
 */
enum HgStatus hg_model_info(const struct HgModel *model, struct HgModelInfo *out);

/**
 * Looks up a word in the checkpoint vocabulary.
 *
 * # Safety
 * `model` must be a live handle, `word` NUL-terminated, `out` valid for writes.
 */
enum HgStatus hg_model_token_id(const struct HgModel *model, const char *word, uint32_t *out);

/**
 * Runs one query. `gate` is required for the gated policy and ignored otherwise.
 *
 * # Safety
 * `model` must be a live handle; `gate` null or live; the arrays in `query`
 * must hold `n_s * n_w`, `n_s` (values, if non-null) and `query_len` ids.
 */
enum HgStatus hg_model_forward(const struct HgModel *model,
                               const struct HgQuery *query,
                               const struct HgOptions *options,
                               const struct HgGate *gate,
                               struct HgPrediction *out);

/**
 * Plain argmax gate.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum HgStatus hg_gate_nc(struct HgGate **out);

/**
 * One confidence threshold for every task.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum HgStatus hg_gate_global(double z, struct HgGate **out);

/**
 * Reads a gate configuration JSON file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid for writes.
 */
enum HgStatus hg_gate_load(const char *path, struct HgGate **out);

/**
 * Confidence threshold the gate applies to `task_id`.
 *
 * # Safety
 * `gate` must be a live handle.
 */
enum HgStatus hg_gate_threshold(const struct HgGate *gate, uint32_t task_id, double *out);

/**
 * # Safety
 * `gate` must come from an `hg_gate_*` constructor and not be used afterwards.
 */
void hg_gate_free(struct HgGate *gate);

/**
 * bAbI operating point (d 40, n_s 50, V 174, three hops, L1 32) with the given sentence length.
 */
struct HgCostParams hg_cost_params_babi(uint64_t n_w);

/**
 * FLOPs of one hop.
 *
 * # Safety
 * `params` must be readable and `out` valid for writes.
 */
enum HgStatus hg_cost_hop(const struct HgCostParams *params, uint64_t *out);

/**
 * FLOPs of one full-depth query.
 *
 * # Safety
 * `params` must be readable and `out` valid for writes.
 */
enum HgStatus hg_cost_total(const struct HgCostParams *params, uint64_t *out);

/**
 * Predicted FLOPs saved per query by gating, pruning and (when Ψ is set) zero-skipping.
 *
 * # Safety
 * `params` must be readable and `out` valid for writes.
 */
enum HgStatus hg_cost_reduction(const struct HgCostParams *params, double *out);

/**
 * FLOPs of the classifier network with `l1` hidden units on `d` inputs.
 */
uint64_t hg_icn_overhead(uint64_t d, uint64_t l1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOPGATE_H */
