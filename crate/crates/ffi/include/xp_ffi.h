#ifndef XP_FFI_H
#define XP_FFI_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum XpBand {
  XP_BAND_POOR = 0,
  XP_BAND_FAIR = 1,
  XP_BAND_GOOD = 2,
  XP_BAND_VERY_GOOD = 3,
  XP_BAND_EXCELLENT = 4,
} XpBand;

typedef enum XpStatus {
  XP_STATUS_OK = 0,
  XP_STATUS_NULL_ARGUMENT = 1,
  XP_STATUS_INVALID_UTF8 = 2,
  XP_STATUS_INVALID_ARGUMENT = 3,
  XP_STATUS_UNKNOWN_ITEM = 4,
  XP_STATUS_UNKNOWN_CART = 5,
  XP_STATUS_MODEL_UNAVAILABLE = 6,
  XP_STATUS_IO = 7,
  XP_STATUS_BAD_INPUT = 8,
  XP_STATUS_INTERNAL = 9,
  XP_STATUS_PANIC = 10,
} XpStatus;

/**
 * Opaque engine handle.
 */
typedef struct XpEngine XpEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next call
 * into the library on the same thread.
 */
const char *xp_last_error(void);

/**
 * Opens an engine over a catalog and an Item XP candidate file.
 * `checkpoint` may be null, in which case only the heuristic model is
 * available. `max_per_pt` of 0 selects the default.
 *
 * # Safety
 * String arguments must be null or valid NUL-terminated strings; `out`
 * must be a valid pointer.
 */
enum XpStatus xp_engine_open(const char *catalog,
                             const char *candidates,
                             const char *checkpoint,
                             uint32_t max_per_pt,
                             struct XpEngine **out);

/**
 * # Safety
 * `engine` must come from [`xp_engine_open`] and not be used afterwards.
 */
void xp_engine_free(struct XpEngine *engine);

/**
 * Applies an add (`is_add` true) or remove event to a cart.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum XpStatus xp_cart_event(const struct XpEngine *engine,
                            const char *cart_id,
                            const char *item_id,
                            bool is_add,
                            uint64_t ts);

/**
 * Pool size of a cart.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum XpStatus xp_pool_size(const struct XpEngine *engine, const char *cart_id, size_t *out);

/**
 * Carousel for a cart as a JSON string. `model` is "ranker" or
 * "heuristic". Free the result with [`xp_string_free`].
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum XpStatus xp_recommend_json(const struct XpEngine *engine,
                                const char *cart_id,
                                uint32_t k,
                                const char *model,
                                bool explain,
                                char **out_json);

/**
 * # Safety
 * `s` must be null or come from this library.
 */
void xp_string_free(char *s);

/**
 * CE score times LLM score; both must lie in [0, 1].
 *
 * # Safety
 * `out` must be valid.
 */
enum XpStatus xp_combined_score(double ce, double llm, double *out);

/**
 * # Safety
 * `out` must be valid.
 */
enum XpStatus xp_quality_band(double score, enum XpBand *out);

/**
 * NDCG@k of a ranking given as relevance flags in rank order (nonzero =
 * relevant).
 *
 * # Safety
 * `relevance` must point to `n` bytes; `out` must be valid.
 */
enum XpStatus xp_ndcg_at_k(const uint8_t *relevance, size_t n, size_t k, double *out);

/**
 * Listwise softmax loss over positive and negative scores.
 *
 * # Safety
 * Arrays must hold the stated lengths; `out` must be valid.
 */
enum XpStatus xp_listwise_loss(const double *pos,
                               size_t n_pos,
                               const double *neg,
                               size_t n_neg,
                               double tau,
                               double *out);

/**
 * max(0, delta - (s_pos - s_neg)).
 *
 * # Safety
 * `out` must be valid.
 */
enum XpStatus xp_pairwise_hinge(double s_pos, double s_neg, double delta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* XP_FFI_H */
