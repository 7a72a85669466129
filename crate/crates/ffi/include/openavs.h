#ifndef OPENAVS_H
#define OPENAVS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum OpenavsStatus {
  OPENAVS_STATUS_OK = 0,
  OPENAVS_STATUS_NULL_POINTER = 1,
  OPENAVS_STATUS_INVALID_UTF8 = 2,
  OPENAVS_STATUS_INVALID_ARGUMENT = 3,
  OPENAVS_STATUS_SHAPE_MISMATCH = 4,
  OPENAVS_STATUS_NO_ANSWER_TAGS = 5,
  OPENAVS_STATUS_UNKNOWN_MODEL = 6,
  OPENAVS_STATUS_IO = 7,
  OPENAVS_STATUS_PIPELINE = 8,
  OPENAVS_STATUS_OVERFLOW = 9,
  OPENAVS_STATUS_PANIC = 10,
} OpenavsStatus;

/**
 * Knowledge bank handle.
 */
typedef struct OpenavsBank OpenavsBank;

/**
 * Configured pipeline with its own runtime.
 */
typedef struct OpenavsPipeline OpenavsPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Owned by the library.
 */
const char *openavs_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void openavs_string_free(char *s);

/**
 * mIoU of two row-major 0/1 masks of `height * width` bytes.
 *
 * # Safety
 * `pred` and `gt` must point to `height * width` readable bytes.
 */
enum OpenavsStatus openavs_miou(const uint8_t *pred,
                                const uint8_t *gt,
                                uint32_t height,
                                uint32_t width,
                                double *out);

/**
 * F-score with the given beta squared (0.3 is the usual choice).
 *
 * # Safety
 * As [`openavs_miou`].
 */
enum OpenavsStatus openavs_fscore(const uint8_t *pred,
                                  const uint8_t *gt,
                                  uint32_t height,
                                  uint32_t width,
                                  double beta2,
                                  double *out);

/**
 * Writes `min(label, 1)` for each of the `height * width` labels.
 *
 * # Safety
 * `labels` must hold `height * width` values and `out` as many bytes.
 */
enum OpenavsStatus openavs_binarize_semantic(const uint32_t *labels,
                                             uint32_t height,
                                             uint32_t width,
                                             uint8_t *out);

/**
 * Translator system prompt for `mode` (basic, prompt, frame, prompt+frame, model).
 *
 * # Safety
 * `mode` must be a NUL-terminated string; `out` must be writable.
 */
enum OpenavsStatus openavs_system_prompt(const char *mode, char **out);

/**
 * # Safety
 * `video_id` must be a NUL-terminated string; `out` must be writable.
 */
enum OpenavsStatus openavs_bank_new(const char *video_id, struct OpenavsBank **out);

/**
 * # Safety
 * `bank` must come from [`openavs_bank_new`] and not have been freed.
 */
void openavs_bank_free(struct OpenavsBank *bank);

/**
 * Adds one description. `kind` is e.g. `audio_describer`.
 *
 * # Safety
 * `bank` must be live; string arguments NUL-terminated.
 */
enum OpenavsStatus openavs_bank_insert(struct OpenavsBank *bank,
                                       size_t frame_index,
                                       const char *kind,
                                       const char *model_id,
                                       size_t prompt_variant,
                                       const char *description);

/**
 * Number of descriptions, or 0 for NULL.
 *
 * # Safety
 * `bank` must be live or NULL.
 */
size_t openavs_bank_len(const struct OpenavsBank *bank);

/**
 * Frame-tagged translator input for the first `n_frames` frames.
 *
 * # Safety
 * `bank` must be live; `out` writable.
 */
enum OpenavsStatus openavs_bank_frame_input(const struct OpenavsBank *bank,
                                            size_t n_frames,
                                            bool use_exp_tags,
                                            char **out);

/**
 * Model-consistency translator input for one frame.
 *
 * # Safety
 * `bank` must be live; `out` writable.
 */
enum OpenavsStatus openavs_bank_model_input(const struct OpenavsBank *bank,
                                            size_t frame_index,
                                            char **out);

/**
 * # Safety
 * `bank` must be live; `out` writable.
 */
enum OpenavsStatus openavs_bank_to_json(const struct OpenavsBank *bank, char **out);

/**
 * Parses a frame-tagged translator reply into JSON
 * `{"directives": [...], "warnings": [...]}` with exactly `n_frames`
 * directives. Returns `NO_ANSWER_TAGS` when the reply has no answer span.
 *
 * # Safety
 * String arguments NUL-terminated; `out` writable.
 */
enum OpenavsStatus openavs_parse_answers(const char *reply,
                                         size_t n_frames,
                                         const char *video_id,
                                         char **out);

/**
 * Cost of one call under the default price table, in pico-dollars
 * (1e-12 USD). `out_usd`, if not NULL, receives the amount rounded to
 * six decimals.
 *
 * # Safety
 * `model_id` NUL-terminated; `out_pico` writable; `out_usd` writable or NULL.
 */
enum OpenavsStatus openavs_cost(const char *model_id,
                                uint64_t prompt_tokens,
                                uint64_t completion_tokens,
                                uint64_t *out_pico,
                                char **out_usd);

/**
 * Builds a pipeline. Each argument may be NULL: `config_path` falls back to
 * defaults, `variant` (lite, standard, large) to the config's, and
 * `endpoint` replaces every agent endpoint (`mock://derived` for the
 * in-process mock).
 *
 * # Safety
 * Non-NULL strings NUL-terminated; `out` writable.
 */
enum OpenavsStatus openavs_pipeline_new(const char *config_path,
                                        const char *variant,
                                        const char *endpoint,
                                        struct OpenavsPipeline **out);

/**
 * # Safety
 * `pipeline` must come from [`openavs_pipeline_new`] and not have been freed.
 */
void openavs_pipeline_free(struct OpenavsPipeline *pipeline);

/**
 * Runs every clip of `manifest_path`, writing masks under `out_dir`.
 * `workers` of 0 uses the configured count. The run summary is returned as
 * JSON; clip failures are listed there and still return `OK`.
 *
 * # Safety
 * `pipeline` live; strings NUL-terminated; `out_summary` writable or NULL.
 */
enum OpenavsStatus openavs_pipeline_run(const struct OpenavsPipeline *pipeline,
                                        const char *manifest_path,
                                        const char *out_dir,
                                        size_t workers,
                                        char **out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPENAVS_H */
