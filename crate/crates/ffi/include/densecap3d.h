#ifndef DENSECAP3D_H
#define DENSECAP3D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Dc3dStatus {
  DC3D_STATUS_OK = 0,
  DC3D_STATUS_NULL_POINTER = 1,
  DC3D_STATUS_INVALID_UTF8 = 2,
  DC3D_STATUS_DIMENSION = 3,
  DC3D_STATUS_ARGUMENT = 4,
  DC3D_STATUS_NON_FINITE = 5,
  DC3D_STATUS_FORMAT = 6,
  DC3D_STATUS_VALIDATION = 7,
  DC3D_STATUS_COMPATIBILITY = 8,
  DC3D_STATUS_SELECTION = 9,
  DC3D_STATUS_PLACEMENT = 10,
  DC3D_STATUS_VISIBILITY = 11,
  DC3D_STATUS_IO = 12,
  DC3D_STATUS_PANIC = 13,
} Dc3dStatus;

/**
 * A trained model with its vocabulary.
 */
typedef struct Dc3dModel Dc3dModel;

/**
 * Axis-aligned box: center and full side lengths.
 */
typedef struct Dc3dBox {
  double center[3];
  double lengths[3];
} Dc3dBox;

typedef struct Dc3dSentenceScores {
  double bleu4;
  double meteor;
  double rouge_l;
} Dc3dSentenceScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *dc3d_last_error(void);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void dc3d_string_free(char *s);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum Dc3dStatus dc3d_model_load(const char *path, struct Dc3dModel **out);

/**
 * # Safety
 * `model` must come from [`dc3d_model_load`], or be null.
 */
void dc3d_model_free(struct Dc3dModel *model);

/**
 * Number of output tokens, or 0 for a null handle.
 *
 * # Safety
 * `model` must come from [`dc3d_model_load`], or be null.
 */
size_t dc3d_model_vocab_size(const struct Dc3dModel *model);

/**
 * Captions every object of a scene (given as scene JSON) using its
 * ground-truth boxes. Writes a JSON array of `{"id", "caption"}`.
 *
 * # Safety
 * Pointers must be valid; `out_json` receives a string to free with
 * [`dc3d_string_free`].
 */
enum Dc3dStatus dc3d_caption_scene(const struct Dc3dModel *model,
                                   const char *scene_json,
                                   char **out_json);

/**
 * Decodes predictions for every scene in `data_dir` and scores them.
 * `ks` holds `n_ks` IoU thresholds; the report JSON goes to `out_json`.
 *
 * # Safety
 * Pointers must be valid and `ks` must hold `n_ks` values.
 */
enum Dc3dStatus dc3d_model_evaluate(const struct Dc3dModel *model,
                                    const char *data_dir,
                                    const double *ks,
                                    size_t n_ks,
                                    char **out_json);

/**
 * Scores a prediction file (JSON text) against the scenes in `data_dir`.
 *
 * # Safety
 * Pointers must be valid and `ks` must hold `n_ks` values.
 */
enum Dc3dStatus dc3d_evaluate_predictions(const char *predictions_json,
                                          const char *data_dir,
                                          const double *ks,
                                          size_t n_ks,
                                          char **out_json);

/**
 * # Safety
 * `a`, `b` and `out` must be valid.
 */
enum Dc3dStatus dc3d_box_iou(const struct Dc3dBox *a, const struct Dc3dBox *b, double *out);

/**
 * Greedy NMS. `kept` must have room for `n` indices; the number written
 * goes to `n_kept`.
 *
 * # Safety
 * Arrays must hold `n` elements; `kept` and `n_kept` must be writable.
 */
enum Dc3dStatus dc3d_nms(const struct Dc3dBox *boxes,
                         const double *scores,
                         size_t n,
                         double iou_threshold,
                         size_t *kept,
                         size_t *n_kept);

/**
 * BLEU-4, METEOR and ROUGE-L of one caption against `n_refs` references.
 * Text is tokenized the same way as dataset captions.
 *
 * # Safety
 * `refs` must hold `n_refs` NUL-terminated strings.
 */
enum Dc3dStatus dc3d_sentence_scores(const char *candidate,
                                     const char *const *refs,
                                     size_t n_refs,
                                     struct Dc3dSentenceScores *out);

/**
 * Checks that a vocabulary file matches the model's.
 *
 * # Safety
 * Pointers must be valid.
 */
enum Dc3dStatus dc3d_model_check_vocab(const struct Dc3dModel *model, const char *vocab_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DENSECAP3D_H */
