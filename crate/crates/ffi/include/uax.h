#ifndef UAX_H
#define UAX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UaxNorm {
  UAX_NORM_L_INF = 0,
  UAX_NORM_L2 = 1,
} UaxNorm;

/**
 * Result code of every fallible call.
 */
typedef enum UaxStatus {
  UAX_STATUS_OK = 0,
  UAX_STATUS_NULL_POINTER = 1,
  UAX_STATUS_INVALID_ARGUMENT = 2,
  UAX_STATUS_IO = 3,
  UAX_STATUS_FORMAT = 4,
  UAX_STATUS_SHAPE = 5,
  UAX_STATUS_NUMERIC = 6,
  UAX_STATUS_PANIC = 7,
} UaxStatus;

/**
 * Crafted perturbation with its seed and adversarial image.
 */
typedef struct UaxArtifact UaxArtifact;

/**
 * Identity gallery loaded from `<dir>/<label>/*.png`.
 */
typedef struct UaxGallery UaxGallery;

/**
 * Trained embedding network.
 */
typedef struct UaxModel UaxModel;

/**
 * Crafting settings; start from [`uax_craft_params_default`].
 */
typedef struct UaxCraftParams {
  size_t iterations;
  size_t batch_size;
  double learning_rate;
  /**
   * Budget radius in `[0, 1]` pixel units.
   */
  double xi;
  enum UaxNorm norm;
  uint64_t rng_seed;
} UaxCraftParams;

/**
 * Equal-error operating point; a score `≤ threshold` is a match.
 */
typedef struct UaxEer {
  double eer;
  double threshold;
  double fmr;
  double fnmr;
} UaxEer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty after a success. The
 * pointer stays valid until the next call into this library on the thread.
 */
const char *uax_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uax_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum UaxStatus uax_model_load(const char *path, struct UaxModel **out);

/**
 * # Safety
 * `model` must come from [`uax_model_load`] and not be used afterwards.
 */
void uax_model_free(struct UaxModel *model);

/**
 * # Safety
 * `model` must be a live handle; the output pointers must be writable.
 */
enum UaxStatus uax_model_input_dims(const struct UaxModel *model,
                                    size_t *height,
                                    size_t *width,
                                    size_t *channels);

/**
 * Embedding length of `model`, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t uax_model_embedding_dim(const struct UaxModel *model);

/**
 * Writes the embedding of one image to `out` (`out_len` must equal the
 * embedding length).
 *
 * # Safety
 * `pixels` must hold `len` doubles and `out` `out_len` writable doubles.
 */
enum UaxStatus uax_embed(const struct UaxModel *model,
                         const double *pixels,
                         size_t len,
                         double *out,
                         size_t out_len);

/**
 * Loads `<dir>/<label>/*.png`, preprocessing every image to
 * `size × size` with `channels` (1 or 3) channels.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a writable pointer.
 */
enum UaxStatus uax_gallery_load(const char *dir,
                                size_t channels,
                                size_t size,
                                struct UaxGallery **out);

/**
 * # Safety
 * `gallery` must be null or a live handle.
 */
size_t uax_gallery_identity_count(const struct UaxGallery *gallery);

/**
 * # Safety
 * `gallery` must be null or a live handle.
 */
size_t uax_gallery_image_count(const struct UaxGallery *gallery);

/**
 * # Safety
 * `gallery` must come from [`uax_gallery_load`] and not be used afterwards.
 */
void uax_gallery_free(struct UaxGallery *gallery);

/**
 * Defaults: 500 iterations, batch 32, learning rate 0.01, ξ = 10/255 under
 * ℓ∞, seed 0.
 */
struct UaxCraftParams uax_craft_params_default(void);

/**
 * Crafts a UAX from `seed_pixels` against `model`, drawing batches from
 * `train`.
 *
 * # Safety
 * Handles must be live, `seed_pixels` must hold `len` doubles, `params`
 * must be readable and `out` writable.
 */
enum UaxStatus uax_craft(const struct UaxModel *model,
                         const struct UaxGallery *train,
                         const double *seed_pixels,
                         size_t len,
                         const struct UaxCraftParams *params,
                         struct UaxArtifact **out);

/**
 * Number of doubles in the artifact's perturbation (and images).
 *
 * # Safety
 * `artifact` must be null or a live handle.
 */
size_t uax_artifact_len(const struct UaxArtifact *artifact);

/**
 * Copies ν into `out`.
 *
 * # Safety
 * `out` must hold `len` writable doubles.
 */
enum UaxStatus uax_artifact_perturbation(const struct UaxArtifact *artifact,
                                         double *out,
                                         size_t len);

/**
 * Copies `x′ = clamp(x_A + ν)` into `out`.
 *
 * # Safety
 * `out` must hold `len` writable doubles.
 */
enum UaxStatus uax_artifact_adversarial(const struct UaxArtifact *artifact,
                                        double *out,
                                        size_t len);

/**
 * Mean distance from `x′` to the whole training pool after crafting.
 *
 * # Safety
 * `artifact` must be null or a live handle.
 */
double uax_artifact_final_loss(const struct UaxArtifact *artifact);

/**
 * Writes the artifact directory (`nu.f64`, `nu.json`, PNG previews, loss
 * trace).
 *
 * # Safety
 * `artifact` must be live and `dir` a NUL-terminated string.
 */
enum UaxStatus uax_artifact_save(const struct UaxArtifact *artifact, const char *dir);

/**
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a writable pointer.
 */
enum UaxStatus uax_artifact_load(const char *dir, struct UaxArtifact **out);

/**
 * # Safety
 * `artifact` must come from this library and not be used afterwards.
 */
void uax_artifact_free(struct UaxArtifact *artifact);

/**
 * Projects `nu` onto the closed ball of radius `xi` in place.
 *
 * # Safety
 * `nu` must hold `len` writable doubles.
 */
enum UaxStatus uax_project(double *nu, size_t len, double xi, enum UaxNorm norm);

/**
 * Equal-error point of genuine and imposter distances.
 *
 * # Safety
 * The score arrays must hold `genuine_len` and `imposter_len` doubles;
 * `out` must be writable.
 */
enum UaxStatus uax_eer(const double *genuine,
                       size_t genuine_len,
                       const double *imposter,
                       size_t imposter_len,
                       struct UaxEer *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UAX_H */
