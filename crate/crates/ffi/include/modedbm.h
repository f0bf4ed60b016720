#ifndef MODEDBM_H
#define MODEDBM_H

#include <stddef.h>
#include <stdint.h>

typedef enum ModedbmStatus {
  MODEDBM_STATUS_OK = 0,
  MODEDBM_STATUS_NULL_POINTER = 1,
  // Dimension mismatch, bad value or malformed configuration.
  MODEDBM_STATUS_INVALID_ARGUMENT = 2,
  // Too many nodes to enumerate.
  MODEDBM_STATUS_CAPACITY = 3,
  MODEDBM_STATUS_IO = 4,
  // Malformed IDX or JSON input.
  MODEDBM_STATUS_FORMAT = 5,
  MODEDBM_STATUS_PANIC = 6,
} ModedbmStatus;

// Binary dataset.
typedef struct ModedbmDataset ModedbmDataset;

// Trained or loaded model parameters.
typedef struct ModedbmModel ModedbmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *modedbm_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *modedbm_version(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from a function of this library that documents ownership
// transfer, and must not be freed twice.
void modedbm_string_free(char *s);

// New model of the given layer sizes with weights drawn from
// `N(0, weight_std²)` and zero biases.
//
// # Safety
// `sizes` must point to `n_layers` values; `out` must be writable.
enum ModedbmStatus modedbm_model_new(const size_t *sizes,
                                     size_t n_layers,
                                     double weight_std,
                                     uint64_t seed,
                                     struct ModedbmModel **out);

// Parses a JSON checkpoint.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum ModedbmStatus modedbm_model_from_json(const char *json, struct ModedbmModel **out);

// Serializes a model as a JSON checkpoint. Free the result with
// [`modedbm_string_free`].
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum ModedbmStatus modedbm_model_to_json(const struct ModedbmModel *model, char **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ModedbmStatus modedbm_model_load(const char *path, struct ModedbmModel **out);

// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum ModedbmStatus modedbm_model_save(const struct ModedbmModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from this library and must not be used afterwards.
void modedbm_model_free(struct ModedbmModel *model);

// Number of layers including the visible layer.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum ModedbmStatus modedbm_model_num_layers(const struct ModedbmModel *model, size_t *out);

// Size of layer `layer` (0 is visible).
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum ModedbmStatus modedbm_model_layer_size(const struct ModedbmModel *model,
                                            size_t layer,
                                            size_t *out);

// Energy of a joint state given as all node values in layer order.
//
// # Safety
// `state` must point to `len` bytes; `out` must be writable.
enum ModedbmStatus modedbm_energy(const struct ModedbmModel *model,
                                  const uint8_t *state,
                                  size_t len,
                                  double *out);

// Exact `log Z` (natural log).
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum ModedbmStatus modedbm_exact_log_z(const struct ModedbmModel *model, double *out);

// AIS estimate of `log Z` and its standard error. `std_error` may be null.
//
// # Safety
// `model` must be a live handle; `log_z` must be writable.
enum ModedbmStatus modedbm_ais_log_z(const struct ModedbmModel *model,
                                     size_t n_intermediate,
                                     size_t n_runs,
                                     uint64_t seed,
                                     double *log_z,
                                     double *std_error);

// Exact minimum-energy state, free or with the visible layer clamped.
// `clamp` is null for a free search or points to `n_v` bytes.
//
// # Safety
// `state_out` must have room for `state_len` bytes (the total node count);
// `energy_out` may be null.
enum ModedbmStatus modedbm_exact_mode(const struct ModedbmModel *model,
                                      const uint8_t *clamp,
                                      uint8_t *state_out,
                                      size_t state_len,
                                      double *energy_out);

// Number of weights plus biases of a machine with the given layer sizes.
//
// # Safety
// `sizes` must point to `n_layers` values; `out` must be writable.
enum ModedbmStatus modedbm_param_count(const size_t *sizes, size_t n_layers, size_t *out);

// Mode-update probability at schedule index `n` of `total` with the
// standard constants (slope `20/total`, offset `−6`, ceiling `0.1`).
//
// # Safety
// `out` must be writable.
enum ModedbmStatus modedbm_mode_probability(double n, size_t total, double *out);

// # Safety
// `out` must be writable.
enum ModedbmStatus modedbm_dataset_shifting_bar(size_t n_v,
                                                size_t bar_len,
                                                struct ModedbmDataset **out);

// Dataset from `n_vectors` row-major vectors of `dim` bytes, each 0 or 1.
//
// # Safety
// `bits` must point to `n_vectors * dim` bytes; `out` must be writable.
enum ModedbmStatus modedbm_dataset_from_bits(const uint8_t *bits,
                                             size_t n_vectors,
                                             size_t dim,
                                             struct ModedbmDataset **out);

// Loads an IDX image file and binarizes it at `threshold`. `limit = 0`
// keeps every image.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum ModedbmStatus modedbm_dataset_load_idx(const char *path,
                                            uint8_t threshold,
                                            size_t limit,
                                            struct ModedbmDataset **out);

// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum ModedbmStatus modedbm_dataset_len(const struct ModedbmDataset *dataset, size_t *out);

// # Safety
// `dataset` must be a live handle; `out` must be writable.
enum ModedbmStatus modedbm_dataset_dim(const struct ModedbmDataset *dataset, size_t *out);

// Releases a dataset. Null is ignored.
//
// # Safety
// `dataset` must come from this library and must not be used afterwards.
void modedbm_dataset_free(struct ModedbmDataset *dataset);

// Exact average log-likelihood per vector, in nats.
//
// # Safety
// Both handles must be live; `out` must be writable.
enum ModedbmStatus modedbm_exact_avg_ll(const struct ModedbmModel *model,
                                        const struct ModedbmDataset *dataset,
                                        double *out);

// Trains a model from a JSON training configuration (the same document the
// `train` subcommand accepts) and returns it in `out`.
//
// # Safety
// `config_json` must be a NUL-terminated string, `dataset` a live handle and
// `out` writable.
enum ModedbmStatus modedbm_train(const char *config_json,
                                 const struct ModedbmDataset *dataset,
                                 struct ModedbmModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODEDBM_H */
