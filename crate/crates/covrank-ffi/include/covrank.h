#ifndef COVRANK_H
#define COVRANK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Ranking granularity.
typedef enum CovrankLevel {
  COVRANK_LEVEL_STATEMENT = 0,
  COVRANK_LEVEL_METHOD = 1,
} CovrankLevel;

// Status codes returned by every fallible function.
typedef enum CovrankStatus {
  COVRANK_STATUS_OK = 0,
  COVRANK_STATUS_NULL_ARGUMENT = 1,
  COVRANK_STATUS_CONFIG = 2,
  COVRANK_STATUS_DATA = 3,
  COVRANK_STATUS_TRAINING = 4,
  COVRANK_STATUS_EVALUATION = 5,
  COVRANK_STATUS_INVALID_UTF8 = 6,
  COVRANK_STATUS_OUT_OF_RANGE = 7,
} CovrankStatus;

// Opaque dataset handle.
typedef struct CovrankDataset CovrankDataset;

// Opaque trained-models handle.
typedef struct CovrankModels CovrankModels;

// Opaque ranking handle: one bug's elements ordered by display position.
typedef struct CovrankRanking CovrankRanking;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Last error message for this thread; valid until the next failing call.
// Never null; empty when no error has occurred.
const char *covrank_last_error_message(void);

// Library version as a static string (never freed by the caller).
const char *covrank_version(void);

// Release a string returned through an out-parameter.
//
// # Safety
// `s` must be a pointer previously returned by this library, or null.
void covrank_string_free(char *s);

// Load an fl-dataset/v1 JSON file.
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` a valid pointer.
enum CovrankStatus covrank_dataset_load(const char *path, struct CovrankDataset **out);

// Generate a synthetic benchmark dataset.
//
// # Safety
// `out` must be a valid pointer.
enum CovrankStatus covrank_dataset_generate(uint64_t seed,
                                            uintptr_t bugs,
                                            uintptr_t tests,
                                            uintptr_t distractors,
                                            struct CovrankDataset **out);

// Write a dataset as canonical fl-dataset/v1 JSON.
//
// # Safety
// `ds` must be a live handle; `path` a valid NUL-terminated string.
enum CovrankStatus covrank_dataset_save(const struct CovrankDataset *ds, const char *path);

// Number of bugs in the dataset; 0 for a null handle.
//
// # Safety
// `ds` must be a live handle or null.
uintptr_t covrank_dataset_bug_count(const struct CovrankDataset *ds);

// # Safety
// `ds` must be a pointer returned by this library, or null; it must not be
// used afterwards.
void covrank_dataset_free(struct CovrankDataset *ds);

// Train localization models on every bug in `ds`. `config_json` is an
// optional serialized pipeline configuration; null selects the desk preset.
//
// # Safety
// `ds` must be a live handle; `config_json` a valid string or null; `out` a
// valid pointer.
enum CovrankStatus covrank_models_train(const struct CovrankDataset *ds,
                                        const char *config_json,
                                        uint64_t seed,
                                        struct CovrankModels **out);

// Write a model directory (config plus one checkpoint per net).
//
// # Safety
// `models` must be a live handle; `dir` a valid NUL-terminated string.
enum CovrankStatus covrank_models_save(const struct CovrankModels *models, const char *dir);

// Load a model directory written by `covrank_models_save`.
//
// # Safety
// `dir` must be a valid NUL-terminated string; `out` a valid pointer.
enum CovrankStatus covrank_models_load(const char *dir, struct CovrankModels **out);

// # Safety
// `models` must be a pointer returned by this library, or null; it must not
// be used afterwards.
void covrank_models_free(struct CovrankModels *models);

// Rank the elements of one bug (by index) at the requested level.
//
// # Safety
// `models` and `ds` must be live handles; `out` a valid pointer.
enum CovrankStatus covrank_localize(const struct CovrankModels *models,
                                    const struct CovrankDataset *ds,
                                    uintptr_t bug_index,
                                    enum CovrankLevel level,
                                    struct CovrankRanking **out);

// Number of ranked elements; 0 for a null handle.
//
// # Safety
// `r` must be a live handle or null.
uintptr_t covrank_ranking_len(const struct CovrankRanking *r);

// Element id, score, and average-tie rank at display position `pos`.
//
// # Safety
// `r` must be a live handle; out-parameters must be valid or null (null
// out-parameters are skipped).
enum CovrankStatus covrank_ranking_entry(const struct CovrankRanking *r,
                                         uintptr_t pos,
                                         uintptr_t *out_id,
                                         double *out_score,
                                         double *out_rank);

// # Safety
// `r` must be a pointer returned by this library, or null; it must not be
// used afterwards.
void covrank_ranking_free(struct CovrankRanking *r);

// Leave-one-out evaluation over `ds`; writes the report as a JSON string to
// `out_json` (release with `covrank_string_free`).
//
// # Safety
// `ds` must be a live handle; `config_json` a valid string or null;
// `out_json` a valid pointer.
enum CovrankStatus covrank_evaluate_loo(const struct CovrankDataset *ds,
                                        const char *config_json,
                                        enum CovrankLevel level,
                                        char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COVRANK_H */
