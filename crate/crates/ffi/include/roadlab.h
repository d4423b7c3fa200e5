#ifndef ROADLAB_H
#define ROADLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RoadlabStatus {
  ROADLAB_STATUS_OK = 0,
  ROADLAB_STATUS_NULL_POINTER = 1,
  ROADLAB_STATUS_INVALID_UTF8 = 2,
  ROADLAB_STATUS_INVALID_INPUT = 3,
  ROADLAB_STATUS_CONFIG = 4,
  ROADLAB_STATUS_IO = 5,
  ROADLAB_STATUS_PARSE = 6,
  ROADLAB_STATUS_NUMERICAL = 7,
  ROADLAB_STATUS_MISMATCH = 8,
  ROADLAB_STATUS_PANIC = 9,
} RoadlabStatus;

// Experiment configuration.
typedef struct RoadlabConfig RoadlabConfig;

// A policy loaded from a checkpoint.
typedef struct RoadlabPolicy RoadlabPolicy;

// A finished (or partially finished) pipeline run.
typedef struct RoadlabRun RoadlabRun;

// Summary metrics of one evaluation.
typedef struct RoadlabMetrics {
  // Kilometers driven per incident.
  double driving_score;
  double collision_rate;
  double offroad_rate;
  double incident_rate;
  double mean_distance_m;
  double min_ade_m;
  double std_driving_score;
  size_t scenes;
  size_t evaluated;
  size_t excluded;
  size_t failed;
} RoadlabMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *roadlab_version(void);

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next roadlab call on this thread.
const char *roadlab_last_error_message(void);

// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void roadlab_string_free(char *s);

// # Safety
// `out` must be a valid pointer to a handle slot.
enum RoadlabStatus roadlab_config_default(struct RoadlabConfig **out);

// Parses a TOML document. Missing keys take their defaults; unknown keys fail.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid handle slot.
enum RoadlabStatus roadlab_config_from_toml(const char *text, struct RoadlabConfig **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid handle slot.
enum RoadlabStatus roadlab_config_load(const char *path, struct RoadlabConfig **out);

// Sets a dotted key such as `rollout.k` to a TOML value such as `16`.
// The config is left unchanged on failure.
//
// # Safety
// `cfg` must be a live config handle; `key` and `value` NUL-terminated strings.
enum RoadlabStatus roadlab_config_set(struct RoadlabConfig *cfg,
                                      const char *key,
                                      const char *value);

// # Safety
// `cfg` must be a live config handle.
enum RoadlabStatus roadlab_config_validate(const struct RoadlabConfig *cfg);

// Writes the config as TOML into a new string freed with `roadlab_string_free`.
//
// # Safety
// `cfg` must be a live config handle and `out` a valid pointer.
enum RoadlabStatus roadlab_config_to_toml(const struct RoadlabConfig *cfg, char **out);

// # Safety
// `cfg` must be NULL or a config handle not yet freed.
void roadlab_config_free(struct RoadlabConfig *cfg);

// Runs every stage into the config's output directory. With `resume`,
// stages already recorded there are reused.
//
// # Safety
// `cfg` must be a live config handle and `out` a valid handle slot.
enum RoadlabStatus roadlab_run_pipeline(const struct RoadlabConfig *cfg,
                                        bool resume,
                                        struct RoadlabRun **out);

// # Safety
// `run` must be a live run handle and `out` a valid pointer.
enum RoadlabStatus roadlab_run_metrics(const struct RoadlabRun *run, struct RoadlabMetrics *out);

// Output directory of the run, as a new string freed with `roadlab_string_free`.
//
// # Safety
// `run` must be a live run handle and `out` a valid pointer.
enum RoadlabStatus roadlab_run_dir(const struct RoadlabRun *run, char **out);

// # Safety
// `run` must be NULL or a run handle not yet freed.
void roadlab_run_free(struct RoadlabRun *run);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid handle slot.
enum RoadlabStatus roadlab_policy_load(const char *path, struct RoadlabPolicy **out);

// Number of trainable parameters, or 0 for a NULL handle.
//
// # Safety
// `policy` must be NULL or a live policy handle.
size_t roadlab_policy_num_params(const struct RoadlabPolicy *policy);

// Evaluates the policy on the test split that `cfg` generates, with the
// same evaluation seed a pipeline run of `cfg` would use.
//
// # Safety
// `policy` and `cfg` must be live handles and `out` a valid pointer.
enum RoadlabStatus roadlab_policy_evaluate(const struct RoadlabPolicy *policy,
                                           const struct RoadlabConfig *cfg,
                                           struct RoadlabMetrics *out);

// # Safety
// `policy` must be NULL or a policy handle not yet freed.
void roadlab_policy_free(struct RoadlabPolicy *policy);

// Kilometers per incident over `n` rollouts.
//
// # Safety
// `distances_m` and `incidents` must point to `n` readable elements each
// (or may be NULL when `n` is 0); `out` must be a valid pointer.
enum RoadlabStatus roadlab_driving_score(const double *distances_m,
                                         const size_t *incidents,
                                         size_t n,
                                         double *out);

// Sign-test p-value for `wins` against `losses`, ties already dropped.
double roadlab_sign_test(size_t wins, size_t losses, bool one_sided);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ROADLAB_H */
