#ifndef TRAFFICRL_H
#define TRAFFICRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TrcStatus {
  TRC_STATUS_OK = 0,
  TRC_STATUS_NULL_POINTER = 1,
  TRC_STATUS_INVALID_ARGUMENT = 2,
  TRC_STATUS_INVALID_CONFIG = 3,
  TRC_STATUS_EPISODE_DONE = 4,
  TRC_STATUS_IO = 5,
  TRC_STATUS_PARSE = 6,
  TRC_STATUS_BUFFER_TOO_SMALL = 7,
  TRC_STATUS_CHECKPOINT = 8,
  TRC_STATUS_PANIC = 9,
} TrcStatus;

/**
 * Opaque greedy policy loaded from a checkpoint.
 */
typedef struct TrcAgent TrcAgent;

/**
 * Opaque single-intersection simulator.
 */
typedef struct TrcEnv TrcEnv;

/**
 * Itemized reward of one decision. Penalties are magnitudes; `total` is
 * the signed sum.
 */
typedef struct TrcReward {
  double waiting_penalty;
  double remaining_penalty;
  double fairness_penalty;
  double in_reward;
  double out_reward;
  double speed_reward;
  double stuck_penalty;
  double total;
} TrcReward;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *trc_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t trc_last_error_message(char *buf, size_t len);

/**
 * Creates a simulator. `config_toml` holds the simulator settings as TOML
 * (null or empty for defaults); unknown keys are rejected.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum TrcStatus trc_env_new(const char *config_toml, uint64_t seed, struct TrcEnv **out);

/**
 * Releases a simulator. Null is ignored.
 *
 * # Safety
 * `env` must be null or a handle from [`trc_env_new`] not yet freed.
 */
void trc_env_free(struct TrcEnv *env);

/**
 * Observation vector length (`1 + 5R`); 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t trc_env_observation_len(const struct TrcEnv *env);

/**
 * Number of actions (roads); 0 for a null handle.
 *
 * # Safety
 * `env` must be null or a live handle.
 */
size_t trc_env_n_actions(const struct TrcEnv *env);

/**
 * Starts a new episode and writes the initial observation.
 *
 * # Safety
 * `env` must be a live handle; `obs` must be valid for `obs_len` doubles.
 */
enum TrcStatus trc_env_reset(struct TrcEnv *env, uint64_t seed, double *obs, size_t obs_len);

/**
 * Serves road `action` for one decision interval. Writes the next
 * observation, the reward terms and whether the episode ended.
 *
 * # Safety
 * `env` must be a live handle; `obs` valid for `obs_len` doubles; `reward`
 * and `done` valid pointers or null (then skipped).
 */
enum TrcStatus trc_env_step(struct TrcEnv *env,
                            size_t action,
                            double *obs,
                            size_t obs_len,
                            struct TrcReward *reward,
                            bool *done);

/**
 * Mean wait in seconds over every vehicle currently queued.
 *
 * # Safety
 * `env` must be a live handle and `out` a valid pointer.
 */
enum TrcStatus trc_env_mean_waiting_s(const struct TrcEnv *env, double *out);

/**
 * Loads a network checkpoint as a greedy policy. The head type decides the
 * variant (categorical: rainbow, scalar: vanilla DQN).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum TrcStatus trc_agent_load(const char *path, struct TrcAgent **out);

/**
 * Releases an agent. Null is ignored.
 *
 * # Safety
 * `agent` must be null or a handle from [`trc_agent_load`] not yet freed.
 */
void trc_agent_free(struct TrcAgent *agent);

/**
 * Greedy action for `obs` (mean weights; ties go to the lowest index).
 *
 * # Safety
 * `agent` must be a live handle, `obs` valid for `obs_len` doubles and
 * `action` a valid pointer.
 */
enum TrcStatus trc_agent_select_action(const struct TrcAgent *agent,
                                       const double *obs,
                                       size_t obs_len,
                                       size_t *action);

/**
 * Per-action values (expected return) for `obs`, written to `values`.
 *
 * # Safety
 * `agent` must be a live handle, `obs` valid for `obs_len` doubles and
 * `values` for `values_len` doubles.
 */
enum TrcStatus trc_agent_action_values(const struct TrcAgent *agent,
                                       const double *obs,
                                       size_t obs_len,
                                       double *values,
                                       size_t values_len);

/**
 * Checks one NDJSON detection-event line against the feed schema.
 *
 * # Safety
 * `line` must be a NUL-terminated string.
 */
enum TrcStatus trc_feed_validate_line(const char *line);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAFFICRL_H */
