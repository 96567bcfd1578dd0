#ifndef SHAREDNAV_H
#define SHAREDNAV_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SnStatus {
  SN_STATUS_OK = 0,
  SN_STATUS_NULL_ARGUMENT = 1,
  SN_STATUS_INVALID_ARGUMENT = 2,
  SN_STATUS_NOT_FOUND = 3,
  /**
   * The command was understood but refused (unreachable goal, wrong phase...).
   */
  SN_STATUS_REJECTED = 4,
  SN_STATUS_IO = 5,
  SN_STATUS_PANIC = 6,
} SnStatus;

typedef enum SnMode {
  SN_MODE_MANUAL = 0,
  SN_MODE_SEMI_AUTONOMOUS = 1,
  SN_MODE_AUTONOMOUS = 2,
} SnMode;

typedef enum SnAuthority {
  SN_AUTHORITY_USER = 0,
  SN_AUTHORITY_SYSTEM = 1,
  SN_AUTHORITY_STOPPED = 2,
} SnAuthority;

typedef enum SnGoalStatus {
  SN_GOAL_STATUS_IDLE = 0,
  SN_GOAL_STATUS_ACTIVE = 1,
  SN_GOAL_STATUS_REACHED = 2,
  SN_GOAL_STATUS_ABORTED = 3,
} SnGoalStatus;

typedef struct SnSession SnSession;

typedef struct SnSim SnSim;

typedef struct SnWorld SnWorld;

typedef struct SnPose {
  double x;
  double y;
  double theta;
} SnPose;

/**
 * Result of one raw simulator tick.
 */
typedef struct SnStep {
  /**
   * Noisy odometry increment in the robot frame.
   */
  struct SnPose odom;
  bool scanned;
  bool collided_now;
  bool blocked;
  double travelled;
} SnStep;

/**
 * Flattened view of a session after a tick.
 */
typedef struct SnState {
  uint64_t tick;
  double sim_time;
  /**
   * Estimated pose (what the chair believes).
   */
  struct SnPose estimate;
  /**
   * Ground truth.
   */
  struct SnPose pose;
  double v;
  double w;
  enum SnMode mode;
  enum SnAuthority authority;
  enum SnGoalStatus goal_status;
  bool mapping;
  bool localization_lost;
  /**
   * Negative when there is no path.
   */
  double deviation;
  bool collided;
} SnState;

typedef struct SnTrialRecord {
  double distance;
  double time;
  bool goal_reached;
  bool collided;
} SnTrialRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *sn_last_error(void);

/**
 * Library version, static storage.
 */
const char *sn_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void sn_string_free(char *s);

/**
 * Loads a bundled world by name (`hospital`, `home`, `loop`) or a `.world` file.
 *
 * # Safety
 * `name_or_path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum SnStatus sn_world_load(const char *name_or_path, struct SnWorld **out);

/**
 * Parses world text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid pointer.
 */
enum SnStatus sn_world_parse(const char *text, struct SnWorld **out);

/**
 * World extent in meters.
 *
 * # Safety
 * `world` must be live; `width` and `height` valid pointers.
 */
enum SnStatus sn_world_size(const struct SnWorld *world, double *width, double *height);

/**
 * # Safety
 * `world` must come from `sn_world_load`/`sn_world_parse` and not be used afterwards.
 */
void sn_world_free(struct SnWorld *world);

/**
 * Bare simulator: ground truth, sensing and odometry without navigation.
 *
 * # Safety
 * `world` must be live; `out` a valid pointer.
 */
enum SnStatus sn_sim_new(const struct SnWorld *world,
                         uint64_t seed,
                         bool dynamic_obstacles,
                         struct SnSim **out);

/**
 * Advances one tick under the commanded twist (clamped to the chair's limits).
 *
 * # Safety
 * `sim` must be live; `out` may be null.
 */
enum SnStatus sn_sim_step(struct SnSim *sim, double v, double w, struct SnStep *out);

/**
 * True pose of the chair.
 *
 * # Safety
 * `sim` must be live; `out` a valid pointer.
 */
enum SnStatus sn_sim_pose(const struct SnSim *sim, struct SnPose *out);

/**
 * # Safety
 * `sim` must be live; `tick` a valid pointer.
 */
enum SnStatus sn_sim_tick(const struct SnSim *sim, uint64_t *tick);

/**
 * # Safety
 * `sim` must come from `sn_sim_new` and not be used afterwards.
 */
void sn_sim_free(struct SnSim *sim);

/**
 * Full navigation session. With `map_path` null the map is surveyed from
 * the world first; otherwise the given map file is loaded.
 *
 * # Safety
 * `world` must be live; `map_path` null or NUL-terminated; `out` a valid pointer.
 */
enum SnStatus sn_session_new(const struct SnWorld *world,
                             const char *map_path,
                             enum SnMode mode,
                             uint64_t seed,
                             struct SnSession **out);

/**
 * # Safety
 * `session` must be live.
 */
enum SnStatus sn_session_set_goal(struct SnSession *session, double x, double y);

/**
 * # Safety
 * `session` must be live; `label` NUL-terminated.
 */
enum SnStatus sn_session_set_goal_label(struct SnSession *session, const char *label);

/**
 * Joystick axes in [-1, 1]; goes stale after half a second of sim time.
 *
 * # Safety
 * `session` must be live.
 */
enum SnStatus sn_session_joystick(struct SnSession *session, double fwd, double turn);

/**
 * # Safety
 * `session` must be live.
 */
enum SnStatus sn_session_set_mode(struct SnSession *session, enum SnMode mode);

/**
 * Returns the chair to its spawn pose and clears the goal.
 *
 * # Safety
 * `session` must be live.
 */
enum SnStatus sn_session_reset(struct SnSession *session);

/**
 * Advances one control period and fills `out` (may be null).
 *
 * # Safety
 * `session` must be live.
 */
enum SnStatus sn_session_step(struct SnSession *session, struct SnState *out);

/**
 * The last tick's full state as JSON (the gateway's `state` message,
 * including events and the planned path). Free with `sn_string_free`.
 *
 * # Safety
 * `session` must be live; `out` a valid pointer.
 */
enum SnStatus sn_session_state_json(struct SnSession *session, char **out);

/**
 * # Safety
 * `session` must come from `sn_session_new` and not be used afterwards.
 */
void sn_session_free(struct SnSession *session);

/**
 * Runs one seeded trial to completion. `goal_label` null picks a random
 * goal from the seed. Non-autonomous modes drive with the scripted follower.
 * `remarks` (may be null) receives a `;`-joined list; free it with
 * `sn_string_free`.
 *
 * # Safety
 * `world` must be live; `goal_label` null or NUL-terminated; `out` valid;
 * `remarks` null or valid.
 */
enum SnStatus sn_trial_run(const struct SnWorld *world,
                           const char *goal_label,
                           enum SnMode mode,
                           uint64_t seed,
                           bool dynamic_obstacles,
                           struct SnTrialRecord *out,
                           char **remarks);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHAREDNAV_H */
