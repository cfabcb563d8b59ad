#ifndef SPMIS_H
#define SPMIS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SpmisStatus {
  SPMIS_STATUS_OK = 0,
  SPMIS_STATUS_NULL_POINTER = 1,
  SPMIS_STATUS_INVALID_ARGUMENT = 2,
  SPMIS_STATUS_UTF8 = 3,
  SPMIS_STATUS_IO = 4,
  SPMIS_STATUS_FORMAT = 5,
  SPMIS_STATUS_DIMENSION_MISMATCH = 6,
  SPMIS_STATUS_ALREADY_ENROLLED = 7,
  SPMIS_STATUS_BUFFER_TOO_SMALL = 8,
  SPMIS_STATUS_INTERNAL = 9,
} SpmisStatus;

typedef enum SpmisTopic {
  SPMIS_TOPIC_POLITICS = 0,
  SPMIS_TOPIC_MEDICINE = 1,
  SPMIS_TOPIC_EDUCATION = 2,
  SPMIS_TOPIC_LAWS = 3,
  SPMIS_TOPIC_FINANCE = 4,
  SPMIS_TOPIC_OTHER = 5,
} SpmisTopic;

typedef enum SpmisOutcome {
  SPMIS_OUTCOME_NON_MISINFORMATION = 0,
  SPMIS_OUTCOME_MISINFORMATION = 1,
} SpmisOutcome;

typedef enum SpmisReason {
  SPMIS_REASON_BONAFIDE_AUDIO = 0,
  SPMIS_REASON_SPEAKER_NOT_WATCHLISTED = 1,
  SPMIS_REASON_TOPIC_NOT_WATCHED = 2,
  SPMIS_REASON_WATCHED_PAIR_MATCHED = 3,
} SpmisReason;

typedef struct SpmisDetector SpmisDetector;

typedef struct SpmisSpeakerDb SpmisSpeakerDb;

typedef struct SpmisTopicModel SpmisTopicModel;

/**
 * Top-1 retrieval result. `best_index` is the entry position of the most
 * similar speaker (see `spmis_db_speaker_at`), or -1 for an empty
 * database.
 */
typedef struct SpmisQuery {
  bool matched;
  double similarity;
  int64_t best_index;
} SpmisQuery;

/**
 * Cascade decision. Fields past the terminating stage are unset:
 * `similarity` is NaN before speaker retrieval, `matched_index` is -1
 * without a match and `has_topic` is false before topic prediction.
 */
typedef struct SpmisVerdict {
  enum SpmisOutcome outcome;
  enum SpmisReason reason;
  double similarity;
  int64_t matched_index;
  bool has_topic;
  enum SpmisTopic predicted_topic;
} SpmisVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread; empty after a
 * successful call. Valid until the next call on the same thread.
 */
const char *spmis_last_error(void);

/**
 * Library version as a static string.
 */
const char *spmis_version(void);

/**
 * Creates an empty speaker database.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SpmisStatus spmis_db_new(size_t dim, float threshold, struct SpmisSpeakerDb **out);

/**
 * Loads a database file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SpmisStatus spmis_db_load(const char *path, struct SpmisSpeakerDb **out);

/**
 * Writes the database to `path`.
 *
 * # Safety
 * `db` must come from this library; `path` must be NUL-terminated.
 */
enum SpmisStatus spmis_db_save(const struct SpmisSpeakerDb *db, const char *path);

/**
 * Releases a database handle. Null is ignored.
 *
 * # Safety
 * `db` must come from this library and not be used afterwards.
 */
void spmis_db_free(struct SpmisSpeakerDb *db);

/**
 * Number of enrolled speakers (0 for null).
 *
 * # Safety
 * `db` must be null or come from this library.
 */
size_t spmis_db_len(const struct SpmisSpeakerDb *db);

/**
 * Embedding dimension (0 for null).
 *
 * # Safety
 * `db` must be null or come from this library.
 */
size_t spmis_db_dim(const struct SpmisSpeakerDb *db);

/**
 * Enrolls `speaker` from `n_clips` row-major clips of `dim` floats each.
 *
 * # Safety
 * `clips` must point to `n_clips * dim` floats.
 */
enum SpmisStatus spmis_db_enroll(struct SpmisSpeakerDb *db,
                                 const char *speaker,
                                 const float *clips,
                                 size_t n_clips,
                                 size_t dim);

/**
 * Removes `speaker`; `*removed` tells whether it was enrolled.
 *
 * # Safety
 * Pointers must be valid; `removed` may be null.
 */
enum SpmisStatus spmis_db_remove(struct SpmisSpeakerDb *db, const char *speaker, bool *removed);

/**
 * Copies the id of the entry at `index` into `buf`.
 *
 * # Safety
 * `buf` must hold `buf_len` bytes; `needed` may be null.
 */
enum SpmisStatus spmis_db_speaker_at(const struct SpmisSpeakerDb *db,
                                     size_t index,
                                     char *buf,
                                     size_t buf_len,
                                     size_t *needed);

/**
 * Exact top-1 cosine query.
 *
 * # Safety
 * `probe` must point to `dim` floats and `out` be valid.
 */
enum SpmisStatus spmis_db_query(const struct SpmisSpeakerDb *db,
                                const float *probe,
                                size_t dim,
                                struct SpmisQuery *out);

/**
 * Loads a topic model file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum SpmisStatus spmis_topic_model_load(const char *path, struct SpmisTopicModel **out);

/**
 * Releases a topic model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void spmis_topic_model_free(struct SpmisTopicModel *model);

/**
 * Predicts the topic of a transcript.
 *
 * # Safety
 * `transcript` must be NUL-terminated and `out` valid.
 */
enum SpmisStatus spmis_topic_model_predict(const struct SpmisTopicModel *model,
                                           const char *transcript,
                                           enum SpmisTopic *out);

/**
 * Builds a detector from copies of `db` and `model` plus a policy file
 * (JSON array of {speaker, topic}).
 *
 * # Safety
 * Handles must come from this library; `policy_path` must be
 * NUL-terminated and `out` valid.
 */
enum SpmisStatus spmis_detector_new(const struct SpmisSpeakerDb *db,
                                    const struct SpmisTopicModel *model,
                                    const char *policy_path,
                                    struct SpmisDetector **out);

/**
 * Releases a detector handle. Null is ignored.
 *
 * # Safety
 * `detector` must come from this library and not be used afterwards.
 */
void spmis_detector_free(struct SpmisDetector *detector);

/**
 * Runs the cascade on one utterance. `synthetic` is the deepfake-stage
 * decision. `embedding` is read only when `synthetic` is true and
 * `transcript` only when the speaker stage matched, so either may be null
 * when its stage is not reached.
 *
 * # Safety
 * `embedding` must point to `dim` floats when read; `transcript` must be
 * NUL-terminated when read; `out` must be valid.
 */
enum SpmisStatus spmis_detector_decide(const struct SpmisDetector *detector,
                                       bool synthetic,
                                       const float *embedding,
                                       size_t dim,
                                       const char *transcript,
                                       struct SpmisVerdict *out);

/**
 * Copies the id of the detector database's entry at `index` into `buf`.
 *
 * # Safety
 * As for `spmis_db_speaker_at`.
 */
enum SpmisStatus spmis_detector_speaker_at(const struct SpmisDetector *detector,
                                           size_t index,
                                           char *buf,
                                           size_t buf_len,
                                           size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPMIS_H */
