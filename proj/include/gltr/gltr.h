/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface of libgltr. Every function returns a gltr_status; on failure
 * gltr_last_error() describes the most recent error on the calling thread.
 * Strings handed out by the library are released with gltr_string_free.
 */
#ifndef GLTR_GLTR_H
#define GLTR_GLTR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(GLTR_BUILDING_LIBRARY)
#    define GLTR_API __declspec(dllexport)
#  else
#    define GLTR_API __declspec(dllimport)
#  endif
#else
#  define GLTR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gltr_status {
    GLTR_OK = 0,
    GLTR_ERR_INVALID_ARGUMENT = 1,
    GLTR_ERR_DIMENSION_MISMATCH = 2,
    GLTR_ERR_FORMAT = 3,
    GLTR_ERR_IO = 4,
    GLTR_ERR_NUMERIC = 5,
    GLTR_ERR_INTERNAL = 6
} gltr_status;

typedef struct gltr_network gltr_network;
typedef struct gltr_feature_set gltr_feature_set;

GLTR_API const char* gltr_version(void);
/* Thread-local; valid until the next failing call on the same thread. */
GLTR_API const char* gltr_last_error(void);
GLTR_API void gltr_string_free(char* s);

/* Caps worker threads used by eval; 0 restores the config value. */
GLTR_API gltr_status gltr_set_num_threads(size_t threads);

/* Experiment commands. `config_json` is an experiment config document.
 * Commands that produce a report return it as a JSON string in *report_json
 * (may be NULL when the caller does not want it). */
GLTR_API gltr_status gltr_cmd_gen(const char* config_json);
GLTR_API gltr_status gltr_cmd_train(const char* config_json, int verbose);
GLTR_API gltr_status gltr_cmd_eval(const char* config_json, char** report_json);
GLTR_API gltr_status gltr_cmd_trace(const char* config_json);
/* *passed is 1 when every parameter group is within tolerance. */
GLTR_API gltr_status gltr_cmd_gradcheck(const char* config_json, int* passed, char** report_json);

/* Normalized config (defaults filled in) as JSON. */
GLTR_API gltr_status gltr_config_normalize(const char* config_json, char** normalized_json);

/* Networks. */
GLTR_API gltr_status gltr_network_load(const char* checkpoint_path, gltr_network** out);
GLTR_API void gltr_network_free(gltr_network* net);
GLTR_API gltr_status gltr_network_info(const gltr_network* net, size_t* frame_dim, size_t* embedding_dim,
                                       size_t* num_identities);
/* frames: frame_dim x num_frames, frame-major (frame t at frames + t*frame_dim).
 * embedding receives embedding_dim values; mask_m (optional) num_frames. */
GLTR_API gltr_status gltr_network_embed(const gltr_network* net, const double* frames, size_t num_frames,
                                        double* embedding, double* mask_m);

/* Feature files. */
GLTR_API gltr_status gltr_features_read(const char* path, gltr_feature_set** out);
GLTR_API void gltr_features_free(gltr_feature_set* set);
GLTR_API gltr_status gltr_features_info(const gltr_feature_set* set, size_t* dim, size_t* count);
GLTR_API gltr_status gltr_features_record(const gltr_feature_set* set, size_t index, uint32_t* person_id,
                                          uint32_t* camera_id, size_t* num_frames, const double** frames);

#ifdef __cplusplus
}
#endif

#endif /* GLTR_GLTR_H */
