#ifndef IMLY_H
#define IMLY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes. Zero means success.
typedef enum ImlyStatus {
  IMLY_STATUS_OK = 0,
  // A required pointer argument was NULL.
  IMLY_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  IMLY_STATUS_INVALID_UTF8 = 2,
  // The config text had an unknown key or an out-of-range value.
  IMLY_STATUS_INVALID_CONFIG = 3,
  // The audio could not be decoded or was too short.
  IMLY_STATUS_INVALID_AUDIO = 4,
  // A model file was missing or malformed.
  IMLY_STATUS_MODEL_ERROR = 5,
  // Redecode was asked for audio whose acoustics are not cached.
  IMLY_STATUS_CACHE_MISS = 6,
  // A bug inside the library, including caught panics.
  IMLY_STATUS_INTERNAL = 7,
} ImlyStatus;

// Opaque pipeline handle.
typedef struct ImlyPipeline ImlyPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads models from `data_dir` and stores a new handle in `*out`.
//
// `data_dir` may be NULL, in which case `$IMLY_DATA_DIR` and then
// `./data` are used.
//
// # Safety
// `data_dir` must be NULL or a NUL-terminated string. `out` must be a
// valid pointer to writable storage for one handle pointer.
enum ImlyStatus imly_pipeline_open(const char *data_dir, struct ImlyPipeline **out);

// Releases a handle. NULL is ignored.
//
// # Safety
// `pipeline` must be NULL or a handle from [`imly_pipeline_open`] that
// has not been freed and is not in use on another thread.
void imly_pipeline_free(struct ImlyPipeline *pipeline);

// Imagines lyrics for a WAV file held in memory.
//
// `config_text` holds `key = value` lines and may be NULL for defaults.
// On success `*out_json` receives the result document, to be released
// with [`imly_string_free`].
//
// # Safety
// `pipeline` must be a live handle, `wav` must point to `len` readable
// bytes, `config_text` must be NULL or NUL-terminated, and `out_json`
// must be writable.
enum ImlyStatus imly_imagine_wav(const struct ImlyPipeline *pipeline,
                                 const uint8_t *wav,
                                 size_t len,
                                 const char *config_text,
                                 char **out_json);

// Re-runs word decoding for audio imagined earlier on this handle.
//
// Only decoder and channel settings may differ from the original run;
// a change to the acoustic settings yields `IMLY_STATUS_CACHE_MISS`.
//
// # Safety
// As for [`imly_imagine_wav`]; `audio_sha256` must be NUL-terminated.
enum ImlyStatus imly_redecode(const struct ImlyPipeline *pipeline,
                              const char *audio_sha256,
                              const char *config_text,
                              char **out_json);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must be NULL or a string from this library not yet freed.
void imly_string_free(char *s);

// Message for the most recent failure on the calling thread, or NULL.
//
// The pointer stays valid until the next library call on this thread.
const char *imly_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *imly_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMLY_H */
