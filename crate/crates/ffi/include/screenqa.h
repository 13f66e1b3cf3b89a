#ifndef SCREENQA_H
#define SCREENQA_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every entry point.
typedef enum TqaStatus {
  TQA_STATUS_OK = 0,
  TQA_STATUS_NULL_ARGUMENT = 1,
  TQA_STATUS_INVALID_UTF8 = 2,
  TQA_STATUS_IO = 3,
  TQA_STATUS_PARSE = 4,
  TQA_STATUS_INVALID = 5,
  TQA_STATUS_CHECKPOINT_MISMATCH = 6,
  TQA_STATUS_PANIC = 7,
} TqaStatus;

// A trained model bound to the knowledge base it was trained against.
typedef struct TqaEngine TqaEngine;

// A loaded knowledge base.
typedef struct TqaKb TqaKb;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads a knowledge base from a JSON file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum TqaStatus tqa_kb_load(const char *path, struct TqaKb **out);

// Number of candidate answers the knowledge base offers.
//
// # Safety
// `kb` must come from [`tqa_kb_load`] and `out` must be writable.
enum TqaStatus tqa_kb_pool_size(const struct TqaKb *kb, uintptr_t *out);

// # Safety
// `kb` must come from [`tqa_kb_load`] and not be used afterwards. Null is
// ignored.
void tqa_kb_free(struct TqaKb *kb);

// Loads a checkpoint. The knowledge base's answer pool must match the one
// the model was trained on; the engine does not keep a reference to `kb`.
//
// # Safety
// `checkpoint_path` must be a NUL-terminated string, `kb` a live handle and
// `out` writable.
enum TqaStatus tqa_engine_load(const char *checkpoint_path,
                               const struct TqaKb *kb,
                               struct TqaEngine **out);

// Ranks the answer pool for one question.
//
// The request is a JSON object
// `{"question": [tokens], "steps": [step or null, ...], "top_k": n}` with
// `2w+1` steps centred on the question's sentence, each step
// `{"tokens": [...], "tool": id, "panel": id, "dialog": id}`. The response is
// `{"ranking": [{"id", "score"}, ...], "attention": {...}}`, best first.
//
// # Safety
// `engine` must be a live handle, `request_json` a NUL-terminated string and
// `out_json` writable. The returned string belongs to the caller.
enum TqaStatus tqa_engine_rank(const struct TqaEngine *engine,
                               const char *request_json,
                               char **out_json);

// # Safety
// `engine` must come from [`tqa_engine_load`] and not be used afterwards.
// Null is ignored.
void tqa_engine_free(struct TqaEngine *engine);

// # Safety
// `s` must be a string returned by this library, released once. Null is
// ignored.
void tqa_string_free(char *s);

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *tqa_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCREENQA_H */
