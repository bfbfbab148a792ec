#ifndef DPE_NMT_H
#define DPE_NMT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes of every exported function.
 */
typedef enum DpeStatus {
  DPE_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  DPE_STATUS_NULL_POINTER = 1,
  /*
   A string argument was not valid UTF-8.
   */
  DPE_STATUS_INVALID_UTF8 = 2,
  /*
   Bad configuration or argument value.
   */
  DPE_STATUS_USAGE = 3,
  /*
   Malformed or inconsistent input data or files.
   */
  DPE_STATUS_INPUT = 4,
  /*
   Internal failure.
   */
  DPE_STATUS_RUNTIME = 5,
  /*
   A Rust panic was caught at the boundary.
   */
  DPE_STATUS_PANIC = 6,
} DpeStatus;

/*
 Opaque translation model with its vocabularies.
 */
typedef struct DpeModel DpeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 The pointer stays valid until the next call on the same thread.
 */
const char *dpe_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *dpe_version(void);

/*
 Loads a checkpoint and its source/target vocabulary files.

 # Safety
 String arguments must be NUL-terminated; `out` must be writable.
 */
enum DpeStatus dpe_model_load(const char *checkpoint,
                              const char *src_vocab,
                              const char *tgt_vocab,
                              struct DpeModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from [`dpe_model_load`] and not be used afterwards.
 */
void dpe_model_free(struct DpeModel *model);

/*
 Number of scalar parameters of the model.

 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum DpeStatus dpe_model_num_parameters(const struct DpeModel *model, size_t *out);

/*
 Translates one whitespace-tokenized sentence with beam search.

 # Safety
 `model` must be a live handle, `sentence` NUL-terminated and `out`
 writable. The result must be released with [`dpe_string_free`].
 */
enum DpeStatus dpe_translate(const struct DpeModel *model,
                             const char *sentence,
                             size_t beam,
                             char **out);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not be used afterwards.
 */
void dpe_string_free(char *s);

/*
 Reorders a source sentence into target order using a Pharaoh-format
 alignment line.

 # Safety
 String arguments must be NUL-terminated; `out` must be writable. The
 result must be released with [`dpe_string_free`].
 */
enum DpeStatus dpe_reorder(const char *src, const char *tgt, const char *alignment, char **out);

/*
 Per-source-token supervising target positions, formatted as in a keys
 file (`-` for unaligned tokens).

 # Safety
 As for [`dpe_reorder`].
 */
enum DpeStatus dpe_target_keys(const char *src, const char *tgt, const char *alignment, char **out);

/*
 Corpus BLEU of `n` hypothesis lines against `n` reference lines.

 # Safety
 `hyps` and `refs` must point to `n` NUL-terminated strings each; `out`
 must be writable.
 */
enum DpeStatus dpe_corpus_bleu(const char *const *hyps,
                               const char *const *refs,
                               size_t n,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPE_NMT_H */
