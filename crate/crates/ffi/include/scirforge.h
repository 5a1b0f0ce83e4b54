#ifndef SCIRFORGE_H
#define SCIRFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScfStatus {
  SCF_STATUS_OK = 0,
  SCF_STATUS_NULL_POINTER = 1,
  SCF_STATUS_INVALID_UTF8 = 2,
  SCF_STATUS_INVALID_ARGUMENT = 3,
  SCF_STATUS_IO = 4,
  SCF_STATUS_PARSE = 5,
  SCF_STATUS_PANIC = 6,
} ScfStatus;

// Opaque BM25 index handle.
typedef struct ScfIndex ScfIndex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next failing call on this thread; do not free.
const char *scf_last_error(void);

// Library version as a static string; do not free.
const char *scf_version(void);

// Release a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void scf_string_free(char *s);

// Build a BM25 index (k1 = 1.2, b = 0.75) from a datasets JSON Lines file
// and, for the with-paper configuration, an aspects JSON Lines file
// (`aspects_path` may be null).
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum ScfStatus scf_index_build(const char *datasets_path,
                               const char *aspects_path,
                               bool with_paper,
                               struct ScfIndex **out);

// Load an index written by the pipeline's `index` stage.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum ScfStatus scf_index_load(const char *path, struct ScfIndex **out);

// Number of document units, or 0 for a null handle.
//
// # Safety
// `index` must be null or a live handle.
size_t scf_index_unit_count(const struct ScfIndex *index);

// Rank datasets for `query`; writes a JSON array of
// `{"dataset_id", "score"}` objects, best first, to `out_json`.
//
// # Safety
// `index` must be a live handle; `query` NUL-terminated; `out_json` writable.
enum ScfStatus scf_index_search(const struct ScfIndex *index,
                                const char *query,
                                size_t k,
                                char **out_json);

// Release an index handle. Null is ignored.
//
// # Safety
// `index` must come from this library and not have been freed.
void scf_index_free(struct ScfIndex *index);

// `exp(mean(logprobs))`; every logprob must be finite and <= 0.
//
// # Safety
// `logprobs` must point to `len` doubles.
enum ScfStatus scf_answer_confidence(const double *logprobs, size_t len, double *out);

// Belief shift `conf_with - conf_without` and whether it accepts.
//
// # Safety
// Out-pointers must be writable.
enum ScfStatus scf_filter_decide(double conf_with,
                                 double conf_without,
                                 double *out_delta,
                                 bool *out_accept);

// ROUGE-L precision, recall and F over lowercase alphanumeric tokens.
//
// # Safety
// Strings must be NUL-terminated; out-pointers writable.
enum ScfStatus scf_rouge_l(const char *prediction,
                           const char *reference,
                           double *out_precision,
                           double *out_recall,
                           double *out_f);

// `1 - sum p_i^2` over six cognitive-level counts.
//
// # Safety
// `counts` must point to six integers.
enum ScfStatus scf_diversity_index(const uint64_t *counts, double *out);

// Recall@k over runs given as gold ranks (1-based, 0 = not retrieved).
//
// # Safety
// `ranks` must point to `n` values; `out` writable.
enum ScfStatus scf_recall_at_k(const size_t *ranks, size_t n, size_t k, double *out);

// Mean reciprocal rank with a cutoff, over gold ranks as in
// [`scf_recall_at_k`].
//
// # Safety
// `ranks` must point to `n` values; `out` writable.
enum ScfStatus scf_mrr_at(const size_t *ranks, size_t n, size_t cutoff, double *out);

// Whether a question type (e.g. "Causal Antecedent") takes long-form
// answers.
//
// # Safety
// `type_name` must be NUL-terminated; `out_is_long` writable.
enum ScfStatus scf_answer_form_is_long(const char *type_name, bool *out_is_long);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCIRFORGE_H */
