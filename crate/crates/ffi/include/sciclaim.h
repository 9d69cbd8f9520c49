#ifndef SCICLAIM_H
#define SCICLAIM_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Result code of every fallible call.
typedef enum SciclaimStatus {
  SCICLAIM_STATUS_OK = 0,
  SCICLAIM_STATUS_NULL_ARGUMENT = 1,
  SCICLAIM_STATUS_INVALID_UTF8 = 2,
  SCICLAIM_STATUS_INVALID_ARGUMENT = 3,
  SCICLAIM_STATUS_IO = 4,
  SCICLAIM_STATUS_PARSE = 5,
  SCICLAIM_STATUS_NOT_FOUND = 6,
  SCICLAIM_STATUS_NO_LINKABLE_ENTITY = 7,
  SCICLAIM_STATUS_NO_CANDIDATES = 8,
  SCICLAIM_STATUS_BACKEND = 9,
  SCICLAIM_STATUS_INSUFFICIENT_DATA = 10,
  SCICLAIM_STATUS_PANIC = 11,
} SciclaimStatus;

typedef enum SciclaimAlphaMetric {
  SCICLAIM_ALPHA_METRIC_NOMINAL = 0,
  SCICLAIM_ALPHA_METRIC_ORDINAL = 1,
  SCICLAIM_ALPHA_METRIC_INTERVAL = 2,
} SciclaimAlphaMetric;

// Loaded concept knowledge base.
typedef struct SciclaimKb SciclaimKb;

// Perplexity, NLI and generation backends.
typedef struct SciclaimScorers SciclaimScorers;

// Loaded concept embedding table.
typedef struct SciclaimVectors SciclaimVectors;

// ROUGE-1, ROUGE-2 and ROUGE-L F1.
typedef struct SciclaimRouge {
  double r1;
  double r2;
  double rl;
} SciclaimRouge;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sciclaim_version(void);

// Message for the last failed call on this thread, or NULL. Valid until
// the next call into the library from this thread.
const char *sciclaim_last_error(void);

// Release a string returned by this library. NULL is ignored.
//
// # Safety
// `s` is NULL or was returned by this library and not yet freed.
void sciclaim_string_free(char *s);

// Load a concept knowledge base from a JSON-lines file.
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum SciclaimStatus sciclaim_kb_load(const char *path, struct SciclaimKb **out);

// Number of concepts in the knowledge base; 0 for NULL.
//
// # Safety
// `kb` is NULL or a live handle.
size_t sciclaim_kb_len(const struct SciclaimKb *kb);

// # Safety
// `kb` is NULL or a handle from [`sciclaim_kb_load`] not yet freed.
void sciclaim_kb_free(struct SciclaimKb *kb);

// Load concept vectors from a CSV file (`cui,v1,...,vd`).
//
// # Safety
// `path` is a NUL-terminated string; `out` is writable.
enum SciclaimStatus sciclaim_vectors_load(const char *path, struct SciclaimVectors **out);

// Embedding dimension; 0 for NULL.
//
// # Safety
// `v` is NULL or a live handle.
size_t sciclaim_vectors_dim(const struct SciclaimVectors *v);

// # Safety
// `v` is NULL or a handle from [`sciclaim_vectors_load`] not yet freed.
void sciclaim_vectors_free(struct SciclaimVectors *v);

// In-process scorers: a character trigram perplexity model trained on the
// lines of `ppl_corpus_path`, NLI from `nli_table_path` (JSON lines; NULL
// for uniform probabilities) and the echo generator.
//
// # Safety
// `ppl_corpus_path` is a NUL-terminated string; `nli_table_path` is NULL
// or a NUL-terminated string; `out` is writable.
enum SciclaimStatus sciclaim_scorers_local(const char *ppl_corpus_path,
                                           const char *nli_table_path,
                                           struct SciclaimScorers **out);

// Scorers served over HTTP at `base_url` (`/v1/perplexity`, `/v1/nli`,
// `/v1/generate`).
//
// # Safety
// `base_url` is a NUL-terminated string; `out` is writable.
enum SciclaimStatus sciclaim_scorers_http(const char *base_url,
                                          uint64_t timeout_ms,
                                          struct SciclaimScorers **out);

// # Safety
// `s` is NULL or a scorer handle not yet freed.
void sciclaim_scorers_free(struct SciclaimScorers *s);

// Linked entity mentions in `text` as a JSON array.
//
// # Safety
// `kb` is a live handle; `text` is a NUL-terminated string; `out_json` is
// writable.
enum SciclaimStatus sciclaim_link(const struct SciclaimKb *kb, const char *text, char **out_json);

// Knowledge-base informed negation of `claim`, as a JSON object, using the
// `top_n` nearest same-type siblings of each linked entity.
//
// # Safety
// Handles are live; `claim` is a NUL-terminated string; `out_json` is
// writable.
enum SciclaimStatus sciclaim_negate(const struct SciclaimKb *kb,
                                    const struct SciclaimVectors *vectors,
                                    const struct SciclaimScorers *scorers,
                                    const char *claim,
                                    size_t top_n,
                                    char **out_json);

// Random same-type entity replacement baseline, as a JSON object.
//
// # Safety
// `kb` is a live handle; `claim` is a NUL-terminated string; `out_json`
// is writable.
enum SciclaimStatus sciclaim_random_negation(const struct SciclaimKb *kb,
                                             const char *claim,
                                             uint64_t seed,
                                             char **out_json);

// ROUGE F1 scores of `candidate` against `reference`.
//
// # Safety
// Both strings are NUL-terminated; `out` is writable.
enum SciclaimStatus sciclaim_rouge(const char *candidate,
                                   const char *reference,
                                   struct SciclaimRouge *out);

// Krippendorff's alpha over a row-major `raters` x `items` matrix; NaN
// marks a missing rating.
//
// # Safety
// `ratings` points to `raters * items` readable doubles; `out` is writable.
enum SciclaimStatus sciclaim_alpha(const double *ratings,
                                   size_t raters,
                                   size_t items,
                                   enum SciclaimAlphaMetric metric,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCICLAIM_H */
