#ifndef BFT_H
#define BFT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BFT_OK 0

// A required pointer argument was null.
#define BFT_ERR_NULL 100

// A string argument was not valid UTF-8.
#define BFT_ERR_UTF8 101

// An output buffer was too small; the required length is written back.
#define BFT_ERR_BUFFER 102

// The call panicked. This is a bug.
#define BFT_ERR_PANIC 103

// The handle holds the wrong kind of model for this call.
#define BFT_ERR_KIND 104

// A bank of filter-trees.
typedef struct BftBank BftBank;

// A plain network or an assembled target network.
typedef struct BftModel BftModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *bft_last_error_message(void);

// Loads a `.cnn` file holding either a network or a target network.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t bft_model_load(const char *path, BftModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
int32_t bft_model_save(const BftModel *model, const char *path);

// Number of floats in one `C x H x W` input.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
int32_t bft_model_input_len(const BftModel *model, size_t *out);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
int32_t bft_model_num_classes(const BftModel *model, size_t *out);

// Class logits for one input. On `BFT_ERR_BUFFER`, `*logits_len` holds the
// required length.
//
// # Safety
// `input` must point to `input_len` floats and `logits` to `*logits_len`.
int32_t bft_model_logits(const BftModel *model,
                         const float *input,
                         size_t input_len,
                         float *logits,
                         size_t *logits_len);

// # Safety
// `model` must be null or a handle not yet freed.
void bft_model_free(BftModel *model);

// Pools every layer-`layer` filter-tree of `count` plain networks. Source
// ids double as task names and must be distinct.
//
// # Safety
// `models` and `ids` must each point to `count` valid entries.
int32_t bft_bank_build(const BftModel *const *models,
                       const char *const *ids,
                       size_t count,
                       size_t layer,
                       BftBank **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
int32_t bft_bank_load(const char *path, BftBank **out);

// # Safety
// `bank` must be a live handle and `path` a NUL-terminated string.
int32_t bft_bank_save(const BftBank *bank, const char *path);

// # Safety
// `bank` must be a live handle and `out` a valid pointer.
int32_t bft_bank_len(const BftBank *bank, size_t *out);

// # Safety
// `bank` must be null or a handle not yet freed.
void bft_bank_free(BftBank *bank);

// Samples `n` trees with `seed`, fuses them and adds a freshly initialised
// small-net head with `num_classes` outputs. The result is untrained.
//
// # Safety
// `bank` must be a live handle and `out` a valid pointer.
int32_t bft_target_assemble(const BftBank *bank,
                            size_t n,
                            uint64_t seed,
                            size_t num_classes,
                            BftModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BFT_H */
