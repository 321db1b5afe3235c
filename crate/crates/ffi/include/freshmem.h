#ifndef FRESHMEM_H
#define FRESHMEM_H

#include <stdbool.h>
#include <stdint.h>

#define FM_OK 0

#define FM_ERR_NULL -1

#define FM_ERR_INVALID_ARG -2

#define FM_ERR_OUT_OF_RANGE -3

#define FM_ERR_CAPACITY -4

#define FM_ERR_INTEGRITY -5

#define FM_ERR_HALTED -6

#define FM_ERR_PARSE -7

#define FM_ERR_INTERNAL -8

typedef enum FmFormat {
  FM_FORMAT_FLAT = 0,
  FM_FORMAT_UNEVEN = 1,
  FM_FORMAT_FULL = 2,
} FmFormat;

// Simulator handle.
typedef struct FmSimulator FmSimulator;

// Version store handle.
typedef struct FmStore FmStore;

typedef struct FmUpdate {
  uint64_t new_version;
  enum FmFormat format_after;
  bool leading_advanced;
  bool reset_triggered;
  bool upgraded_to_uneven;
  bool normalized;
  bool upgraded_to_full;
} FmUpdate;

typedef struct FmUsage {
  uint64_t pages_total;
  uint64_t pages_touched;
  uint64_t pages_flat;
  uint64_t pages_uneven;
  uint64_t pages_full;
  uint64_t static_bytes;
  uint64_t dynamic_bytes;
  uint64_t peak_bytes;
} FmUsage;

typedef struct FmAccess {
  uint64_t data_bytes;
  uint64_t mac_bytes;
  uint64_t device_bytes;
  uint32_t device_transactions;
  uint32_t tree_fetches;
  double latency_ns;
} FmAccess;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *fm_last_error_message(void);

// Creates a store with the default 4 KB page / 64 B block geometry.
//
// # Safety
// `out` must be valid for writes.
int fm_store_new(uint32_t stealth_bits,
                 uint32_t upper_bits,
                 uint32_t reset_exp,
                 uint64_t protected_bytes,
                 uint64_t capacity_bytes,
                 uint64_t seed,
                 struct FmStore **out);

// # Safety
// `store` must be null or a handle from [`fm_store_new`] not yet freed.
void fm_store_free(struct FmStore *store);

// # Safety
// `store` must be a live handle and `out` valid for writes.
int fm_store_read_version(struct FmStore *store, uint64_t addr, uint64_t *out);

// # Safety
// `store` must be a live handle; `out` may be null.
int fm_store_update_version(struct FmStore *store, uint64_t addr, struct FmUpdate *out);

// Re-randomizes `page` and returns its new base version in `new_base`.
//
// # Safety
// `store` must be a live handle; `new_base` may be null.
int fm_store_reset_page(struct FmStore *store, uint64_t page, uint64_t *new_base);

// # Safety
// `store` must be a live handle and `out` valid for writes.
int fm_store_usage(const struct FmStore *store, struct FmUsage *out);

// Creates a simulator from a JSON run configuration; the trace section is
// ignored and events are fed with [`fm_simulator_access`].
//
// # Safety
// `config_json` must be a nul-terminated string and `out` valid for writes.
int fm_simulator_new_json(const char *config_json, struct FmSimulator **out);

// # Safety
// `sim` must be null or a handle from [`fm_simulator_new_json`] not yet freed.
void fm_simulator_free(struct FmSimulator *sim);

// Processes one access. After a kill switch or capacity rejection every
// further call fails with [`FM_ERR_HALTED`].
//
// # Safety
// `sim` must be a live handle; `out` may be null.
int fm_simulator_access(struct FmSimulator *sim,
                        bool is_write,
                        uint64_t addr,
                        struct FmAccess *out);

// Statistics document of the run so far. Release with [`fm_string_free`].
//
// # Safety
// `sim` must be a live handle and `out` valid for writes.
int fm_simulator_stats_json(const struct FmSimulator *sim, char **out);

// # Safety
// `s` must be null or a string returned by this library not yet freed.
void fm_string_free(char *s);

// Probability that `n` leading-version advances trigger no reset at
// reset probability 2^-`reset_exp`.
double fm_no_reset_prob(double n, uint32_t reset_exp);

// Probability that any interval of `interval_updates` advances passes
// without a reset over `total_updates` advances.
//
// # Safety
// `out` must be valid for writes.
int fm_exhaustion_bound(double total_updates,
                        double interval_updates,
                        double interval_count,
                        uint32_t reset_exp,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRESHMEM_H */
