#ifndef FPLD_H
#define FPLD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FpldStatus {
  FPLD_STATUS_OK = 0,
  FPLD_STATUS_INVALID_PARAMETER = 1,
  FPLD_STATUS_INVALID_DITHER = 2,
  FPLD_STATUS_PROTOCOL = 3,
  FPLD_STATUS_ENCODING = 4,
  FPLD_STATUS_INFEASIBLE = 5,
  FPLD_STATUS_INFINITE_DIVERGENCE = 6,
  FPLD_STATUS_HETEROGENEOUS = 7,
  FPLD_STATUS_INVALID_INPUT = 8,
  FPLD_STATUS_IO = 9,
  FPLD_STATUS_NULL_POINTER = 10,
  // The output buffer is too small; the required size was written back.
  FPLD_STATUS_BUFFER_TOO_SMALL = 11,
  FPLD_STATUS_PANIC = 12,
} FpldStatus;

typedef enum FpldPolicy {
  FPLD_POLICY_OPTIMAL = 0,
  FPLD_POLICY_UNIFORM = 1,
  FPLD_POLICY_INVERSE = 2,
} FpldPolicy;

// Opaque allocation: the real-valued plan and its whole-bit rounding.
typedef struct FpldAllocation FpldAllocation;

// Opaque bound parameters. Starts from the library defaults for `K`, `V`.
typedef struct FpldBoundParams FpldBoundParams;

// Opaque quantizer: clip level and bits per coordinate.
typedef struct FpldQuantizer FpldQuantizer;

// Opaque simulator configuration.
typedef struct FpldSimConfig FpldSimConfig;

// Fixed header of one uplink payload. On the wire it is 29 little-endian bytes.
typedef struct FpldPayloadHeader {
  uint16_t node_id;
  uint16_t round;
  uint32_t probe_count;
  uint32_t vocab;
  uint8_t bits_per_coord;
  double clip;
  uint64_t dither_seed;
} FpldPayloadHeader;

typedef struct FpldBoundEstimates {
  double statistical_term;
  double probe_term;
  double bandwidth_term;
  double slack_term;
  double total;
  bool small_error;
  bool small_error_calibrated;
} FpldBoundEstimates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL after a success.
// The pointer stays valid until the next `fpld_*` call on this thread.
const char *fpld_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fpld_version(void);

// # Safety
// `out` must be a valid pointer to writable storage for one pointer.
enum FpldStatus fpld_quantizer_new(double clip, uint8_t bits_per_coord, struct FpldQuantizer **out);

// # Safety
// `q` must be NULL or a handle from [`fpld_quantizer_new`] not yet freed.
void fpld_quantizer_free(struct FpldQuantizer *q);

// Cell width `2 clip 2^-bits`, or NaN for a NULL handle.
//
// # Safety
// `q` must be NULL or a live quantizer handle.
double fpld_quantizer_step(const struct FpldQuantizer *q);

// Encode `len` values with the given dither (each in `[-step/2, step/2]`).
// `reconstruction` and `clipped` may be NULL.
//
// # Safety
// Array arguments must point to `len` elements; `q` must be a live handle.
enum FpldStatus fpld_quantizer_encode(const struct FpldQuantizer *q,
                                      const double *values,
                                      const double *dither,
                                      size_t len,
                                      uint32_t *indices,
                                      double *reconstruction,
                                      size_t *clipped);

// # Safety
// Array arguments must point to `len` elements; `q` must be a live handle.
enum FpldStatus fpld_quantizer_decode(const struct FpldQuantizer *q,
                                      const uint32_t *indices,
                                      const double *dither,
                                      size_t len,
                                      double *reconstruction);

// Shared dither for one (seed, node, round, probe): `len` uniforms on
// `[-step/2, step/2)`. Encoder and decoder calling this with the same
// arguments get identical values.
//
// # Safety
// `out` must point to `len` writable doubles.
enum FpldStatus fpld_dither_fill(uint64_t seed,
                                 uint16_t node,
                                 uint16_t round,
                                 uint32_t probe,
                                 double step,
                                 double *out,
                                 size_t len);

// Bytes in the fixed header.
size_t fpld_payload_header_len(void);

// Serialize a payload. On `BufferTooSmall` the needed size is in `written`.
//
// # Safety
// `header` and `written` must be valid; `indices` must hold `count`
// elements and `buf` `cap` bytes.
enum FpldStatus fpld_payload_pack(const struct FpldPayloadHeader *header,
                                  const uint32_t *indices,
                                  size_t count,
                                  uint8_t *buf,
                                  size_t cap,
                                  size_t *written);

// Parse a payload. On `BufferTooSmall` the index count is in `count`.
//
// # Safety
// `bytes` must hold `len` bytes, `indices` `cap` elements; `header` and
// `count` must be valid.
enum FpldStatus fpld_payload_unpack(const uint8_t *bytes,
                                    size_t len,
                                    struct FpldPayloadHeader *header,
                                    uint32_t *indices,
                                    size_t cap,
                                    size_t *count);

// # Safety
// `logits` and `out` must point to `len` elements.
enum FpldStatus fpld_softmax(const double *logits, size_t len, double *out);

// `KL(p || q)` for two probability vectors.
//
// # Safety
// `p` and `q` must point to `len` elements; `out` must be valid.
enum FpldStatus fpld_kl(const double *p, const double *q, size_t len, double *out);

// `KL(softmax(logits) || softmax(logits + eta))` without forming the
// second softmax.
//
// # Safety
// `logits` and `eta` must point to `len` elements; `out` must be valid.
enum FpldStatus fpld_cumulant_kl(const double *logits, const double *eta, size_t len, double *out);

// # Safety
// `out` must be valid.
enum FpldStatus fpld_bound_params_new(size_t k, size_t v, struct FpldBoundParams **out);

// # Safety
// `p` must be NULL or a live handle.
void fpld_bound_params_free(struct FpldBoundParams *p);

// Set one scalar by its config name: `d`, `K`, `n`, `m`, `V`, `delta`,
// `rho`, `L`, `c1`, `c2`, `eps_opt`, `eps_fit`, `cp`, `T`, `B`, `c0`,
// `c_remainder`. Setting `B` clears a per-node list.
//
// # Safety
// `p` must be a live handle and `name` a NUL-terminated string.
enum FpldStatus fpld_bound_params_set(struct FpldBoundParams *p, const char *name, double value);

// Per-node budgets (bits per probe); `len == 0` clears the list.
//
// # Safety
// `p` must be a live handle; `b` must point to `len` doubles.
enum FpldStatus fpld_bound_params_set_b_list(struct FpldBoundParams *p,
                                             const double *b,
                                             size_t len);

// Per-node clip levels; `len == 0` clears the list.
//
// # Safety
// `p` must be a live handle; `l` must point to `len` doubles.
enum FpldStatus fpld_bound_params_set_l_list(struct FpldBoundParams *p,
                                             const double *l,
                                             size_t len);

// Upper bound; the heterogeneous evaluator is used when either per-node
// list is set.
//
// # Safety
// `p` must be a live handle and `out` valid.
enum FpldStatus fpld_bounds_upper(const struct FpldBoundParams *p, struct FpldBoundEstimates *out);

// # Safety
// `p` must be a live handle and `out` valid.
enum FpldStatus fpld_bounds_lower(const struct FpldBoundParams *p, double *out);

// # Safety
// `p` must be a live handle; `value` and `remainder` valid.
enum FpldStatus fpld_bounds_multiround(const struct FpldBoundParams *p,
                                       double *value,
                                       double *remainder);

// Split `b_tot` bits per probe across `k` nodes with weights `w`.
// A negative or NaN `b_max` means no cap.
//
// # Safety
// `w` must point to `k` doubles and `out` be valid.
enum FpldStatus fpld_allocate(const double *w,
                              size_t k,
                              double b_tot,
                              size_t v,
                              double b_max,
                              enum FpldPolicy policy,
                              struct FpldAllocation **out);

// # Safety
// `a` must be NULL or a live handle.
void fpld_allocation_free(struct FpldAllocation *a);

// Node count, or 0 for a NULL handle.
//
// # Safety
// `a` must be NULL or a live handle.
size_t fpld_allocation_len(const struct FpldAllocation *a);

// Real-valued budgets, bits per probe.
//
// # Safety
// `a` must be a live handle and `b` point to `len` doubles.
enum FpldStatus fpld_allocation_real(const struct FpldAllocation *a, double *b, size_t len);

// Whole bits per coordinate and the matching budgets `bits * V`.
// Either output may be NULL.
//
// # Safety
// `a` must be a live handle; non-NULL outputs must hold `len` elements.
enum FpldStatus fpld_allocation_integer(const struct FpldAllocation *a,
                                        uint8_t *bits_per_coord,
                                        double *b,
                                        size_t len);

// Objective `F` of the real and of the integer plan.
//
// # Safety
// `a` must be a live handle; outputs valid.
enum FpldStatus fpld_allocation_objective(const struct FpldAllocation *a,
                                          double *real,
                                          double *integer);

// Parse simulator settings from TOML keys (the body of a `[sim]` table);
// keys not given keep their defaults.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` valid.
enum FpldStatus fpld_sim_config_from_toml(const char *toml, struct FpldSimConfig **out);

// # Safety
// `c` must be NULL or a live handle.
void fpld_sim_config_free(struct FpldSimConfig *c);

// Run one seed; writes the mean KL over probes and, if `clipped` is not
// NULL, the number of clamped coordinates.
//
// # Safety
// `c` must be a live handle; `kl` valid.
enum FpldStatus fpld_sim_run(const struct FpldSimConfig *c,
                             uint64_t seed,
                             double *kl,
                             size_t *clipped);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FPLD_H */
