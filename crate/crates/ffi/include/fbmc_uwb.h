#ifndef FBMC_UWB_H
#define FBMC_UWB_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FbmcStatus {
  FBMC_STATUS_OK = 0,
  FBMC_STATUS_NULL_POINTER = 1,
  FBMC_STATUS_INVALID_ARGUMENT = 2,
  FBMC_STATUS_BUFFER_TOO_SMALL = 3,
  FBMC_STATUS_CONFIG = 10,
  FBMC_STATUS_DOMAIN = 11,
  FBMC_STATUS_DESIGN = 12,
  FBMC_STATUS_FRAMING = 13,
  FBMC_STATUS_ESTIMATION = 14,
  FBMC_STATUS_DIMENSION = 15,
  FBMC_STATUS_COVERAGE = 16,
  FBMC_STATUS_MEASUREMENT = 17,
  FBMC_STATUS_PLANNING = 18,
  FBMC_STATUS_IO = 19,
  FBMC_STATUS_PARSE = 20,
  FBMC_STATUS_PANIC = 99,
} FbmcStatus;

typedef enum FbmcForm {
  FBMC_FORM_JOINT = 0,
  FBMC_FORM_JOINT_WHITENED = 1,
  FBMC_FORM_PER_BAND = 2,
} FbmcForm;

/**
 * Opaque BER table.
 */
typedef struct FbmcBerTable FbmcBerTable;

/**
 * Opaque transmitter/receiver pair.
 */
typedef struct FbmcLink FbmcLink;

/**
 * Sweep parameters; fill with [`fbmc_sweep_params_default`] first.
 */
typedef struct FbmcSweepParams {
  uint64_t seed;
  size_t max_trials;
  uint64_t min_errors;
  size_t symbols_per_trial;
  /**
   * 0 = AWGN, 1 = LOS, 2 = NLOS.
   */
  uint32_t channel;
  size_t interferers;
  double interferer_bandwidth_hz;
  double interferer_level_db;
} FbmcSweepParams;

/**
 * One row of a BER table.
 */
typedef struct FbmcBerPoint {
  double snr_db;
  enum FbmcForm form;
  double ber;
  uint64_t bits;
  uint64_t errors;
  /**
   * Nonzero when fewer than the target error count was observed.
   */
  uint8_t censored;
} FbmcBerPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *fbmc_last_error(void);

/**
 * Static description of a status code.
 */
const char *fbmc_status_str(enum FbmcStatus status);

/**
 * Build a link from a shipped preset name.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FbmcStatus fbmc_link_from_preset(const char *name, struct FbmcLink **out);

/**
 * Build a link from configuration TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FbmcStatus fbmc_link_from_toml(const char *toml, struct FbmcLink **out);

/**
 * # Safety
 * `link` must come from a `fbmc_link_from_*` call and not be used again.
 */
void fbmc_link_free(struct FbmcLink *link);

/**
 * Number of subcarriers, or 0 for a null handle.
 *
 * # Safety
 * `link` must be null or a live handle.
 */
size_t fbmc_link_num_subcarriers(const struct FbmcLink *link);

/**
 * Payload bits carried by `symbols` QAM symbols per stream.
 *
 * # Safety
 * `link` must be null or a live handle.
 */
size_t fbmc_link_bits_per_frame(const struct FbmcLink *link, size_t symbols);

/**
 * Sample rate in Hz, or 0 for a null handle.
 *
 * # Safety
 * `link` must be null or a live handle.
 */
double fbmc_link_sample_rate(const struct FbmcLink *link);

/**
 * Modulate `nbits` bits (one bit per byte, 0 or 1) into interleaved I/Q
 * `float` samples. `*out_len` receives the number of complex samples;
 * when `out_iq` is null or too small only the length is reported.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum FbmcStatus fbmc_link_transmit(const struct FbmcLink *link,
                                   const uint8_t *bits,
                                   size_t nbits,
                                   float *out_iq,
                                   size_t capacity,
                                   size_t *out_len);

/**
 * Demodulate `num_samples` interleaved I/Q samples carrying `symbols` QAM
 * symbols per stream over an ideal channel with per-sample noise variance
 * `noise_var`. Writes `fbmc_link_bits_per_frame(link, symbols)` bits.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum FbmcStatus fbmc_link_receive(const struct FbmcLink *link,
                                  const float *iq,
                                  size_t num_samples,
                                  size_t symbols,
                                  double noise_var,
                                  enum FbmcForm form,
                                  uint8_t *out_bits,
                                  size_t capacity);

/**
 * Defaults matching the CLI `ber` subcommand.
 */
struct FbmcSweepParams fbmc_sweep_params_default(void);

/**
 * Run a BER sweep of the joint and per-band equalizers on a preset.
 *
 * # Safety
 * `preset_name` must be a NUL-terminated string, `snr_db` valid for
 * `num_snr` values, `params` and `out` valid pointers.
 */
enum FbmcStatus fbmc_ber_sweep(const char *preset_name,
                               const double *snr_db,
                               size_t num_snr,
                               const struct FbmcSweepParams *params,
                               struct FbmcBerTable **out);

/**
 * # Safety
 * `table` must be null or a live handle.
 */
size_t fbmc_ber_table_len(const struct FbmcBerTable *table);

/**
 * # Safety
 * `table` must be a live handle and `out` a valid pointer.
 */
enum FbmcStatus fbmc_ber_table_get(const struct FbmcBerTable *table,
                                   size_t index,
                                   struct FbmcBerPoint *out);

/**
 * Write the table as CSV (`snr_db,form,ber,bits,errors,seed`).
 *
 * # Safety
 * `table` must be a live handle and `path` a NUL-terminated string.
 */
enum FbmcStatus fbmc_ber_table_write_csv(const struct FbmcBerTable *table, const char *path);

/**
 * # Safety
 * `table` must come from [`fbmc_ber_sweep`] and not be used again.
 */
void fbmc_ber_table_free(struct FbmcBerTable *table);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBMC_UWB_H */
