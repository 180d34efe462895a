/* Retinal temperature and absorption estimation: C interface.
 *
 * All objects are opaque handles created by a *_build / *_load / *_default
 * call and released with the matching *_free. Every fallible call returns an
 * rtn_status; on failure rtn_last_error() describes the problem until the
 * next failing call on the same thread.
 */
#ifndef RETINEST_RETINEST_H
#define RETINEST_RETINEST_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RTN_API __declspec(dllexport)
#else
#define RTN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rtn_status {
  RTN_OK = 0,
  RTN_INTERNAL = 1,   /* unexpected failure */
  RTN_VALIDATION = 2, /* bad argument, config or input file */
  RTN_SOLVER = 3      /* numerical failure */
} rtn_status;

typedef enum rtn_truth { RTN_TRUTH_FULL = 0, RTN_TRUTH_ROM = 1 } rtn_truth;

typedef struct rtn_config rtn_config;
typedef struct rtn_full_model rtn_full_model;
typedef struct rtn_rom rtn_rom;

RTN_API const char* rtn_last_error(void);
RTN_API const char* rtn_version(void);

/* -- configuration -------------------------------------------------------- */

RTN_API rtn_status rtn_config_default(rtn_config** out);
RTN_API rtn_status rtn_config_load(const char* path, rtn_config** out);
RTN_API void rtn_config_free(rtn_config* config);
/* 16 hex digits plus terminator; len must be at least 17. */
RTN_API rtn_status rtn_config_hash(const rtn_config* config, char* buf, size_t len);
RTN_API rtn_status rtn_config_write(const rtn_config* config, const char* path);
RTN_API int rtn_config_parameters(const rtn_config* config);
RTN_API rtn_status rtn_config_set_parameters(rtn_config* config, int p);
/* alpha has p entries; for p = 1 alpha_ch keeps the fixed value. */
RTN_API rtn_status rtn_config_set_alpha_true(rtn_config* config, const double* alpha, int p);

/* -- full-order model ----------------------------------------------------- */

RTN_API rtn_status rtn_full_model_build(const rtn_config* config, rtn_full_model** out);
RTN_API void rtn_full_model_free(rtn_full_model* model);
RTN_API int rtn_full_model_size(const rtn_full_model* model);
/* Implicit Euler from zero; T_vol and T_peak receive `steps` samples each
 * (either may be NULL). alpha = {alpha_rpe, alpha_ch}. */
RTN_API rtn_status rtn_full_model_simulate(const rtn_full_model* model, const double alpha[2],
                                           const double* u, size_t steps, double dt,
                                           double* T_vol, double* T_peak);
/* Configured input at the configured truth; CSV header t,u,T_vol,T_peak. */
RTN_API rtn_status rtn_full_model_write_trace(const rtn_full_model* model,
                                              const rtn_config* config, const char* csv_path);
/* Grid, layer and node summary as JSON. */
RTN_API rtn_status rtn_full_model_write_summary(const rtn_full_model* model,
                                                const rtn_config* config, const char* json_path);

/* -- reduced model -------------------------------------------------------- */

RTN_API rtn_status rtn_rom_reduce(const rtn_full_model* full, const rtn_config* config, int p,
                                  rtn_rom** out);
RTN_API rtn_status rtn_rom_load(const char* path, rtn_rom** out);
RTN_API rtn_status rtn_rom_save(const rtn_rom* rom, const char* path);
RTN_API void rtn_rom_free(rtn_rom* rom);
RTN_API int rtn_rom_order(const rtn_rom* rom);
RTN_API int rtn_rom_deim_order(const rtn_rom* rom);
RTN_API int rtn_rom_parameters(const rtn_rom* rom);
/* Max relative errors against the full model over the basis grid of D. */
RTN_API rtn_status rtn_rom_error_report(const rtn_full_model* full, const rtn_rom* rom,
                                        const rtn_config* config, const char* csv_path);

/* -- experiments ---------------------------------------------------------- */

/* Noisy trace of the configured experiment (SimTrace CSV plus .meta.json).
 * `full` may be NULL for ROM truth; `rom` may be NULL for full truth. */
RTN_API rtn_status rtn_simulate(const rtn_config* config, const rtn_full_model* full,
                                const rtn_rom* rom, rtn_truth truth, uint64_t seed,
                                const char* csv_path);
/* Runs "ekf" or "mhe" on a measurement CSV and writes the estimate record. */
RTN_API rtn_status rtn_estimate(const rtn_config* config, const rtn_rom* rom,
                                const char* estimator, const char* measurement_csv,
                                const char* out_csv);
/* Noise ensemble of the configured experiment; report files go to out_dir. */
RTN_API rtn_status rtn_bench(const rtn_config* config, const rtn_full_model* full,
                             const rtn_rom* rom, uint64_t seed, const char* out_dir);
/* EKF vs MHE on a spot collection (file or directory with spot_meta sidecars).
 * outliers: 0 keep all, 1 exclude, 2 only outliers. */
RTN_API rtn_status rtn_compare(const rtn_config* config, const rtn_full_model* full,
                               const rtn_rom* rom, const char* spots_path, int outliers,
                               const char* out_dir);
/* Writes `count` noisy full-order spots with sidecars into dir, truth drawn
 * from N(mean, std) per parameter. */
RTN_API rtn_status rtn_synthetic_spots(const rtn_config* config, const rtn_full_model* full,
                                       const rtn_rom* rom, int count, const double* mean,
                                       const double* std_dev, uint64_t seed, const char* dir);
/* Offline least-squares alpha over a whole trace. Uses `rom` when non-NULL,
 * otherwise `full`. alpha_out receives p values; json_path may be NULL. */
RTN_API rtn_status rtn_identify(const rtn_config* config, const rtn_full_model* full,
                                const rtn_rom* rom, int p, const char* measurement_csv,
                                double* alpha_out, const char* json_path);

#ifdef __cplusplus
}
#endif

#endif /* RETINEST_RETINEST_H */
