/* M3PT RGB-T prompt tracker — C API.
 *
 * All functions return m3pt_status; on failure m3pt_last_error() carries a
 * human-readable message for the calling thread. Handles are opaque and must
 * be released with their matching _free function. Text results are allocated
 * by the library and released with m3pt_free_text().
 */
#ifndef M3PT_M3PT_H
#define M3PT_M3PT_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum m3pt_status {
  M3PT_OK = 0,
  M3PT_ERR_USAGE = 1,   /* bad arguments or configuration */
  M3PT_ERR_DATA = 2,    /* missing/inconsistent files or sequence data */
  M3PT_ERR_NUMERIC = 3, /* non-finite values or failed numeric contract */
  M3PT_ERR_INTERNAL = 4
} m3pt_status;

typedef struct m3pt_config m3pt_config;
typedef struct m3pt_model m3pt_model;

/* Message for the last failing call on this thread; never NULL. */
const char* m3pt_last_error(void);

void m3pt_free_text(char* text);

/* ---- configuration ----------------------------------------------------- */

/* All-defaults configuration. */
m3pt_status m3pt_config_create(m3pt_config** out);
/* Parse a key=value config file; diagnostics aggregate every problem. */
m3pt_status m3pt_config_load(const char* path, m3pt_config** out);
/* Apply one key=value override (revalidates the whole config). */
m3pt_status m3pt_config_set(m3pt_config* cfg, const char* key, const char* value);
/* 16-hex-digit hash of the canonical serialized form. */
m3pt_status m3pt_config_hash(const m3pt_config* cfg, char* buf, size_t bufsize);
m3pt_status m3pt_config_write(const m3pt_config* cfg, const char* path);
void m3pt_config_free(m3pt_config* cfg);

/* ---- model ------------------------------------------------------------- */

/* Randomly initialized foundation (seed-deterministic) plus a fresh
 * zero-transparent prompter bank. */
m3pt_status m3pt_model_create(const m3pt_config* cfg, unsigned long long seed,
                              m3pt_model** out);
/* Apply a weight archive. Archives holding only "prompter/" entries update
 * the bank; full archives must cover every foundation tensor too. */
m3pt_status m3pt_model_load_archive(m3pt_model* model, const char* path);
/* prompters_only != 0 writes just the tuned parameters. */
m3pt_status m3pt_model_save_archive(const m3pt_model* model, const char* path,
                                    int prompters_only);
void m3pt_model_free(m3pt_model* model);

/* ---- commands ----------------------------------------------------------- */

/* Track one sequence directory; writes one "x,y,w,h" line per frame. */
m3pt_status m3pt_track_sequence(m3pt_model* model, const char* sequence_dir,
                                const char* out_path);

/* Run the prompt-tuning loop on synthetic data. Writes:
 *   <out_prefix>            weight archive with the tuned parameters
 *   <out_prefix>.manifest   config hash, step count, final loss
 *   <out_prefix>.loss.csv   per-step loss history
 * max_steps < 0 runs the config's full schedule. */
m3pt_status m3pt_train(m3pt_model* model, long long max_steps,
                       const char* out_prefix);

/* Evaluate result files against a benchmark manifest. results_dir holds one
 * <sequence_name>.txt per sequence. Writes curves.csv / summary.txt (and
 * attributes.csv when the benchmark carries attributes) into out_dir. */
m3pt_status m3pt_eval(const m3pt_config* cfg, const char* manifest_path,
                      const char* results_dir, const char* out_dir);

/* Parameter budget table for the configured architecture. */
m3pt_status m3pt_params_report(const m3pt_config* cfg, char** out_text);

/* Fusion-location cost sweep over [sweep_lo, sweep_hi]. */
m3pt_status m3pt_cost_report(const m3pt_config* cfg, int sweep_lo, int sweep_hi,
                             char** out_text);

/* Quick invariant suite; returns M3PT_ERR_NUMERIC when any check fails. */
m3pt_status m3pt_selftest(char** out_text);

#ifdef __cplusplus
}
#endif

#endif /* M3PT_M3PT_H */
