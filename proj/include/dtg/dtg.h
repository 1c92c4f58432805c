#ifndef DTG_H
#define DTG_H

/* C surface of the digital twin generator. A session carries option state
 * and the last error message; commands read a flat JSON run configuration
 * plus optional flag-style overrides and write their artifacts to the
 * configured output directory. */

#ifdef __cplusplus
extern "C" {
#endif

typedef struct dtg_session dtg_session;

typedef enum dtg_status {
    DTG_OK = 0,
    DTG_ERR_CONFIG = 1,    /* bad flags, config keys, or option values */
    DTG_ERR_DATA = 2,      /* unreadable or inconsistent data/artifacts */
    DTG_ERR_NUMERIC = 3,   /* non-finite numbers or failed linear algebra */
    DTG_ERR_GRADCHECK = 4  /* gradient audit found a mismatch */
} dtg_status;

dtg_session* dtg_open(void);
void dtg_close(dtg_session* s);

/* Options mirror the command-line flags:
 *   "config"   path to the flat JSON run configuration
 *   "seed"     unsigned integer; overrides the config seed
 *   "out"      output directory; overrides the config
 *   "model"    checkpoint path; overrides the config
 *   "times"    comma-separated horizons, e.g. "1,3,6,12"
 *   "samples"  draws per patient
 *   "fold"     held-out fold index for train (-1 trains on everything)
 *   "threads"  parallelism cap; also read from the DTG_THREADS env var
 * Unknown keys or null arguments fail with DTG_ERR_CONFIG. */
dtg_status dtg_set_option(dtg_session* s, const char* key, const char* value);

/* Run one command: "synth", "train", "generate", "evaluate", "gradcheck" or
 * "twin-record". Returns DTG_OK or the error class; dtg_last_error has the
 * detail. */
dtg_status dtg_run(dtg_session* s, const char* command);

/* Message for the most recent failure on this session; empty after success.
 * Valid until the next call on the same session. */
const char* dtg_last_error(const dtg_session* s);

#ifdef __cplusplus
}
#endif

#endif /* DTG_H */
