/* C ABI for the rioflow toolchain.
 *
 * Every function returning `char*` hands ownership to the caller: release
 * with rf_string_free(). Functions returning RfStatus describe failures via
 * rf_last_error_message() (thread-local).
 *
 * Kept in sync with crates/rioflow-ffi/src/lib.rs by hand.
 */

#ifndef RIOFLOW_H
#define RIOFLOW_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. */
typedef int32_t RfStatus;
#define RF_OK 0
#define RF_ERR_ARG 1     /* bad argument (NULL, invalid UTF-8, bad JSON) */
#define RF_ERR_PARSE 2   /* gtext syntax or unknown primitive */
#define RF_ERR_CHECK 3   /* validation, typing, partition or timing */
#define RF_ERR_RUNTIME 4 /* deadlock, firing limit, runtime fault */
#define RF_ERR_IO 5      /* file system */

/* Opaque handle to a parsed, structurally valid project. */
typedef struct RfProject RfProject;

/* Static version string; do not free. */
const char *rf_version(void);

/* Message of the most recent error on this thread, or NULL. Free with
 * rf_string_free(). */
char *rf_last_error_message(void);

/* Frees any string returned by this library. NULL is a no-op. */
void rf_string_free(char *s);

/* Parses gtext source. `name` labels diagnostics and may be NULL. On RF_OK,
 * `*out` holds a new handle to release with rf_project_free(). */
RfStatus rf_project_parse(const char *text, const char *name, RfProject **out);

/* Reads and parses a project file. */
RfStatus rf_project_load(const char *path, RfProject **out);

/* Releases a project handle. NULL is a no-op. */
void rf_project_free(RfProject *p);

/* Canonical gtext serialization of the project. */
char *rf_project_format(const RfProject *p);

/* Full design check (expansion, types, partition, single-cycle timing).
 * `*out_json` receives a JSON array of diagnostics; "[]" and RF_OK when the
 * design is clean. */
RfStatus rf_project_check_json(const RfProject *p, char **out_json);

/* Runs the host partition to completion under firing semantics.
 * `inputs_json` maps control names to values, e.g. {"a": 2.0}; NULL applies
 * type defaults. `max_firings` 0 selects the default limit. On RF_OK,
 * `*out_json` holds a JSON object of indicator values. */
RfStatus rf_run_host_json(const RfProject *p, const char *inputs_json,
                          uint64_t seed, uint64_t max_firings,
                          char **out_json);

/* Co-simulates host and fabric for `ticks` grid ticks with default inputs.
 * On RF_OK, `*out_json` holds the run summary (final registers, channel
 * stats, DAC jitter/underruns). */
RfStatus rf_simulate_json(const RfProject *p, uint64_t ticks, uint64_t seed,
                          char **out_json);

#ifdef __cplusplus
}
#endif

#endif /* RIOFLOW_H */
