/* Public C interface to the substitute-training attack pipeline.
 *
 * The library is consumed through opaque handles and integer status codes;
 * no C++ types cross this boundary. Status values double as process exit
 * codes for the bundled CLI: 0 success, 1 configuration error, 2 runtime
 * error, 3 oracle unreachable.
 */
#ifndef DFBA_H
#define DFBA_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dfba_status {
    DFBA_OK = 0,
    DFBA_ERR_CONFIG = 1,
    DFBA_ERR_RUNTIME = 2,
    DFBA_ERR_ORACLE = 3,
    DFBA_ERR_INVALID_ARGUMENT = 4
} dfba_status;

typedef struct dfba_config dfba_config;
typedef struct dfba_server dfba_server;

const char* dfba_version(void);

/* Message for the most recent failing call on this thread. Never NULL. */
const char* dfba_last_error(void);

/* Configuration ----------------------------------------------------------- */

dfba_status dfba_config_load(const char* path, dfba_config** out);
void dfba_config_free(dfba_config* cfg);

/* Overrides applied after loading, mirroring the CLI flags. */
dfba_status dfba_config_set_seed(dfba_config* cfg, uint64_t seed);
dfba_status dfba_config_set_oracle_url(dfba_config* cfg, const char* url);
dfba_status dfba_config_set_oracle_mode(dfba_config* cfg, const char* mode); /* "probability" | "label" */
dfba_status dfba_config_set_output_dir(dfba_config* cfg, const char* dir);

/* Resolved run directory for this config (config hash + seed). */
dfba_status dfba_config_run_dir(const dfba_config* cfg, char* buf, int64_t buf_len);

/* Pipeline stages ---------------------------------------------------------- */

/* Trains the local target model and writes its checkpoint into the run dir. */
dfba_status dfba_train_target(const dfba_config* cfg);

/* Runs substitute training (requires a target checkpoint or a remote oracle). */
dfba_status dfba_train_substitute(const dfba_config* cfg);

/* Crafts adversarial examples on the substitute and reports one-shot transfer. */
dfba_status dfba_attack(const dfba_config* cfg);

/* Agreement + attack-success-rate reports against the oracle. */
dfba_status dfba_evaluate(const dfba_config* cfg);

/* Full lifecycle: target -> substitute training -> evaluation. */
dfba_status dfba_run(const dfba_config* cfg);

/* Serving ------------------------------------------------------------------ */

/* Starts an HTTP oracle endpoint for the trained target model. Pass port 0
 * to bind an ephemeral port; dfba_server_port reports the bound port. */
dfba_status dfba_serve_start(const dfba_config* cfg, const char* host, int port,
                             dfba_server** out);
int dfba_server_port(const dfba_server* srv);
int64_t dfba_server_queries(const dfba_server* srv);
dfba_status dfba_server_stop(dfba_server* srv);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DFBA_H */
