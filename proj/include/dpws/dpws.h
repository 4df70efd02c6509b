#ifndef DPWS_DPWS_H
#define DPWS_DPWS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define DPWS_API __attribute__((visibility("default")))
#else
#define DPWS_API
#endif

/* Status codes. Every function returning int returns one of these; the
 * message for the last failure on the calling thread is dpws_last_error(). */
enum {
  DPWS_OK = 0,
  DPWS_E_MALFORMED_XML = 1,
  DPWS_E_NOT_SOAP = 2,
  DPWS_E_MISSING_ACTION = 3,
  DPWS_E_OVERSIZE = 4,
  DPWS_E_INVARIANT = 5,
  DPWS_E_BIND = 10,
  DPWS_E_JOIN = 11,
  DPWS_E_SOCKET = 12,
  DPWS_E_CONNECT = 13,
  DPWS_E_TIMEOUT = 14,
  DPWS_E_PROTOCOL = 15,
  DPWS_E_INVALID_CONFIG = 20,
  DPWS_E_DUPLICATE_SERVICE = 21,
  DPWS_E_INVALID_SERVICE = 22,
  DPWS_E_ALREADY_STARTED = 23,
  DPWS_E_NOT_STARTED = 24,
  DPWS_E_UNKNOWN_SERVICE = 25,
  DPWS_E_UNKNOWN_ACTION = 26,
  DPWS_E_TYPE_MISMATCH = 27,
  DPWS_E_HANDLER = 28,
  DPWS_E_MALFORMED_METADATA = 29,
  DPWS_E_UNKNOWN_EVENT = 30,
  DPWS_E_UNKNOWN_SUBSCRIPTION = 31,
  DPWS_E_INVALID_EXPIRY = 32,
  DPWS_E_DELIVERY_MODE = 33,
  DPWS_E_EVENT_FILTER = 34,
  DPWS_E_FAULT = 40,
  DPWS_E_UNKNOWN_OPERATION = 41,
  DPWS_E_NO_TRANSPORT_ADDRESS = 42,
  DPWS_E_INVALID_TIMEOUT = 43,
  DPWS_E_SINK_BIND = 44,
  DPWS_E_UNSUPPORTED = 45,
  DPWS_E_INVALID_ARGUMENT = 46,
  DPWS_E_INTERNAL = 99
};

DPWS_API const char* dpws_last_error(void);
DPWS_API const char* dpws_status_name(int status);
/* "trace", "debug", "info", "warn", "error", "off" */
DPWS_API int dpws_set_log_level(const char* level);
DPWS_API void dpws_string_free(char* s);

/* ---- operation hooks ---------------------------------------------------
 * A config file binds `behavior: {script: NAME}` to a hook registered here.
 * Values cross the boundary in their lexical form; NULL means absent. */
typedef struct dpws_completion dpws_completion;
typedef void (*dpws_hook_fn)(void* user, const char* input, dpws_completion* done);
DPWS_API int dpws_register_hook(const char* name, dpws_hook_fn fn, void* user);
/* Exactly one of these must be called once per invocation, from any thread.
 * Both release `done`. */
DPWS_API int dpws_complete(dpws_completion* done, const char* output);
DPWS_API int dpws_complete_error(dpws_completion* done, const char* reason);

/* ---- device ------------------------------------------------------------ */
typedef struct dpws_device dpws_device;

typedef struct dpws_device_options {
  int http_port;                   /* 0 keeps the configured port */
  const char* advertise_host;      /* NULL keeps the configured value */
  const char* multicast_interface; /* NULL keeps the configured value */
  int discovery;                   /* -1 default, 0 off, 1 on */
} dpws_device_options;

DPWS_API int dpws_device_load_file(const char* path, const dpws_device_options* options, dpws_device** out);
DPWS_API int dpws_device_load_string(const char* yaml, const dpws_device_options* options, dpws_device** out);
DPWS_API int dpws_device_start(dpws_device* device);
DPWS_API int dpws_device_stop(dpws_device* device);
/* `payload` is the lexical form of the event's payload type. */
DPWS_API int dpws_device_emit(dpws_device* device, const char* service_id, const char* event, const char* payload,
                              size_t* delivered);
/* First transport address; valid until the handle is freed. */
DPWS_API const char* dpws_device_xaddr(dpws_device* device);
DPWS_API const char* dpws_device_epr(dpws_device* device);
DPWS_API int dpws_device_port(const dpws_device* device);
DPWS_API void dpws_device_free(dpws_device* device);

/* ---- client ------------------------------------------------------------ */
typedef struct dpws_client dpws_client;
typedef struct dpws_remote_device dpws_remote_device;
typedef struct dpws_probe_result dpws_probe_result;
typedef struct dpws_subscription dpws_subscription;

typedef struct dpws_client_options {
  const char* multicast_interface; /* NULL: every IPv4 interface */
  const char* sink_host;           /* NULL: address routing to the device */
  int profile_1_0;                 /* nonzero selects the 1.0 namespaces */
} dpws_client_options;

DPWS_API int dpws_client_new(const dpws_client_options* options, dpws_client** out);
DPWS_API void dpws_client_free(dpws_client* client);

/* Types are "{ns}local", "dpws:Local" or a bare name in the default
 * service namespace. Scopes use the RFC 3986 rule. */
DPWS_API int dpws_client_probe(dpws_client* client, const char* const* types, size_t type_count,
                               const char* const* scopes, size_t scope_count, int timeout_ms,
                               dpws_probe_result** out);
DPWS_API size_t dpws_probe_result_count(const dpws_probe_result* result);
DPWS_API const char* dpws_probe_result_epr(const dpws_probe_result* result, size_t index);
/* First xaddr or "" */
DPWS_API const char* dpws_probe_result_xaddr(const dpws_probe_result* result, size_t index);
DPWS_API const char* dpws_probe_result_json(const dpws_probe_result* result);
DPWS_API void dpws_probe_result_free(dpws_probe_result* result);

DPWS_API int dpws_client_open(dpws_client* client, const char* xaddr, int timeout_ms, dpws_remote_device** out);
/* Metadata and service descriptions as JSON. */
DPWS_API const char* dpws_remote_device_json(const dpws_remote_device* device);
DPWS_API void dpws_remote_device_free(dpws_remote_device* device);

/* `input` is lexical (NULL when the operation takes none). On success
 * `*output` is a malloc'd lexical value, or NULL when there is no output;
 * release it with dpws_string_free. */
DPWS_API int dpws_client_invoke(dpws_client* client, const dpws_remote_device* device, const char* service_id,
                                const char* operation, const char* input, int timeout_ms, char** output);

typedef void (*dpws_notify_fn)(void* user, const char* event, uint64_t sequence, const char* value);
typedef void (*dpws_end_fn)(void* user, const char* status, const char* reason);
/* expires_s <= 0 leaves the expiry to the device. */
DPWS_API int dpws_client_subscribe(dpws_client* client, const dpws_remote_device* device, const char* service_id,
                                   const char* event, int expires_s, dpws_notify_fn on_notify, dpws_end_fn on_end,
                                   void* user, dpws_subscription** out);
DPWS_API const char* dpws_subscription_id(const dpws_subscription* sub);
DPWS_API int dpws_subscription_renew(dpws_subscription* sub, int expires_s, int64_t* granted_ms);
DPWS_API int dpws_subscription_status(dpws_subscription* sub, int64_t* remaining_ms);
DPWS_API int dpws_subscription_unsubscribe(dpws_subscription* sub);
DPWS_API void dpws_subscription_free(dpws_subscription* sub);

/* ---- bench ------------------------------------------------------------- */
typedef struct dpws_bench_report dpws_bench_report;

typedef struct dpws_bench_options {
  size_t n;            /* total requests; 0 means 500 */
  size_t concurrency;  /* 0 means 1 */
  const char* service_id; /* NULL: first service offering the operation */
  const char* operation;
  const char* input;   /* lexical, NULL for none */
  const char* expect;  /* lexical expected output, NULL skips the check */
  int timeout_ms;      /* 0 means 10000 */
  int pid;             /* local target process to sample, 0 for none */
  int sample_ms;       /* 0 means 100 */
} dpws_bench_options;

typedef struct dpws_bench_stats {
  size_t request_count;
  size_t samples;
  size_t errors;
  double mean_ms;
  double median_ms;
  double p90_ms;
  double p99_ms;
  double min_ms;
  double max_ms;
  double total_duration_s;
  double throughput_rps;
} dpws_bench_stats;

DPWS_API int dpws_bench_run(dpws_client* client, const dpws_remote_device* device, const dpws_bench_options* options,
                            dpws_bench_report** out);
DPWS_API int dpws_bench_stats_get(const dpws_bench_report* report, dpws_bench_stats* out);
DPWS_API int dpws_bench_write_csv(const dpws_bench_report* report, const char* path);
DPWS_API const char* dpws_bench_report_json(const dpws_bench_report* report);
DPWS_API const char* dpws_bench_report_text(const dpws_bench_report* report);
DPWS_API void dpws_bench_report_free(dpws_bench_report* report);

#ifdef __cplusplus
}
#endif

#endif
