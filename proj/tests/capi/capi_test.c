/* Exercises the shared library through its C header only. */
#include <arpa/inet.h>
#include <netinet/in.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <sys/socket.h>
#include <time.h>
#include <unistd.h>

#include "dpws/dpws.h"

static int failures = 0;

#define EXPECT(cond)                                                           \
  do {                                                                         \
    if (!(cond)) {                                                             \
      fprintf(stderr, "%s:%d: %s (last error: %s)\n", __FILE__, __LINE__, #cond, \
              dpws_last_error());                                              \
      ++failures;                                                              \
    }                                                                          \
  } while (0)

static int free_port(void) {
  int fd = socket(AF_INET, SOCK_STREAM, 0);
  struct sockaddr_in sa;
  socklen_t len = sizeof(sa);
  memset(&sa, 0, sizeof(sa));
  sa.sin_family = AF_INET;
  sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  bind(fd, (struct sockaddr*)&sa, sizeof(sa));
  getsockname(fd, (struct sockaddr*)&sa, &len);
  close(fd);
  return ntohs(sa.sin_port);
}

static void sleep_ms(int ms) {
  struct timespec ts = {ms / 1000, (long)(ms % 1000) * 1000000L};
  nanosleep(&ts, NULL);
}

static void add_one(void* user, const char* input, dpws_completion* done) {
  char buf[32];
  ++*(int*)user;
  if (!input) {
    dpws_complete_error(done, "no input");
    return;
  }
  snprintf(buf, sizeof(buf), "%ld", strtol(input, NULL, 10) + 1);
  dpws_complete(done, buf);
}

struct events {
  int count;
  uint64_t last_seq;
  char last_value[32];
};

static void on_notify(void* user, const char* event, uint64_t seq, const char* value) {
  struct events* e = user;
  (void)event;
  e->count++;
  e->last_seq = seq;
  snprintf(e->last_value, sizeof(e->last_value), "%s", value ? value : "");
}

static const char* kConfig =
    "device:\n"
    "  address: 0b6c2d9e-2f1a-4c3b-9d8e-7a6b5c4d3e2f\n"
    "  types: [CTest]\n"
    "  manufacturer: m\n"
    "  model_name: n\n"
    "  friendly_name: c api test\n"
    "  host: 127.0.0.1\n"
    "services:\n"
    "  - id: calc\n"
    "    types: {n: int}\n"
    "    operations:\n"
    "      - {name: AddOne, input: n, output: n, behavior: {script: add_one}}\n"
    "      - {name: Zero, output: n, behavior: {constant: 0}}\n"
    "    events:\n"
    "      - {name: Changed, payload: n}\n";

int main(void) {
  int calls = 0;
  dpws_device* dev = NULL;
  dpws_client* client = NULL;
  dpws_remote_device* remote = NULL;
  dpws_subscription* sub = NULL;
  dpws_bench_report* report = NULL;
  dpws_bench_stats stats;
  char* out = NULL;
  size_t delivered = 0;
  int64_t ms = 0;
  struct events ev = {0, 0, ""};

  EXPECT(strcmp(dpws_status_name(DPWS_E_TIMEOUT), dpws_status_name(DPWS_E_CONNECT)) != 0);
  EXPECT(dpws_set_log_level("error") == DPWS_OK);
  EXPECT(dpws_set_log_level("loud") == DPWS_E_INVALID_ARGUMENT);
  EXPECT(dpws_device_load_string(NULL, NULL, &dev) == DPWS_E_INVALID_ARGUMENT);
  EXPECT(strlen(dpws_last_error()) > 0);
  EXPECT(dpws_device_load_string("device: {}\n", NULL, &dev) == DPWS_E_INVALID_CONFIG);
  EXPECT(dpws_device_load_string(kConfig, NULL, &dev) == DPWS_E_INVALID_CONFIG);
  EXPECT(strstr(dpws_last_error(), "add_one") != NULL);
  EXPECT(dpws_register_hook("add_one", add_one, &calls) == DPWS_OK);

  dpws_device_options dopts = {free_port(), "127.0.0.1", "127.0.0.1", 0};
  EXPECT(dpws_device_load_string(kConfig, &dopts, &dev) == DPWS_OK);
  EXPECT(dpws_device_start(dev) == DPWS_OK);
  EXPECT(dpws_device_start(dev) == DPWS_E_ALREADY_STARTED);
  EXPECT(dpws_device_port(dev) == dopts.http_port);
  EXPECT(strncmp(dpws_device_xaddr(dev), "http://127.0.0.1:", 17) == 0);
  EXPECT(strcmp(dpws_device_epr(dev), "urn:uuid:0b6c2d9e-2f1a-4c3b-9d8e-7a6b5c4d3e2f") == 0);

  dpws_client_options copts = {"127.0.0.1", "127.0.0.1", 0};
  EXPECT(dpws_client_new(&copts, &client) == DPWS_OK);
  EXPECT(dpws_client_open(client, dpws_device_xaddr(dev), 2000, &remote) == DPWS_OK);
  EXPECT(strstr(dpws_remote_device_json(remote), "AddOne") != NULL);

  EXPECT(dpws_client_invoke(client, remote, "calc", "AddOne", "41", 2000, &out) == DPWS_OK);
  EXPECT(out && strcmp(out, "42") == 0);
  dpws_string_free(out);
  out = NULL;
  EXPECT(calls == 1);
  EXPECT(dpws_client_invoke(client, remote, "calc", "AddOne", "forty", 2000, &out) == DPWS_E_TYPE_MISMATCH);
  EXPECT(calls == 1);
  EXPECT(dpws_client_invoke(client, remote, "calc", "Zero", "1", 2000, &out) == DPWS_E_TYPE_MISMATCH);
  EXPECT(dpws_client_invoke(client, remote, "calc", "Nope", NULL, 2000, &out) == DPWS_E_UNKNOWN_OPERATION);
  EXPECT(dpws_client_invoke(client, remote, "other", "Zero", NULL, 2000, &out) == DPWS_E_UNKNOWN_SERVICE);
  EXPECT(dpws_client_invoke(client, remote, "calc", "Zero", NULL, 0, &out) == DPWS_E_INVALID_TIMEOUT);

  EXPECT(dpws_client_subscribe(client, remote, "calc", "Changed", 0, on_notify, NULL, &ev, &sub) == DPWS_OK);
  EXPECT(strlen(dpws_subscription_id(sub)) > 0);
  EXPECT(dpws_device_emit(dev, "calc", "Changed", "7", &delivered) == DPWS_OK);
  EXPECT(delivered == 1);
  EXPECT(dpws_device_emit(dev, "calc", "Changed", "x", &delivered) == DPWS_E_TYPE_MISMATCH);
  EXPECT(dpws_device_emit(dev, "calc", "Gone", "1", &delivered) == DPWS_E_UNKNOWN_EVENT);
  for (int i = 0; i < 100 && ev.count < 1; ++i) sleep_ms(20);
  EXPECT(ev.count == 1);
  EXPECT(ev.last_seq == 1);
  EXPECT(strcmp(ev.last_value, "7") == 0);
  EXPECT(dpws_subscription_renew(sub, 120, &ms) == DPWS_OK);
  EXPECT(ms == 120000);
  EXPECT(dpws_subscription_status(sub, &ms) == DPWS_OK);
  EXPECT(ms > 100000 && ms <= 120000);
  EXPECT(dpws_subscription_unsubscribe(sub) == DPWS_OK);
  EXPECT(dpws_device_emit(dev, "calc", "Changed", "8", &delivered) == DPWS_OK);
  EXPECT(delivered == 0);
  dpws_subscription_free(sub);

  dpws_bench_options bopts;
  memset(&bopts, 0, sizeof(bopts));
  bopts.n = 40;
  bopts.concurrency = 2;
  bopts.operation = "AddOne";
  bopts.input = "1";
  bopts.expect = "2";
  EXPECT(dpws_bench_run(client, remote, &bopts, &report) == DPWS_OK);
  EXPECT(dpws_bench_stats_get(report, &stats) == DPWS_OK);
  EXPECT(stats.request_count == 40);
  EXPECT(stats.samples == 40);
  EXPECT(stats.errors == 0);
  EXPECT(stats.min_ms <= stats.median_ms && stats.median_ms <= stats.p99_ms && stats.p99_ms <= stats.max_ms);
  EXPECT(strstr(dpws_bench_report_text(report), "24.44") != NULL);
  EXPECT(strstr(dpws_bench_report_json(report), "\"errors\": 0") != NULL);
  dpws_bench_report_free(report);
  bopts.operation = "Missing";
  EXPECT(dpws_bench_run(client, remote, &bopts, &report) == DPWS_E_UNKNOWN_OPERATION);

  dpws_remote_device_free(remote);
  EXPECT(dpws_device_stop(dev) == DPWS_OK);
  EXPECT(dpws_device_stop(dev) == DPWS_OK);
  dpws_device_free(dev);
  dpws_client_free(client);

  if (failures) {
    fprintf(stderr, "%d failure(s)\n", failures);
    return 1;
  }
  puts("capi: ok");
  return 0;
}
