#pragma once

// Alert events, payloads and delivery (HTTP webhook or shell command) with
// retries and a refractory-period debouncer.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <Eigen/Core>  // ahead of httplib: <resolv.h> defines _res, an Eigen parameter name
#include <nlohmann/json.hpp>

#include "httplib.h"

#include "falldet/error.hpp"

namespace falldet::sentinel {

enum class AlertStatus { Sent, Failed, Suppressed };

inline std::string_view to_string(AlertStatus s) {
  switch (s) {
    case AlertStatus::Sent: return "sent";
    case AlertStatus::Failed: return "failed";
    case AlertStatus::Suppressed: return "suppressed";
  }
  return "?";
}

struct AlertEvent {
  double monotonic_s = 0;  // seconds since the daemon started
  std::string wall_clock;  // ISO 8601, UTC
  double window_start_s = 0, window_end_s = 0;
  double fall_probability = 0;
  std::string dispatched_to;
  AlertStatus status = AlertStatus::Suppressed;
  int attempts = 0;
};

inline constexpr int kPayloadVersion = 1;

inline std::string utc_now_iso8601() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Body sent to the endpoint.
inline nlohmann::json alert_payload(const AlertEvent& e, const std::string& device_id) {
  return {{"version", kPayloadVersion},
          {"event", "fall"},
          {"device_id", device_id},
          {"timestamp", e.wall_clock},
          {"monotonic_s", e.monotonic_s},
          {"fall_probability", e.fall_probability},
          {"window", {{"start_s", e.window_start_s}, {"end_s", e.window_end_s}}}};
}

/// Structured log record of an alert decision.
inline nlohmann::json event_record(const AlertEvent& e) {
  return {{"type", "alert"},
          {"status", to_string(e.status)},
          {"timestamp", e.wall_clock},
          {"monotonic_s", e.monotonic_s},
          {"window_start_s", e.window_start_s},
          {"window_end_s", e.window_end_s},
          {"fall_probability", e.fall_probability},
          {"dispatched_to", e.dispatched_to},
          {"attempts", e.attempts}};
}

class AlertTransport {
 public:
  virtual ~AlertTransport() = default;
  /// One delivery attempt; true on success.
  virtual bool send(const std::string& payload) = 0;
  virtual std::string describe() const = 0;
};

/// POSTs the payload as application/json. Only plain http:// URLs.
class HttpTransport : public AlertTransport {
 public:
  explicit HttpTransport(std::string url, std::string token = {},
                         std::chrono::milliseconds timeout = std::chrono::seconds(3))
      : url_(std::move(url)), token_(std::move(token)), timeout_(timeout) {
    const std::string scheme = "http://";
    if (url_.rfind(scheme, 0) != 0) throw InvalidConfig("alert URL must start with http://");
    const auto slash = url_.find('/', scheme.size());
    base_ = slash == std::string::npos ? url_ : url_.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : url_.substr(slash);
  }

  bool send(const std::string& payload) override {
    httplib::Client cli(base_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = cli.Post(path_, headers, payload, "application/json");
    return res && res->status >= 200 && res->status < 300;
  }

  std::string describe() const override { return url_; }

 private:
  std::string url_, token_, base_, path_;
  std::chrono::milliseconds timeout_;
};

/// Runs `command` through /bin/sh with the payload on stdin; exit status 0
/// counts as delivered.
class CommandTransport : public AlertTransport {
 public:
  explicit CommandTransport(std::string command) : command_(std::move(command)) {}

  bool send(const std::string& payload) override {
    FILE* pipe = ::popen(command_.c_str(), "w");
    if (!pipe) return false;
    const bool wrote = std::fwrite(payload.data(), 1, payload.size(), pipe) == payload.size();
    const int status = ::pclose(pipe);
    return wrote && status == 0;
  }

  std::string describe() const override { return "cmd:" + command_; }

 private:
  std::string command_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_delay{500};
  double factor = 2.0;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline void real_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

/// Delivers `event` with exponential backoff between attempts. Fills in
/// status, attempts and dispatched_to.
inline AlertStatus dispatch_alert(AlertEvent& event, AlertTransport& transport, const std::string& device_id,
                                  const RetryPolicy& policy = {}, const Sleeper& sleep = real_sleep) {
  const std::string body = alert_payload(event, device_id).dump();
  event.dispatched_to = transport.describe();
  event.attempts = 0;
  auto delay = policy.initial_delay;
  for (int k = 0; k < policy.attempts; ++k) {
    ++event.attempts;
    bool ok = false;
    try {
      ok = transport.send(body);
    } catch (const std::exception&) {
      ok = false;
    }
    if (ok) return event.status = AlertStatus::Sent;
    if (k + 1 < policy.attempts) {
      sleep(delay);
      delay = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * policy.factor));
    }
  }
  return event.status = AlertStatus::Failed;
}

/// Suppresses alerts closer than `refractory_s` (stream time) to the last
/// admitted one.
class Debouncer {
 public:
  explicit Debouncer(double refractory_s = 30.0) : refractory_s_(refractory_s) {}

  bool admit(double t_s) {
    if (last_ && t_s - *last_ < refractory_s_) return false;
    last_ = t_s;
    return true;
  }

 private:
  double refractory_s_;
  std::optional<double> last_;
};

struct EndpointConfig {
  std::string url;
  std::string command;
  std::string token;
  std::string device_id = "falldet";
};

/// FALLDET_ALERT_URL, FALLDET_ALERT_TOKEN and FALLDET_DEVICE_ID take
/// precedence over the command-line values.
inline EndpointConfig apply_env_overrides(EndpointConfig cfg) {
  if (const char* v = std::getenv("FALLDET_ALERT_URL"); v && *v) cfg.url = v;
  if (const char* v = std::getenv("FALLDET_ALERT_TOKEN"); v && *v) cfg.token = v;
  if (const char* v = std::getenv("FALLDET_DEVICE_ID"); v && *v) cfg.device_id = v;
  return cfg;
}

/// URL wins over command; nullptr when neither is configured.
inline std::unique_ptr<AlertTransport> make_transport(const EndpointConfig& cfg) {
  if (!cfg.url.empty()) return std::make_unique<HttpTransport>(cfg.url, cfg.token);
  if (!cfg.command.empty()) return std::make_unique<CommandTransport>(cfg.command);
  return nullptr;
}

}  // namespace falldet::sentinel
