#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "falldet/sentinel/alert.hpp"
#include "falldet/sentinel/queue.hpp"
#include "falldet/sentinel/stream.hpp"
#include "httplib.h"
#include "support.hpp"

using namespace falldet;
using namespace falldet::sentinel;
using testing_support::noise;

namespace {

constexpr std::size_t kWindow = 139760;

/// A small Diff-feature model; `bias` > 0 pushes every window towards Fall.
nn::LoadedModel<float> tiny_loaded(float bias = 0.0f, std::uint64_t seed = 1) {
  nn::ModelConfig c;
  c.config_id = "tiny";
  c.input_dim = 1600;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ff_dim = 16;
  c.mlp_head = {4};
  c.max_frames = 86;
  nn::TransformerClassifier<float> m(c, seed);
  m.params().at("out.b").value << bias, -bias;
  return {std::move(m), FeatureSpec{}, kWindow};
}

SentinelOptions fast_options() {
  SentinelOptions o;
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

std::vector<nlohmann::json> records(const std::string& log, const std::string& type) {
  std::vector<nlohmann::json> out;
  std::istringstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (j.at("type") == type) out.push_back(std::move(j));
  }
  return out;
}

struct RecordingTransport : AlertTransport {
  std::vector<std::string> bodies;
  int fail_first = 0;
  bool send(const std::string& payload) override {
    bodies.push_back(payload);
    return static_cast<int>(bodies.size()) > fail_first;
  }
  std::string describe() const override { return "recording"; }
};

/// Local HTTP endpoint answering POST /alert with a fixed status.
class StubServer {
 public:
  explicit StubServer(int status) {
    server_.Post("/alert", [this, status](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      bodies_.push_back(req.body);
      auth_ = req.get_header_value("Authorization");
      res.status = status;
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/alert"; }
  std::vector<std::string> bodies() {
    std::lock_guard lock(mu_);
    return bodies_;
  }
  std::string auth() {
    std::lock_guard lock(mu_);
    return auth_;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::mutex mu_;
  std::vector<std::string> bodies_;
  std::string auth_;
};

}  // namespace

TEST(Windows, ThirtySecondsGiveSixWindows) {
  EXPECT_EQ(window_count(30 * 16000, kWindow, 64000), 6u);
  EXPECT_EQ(window_count(kWindow, kWindow, 64000), 1u);
  EXPECT_EQ(window_count(1000, kWindow, 64000), 1u);
  EXPECT_EQ(window_count(0, kWindow, 64000), 0u);
  EXPECT_EQ(window_samples(8.735), kWindow);
}

TEST(Windows, AssemblerMatchesDirectSlicing) {
  const auto x = noise(50000, 1);
  WindowAssembler a(10000, 3000);
  std::vector<Window> got;
  Rng rng(2);
  for (std::size_t pos = 0; pos < x.size();) {
    const std::size_t n = std::min<std::size_t>(x.size() - pos, 1 + uniform_index(rng, 4000));
    a.push(std::span<const float>(x.data() + pos, n), got);
    pos += n;
  }
  EXPECT_FALSE(a.flush().has_value());
  ASSERT_EQ(got.size(), window_count(x.size(), 10000, 3000));
  for (std::size_t k = 0; k < got.size(); ++k) {
    EXPECT_EQ(got[k].start, k * 3000);
    EXPECT_TRUE(std::equal(got[k].samples.begin(), got[k].samples.end(), x.begin() + static_cast<long>(k * 3000)));
  }
  EXPECT_THROW(WindowAssembler(100, 200), InvalidConfig);
}

TEST(Windows, ShortStreamFlushesOneWindow) {
  WindowAssembler a(10000, 3000);
  std::vector<Window> got;
  const auto x = noise(4000, 3);
  a.push(x, got);
  EXPECT_TRUE(got.empty());
  const auto tail = a.flush();
  ASSERT_TRUE(tail.has_value());
  EXPECT_EQ(tail->samples.size(), 4000u);
  EXPECT_FALSE(a.flush().has_value());
}

TEST(Debounce, RefractoryPeriodOnStreamTime) {
  Debouncer d(30.0);
  EXPECT_TRUE(d.admit(8.7));
  EXPECT_FALSE(d.admit(12.7));
  EXPECT_FALSE(d.admit(38.6));
  EXPECT_TRUE(d.admit(38.7));
  EXPECT_FALSE(d.admit(40.0));
}

TEST(Queue, DropOldestKeepsTheNewestItems) {
  BoundedQueue<int> q(2, Overflow::DropOldest);
  for (int i = 1; i <= 5; ++i) EXPECT_TRUE(q.push(i));
  EXPECT_EQ(q.dropped(), 3u);
  EXPECT_EQ(q.pop(), 4);
  EXPECT_EQ(q.pop(), 5);
  q.close();
  EXPECT_FALSE(q.push(6));
  EXPECT_FALSE(q.pop().has_value());
}

TEST(Queue, BlockingProducerWaitsForRoom) {
  BoundedQueue<int> q(1, Overflow::Block);
  std::thread producer([&] {
    for (int i = 0; i < 100; ++i) q.push(i);
    q.close();
  });
  int expected = 0;
  while (auto v = q.pop()) EXPECT_EQ(*v, expected++);
  producer.join();
  EXPECT_EQ(expected, 100);
  EXPECT_EQ(q.dropped(), 0u);
}

TEST(Classifier, MatchesOfflineFeaturePath) {
  WindowClassifier clf(tiny_loaded(0.0f, 4));
  nn::LoadedModel<float> ref = tiny_loaded(0.0f, 4);
  for (std::size_t len : {std::size_t{20000}, kWindow}) {
    const auto x = noise(len, static_cast<unsigned>(len));
    AudioClip c = testing_support::make_clip(x);
    const auto expected = ref.model.predict(extract_features(pad_to_length(c, kWindow), FeatureSpec{}));
    const double got = clf.classify(x);
    EXPECT_EQ(got, expected[nn::kFallIndex]);
  }
  EXPECT_THROW(clf.classify(noise(kWindow + 1, 1)), CheckpointMismatch);
}

TEST(Sentinel, ThirtySecondFileGivesSixWindowsAndOneAlert) {
  WindowClassifier clf(tiny_loaded(20.0f));
  FileSource src(noise(30 * 16000, 5));
  RecordingTransport transport;
  std::ostringstream log;
  const SentinelStats s = run_sentinel(src, clf, &transport, fast_options(), log);
  ASSERT_EQ(s.windows.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_DOUBLE_EQ(s.windows[k].start_s, 4.0 * static_cast<double>(k));
    EXPECT_GT(s.windows[k].fall_probability, 0.5);
  }
  EXPECT_EQ(s.sent, 1u);
  EXPECT_EQ(s.suppressed, 5u);
  ASSERT_EQ(transport.bodies.size(), 1u);
  const auto body = nlohmann::json::parse(transport.bodies[0]);
  EXPECT_EQ(body.at("version"), kPayloadVersion);
  EXPECT_EQ(body.at("event"), "fall");
  EXPECT_EQ(body.at("device_id"), "falldet");
  EXPECT_DOUBLE_EQ(body.at("window").at("end_s").get<double>(), 8.735);
  EXPECT_EQ(records(log.str(), "window").size(), 6u);
  EXPECT_EQ(records(log.str(), "alert").size(), 6u);
}

TEST(Sentinel, QuietAudioRaisesNoAlert) {
  WindowClassifier clf(tiny_loaded(-20.0f));
  FileSource src(noise(20 * 16000, 6));
  RecordingTransport transport;
  std::ostringstream log;
  const SentinelStats s = run_sentinel(src, clf, &transport, fast_options(), log);
  EXPECT_EQ(s.windows.size(), 3u);
  EXPECT_EQ(s.sent + s.failed + s.suppressed, 0u);
  EXPECT_TRUE(transport.bodies.empty());
}

TEST(Sentinel, RunsAreDeterministic) {
  WindowClassifier clf(tiny_loaded(0.0f, 9));
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    FileSource src(noise(25 * 16000, 7));
    std::ostringstream log;
    const SentinelStats s = run_sentinel(src, clf, nullptr, fast_options(), log);
    std::vector<double> p;
    for (const auto& w : s.windows) p.push_back(w.fall_probability);
    if (run == 0) first = p;
    else EXPECT_EQ(p, first);
  }
}

TEST(Sentinel, ShortStreamStillGetsClassified) {
  WindowClassifier clf(tiny_loaded());
  FileSource src(noise(3 * 16000, 8));
  std::ostringstream log;
  const SentinelStats s = run_sentinel(src, clf, nullptr, fast_options(), log);
  ASSERT_EQ(s.windows.size(), 1u);
  EXPECT_DOUBLE_EQ(s.windows[0].end_s, 3.0);
}

TEST(Sentinel, AlertsWithoutEndpointAreLoggedAsFailed) {
  WindowClassifier clf(tiny_loaded(20.0f));
  FileSource src(noise(10 * 16000, 9));
  std::ostringstream log;
  const SentinelStats s = run_sentinel(src, clf, nullptr, fast_options(), log);
  EXPECT_EQ(s.failed, 1u);
  const auto alerts = records(log.str(), "alert");
  ASSERT_EQ(alerts.size(), 1u);
  EXPECT_EQ(alerts[0].at("dispatched_to"), "none");
}

TEST(Sentinel, WindowLongerThanCheckpointIsRejected) {
  WindowClassifier clf(tiny_loaded());
  FileSource src(noise(16000, 1));
  SentinelOptions o = fast_options();
  o.window_s = 10.0;
  std::ostringstream log;
  EXPECT_THROW(run_sentinel(src, clf, nullptr, o, log), CheckpointMismatch);
  o.window_s = 8.735;
  o.threshold = 1.5;
  EXPECT_THROW(run_sentinel(src, clf, nullptr, o, log), InvalidConfig);
}

TEST(Sentinel, DroppedChunksAreReportedAsUnderruns) {
  WindowClassifier clf(tiny_loaded());
  FileSource src(noise(120 * 16000, 10));
  SentinelOptions o = fast_options();
  o.capture_queue = 1;
  o.capture_overflow = Overflow::DropOldest;
  std::ostringstream log;
  const SentinelStats s = run_sentinel(src, clf, nullptr, o, log);
  ASSERT_GT(s.dropped_chunks, 0u);
  EXPECT_GT(s.underruns, 0u);
  const auto u = records(log.str(), "underrun");
  ASSERT_EQ(u.size(), s.underruns);
  EXPECT_EQ(u[0].at("error"), "StreamUnderrun");
  // No window straddles a gap: every window is a contiguous stretch.
  for (const auto& w : s.windows) EXPECT_LE(w.end_s - w.start_s, 8.735 + 1e-9);
}

TEST(Pcm, LittleEndianSixteenBitSamples) {
  std::string bytes = {0x00, 0x40, 0x00, static_cast<char>(0xC0), 0x01};
  std::istringstream in(bytes);
  PcmStreamSource src(in);
  const auto x = src.read(10);
  ASSERT_EQ(x.size(), 2u);
  EXPECT_FLOAT_EQ(x[0], 0.5f);
  EXPECT_FLOAT_EQ(x[1], -0.5f);
  EXPECT_TRUE(src.read(10).empty());
}

TEST(Dispatch, HttpEndpointReceivesPayloadAndToken) {
  StubServer server(200);
  HttpTransport http(server.url(), "secret");
  AlertEvent e;
  e.fall_probability = 0.93;
  e.wall_clock = utc_now_iso8601();
  EXPECT_EQ(dispatch_alert(e, http, "kitchen", {}, [](auto) {}), AlertStatus::Sent);
  EXPECT_EQ(e.attempts, 1);
  EXPECT_EQ(e.dispatched_to, server.url());
  const auto bodies = server.bodies();
  ASSERT_EQ(bodies.size(), 1u);
  const auto j = nlohmann::json::parse(bodies[0]);
  EXPECT_EQ(j.at("device_id"), "kitchen");
  EXPECT_DOUBLE_EQ(j.at("fall_probability").get<double>(), 0.93);
  EXPECT_EQ(server.auth(), "Bearer secret");
}

TEST(Dispatch, ServerErrorsAreRetriedThenFail) {
  StubServer server(503);
  HttpTransport http(server.url());
  AlertEvent e;
  std::vector<long long> delays;
  const auto status = dispatch_alert(e, http, "d", {}, [&](std::chrono::milliseconds d) { delays.push_back(d.count()); });
  EXPECT_EQ(status, AlertStatus::Failed);
  EXPECT_EQ(e.attempts, 3);
  EXPECT_EQ(server.bodies().size(), 3u);
  EXPECT_EQ(delays, (std::vector<long long>{500, 1000}));
}

TEST(Dispatch, UnreachableEndpointFailsAfterThreeAttempts) {
  httplib::Server probe;
  const int port = probe.bind_to_any_port("127.0.0.1");
  probe.stop();  // nothing listens on this port any more
  HttpTransport http("http://127.0.0.1:" + std::to_string(port) + "/x", {}, std::chrono::milliseconds(500));
  AlertEvent e;
  EXPECT_EQ(dispatch_alert(e, http, "d", {}, [](auto) {}), AlertStatus::Failed);
  EXPECT_EQ(e.attempts, 3);
  EXPECT_THROW(HttpTransport("https://example.com"), InvalidConfig);
}

TEST(Dispatch, RetrySucceedsOnSecondAttempt) {
  RecordingTransport t;
  t.fail_first = 1;
  AlertEvent e;
  EXPECT_EQ(dispatch_alert(e, t, "d", {}, [](auto) {}), AlertStatus::Sent);
  EXPECT_EQ(e.attempts, 2);
}

TEST(Dispatch, CommandTransportPipesPayload) {
  testing_support::TempDir dir("cmd");
  const auto out = dir / "payload.json";
  CommandTransport ok("cat > '" + out.string() + "'");
  AlertEvent e;
  e.fall_probability = 0.8;
  EXPECT_EQ(dispatch_alert(e, ok, "hall", {}, [](auto) {}), AlertStatus::Sent);
  std::ifstream in(out);
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("device_id"), "hall");
  CommandTransport bad("exit 3");
  EXPECT_EQ(dispatch_alert(e, bad, "hall", {}, [](auto) {}), AlertStatus::Failed);
}

TEST(Endpoint, EnvironmentOverridesFlags) {
  EndpointConfig cfg;
  cfg.command = "true";
  cfg.device_id = "cli";
  ::setenv("FALLDET_ALERT_URL", "http://127.0.0.1:9/a", 1);
  ::setenv("FALLDET_DEVICE_ID", "env-device", 1);
  ::setenv("FALLDET_ALERT_TOKEN", "tok", 1);
  const EndpointConfig eff = apply_env_overrides(cfg);
  ::unsetenv("FALLDET_ALERT_URL");
  ::unsetenv("FALLDET_DEVICE_ID");
  ::unsetenv("FALLDET_ALERT_TOKEN");
  EXPECT_EQ(eff.url, "http://127.0.0.1:9/a");
  EXPECT_EQ(eff.device_id, "env-device");
  EXPECT_EQ(eff.token, "tok");
  EXPECT_EQ(make_transport(eff)->describe(), "http://127.0.0.1:9/a");
  EXPECT_EQ(make_transport(cfg)->describe(), "cmd:true");
  EXPECT_EQ(make_transport(EndpointConfig{}), nullptr);
}
