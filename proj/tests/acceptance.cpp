// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria.

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <thread>

#include "corrosion/gradcheck.hpp"
#include "corrosion/http_server.hpp"
#include "corrosion/log.hpp"
#include "corrosion/simulation.hpp"

using namespace corrosion;
using json = nlohmann::json;

namespace {

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-4;
constexpr std::size_t kGradMinCases = 20;
constexpr double kGradSeconds = 60.0;
constexpr double kAdamTrajectoryTol = 1e-6;
constexpr double kAdamFirstStepTol = 1e-9;
constexpr double kOverfitLoss = 0.05;
constexpr std::size_t kOverfitEpochs = 200;
constexpr double kOverfitSeconds = 120.0;
constexpr double kMajorityExpected = 0.94208;
constexpr double kMajorityTol = 0.005;
constexpr std::size_t kMajorityImages = 100000;
constexpr double kE2eFinal = 0.90;
constexpr double kE2eGain = 0.15;
constexpr double kE2eCpuSeconds = 30 * 60.0;
constexpr double kNoiseDegradation = 0.05;
constexpr double kAdversarialFraction = 0.10;
constexpr std::size_t kWeightFlips = 1000;
constexpr std::size_t kWeightFileLimit = 50000000;
const std::vector<std::uint64_t> kCampaignSeeds{1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("corrosion-accept-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------- gradients

Outcome check_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckOptions opt;
  opt.rel_tol = kGradRelTol;
  const auto cases = run_gradcheck_suite(opt);
  const double secs = seconds_since(t0);
  std::size_t per_op = 0, per_op_failed = 0, composite_failed = 0;
  double worst = 0.0;
  std::set<std::string> ops;
  for (const auto& c : cases) {
    if (c.composite) {
      composite_failed += !c.passed;
      continue;
    }
    ++per_op;
    per_op_failed += !(c.passed && c.max_error < kGradRelTol);
    worst = std::max(worst, c.max_error);
    ops.insert(c.op);
  }
  Outcome o;
  o.pass = per_op >= kGradMinCases && per_op_failed == 0 && secs < kGradSeconds;
  o.detail = fmt("%zu per-op cases over %zu ops, %zu failed, max rel err %.2e (< %.0e), composite failures %zu, %.1f s",
                 per_op, ops.size(), per_op_failed, worst, kGradRelTol, composite_failed, secs);
  return o;
}

// ---------------------------------------------------------------- optimizer

// Independent 64-bit Adam on a scalar.
struct ReferenceAdam {
  double lr, m = 0.0, v = 0.0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    return theta - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

Outcome check_optimizer() {
  struct Problem {
    const char* name;
    double theta0, lr;
    std::function<double(double)> grad;
  };
  const std::vector<Problem> problems{
      {"quadratic", 0.5, 1e-4, [](double x) { return 2.0 * (x - 3.0); }},
      {"quartic", -2.0, 1e-2, [](double x) { return 4.0 * x * x * x; }},
      {"cosine", 1.0, 1e-3, [](double x) { return std::cos(x) + 0.1 * x; }},
  };
  double worst = 0.0;
  for (const auto& p : problems) {
    ModelWeights w{{{"theta", Tensor({1}, static_cast<float>(p.theta0))}}};
    AdamHyper hp;
    hp.lr = p.lr;
    OptimizerState st = OptimizerState::for_weights(w, hp);
    ReferenceAdam ref{p.lr};
    double theta = p.theta0;
    for (int i = 0; i < 100; ++i) {
      const std::vector<Tensor> g{Tensor({1}, static_cast<float>(p.grad(w.tensors[0].value[0])))};
      adam_step(w, g, st);
      theta = ref.step(theta, p.grad(theta));
      worst = std::max(worst, std::fabs(w.tensors[0].value[0] - theta) / std::fabs(theta));
    }
  }
  // First step from 0 with unit gradient, 64-bit path.
  const AdamHyper hp;
  double theta = 0.0, g = 1.0, m = 0.0, v = 0.0;
  adam_update<double>({&theta, 1}, {&g, 1}, {&m, 1}, {&v, 1}, 1, hp);
  const double closed = hp.lr / (1.0 + hp.eps);
  const double vs_closed = std::fabs(std::fabs(theta) - closed) / closed;
  const double vs_lr = std::fabs(std::fabs(theta) - hp.lr) / hp.lr;
  Outcome o;
  o.pass = worst < kAdamTrajectoryTol && vs_closed < kAdamFirstStepTol;
  o.detail = fmt("100-step max rel dev %.2e (< %.0e); first step |theta| vs lr/(1+eps) %.1e (< %.0e), vs lr %.1e",
                 worst, kAdamTrajectoryTol, vs_closed, kAdamFirstStepTol, vs_lr);
  return o;
}

// ---------------------------------------------------------------- overfit

Outcome check_overfit() {
  const ModelConfig cfg;
  std::vector<LabeledImage> data;
  for (std::size_t i = 0; i < 8; ++i) {
    SyntheticSpec spec;
    spec.seed = mix_seed(2024, i);
    spec.kind = i % 2 ? SceneKind::kPositive : SceneKind::kNegative;
    const auto img = generate_image(spec);
    data.push_back({to_model_input(img.image, cfg.input_size), img.truth});
  }
  SessionSpec spec;
  spec.epochs = kOverfitEpochs;
  spec.batch_size = 16;
  spec.seed = 5;
  spec.validate_each_epoch = false;
  spec.lr_decay = false;
  const double c0 = cpu_seconds();
  const auto r = run_session(cfg, data, data, spec);
  const double cpu = cpu_seconds() - c0;
  const auto& losses = r.report.epoch_losses;
  std::size_t first_below = 0;
  while (first_below < losses.size() && losses[first_below] >= kOverfitLoss) ++first_below;
  Outcome o;
  o.pass = first_below < losses.size() && cpu < kOverfitSeconds;
  o.detail = fmt("8 images, final loss %.5f, below %.2f from epoch %zu, train accuracy %.3f, %.1f s CPU (< %.0f)",
                 losses.back(), kOverfitLoss, first_below + 1, r.report.final_val_accuracy, cpu, kOverfitSeconds);
  return o;
}

// ---------------------------------------------------------------- majority vote

Outcome check_majority() {
  Rng rng(mix_seed(20180207, 42));
  const VoterProfile voter{VoterKind::kNovice, 0.8, 0.8};
  std::size_t right = 0;
  for (std::size_t i = 0; i < kMajorityImages; ++i) {
    const Label truth = rng.bernoulli(0.5) ? Label::kCorrosion : Label::kNoCorrosion;
    VoteTally tally;
    for (int k = 0; k < 5; ++k) (simulate_vote(voter, truth, rng) ? tally.corrosion : tally.no_corrosion) += 1;
    right += aggregate_label(tally) == truth;
  }
  const double acc = static_cast<double>(right) / kMajorityImages;
  Outcome o;
  o.pass = std::fabs(acc - kMajorityExpected) <= kMajorityTol;
  o.detail = fmt("p=0.8 k=5 over %zu images: %.5f vs %.5f (closed form %.5f), tol %.3f", kMajorityImages, acc,
                 kMajorityExpected, majority_accuracy_oracle(0.8, 5), kMajorityTol);
  return o;
}

// ---------------------------------------------------------------- campaigns

std::string trajectory_string(const CampaignResult& r) {
  std::string s;
  for (const auto& p : r.history) s += fmt("%s%.3f@%llu", s.empty() ? "" : " ", p.accuracy,
                                          static_cast<unsigned long long>(p.trained_on));
  return s;
}

std::map<std::uint64_t, CampaignResult> g_clean;

Outcome check_e2e() {
  const double c0 = cpu_seconds();
  std::size_t ok = 0;
  std::string detail;
  for (auto seed : kCampaignSeeds) {
    CampaignScenario s = default_scenario();
    s.seed = seed;
    const auto r = run_campaign(s);
    const bool pass = r.history.size() == s.sessions + 1 && r.final_accuracy >= kE2eFinal &&
                      r.final_accuracy - r.baseline_accuracy >= kE2eGain;
    ok += pass;
    detail += fmt("; seed %llu %s [%s] %zu ballots", static_cast<unsigned long long>(seed), pass ? "ok" : "FAIL",
                  trajectory_string(r).c_str(), r.ballots);
    std::fprintf(stderr, "campaign seed %llu: %s, %.0f s\n", static_cast<unsigned long long>(seed),
                 trajectory_string(r).c_str(), r.seconds);
    g_clean[seed] = r;
  }
  const double cpu = cpu_seconds() - c0;
  Outcome o;
  o.pass = ok == kCampaignSeeds.size() && cpu <= kE2eCpuSeconds;
  o.detail = fmt("%zu/%zu seeds reach >= %.2f and gain >= %.2f, %.0f s CPU (<= %.0f)", ok, kCampaignSeeds.size(),
                 kE2eFinal, kE2eGain, cpu, kE2eCpuSeconds) +
             detail;
  return o;
}

Outcome check_noise() {
  std::string detail;
  double worst = 0.0;
  bool all = true;
  for (auto seed : kCampaignSeeds) {
    CampaignScenario s = default_scenario();
    s.seed = seed;
    if (!g_clean.count(seed)) g_clean[seed] = run_campaign(s);
    const auto& clean = g_clean[seed];
    s.mix = s.mix.with_adversarial(kAdversarialFraction);
    const auto noisy = run_campaign(s);
    const double drop = clean.final_accuracy - noisy.final_accuracy;
    worst = std::max(worst, drop);
    all &= drop < kNoiseDegradation && noisy.history.size() == s.sessions + 1;
    detail += fmt("; seed %llu clean %.3f adversarial %.3f (label error %.3f vs single vote %.3f)",
                  static_cast<unsigned long long>(seed), clean.final_accuracy, noisy.final_accuracy,
                  noisy.quality.aggregated_error_rate(), noisy.quality.single_vote_error_rate());
    std::fprintf(stderr, "adversarial seed %llu: %s, %.0f s\n", static_cast<unsigned long long>(seed),
                 trajectory_string(noisy).c_str(), noisy.seconds);
  }
  Outcome o;
  o.pass = all;
  o.detail = fmt("%.0f%% adversarial voters, worst degradation %.3f (< %.2f)", kAdversarialFraction * 100, worst,
                 kNoiseDegradation) +
             detail;
  return o;
}

// ---------------------------------------------------------------- replay

CampaignScenario replay_scenario() {
  CampaignScenario s = default_scenario();
  s.name = "replay";
  s.seed = 11;
  s.corpus.pool_size = 200;
  s.corpus.validation_size = 60;
  s.corpus.seed_labeled = 40;
  s.retrain_k = 30;
  s.sessions = 3;
  s.session_epochs = 4;
  return s;
}

struct StoreState {
  std::vector<ImageRecord> images;
  std::vector<std::tuple<std::string, std::string, bool, std::string, std::uint64_t>> votes;
  StoreCounters counters;
  std::vector<AccuracyPoint> history;
  std::map<std::uint64_t, std::vector<std::uint8_t>> models;  // published version -> file bytes
  bool operator==(const StoreState&) const = default;
};

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

StoreState state_of(const CorrosionService& s) {
  StoreState st;
  st.images = s.store().images();
  for (const auto& v : s.store().votes()) st.votes.emplace_back(v.image_id, v.voter_token, v.corrosion, v.cast_at, v.ballot);
  st.counters = s.store().counters();
  st.history = s.store().read_history();
  for (const auto& p : st.history) st.models[p.session_id] = file_bytes(s.model_path(p.session_id));
  return st;
}

std::size_t ballots_in(const CorrosionService& s) {
  std::set<std::uint64_t> ids;
  for (const auto& v : s.store().votes()) ids.insert(v.ballot);
  return ids.size();
}

struct StopCampaign {};

// Runs the replay campaign in a child process, SIGKILLs it once it has
// reported `kill_after` ballots plus `delay`, and returns the data dir state
// after reopening it.
struct KillTrial {
  std::size_t ballots = 0;
  bool mid_session = false;
  bool match = false;
  std::string note;
};

KillTrial kill_trial(std::size_t kill_after, std::chrono::milliseconds delay) {
  KillTrial trial;
  const CampaignScenario scn = replay_scenario();
  TempDir killed("killed"), fresh("fresh");
  int fds[2];
  if (pipe(fds) != 0) throw std::runtime_error("pipe failed");
  std::fflush(nullptr);
  const pid_t pid = fork();
  if (pid == 0) {
    close(fds[0]);
    set_log_level(LogLevel::kOff);
    CampaignHooks hooks;
    hooks.on_ballot = [&](const CorrosionService&, std::size_t n) {
      const std::string line = std::to_string(n) + "\n";
      if (write(fds[1], line.data(), line.size()) < 0) _exit(3);
    };
    try {
      run_campaign(scn, killed.path() / "data", hooks);
    } catch (...) {
      _exit(2);
    }
    _exit(0);
  }
  close(fds[1]);
  FILE* in = fdopen(fds[0], "r");
  char line[64];
  std::size_t reported = 0;
  while (reported < kill_after && std::fgets(line, sizeof line, in)) reported = std::stoul(line);
  std::this_thread::sleep_for(delay);
  kill(pid, SIGKILL);
  int status = 0;
  waitpid(pid, &status, 0);
  std::fclose(in);
  if (!(WIFSIGNALED(status) && WTERMSIG(status) == SIGKILL)) {
    trial.note = "child finished before the kill";
    return trial;
  }

  // Replay the killed directory.
  CorrosionService replayed(campaign_service_config(scn, killed.path() / "data"));
  const StoreState got = state_of(replayed);
  trial.ballots = ballots_in(replayed);

  // Uninterrupted run stopped at the same ballot count.
  StoreState want;
  std::vector<std::uint8_t> want_weights;
  CampaignHooks stop;
  stop.on_ballot = [&](const CorrosionService& s, std::size_t n) {
    if (n < trial.ballots) return;
    want = state_of(s);
    want_weights = serialize_weights(s.current_model()->weights);
    throw StopCampaign{};
  };
  try {
    run_campaign(scn, fresh.path() / "data", stop);
  } catch (const StopCampaign&) {
  }

  StoreState trimmed = want;
  // A kill inside the session that ballot B triggered leaves that version
  // unpublished; the votes are committed either way.
  if (got.history.size() + 1 == want.history.size() && !want.history.empty() &&
      want.history.back().cumulative_votes == want.counters.cumulative_votes) {
    trial.mid_session = true;
    const auto v = want.history.back().session_id;
    trimmed.history.pop_back();
    trimmed.models.erase(v);
    want_weights = trimmed.models.empty() ? std::vector<std::uint8_t>{} : std::prev(trimmed.models.end())->second;
  }
  const auto live = serialize_weights(replayed.current_model()->weights);
  const auto stats = replayed.stats();
  const bool stats_ok = stats.cumulative_votes == trimmed.counters.cumulative_votes &&
                        stats.cumulative_uploads == trimmed.counters.cumulative_uploads &&
                        stats.labeled_count == trimmed.counters.labeled_count &&
                        stats.accuracy_history == trimmed.history &&
                        stats.model_version == (trimmed.history.empty() ? 0 : trimmed.history.back().session_id);
  const bool weights_ok = !want_weights.empty() && live == want_weights;
  trial.match = got == trimmed && stats_ok && weights_ok;
  trial.note = fmt("killed after %zu ballots, replayed %zu ballots / %llu votes / %zu versions%s%s%s", reported,
                   trial.ballots, static_cast<unsigned long long>(got.counters.cumulative_votes), got.history.size(),
                   trial.mid_session ? " (mid-session)" : "", got == trimmed ? "" : " STATE DIFFERS",
                   weights_ok ? "" : " WEIGHTS DIFFER");
  return trial;
}

Outcome check_replay() {
  struct Plan {
    std::size_t after;
    int delay_ms;
  };
  const std::vector<Plan> plans{{60, 0}, {200, 0}, {200, 2500}};
  std::size_t ok = 0;
  std::string detail;
  for (const auto& p : plans) {
    const auto t = kill_trial(p.after, std::chrono::milliseconds(p.delay_ms));
    ok += t.match;
    detail += "; " + t.note;
  }
  Outcome o;
  o.pass = ok == plans.size();
  o.detail = fmt("%zu/%zu SIGKILL trials replay to the uninterrupted state (labels, votes, counters, history, "
                 "model files bit-equal)",
                 ok, plans.size()) +
             detail;
  return o;
}

// ---------------------------------------------------------------- weight format

Outcome check_weight_format() {
  const ModelConfig cfg;
  const ModelWeights w = build_model(cfg, 20180207);
  const auto bytes = serialize_weights(w);
  const ModelWeights back = deserialize_weights(bytes, cfg);
  bool round_trip = serialize_weights(back) == bytes && back.tensors.size() == w.tensors.size();
  for (std::size_t i = 0; round_trip && i < w.tensors.size(); ++i)
    round_trip = back.tensors[i].name == w.tensors[i].name && bit_equal(back.tensors[i].value, w.tensors[i].value);

  TempDir dir("weights");
  const auto path = dir.path() / "default.cdw";
  save_weights(w, path);
  const auto file_size = std::filesystem::file_size(path);
  round_trip = round_trip && serialize_weights(load_weights(path, cfg)) == bytes;

  std::mt19937_64 gen(1572774);
  std::size_t detected = 0;
  for (std::size_t i = 0; i < kWeightFlips; ++i) {
    auto bad = bytes;
    const std::size_t at = std::uniform_int_distribution<std::size_t>(0, bad.size() - 1)(gen);
    bad[at] ^= static_cast<std::uint8_t>(std::uniform_int_distribution<int>(1, 255)(gen));
    try {
      deserialize_weights(bad, cfg);
    } catch (const Error&) {
      ++detected;
    }
  }
  Outcome o;
  o.pass = round_trip && detected == kWeightFlips && file_size < kWeightFileLimit;
  o.detail = fmt("round trip %s, %zu/%zu single-byte flips detected, default file %zu bytes (< %zu)",
                 round_trip ? "bit-exact" : "DIFFERS", detected, kWeightFlips, static_cast<std::size_t>(file_size),
                 kWeightFileLimit);
  return o;
}

// ---------------------------------------------------------------- API integration

struct ApiClient {
  httplib::Client http;
  std::vector<std::string> failures;
  ApiClient(const std::string& host, int port) : http(host, port) { http.set_read_timeout(300, 0); }

  json call(const httplib::Result& r, int expect, const std::string& what) {
    if (!r) {
      failures.push_back(what + ": no response");
      return json::object();
    }
    if (r->status != expect) failures.push_back(what + ": status " + std::to_string(r->status) + " " + r->body);
    return json::parse(r->body, nullptr, false);
  }
  json get(const std::string& path, int expect = 200) { return call(http.Get(path), expect, "GET " + path); }
  json post(const std::string& path, const json& body, int expect = 200) {
    return call(http.Post(path, body.dump(), "application/json"), expect, "POST " + path);
  }
  void require(bool cond, const std::string& what) {
    if (!cond) failures.push_back(what);
  }
};

Outcome check_api() {
  TempDir dir("api");
  ServiceConfig c;
  c.data_dir = dir.path() / "data";
  c.policy.trigger = RetrainPolicy::Trigger::kManual;
  c.policy.session_epochs = 2;
  c.background_training = true;
  CorrosionService service(c);
  CorpusSpec corpus;
  corpus.pool_size = 40;
  corpus.validation_size = 20;
  corpus.seed_labeled = 12;
  const auto seeded = seed_synthetic_corpus(service.store(), corpus);
  service.bootstrap();
  std::map<std::string, SeededImage> truth;
  std::set<std::string> validation;
  for (const auto& s : seeded) {
    truth[s.id] = s;
    if (s.partition == Partition::kValidation) validation.insert(s.id);
  }
  HttpServer server(service);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  ApiClient api("127.0.0.1", port);
  std::size_t quiz_served = 0, leaked = 0;
  auto quiz = [&] {
    const auto q = api.get("/api/quiz");
    std::vector<std::string> ids;
    for (const auto& im : q.value("images", json::array())) {
      ids.push_back(im["id"]);
      leaked += validation.count(ids.back());
      ++quiz_served;
    }
    api.require(ids.size() == 4 && std::set<std::string>(ids.begin(), ids.end()).size() == 4,
                "quiz did not return 4 distinct images");
    return ids;
  };

  // Stats on a fresh deployment.
  auto st = api.get("/api/stats");
  api.require(st["accuracy_history"].size() == 1 && st["cumulative_uploads"] == 0 && st["model_version"] == 1,
              "fresh stats: " + st.dump());

  // Quiz and five ballots label a batch.
  const auto batch = quiz();
  std::set<std::string> labeled;
  for (int voter = 0; voter < 5; ++voter) {
    json ballot = json::array();
    for (const auto& id : batch)
      ballot.push_back({{"id", id}, {"corrosion", truth.count(id) && truth[id].truth == Label::kCorrosion}});
    const auto r = api.post("/api/quiz", {{"ballot", ballot}, {"token", "voter-" + std::to_string(voter)}});
    for (const auto& id : r.value("newly_labeled", json::array())) labeled.insert(id);
    api.require(r.value("accepted", 0) == 4, "ballot not accepted");
    if (voter < 4) api.require(r.value("newly_labeled", json::array()).empty(), "labeled before the fifth vote");
  }
  for (const auto& id : batch) {
    const auto rec = service.store().find(id);
    api.require(labeled.count(id) == 1 || (rec && rec->expert_label), "batch image not labeled by five votes");
    api.require(rec && rec->label == truth[id].truth, "aggregated label differs from ground truth");
  }
  json dup = json::array();
  for (const auto& id : batch) dup.push_back({{"id", id}, {"corrosion", true}});
  api.post("/api/quiz", {{"ballot", dup}, {"token", "voter-0"}}, 409);

  // Upload, then correct, then four more votes.
  SyntheticSpec up;
  up.seed = 99;
  up.kind = SceneKind::kPositive;
  const auto png = encode_png(generate_image(up).image);
  httplib::MultipartFormDataItems items{{"image", std::string(png.begin(), png.end()), "upload.png", "image/png"}};
  const auto det = api.call(api.http.Post("/api/detect", items), 200, "POST /api/detect");
  const std::string upload_id = det.value("image_id", "");
  api.require(det.value("model_version", 0) == 1, "detect did not cite version 1");
  bool in_rotation = false;
  for (int i = 0; i < 200 && !in_rotation; ++i)
    for (const auto& id : quiz()) in_rotation |= id == upload_id;
  api.require(in_rotation, "upload never appeared in the quiz");
  api.post("/api/detect/" + upload_id + "/correct", {{"corrosion", true}, {"token", "uploader"}});
  api.post("/api/detect/" + upload_id + "/correct", {{"corrosion", true}, {"token", "uploader"}}, 409);
  api.require(service.store().find(upload_id)->tally == VoteTally{1, 0}, "correction is not one vote");
  json last;
  for (int i = 0; i < 4; ++i)
    last = api.post("/api/quiz", {{"ballot", json::array({{{"id", upload_id}, {"corrosion", true}}})},
                                  {"token", "rater-" + std::to_string(i)}});
  api.require(last.value("newly_labeled", json::array()) == json::array({upload_id}),
              "upload not labeled at the fifth vote");

  // Retrain in the background while uploads keep arriving.
  const auto votes_before = service.store().counters().cumulative_votes;
  const auto rt = api.post("/api/admin/retrain", json::object(), 202);
  api.require(rt.value("outcome", "") == "queued", "retrain not queued: " + rt.dump());
  std::vector<std::pair<std::uint64_t, std::string>> cited;
  for (int i = 0; i < 400; ++i) {
    up.seed = 1000 + i;
    const auto p = encode_png(generate_image(up).image);
    const auto r = api.call(api.http.Post("/api/detect", std::string(p.begin(), p.end()), "image/png"), 200,
                            "POST /api/detect");
    cited.emplace_back(r.value("model_version", 0), r.value("model_checksum", ""));
    if (i >= 3 && !service.training_in_flight() && cited.back().first == 2) break;
  }
  service.wait_idle();
  std::map<std::uint64_t, std::string> expected;
  for (std::uint64_t v : {1, 2}) {
    std::error_code ec;
    if (!std::filesystem::exists(service.model_path(v), ec)) continue;
    expected[v] = fmt("%08x", crc32_ieee(serialize_weights(load_weights(service.model_path(v), c.model))));
  }
  std::size_t hybrid = 0;
  std::set<std::uint64_t> versions;
  for (const auto& [v, sum] : cited) {
    hybrid += !expected.count(v) || expected[v] != sum;
    versions.insert(v);
  }
  api.require(hybrid == 0, "detect cited a version/checksum pair that was never published");

  st = api.get("/api/stats");
  api.require(st["model_version"] == 2, "no version bump");
  api.require(st["accuracy_history"].size() == 2, "retrain did not append an accuracy point");
  api.require(st["accuracy_history"][1]["cumulative_votes"] == votes_before, "point votes not at snapshot time");
  api.require(st["cumulative_uploads"] == 1 + cited.size(), "upload count mismatch");
  api.require(st["cumulative_votes"] == 5 * 4 + 1 + 4, "vote count mismatch: " + st["cumulative_votes"].dump());
  for (const auto& h : st["accuracy_history"])
    api.require(h["accuracy"] >= 0.0 && h["accuracy"] <= 1.0, "accuracy outside [0,1]");

  // No validation leakage.
  for (const auto& item : *service.store().training_snapshot()) leaked += validation.count(item.id);
  for (const auto& id : validation) {
    const auto r = service.store().find(id);
    leaked += r->tally.corrosion + r->tally.no_corrosion > 0;
  }
  api.require(leaked == 0, "validation images leaked");
  server.stop();

  Outcome o;
  o.pass = api.failures.empty();
  o.detail = fmt("quiz -> 5-vote label -> upload -> correct -> retrain -> v2 -> stats; %zu quiz images served "
                 "(0 validation), %zu detects during the swap citing versions {%s} with matching checksums",
                 quiz_served, cited.size(),
                 [&] {
                   std::string s;
                   for (auto v : versions) s += (s.empty() ? "" : ",") + std::to_string(v);
                   return s;
                 }()
                     .c_str());
  for (const auto& f : api.failures) o.detail += "; " + f;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<std::string> only;
  app.add_option("--only", only, "Run only these criteria (by key)");
  CLI11_PARSE(app, argc, argv);
  set_log_level(LogLevel::kWarn);

  const std::vector<std::tuple<std::string, std::string, std::function<Outcome()>>> criteria{
      {"gradients", "Gradient correctness", check_gradients},
      {"optimizer", "Optimizer oracle", check_optimizer},
      {"overfit", "Overfit check", check_overfit},
      {"majority", "Majority-vote oracle", check_majority},
      {"e2e", "End-to-end campaign", check_e2e},
      {"noise", "Noise robustness", check_noise},
      {"replay", "Label replay", check_replay},
      {"weights", "Weight format", check_weight_format},
      {"api", "API integration", check_api},
  };
  int failed = 0;
  for (const auto& [key, name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), key) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
