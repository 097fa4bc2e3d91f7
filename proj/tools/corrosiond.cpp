// corrosiond: crowd-trained corrosion classifier service and tooling.

#include <CLI11.hpp>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "corrosion/error.hpp"
#include "corrosion/gradcheck.hpp"
#include "corrosion/http_server.hpp"
#include "corrosion/log.hpp"
#include "corrosion/service.hpp"
#include "corrosion/simulation.hpp"

using namespace corrosion;

namespace {

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

ServiceConfig make_config(const std::string& config_file, const std::string& data_dir) {
  ServiceConfig c;
  if (!config_file.empty()) c = load_service_config(config_file);
  if (!data_dir.empty()) c.data_dir = data_dir;
  if (c.data_dir.empty()) throw Error(ErrorCode::kInvalidConfig, "no data directory given");
  return c;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot read " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool is_image_file(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm";
}

// Layout: <dir>/{train,validation}/{corrosion,no_corrosion}/*, plus optional
// unlabeled pool images in <dir>/train/unlabeled/*.
std::size_t seed_from_dir(LabelStore& store, const std::filesystem::path& dir) {
  std::size_t n = 0;
  const std::pair<const char*, Partition> parts[] = {{"train", Partition::kTrainPool},
                                                     {"validation", Partition::kValidation}};
  const std::pair<const char*, std::optional<Label>> classes[] = {
      {"corrosion", Label::kCorrosion}, {"no_corrosion", Label::kNoCorrosion}, {"unlabeled", std::nullopt}};
  for (const auto& [pname, partition] : parts)
    for (const auto& [cname, label] : classes) {
      const auto sub = dir / pname / cname;
      if (!std::filesystem::is_directory(sub)) continue;
      std::vector<std::filesystem::path> files;
      for (const auto& e : std::filesystem::directory_iterator(sub))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        store.add_image(read_file(f), Source::kSeedCorpus, partition, label);
        ++n;
      }
    }
  return n;
}

int cmd_gradcheck(std::uint64_t seed, bool verbose) {
  GradcheckOptions opt;
  opt.seed = seed;
  const auto cases = run_gradcheck_suite(opt);
  std::size_t failed = 0;
  for (const auto& c : cases) {
    if (!c.passed) ++failed;
    if (verbose || !c.passed) {
      const std::string name = c.op + (c.composite ? " (composite)" : "");
      std::printf("%-4s %-22s err=%.3e checked=%zu skipped=%zu  %s\n", c.passed ? "ok" : "FAIL",
                  name.c_str(), c.max_error, c.checked, c.skipped, c.shape.c_str());
    }
  }
  std::printf("gradcheck: %zu/%zu cases passed\n", cases.size() - failed, cases.size());
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crowd-trained corrosion classifier"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  std::string data_dir, config_file;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  int port = -1;
  std::string static_dir;
  serve->add_option("--data-dir", data_dir, "Data directory (created if missing)");
  serve->add_option("--config", config_file, "key = value configuration file");
  serve->add_option("--port", port, "Override the configured port");
  serve->add_option("--static-dir", static_dir, "Web UI bundle to serve at /");

  auto* seed = app.add_subcommand("seed-corpus", "Ingest a seed corpus");
  std::size_t synthetic = 0, validation = 0, labeled = 0;
  std::uint64_t corpus_seed = 1;
  std::string corpus_dir;
  bool no_baseline = false;
  seed->add_option("--data-dir", data_dir)->required();
  seed->add_option("--config", config_file);
  auto* syn = seed->add_option("--synthetic", synthetic, "Number of synthetic train-pool images");
  auto* dir = seed->add_option("--dir", corpus_dir, "Directory of labeled images")->check(CLI::ExistingDirectory);
  syn->excludes(dir);
  dir->excludes(syn);
  seed->add_option("--validation", validation, "Synthetic validation images (default N/3)");
  seed->add_option("--labeled", labeled, "Synthetic pool images with expert labels (default N/6)");
  seed->add_option("--seed", corpus_seed, "Synthetic corpus seed");
  seed->add_flag("--no-baseline", no_baseline, "Skip training the baseline model");

  auto* retrain = app.add_subcommand("retrain", "Run a training session");
  bool now = false;
  retrain->add_option("--data-dir", data_dir);
  retrain->add_option("--config", config_file);
  retrain->add_flag("--now", now, "Train immediately and publish")->required();

  auto* simulate = app.add_subcommand("simulate", "Run a simulated labeling campaign");
  std::string scenario_arg = "default", out_dir = "campaign";
  std::optional<std::uint64_t> scenario_seed;
  simulate->add_option("--scenario", scenario_arg, "Scenario file or 'default'");
  simulate->add_option("--out", out_dir, "Output directory (must not hold a previous campaign)");
  simulate->add_option("--seed", scenario_seed, "Override the master seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  bool verbose = false;
  std::uint64_t gc_seed = GradcheckOptions{}.seed;
  gradcheck->add_flag("-v,--verbose", verbose);
  gradcheck->add_option("--seed", gc_seed);

  CLI11_PARSE(app, argc, argv);
  const std::pair<const char*, LogLevel> levels[] = {{"debug", LogLevel::kDebug},
                                                     {"info", LogLevel::kInfo},
                                                     {"warn", LogLevel::kWarn},
                                                     {"error", LogLevel::kError},
                                                     {"off", LogLevel::kOff}};
  for (const auto& [n, l] : levels)
    if (log_level == n) set_log_level(l);

  try {
    if (*serve) {
      ServiceConfig c = make_config(config_file, data_dir);
      if (port >= 0) c.port = port;
      if (!static_dir.empty()) c.static_dir = static_dir;
      CorrosionService service(c);
      service.bootstrap();
      HttpServer server(service);
      server.bind(c.host, c.port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.serve();
      g_server = nullptr;
      return 0;
    }
    if (*seed) {
      ServiceConfig c = make_config(config_file, data_dir);
      c.background_training = false;
      CorrosionService service(c);
      std::size_t added = 0;
      if (!corpus_dir.empty()) {
        added = seed_from_dir(service.store(), corpus_dir);
      } else {
        if (synthetic == 0) throw Error(ErrorCode::kInvalidArgument, "give --synthetic N or --dir PATH");
        CorpusSpec spec;
        spec.seed = corpus_seed;
        spec.pool_size = synthetic;
        spec.validation_size = validation ? validation : std::max<std::size_t>(1, synthetic / 3);
        spec.seed_labeled = labeled ? labeled : std::max<std::size_t>(1, synthetic / 6);
        spec.image_size = c.model.input_size;
        added = seed_synthetic_corpus(service.store(), spec).size();
      }
      std::printf("added %zu images to %s\n", added, c.data_dir.string().c_str());
      if (!no_baseline) {
        service.bootstrap();
        std::printf("model version %llu\n",
                    static_cast<unsigned long long>(service.current_model()->version));
      }
      return 0;
    }
    if (*retrain) {
      ServiceConfig c = make_config(config_file, data_dir);
      c.background_training = false;
      CorrosionService service(c);
      const auto r = service.retrain_now();
      if (r.outcome != RetrainOutcome::kPublished) {
        std::fprintf(stderr, "retrain: %s\n", r.message.c_str());
        return 1;
      }
      std::printf("published v%llu accuracy %.4f on %zu images\n",
                  static_cast<unsigned long long>(r.version), r.report->final_val_accuracy,
                  r.report->dataset_size);
      return 0;
    }
    if (*simulate) {
      CampaignScenario s = scenario_arg == "default" ? default_scenario() : load_scenario(scenario_arg);
      if (scenario_seed) s.seed = *scenario_seed;
      const std::filesystem::path out(out_dir);
      std::filesystem::create_directories(out);
      const auto result = run_campaign(s, out / "data");
      write_trajectory_csv(result, out / "trajectory.csv");
      write_accuracy_log(result, out / "accuracy.jsonl");
      std::printf("session,votes,labeled_count,accuracy\n");
      for (const auto& r : result.trajectory)
        std::printf("%llu,%llu,%llu,%.4f\n", static_cast<unsigned long long>(r.session),
                    static_cast<unsigned long long>(r.votes),
                    static_cast<unsigned long long>(r.labeled_count), r.accuracy);
      const auto& q = result.quality;
      std::printf("ballots %zu, aggregated label error %.4f vs single vote %.4f, %.1f s\n",
                  result.ballots, q.aggregated_error_rate(), q.single_vote_error_rate(), result.seconds);
      return 0;
    }
    if (*gradcheck) return cmd_gradcheck(gc_seed, verbose);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(error_code_name(e.code())).c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
