#include "corrosion/simulation.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <numeric>

#include "corrosion/config.hpp"
#include "corrosion/error.hpp"
#include "corrosion/log.hpp"

namespace corrosion {

const char* voter_kind_name(VoterKind k) {
  switch (k) {
    case VoterKind::kExpert: return "expert";
    case VoterKind::kNovice: return "novice";
    case VoterKind::kRandom: return "random";
    case VoterKind::kAdversarial: return "adversarial";
  }
  return "unknown";
}

VoterKind parse_voter_kind(const std::string& s) {
  for (std::size_t i = 0; i < kNumVoterKinds; ++i) {
    const auto k = static_cast<VoterKind>(i);
    if (s == voter_kind_name(k)) return k;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown voter kind '" + s + "'");
}

VoterProfile VoterProfile::defaults(VoterKind kind) {
  switch (kind) {
    case VoterKind::kExpert: return {kind, 0.95, 0.70};
    case VoterKind::kNovice: return {kind, 0.70, 0.30};
    case VoterKind::kRandom: return {kind, 0.50, 0.50};
    case VoterKind::kAdversarial: return {kind, 0.05, 0.05};
  }
  return {};
}

void VoterProfile::validate() const {
  auto in01 = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in01(p_correct) || !in01(p_correct_ambiguous)) {
    throw Error(ErrorCode::kInvalidConfig,
                std::string(voter_kind_name(kind)) + ": p_correct must lie in [0,1]");
  }
}

bool simulate_vote(const VoterProfile& profile, Label truth, Rng& rng, bool ambiguous) {
  const double p = ambiguous ? profile.p_correct_ambiguous : profile.p_correct;
  const bool says_truth = rng.uniform() < p;
  const bool truth_positive = truth == Label::kCorrosion;
  return says_truth ? truth_positive : !truth_positive;
}

double majority_accuracy_oracle(double p, unsigned k) {
  if (k == 0 || k % 2 == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "majority oracle needs an odd vote count, got " + std::to_string(k));
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "p must lie in [0,1]");
  }
  double sum = 0.0;
  double binom = 1.0;  // C(k, j), updated incrementally
  for (unsigned j = 0; j <= k; ++j) {
    if (j > 0) binom = binom * static_cast<double>(k - j + 1) / static_cast<double>(j);
    if (2 * j > k) sum += binom * std::pow(p, j) * std::pow(1.0 - p, k - j);
  }
  return sum;
}

VoterMix::VoterMix() {
  for (std::size_t i = 0; i < kNumVoterKinds; ++i)
    profiles[i] = VoterProfile::defaults(static_cast<VoterKind>(i));
}

void VoterMix::validate() const {
  double total = 0.0;
  for (std::size_t i = 0; i < kNumVoterKinds; ++i) {
    profiles[i].validate();
    if (!(fractions[i] >= 0.0 && fractions[i] <= 1.0)) {
      throw Error(ErrorCode::kInvalidConfig, "voter fractions must lie in [0,1]");
    }
    total += fractions[i];
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidConfig,
                "voter fractions sum to " + std::to_string(total) + ", expected 1");
  }
}

VoterKind VoterMix::draw(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < kNumVoterKinds; ++i) {
    if (fractions[i] <= 0.0) continue;
    last = i;
    acc += fractions[i];
    if (u < acc) return static_cast<VoterKind>(i);
  }
  return static_cast<VoterKind>(last);
}

double VoterMix::mean_p_correct(bool ambiguous) const {
  double p = 0.0;
  for (std::size_t i = 0; i < kNumVoterKinds; ++i)
    p += fractions[i] * (ambiguous ? profiles[i].p_correct_ambiguous : profiles[i].p_correct);
  return p;
}

VoterMix VoterMix::with_adversarial(double f) const {
  VoterMix out = *this;
  for (auto& x : out.fractions) x *= 1.0 - f;
  out.fractions[static_cast<std::size_t>(VoterKind::kAdversarial)] += f;
  return out;
}

std::vector<SceneKind> corpus_kinds(std::size_t n, double positive_fraction,
                                    double ambiguous_fraction, Rng& rng) {
  const auto n_pos = static_cast<std::size_t>(std::lround(positive_fraction * static_cast<double>(n)));
  const auto n_amb = static_cast<std::size_t>(std::lround(ambiguous_fraction * static_cast<double>(n)));
  if (n_pos + n_amb > n) {
    throw Error(ErrorCode::kInvalidConfig, "positive + ambiguous fractions exceed 1");
  }
  std::vector<SceneKind> kinds(n, SceneKind::kNegative);
  std::fill_n(kinds.begin(), n_pos, SceneKind::kPositive);
  std::fill_n(kinds.begin() + static_cast<std::ptrdiff_t>(n_pos), n_amb, SceneKind::kAmbiguous);
  for (std::size_t i = n; i > 1; --i) std::swap(kinds[i - 1], kinds[rng.below(i)]);
  return kinds;
}

std::vector<SeededImage> seed_synthetic_corpus(LabelStore& store, const CorpusSpec& spec) {
  if (spec.seed_labeled > spec.pool_size) {
    throw Error(ErrorCode::kInvalidConfig, "seed_labeled exceeds pool_size");
  }
  Rng rng(mix_seed(spec.seed, 11));
  const auto pool = corpus_kinds(spec.pool_size, spec.positive_fraction, spec.ambiguous_fraction, rng);
  const auto val =
      corpus_kinds(spec.validation_size, spec.positive_fraction, spec.ambiguous_fraction, rng);

  std::vector<SeededImage> out;
  out.reserve(pool.size() + val.size());
  std::size_t serial = 0;
  auto ingest = [&](SceneKind kind, Partition partition, bool expert) {
    SyntheticSpec s;
    s.seed = mix_seed(spec.seed, 1000 + serial++);
    s.image_size = spec.image_size;
    s.kind = kind;
    const SyntheticImage img = generate_image(s);
    const auto png = encode_png(img.image);
    const auto expert_label = expert ? std::optional<Label>(img.truth) : std::nullopt;
    const ImageRecord r = store.add_image(png, Source::kSeedCorpus, partition, expert_label);
    out.push_back({r.id, img.truth, kind, partition, expert});
  };
  for (std::size_t i = 0; i < pool.size(); ++i)
    ingest(pool[i], Partition::kTrainPool, i < spec.seed_labeled);
  for (auto k : val) ingest(k, Partition::kValidation, true);
  return out;
}

void CampaignScenario::validate() const {
  mix.validate();
  model.validate();
  if (corpus.validation_size == 0) {
    throw Error(ErrorCode::kInvalidConfig, "a campaign needs a validation set");
  }
  if (corpus.seed_labeled > corpus.pool_size) {
    throw Error(ErrorCode::kInvalidConfig, "seed_labeled exceeds pool_size");
  }
  if (retrain_k == 0 || batch_size == 0 || ballots_per_round == 0) {
    throw Error(ErrorCode::kInvalidConfig, "retrain_k, batch_size and ballots_per_round must be positive");
  }
  if (baseline_epochs == 0 || session_epochs == 0) {
    throw Error(ErrorCode::kInvalidConfig, "session epochs must be positive");
  }
}

CampaignScenario default_scenario() { return CampaignScenario{}; }

void apply_scenario_setting(CampaignScenario& s, const std::string& key, const std::string& value) {
  auto kind_suffix = [&](const std::string& prefix) -> std::optional<std::size_t> {
    if (key.rfind(prefix, 0) != 0) return std::nullopt;
    return static_cast<std::size_t>(parse_voter_kind(key.substr(prefix.size())));
  };
  if (auto k = kind_suffix("mix.")) {
    s.mix.fractions[*k] = parse_double(key, value);
  } else if (auto k2 = kind_suffix("p_correct.")) {
    s.mix.profiles[*k2].p_correct = parse_double(key, value);
  } else if (auto k3 = kind_suffix("p_correct_ambiguous.")) {
    s.mix.profiles[*k3].p_correct_ambiguous = parse_double(key, value);
  } else if (key == "name") {
    s.name = value;
  } else if (key == "seed") {
    s.seed = parse_uint(key, value);
  } else if (key == "pool_size") {
    s.corpus.pool_size = parse_uint(key, value);
  } else if (key == "validation_size") {
    s.corpus.validation_size = parse_uint(key, value);
  } else if (key == "seed_labeled") {
    s.corpus.seed_labeled = parse_uint(key, value);
  } else if (key == "positive_fraction") {
    s.corpus.positive_fraction = parse_double(key, value);
  } else if (key == "ambiguous_fraction") {
    s.corpus.ambiguous_fraction = parse_double(key, value);
  } else if (key == "image_size") {
    s.corpus.image_size = parse_uint(key, value);
  } else if (key == "ballots_per_round") {
    s.ballots_per_round = parse_uint(key, value);
  } else if (key == "max_ballots") {
    s.max_ballots = parse_uint(key, value);
  } else if (key == "retrain_k") {
    s.retrain_k = parse_uint(key, value);
  } else if (key == "sessions") {
    s.sessions = parse_uint(key, value);
  } else if (key == "baseline_epochs") {
    s.baseline_epochs = parse_uint(key, value);
  } else if (key == "session_epochs") {
    s.session_epochs = parse_uint(key, value);
  } else if (key == "batch_size") {
    s.batch_size = parse_uint(key, value);
  } else if (key == "validate_each_epoch") {
    s.validate_each_epoch = parse_bool(key, value);
  } else if (key == "model.input_size") {
    s.model.input_size = parse_uint(key, value);
  } else if (key == "model.channels") {
    const auto ch = parse_uint_list(key, value);
    if (ch.size() != kNumBlocks) throw Error(ErrorCode::kInvalidConfig, "model.channels needs 5 values");
    std::copy(ch.begin(), ch.end(), s.model.channels.begin());
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown scenario setting '" + key + "'");
  }
}

CampaignScenario load_scenario(const std::filesystem::path& path) {
  CampaignScenario s = default_scenario();
  for (const auto& [k, v] : read_key_values(path)) apply_scenario_setting(s, k, v);
  s.validate();
  return s;
}

double LabelQuality::aggregated_error_rate() const {
  return vote_labeled ? static_cast<double>(vote_label_errors) / static_cast<double>(vote_labeled) : 0.0;
}
double LabelQuality::single_vote_error_rate() const {
  return votes ? static_cast<double>(vote_errors) / static_cast<double>(votes) : 0.0;
}
double LabelQuality::five_vote_accuracy() const {
  return five_vote_images
             ? static_cast<double>(five_vote_correct) / static_cast<double>(five_vote_images)
             : 0.0;
}

LabelQuality measure_label_quality(const LabelStore& store, std::span<const SeededImage> corpus,
                                   const VoterMix& mix) {
  std::map<std::string, const SeededImage*> truth;
  for (const auto& c : corpus) truth[c.id] = &c;
  std::map<std::string, std::vector<bool>> cast;
  LabelQuality q;
  for (const auto& v : store.votes()) {
    auto it = truth.find(v.image_id);
    if (it == truth.end() || it->second->partition != Partition::kTrainPool) continue;
    const bool truth_pos = it->second->truth == Label::kCorrosion;
    ++q.votes;
    if (v.corrosion != truth_pos) ++q.vote_errors;
    cast[v.image_id].push_back(v.corrosion);
  }
  for (const auto& r : store.images()) {
    auto it = truth.find(r.id);
    if (it == truth.end() || r.partition != Partition::kTrainPool) continue;
    const auto from_votes = aggregate_label(r.tally);
    if (from_votes) {
      ++q.vote_labeled;
      if (*from_votes != it->second->truth) ++q.vote_label_errors;
    }
    const auto& vs = cast[r.id];
    if (it->second->kind != SceneKind::kAmbiguous && vs.size() >= 5) {
      const int pos = static_cast<int>(std::count(vs.begin(), vs.begin() + 5, true));
      const bool majority_pos = pos >= 3;
      ++q.five_vote_images;
      if (majority_pos == (it->second->truth == Label::kCorrosion)) ++q.five_vote_correct;
    }
  }
  q.five_vote_expected = majority_accuracy_oracle(mix.mean_p_correct(false), 5);
  return q;
}

Clock logical_clock() {
  auto tick = std::make_shared<std::int64_t>(0);
  return [tick]() {
    const std::time_t t = 1519862400 + (*tick)++;  // 2018-03-01T00:00:00Z
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return std::string(buf);
  };
}

ServiceConfig campaign_service_config(const CampaignScenario& scenario, const std::filesystem::path& data_dir) {
  ServiceConfig sc;
  sc.data_dir = data_dir;
  sc.model = scenario.model;
  sc.seed = mix_seed(scenario.seed, 3);
  sc.background_training = false;
  sc.policy.trigger = RetrainPolicy::Trigger::kEveryKNewLabels;
  sc.policy.k = scenario.retrain_k;
  sc.policy.baseline_epochs = scenario.baseline_epochs;
  sc.policy.session_epochs = scenario.session_epochs;
  sc.policy.batch_size = scenario.batch_size;
  sc.policy.validate_each_epoch = scenario.validate_each_epoch;
  return sc;
}

CampaignResult run_campaign(const CampaignScenario& scenario, const std::filesystem::path& data_dir,
                            const CampaignHooks& hooks) {
  scenario.validate();
  const auto start = std::chrono::steady_clock::now();
  CorrosionService service(campaign_service_config(scenario, data_dir), logical_clock());
  if (!service.store().images().empty()) {
    throw Error(ErrorCode::kInvalidArgument, "campaign data directory is not empty");
  }

  CampaignResult result;
  CorpusSpec corpus = scenario.corpus;
  corpus.seed = mix_seed(scenario.seed, 5);
  result.corpus = seed_synthetic_corpus(service.store(), corpus);
  std::map<std::string, const SeededImage*> truth;
  for (const auto& c : result.corpus) truth[c.id] = &c;

  service.bootstrap();
  log_event(LogLevel::kInfo, "campaign_baseline",
            {{"scenario", scenario.name}, {"sessions", service.store().read_history().size()}});

  Rng quiz_rng(mix_seed(scenario.seed, 7));
  Rng voter_rng(mix_seed(scenario.seed, 8));
  const std::size_t target_points = scenario.sessions + 1;
  while (result.ballots < scenario.max_ballots &&
         service.store().read_history().size() < target_points) {
    std::vector<ImageRecord> batch;
    try {
      batch = service.quiz(quiz_rng);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kPoolTooSmall) break;
      throw;
    }
    const VoterProfile& voter = scenario.mix.profiles[static_cast<std::size_t>(scenario.mix.draw(voter_rng))];
    std::vector<BallotEntry> ballot;
    for (const auto& r : batch) {
      const SeededImage& s = *truth.at(r.id);
      ballot.push_back({r.id, simulate_vote(voter, s.truth, voter_rng, s.kind == SceneKind::kAmbiguous)});
    }
    service.submit_ballot(ballot, "sim-" + std::to_string(result.ballots));
    ++result.ballots;
    if (hooks.on_ballot) hooks.on_ballot(service, result.ballots);
    if (result.ballots % scenario.ballots_per_round == 0) {
      const auto c = service.store().counters();
      log_event(LogLevel::kDebug, "campaign_round",
                {{"ballots", result.ballots},
                 {"votes", c.cumulative_votes},
                 {"labeled", c.labeled_count},
                 {"model_version", service.current_model()->version}});
    }
  }

  result.history = service.store().read_history();
  for (const auto& p : result.history)
    result.trajectory.push_back({p.session_id, p.cumulative_votes, p.trained_on, p.accuracy});
  if (!result.history.empty()) {
    result.baseline_accuracy = result.history.front().accuracy;
    result.final_accuracy = result.history.back().accuracy;
  }
  result.quality = measure_label_quality(service.store(), result.corpus, scenario.mix);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log_event(LogLevel::kInfo, "campaign_done",
            {{"scenario", scenario.name},
             {"ballots", result.ballots},
             {"baseline_accuracy", result.baseline_accuracy},
             {"final_accuracy", result.final_accuracy},
             {"seconds", result.seconds}});
  return result;
}

void write_trajectory_csv(const CampaignResult& result, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  f << "session,votes,labeled_count,accuracy\n";
  char acc[32];
  for (const auto& r : result.trajectory) {
    std::snprintf(acc, sizeof acc, "%.6f", r.accuracy);
    f << r.session << ',' << r.votes << ',' << r.labeled_count << ',' << acc << '\n';
  }
}

void write_accuracy_log(const CampaignResult& result, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& p : result.history) {
    f << nlohmann::json{{"type", "accuracy"},
                        {"ts", p.measured_at},
                        {"accuracy", p.accuracy},
                        {"votes", p.cumulative_votes},
                        {"uploads", p.cumulative_uploads},
                        {"session", p.session_id},
                        {"trained_on", p.trained_on}}
             .dump()
      << '\n';
  }
}

}  // namespace corrosion
