#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "corrosion/label_store.hpp"
#include "corrosion/rng.hpp"
#include "corrosion/service.hpp"
#include "corrosion/synthetic.hpp"

namespace corrosion {

enum class VoterKind { kExpert = 0, kNovice = 1, kRandom = 2, kAdversarial = 3 };
inline constexpr std::size_t kNumVoterKinds = 4;

const char* voter_kind_name(VoterKind k);
VoterKind parse_voter_kind(const std::string& s);

struct VoterProfile {
  VoterKind kind = VoterKind::kExpert;
  double p_correct = 0.95;
  // Used on ambiguous scenes, where context alone suggests rust.
  double p_correct_ambiguous = 0.70;

  static VoterProfile defaults(VoterKind kind);
  void validate() const;
};

// Returns the vote ("corrosion present?"): the true label with probability
// p_correct (p_correct_ambiguous when `ambiguous`), otherwise the flip.
// Consumes exactly one uniform draw.
bool simulate_vote(const VoterProfile& profile, Label truth, Rng& rng, bool ambiguous = false);

// Probability that a strict majority of k independent votes, each correct
// with probability p, is correct. k must be odd.
double majority_accuracy_oracle(double p, unsigned k);

struct VoterMix {
  std::array<VoterProfile, kNumVoterKinds> profiles;
  std::array<double, kNumVoterKinds> fractions{0.7, 0.2, 0.1, 0.0};

  VoterMix();
  void validate() const;  // fractions in [0,1] summing to 1
  VoterKind draw(Rng& rng) const;
  // Mixture-averaged probability of a correct vote.
  double mean_p_correct(bool ambiguous = false) const;
  // Scales the current mix by (1 - f) and adds f adversarial voters.
  VoterMix with_adversarial(double f) const;
};

// Synthetic corpus ingestion shared by the CLI and campaigns.
struct CorpusSpec {
  std::uint64_t seed = 1;
  std::size_t pool_size = 600;
  std::size_t validation_size = 200;
  std::size_t seed_labeled = 100;  // pool images that arrive with an expert label
  double positive_fraction = 0.46;
  double ambiguous_fraction = 0.08;
  std::size_t image_size = 64;
};

struct SeededImage {
  std::string id;
  Label truth = Label::kNoCorrosion;
  SceneKind kind = SceneKind::kNegative;
  Partition partition = Partition::kTrainPool;
  bool expert_labeled = false;
};

// Scene kinds for n images: exact counts from the fractions, shuffled.
std::vector<SceneKind> corpus_kinds(std::size_t n, double positive_fraction,
                                    double ambiguous_fraction, Rng& rng);
std::vector<SeededImage> seed_synthetic_corpus(LabelStore& store, const CorpusSpec& spec);

struct CampaignScenario {
  std::string name = "default";
  std::uint64_t seed = 1;
  CorpusSpec corpus;
  VoterMix mix;
  std::size_t ballots_per_round = 25;
  std::size_t max_ballots = 2000;
  std::size_t retrain_k = 160;
  std::size_t sessions = 3;  // after the baseline
  std::size_t baseline_epochs = 1;
  std::size_t session_epochs = 25;
  std::size_t batch_size = 16;
  bool validate_each_epoch = false;
  ModelConfig model;

  void validate() const;
};

CampaignScenario default_scenario();
CampaignScenario load_scenario(const std::filesystem::path& path);
void apply_scenario_setting(CampaignScenario& s, const std::string& key, const std::string& value);

struct LabelQuality {
  // Pool images whose label comes from at least five votes.
  std::size_t vote_labeled = 0;
  std::size_t vote_label_errors = 0;
  std::size_t votes = 0;  // every vote cast on a pool image
  std::size_t vote_errors = 0;
  // Non-ambiguous images with at least five votes: majority of their first five.
  std::size_t five_vote_images = 0;
  std::size_t five_vote_correct = 0;
  double five_vote_expected = 0.0;  // majority_accuracy_oracle(mix mean, 5)

  double aggregated_error_rate() const;
  double single_vote_error_rate() const;
  double five_vote_accuracy() const;
};

struct TrajectoryRow {
  std::uint64_t session = 0;
  std::uint64_t votes = 0;
  std::uint64_t labeled_count = 0;
  double accuracy = 0.0;
};

struct CampaignResult {
  std::vector<AccuracyPoint> history;
  std::vector<TrajectoryRow> trajectory;
  std::vector<SeededImage> corpus;
  LabelQuality quality;
  std::size_t ballots = 0;
  double baseline_accuracy = 0.0;
  double final_accuracy = 0.0;
  double seconds = 0.0;
};

struct CampaignHooks {
  // After every accepted ballot.
  std::function<void(const CorrosionService&, std::size_t ballots)> on_ballot;
};

// The service configuration run_campaign uses; reopening `data_dir` with it
// resumes a campaign's store and published models.
ServiceConfig campaign_service_config(const CampaignScenario& scenario, const std::filesystem::path& data_dir);

// Seeds a fresh store, trains the baseline, then alternates quiz batches and
// simulated ballots until `sessions` retraining sessions have published or
// `max_ballots` is reached. `data_dir` empty keeps everything in memory.
// Deterministic for a given scenario (timestamps come from a logical clock).
CampaignResult run_campaign(const CampaignScenario& scenario,
                            const std::filesystem::path& data_dir = {},
                            const CampaignHooks& hooks = {});

LabelQuality measure_label_quality(const LabelStore& store, std::span<const SeededImage> corpus,
                                   const VoterMix& mix);

// Fixed-rate clock counting seconds from 2018-03-01T00:00:00Z.
Clock logical_clock();

void write_trajectory_csv(const CampaignResult& result, const std::filesystem::path& path);
void write_accuracy_log(const CampaignResult& result, const std::filesystem::path& path);

}  // namespace corrosion
