#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "corrosion/image_io.hpp"
#include "corrosion/model.hpp"
#include "corrosion/rng.hpp"
#include "corrosion/trainer.hpp"

namespace corrosion {

enum class Source { kSeedCorpus, kUserUpload };
enum class Partition { kTrainPool, kValidation, kQuizOnly };

const char* source_name(Source s);
const char* partition_name(Partition p);
Source parse_source(const std::string& s);
Partition parse_partition(const std::string& s);
Label parse_label(const std::string& s);

inline constexpr std::uint32_t kVoteThreshold = 5;

struct VoteTally {
  std::uint32_t corrosion = 0;
  std::uint32_t no_corrosion = 0;
  std::uint32_t total() const { return corrosion + no_corrosion; }
  bool operator==(const VoteTally&) const = default;
};

// Label from the vote multiset: with at least five votes a strict majority
// decides. Below the threshold, or on an exact tie, the image falls back to
// its expert label (seeded images) or stays unlabeled.
std::optional<Label> aggregate_label(const VoteTally& tally,
                                     std::optional<Label> expert = std::nullopt);

struct ImageRecord {
  std::string id;
  Source source = Source::kSeedCorpus;
  Partition partition = Partition::kTrainPool;
  std::optional<Label> expert_label;
  std::optional<Label> label;
  VoteTally tally;
  std::string created_at;
  std::string extension;

  bool quiz_eligible() const { return partition != Partition::kValidation; }
  bool train_eligible() const { return partition == Partition::kTrainPool && label.has_value(); }
  bool operator==(const ImageRecord&) const = default;
};

struct BallotEntry {
  std::string image_id;
  bool corrosion = false;
};

struct Vote {
  std::string image_id;
  std::string voter_token;
  bool corrosion = false;
  std::string cast_at;
  std::uint64_t ballot = 0;
};

struct AccuracyPoint {
  std::string measured_at;
  double accuracy = 0.0;
  std::uint64_t cumulative_votes = 0;
  std::uint64_t cumulative_uploads = 0;
  std::uint64_t session_id = 0;
  std::uint64_t trained_on = 0;  // training-set size of the session
  std::uint64_t labels_gained = 0;  // store counter when the snapshot was taken
  bool operator==(const AccuracyPoint&) const = default;
};

struct LabelChange {
  std::string image_id;
  std::optional<Label> before;
  std::optional<Label> after;
};

struct SnapshotItem {
  std::string id;
  LabeledImage sample;
};
using Snapshot = std::shared_ptr<const std::vector<SnapshotItem>>;

// Copies the samples out of a snapshot for run_session/evaluate.
std::vector<LabeledImage> samples_of(const Snapshot& snapshot);

using Clock = std::function<std::string()>;
std::string rfc3339_now();

struct StoreCounters {
  std::uint64_t cumulative_votes = 0;
  std::uint64_t cumulative_uploads = 0;
  std::uint64_t images = 0;
  std::uint64_t labeled_count = 0;  // train-eligible images
  std::uint64_t labels_gained = 0;  // train-pool transitions into a labeled state
  std::uint64_t quiz_eligible = 0;
  bool operator==(const StoreCounters&) const = default;
};

// Registry of images, votes and accuracy history.
//
// State is the replay of an append-only event log (`events.jsonl`, one JSON
// object per line) plus encoded images under `images/<id>.<ext>`. Writers are
// serialised; readers see a consistent prefix of the log. An empty data
// directory path keeps everything in memory.
class LabelStore {
 public:
  LabelStore(std::filesystem::path data_dir, std::size_t input_size, Clock clock = rfc3339_now);
  ~LabelStore();
  LabelStore(const LabelStore&) = delete;
  LabelStore& operator=(const LabelStore&) = delete;

  ImageRecord add_image(std::span<const std::uint8_t> encoded, Source source, Partition partition,
                        std::optional<Label> expert_label = std::nullopt);

  // Atomic: either every entry is recorded or none is. Duplicate detection is
  // keyed on (scope, token, sorted ids); corrections use their own scope.
  std::vector<LabelChange> record_votes(std::span<const BallotEntry> ballot,
                                        const std::string& voter_token,
                                        const std::string& scope = "quiz");

  // Four distinct quiz-eligible images, drawn without replacement with weight
  // 1 / (1 + votes).
  std::vector<ImageRecord> select_quiz_batch(Rng& rng) const;

  Snapshot training_snapshot() const;
  // Snapshot plus the counters at the same log position.
  Snapshot training_snapshot(StoreCounters* counters_at) const;
  Snapshot validation_set() const;

  void append_accuracy_point(const AccuracyPoint& point);
  std::vector<AccuracyPoint> read_history() const;

  std::optional<ImageRecord> find(const std::string& id) const;
  // Preprocessed model input [3,S,S] of an image.
  std::shared_ptr<const Tensor> pixels(const std::string& id) const;
  std::vector<ImageRecord> images() const;
  std::vector<Vote> votes() const;
  StoreCounters counters() const;
  std::set<std::string> validation_ids() const;

  std::filesystem::path image_path(const ImageRecord& record) const;
  const std::filesystem::path& data_dir() const { return dir_; }
  std::size_t input_size() const { return input_size_; }
  std::string now() const { return clock_(); }

 private:
  struct Entry {
    ImageRecord record;
    std::shared_ptr<const Tensor> pixels;
  };

  void replay();
  void apply_image_added(ImageRecord record, std::shared_ptr<const Tensor> pixels);
  LabelChange apply_vote(const Vote& vote);
  void append_line(const std::string& line);
  static std::string ballot_key(std::span<const BallotEntry> ballot, const std::string& token,
                                const std::string& scope);
  Snapshot snapshot_where(bool validation, StoreCounters* counters_at) const;

  std::filesystem::path dir_;
  std::size_t input_size_;
  Clock clock_;
  std::FILE* log_ = nullptr;

  mutable std::shared_mutex mutex_;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::vector<Vote> votes_;
  std::set<std::string> seen_ballots_;
  std::vector<AccuracyPoint> history_;
  StoreCounters counters_;
  std::uint64_t next_ballot_ = 0;
};

}  // namespace corrosion
