#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "corrosion/label_store.hpp"
#include "corrosion/model.hpp"
#include "corrosion/trainer.hpp"

namespace corrosion {

struct RetrainPolicy {
  enum class Trigger { kManual, kEveryKNewLabels };
  Trigger trigger = Trigger::kEveryKNewLabels;
  std::size_t k = 100;
  std::size_t baseline_epochs = 1;
  std::size_t session_epochs = 25;
  std::size_t batch_size = 16;
  double lr = AdamHyper{}.lr;
  bool from_scratch = false;  // otherwise resume from the published weights
  bool validate_each_epoch = true;
};

struct ServiceConfig {
  std::filesystem::path data_dir;  // empty: in-memory, nothing persisted
  ModelConfig model;
  RetrainPolicy policy;
  std::uint64_t seed = 2018;
  std::size_t max_upload_bytes = 5 * 1024 * 1024;
  // Run retraining on a worker thread. When false, triggers train inline.
  bool background_training = true;
  // HTTP front end.
  std::string host = "0.0.0.0";
  int port = 8080;
  std::filesystem::path static_dir;  // web UI bundle, optional
};

// Reads `key = value` lines (# comments). Unknown keys are rejected.
ServiceConfig load_service_config(const std::filesystem::path& path, ServiceConfig base = {});
void apply_service_setting(ServiceConfig& config, const std::string& key, const std::string& value);

struct PublishedModel {
  std::uint64_t version = 0;  // 0 = untrained initial weights, never persisted
  ModelWeights weights;
  std::uint64_t trained_on = 0;
  std::string published_at;
  std::uint32_t checksum = 0;  // CRC-32 of the serialized weights
};

struct BallotResult {
  std::size_t accepted = 0;
  std::vector<std::string> newly_labeled;
};

struct DetectResult {
  std::string image_id;
  Prediction prediction;
  std::uint64_t model_version = 0;
  std::uint32_t model_checksum = 0;
};

struct ServiceStats {
  std::vector<AccuracyPoint> accuracy_history;
  std::uint64_t cumulative_votes = 0;
  std::uint64_t cumulative_uploads = 0;
  std::uint64_t model_version = 0;
  std::uint64_t labeled_count = 0;
};

enum class RetrainOutcome { kPublished, kNoData, kFailed, kBusy };

struct RetrainResult {
  RetrainOutcome outcome = RetrainOutcome::kNoData;
  std::uint64_t version = 0;
  std::optional<SessionReport> report;
  std::string message;
};

class CorrosionService {
 public:
  explicit CorrosionService(ServiceConfig config, Clock clock = rfc3339_now);
  ~CorrosionService();
  CorrosionService(const CorrosionService&) = delete;
  CorrosionService& operator=(const CorrosionService&) = delete;

  // Trains and publishes the baseline if nothing has been published yet and
  // both a training and a validation set exist.
  void bootstrap();

  std::vector<ImageRecord> quiz();
  std::vector<ImageRecord> quiz(Rng& rng);
  BallotResult submit_ballot(std::span<const BallotEntry> ballot, const std::string& token);
  DetectResult detect(std::span<const std::uint8_t> payload);
  void correct(const std::string& image_id, bool corrosion, const std::string& token);
  ServiceStats stats() const;

  // Synchronous session: snapshot, train, evaluate, then publish atomically.
  RetrainResult retrain_now();
  // Background request. Returns false if a session is already in flight (the
  // request is coalesced into it).
  bool request_retrain();
  void wait_idle();
  bool training_in_flight() const { return in_flight_.load(); }

  std::shared_ptr<const PublishedModel> current_model() const;
  std::vector<std::uint64_t> version_history() const;
  std::filesystem::path model_path(std::uint64_t version) const;

  LabelStore& store() { return store_; }
  const LabelStore& store() const { return store_; }
  const ServiceConfig& config() const { return config_; }

 private:
  void load_published();
  void publish(std::shared_ptr<const PublishedModel> model);
  void maybe_trigger();
  bool trigger_due() const;
  RetrainResult run_session_locked();
  void worker_loop();

  ServiceConfig config_;
  LabelStore store_;

  mutable std::mutex model_mutex_;
  std::shared_ptr<const PublishedModel> model_;

  std::mutex session_mutex_;  // one session at a time
  std::atomic<bool> in_flight_{false};
  std::atomic<std::uint64_t> gained_at_last_session_{0};

  std::mutex rng_mutex_;
  Rng quiz_rng_;

  std::mutex worker_mutex_;
  std::condition_variable worker_cv_;
  std::condition_variable idle_cv_;
  bool work_requested_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

}  // namespace corrosion
