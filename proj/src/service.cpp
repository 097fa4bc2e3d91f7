#include "corrosion/service.hpp"

#include <algorithm>
#include <cstdio>

#include "corrosion/config.hpp"
#include "corrosion/error.hpp"
#include "corrosion/log.hpp"

namespace corrosion {

void apply_service_setting(ServiceConfig& c, const std::string& key, const std::string& value) {
  if (key == "host") {
    c.host = value;
  } else if (key == "port") {
    const auto p = parse_uint(key, value);
    if (p > 65535) throw Error(ErrorCode::kInvalidConfig, "port out of range: " + value);
    c.port = static_cast<int>(p);
  } else if (key == "data_dir") {
    c.data_dir = value;
  } else if (key == "static_dir") {
    c.static_dir = value;
  } else if (key == "seed") {
    c.seed = parse_uint(key, value);
  } else if (key == "max_upload_bytes") {
    c.max_upload_bytes = parse_uint(key, value);
  } else if (key == "background_training") {
    c.background_training = parse_bool(key, value);
  } else if (key == "retrain.trigger") {
    if (value == "manual") {
      c.policy.trigger = RetrainPolicy::Trigger::kManual;
    } else if (value == "every_k") {
      c.policy.trigger = RetrainPolicy::Trigger::kEveryKNewLabels;
    } else {
      throw Error(ErrorCode::kInvalidConfig, "retrain.trigger: expected manual or every_k");
    }
  } else if (key == "retrain.k") {
    c.policy.k = parse_uint(key, value);
    if (c.policy.k == 0) throw Error(ErrorCode::kInvalidConfig, "retrain.k must be positive");
  } else if (key == "retrain.baseline_epochs") {
    c.policy.baseline_epochs = parse_uint(key, value);
  } else if (key == "retrain.session_epochs") {
    c.policy.session_epochs = parse_uint(key, value);
  } else if (key == "retrain.batch_size") {
    c.policy.batch_size = parse_uint(key, value);
  } else if (key == "retrain.lr") {
    c.policy.lr = parse_double(key, value);
    if (!(c.policy.lr > 0.0)) throw Error(ErrorCode::kInvalidConfig, "retrain.lr must be positive");
  } else if (key == "retrain.from_scratch") {
    c.policy.from_scratch = parse_bool(key, value);
  } else if (key == "retrain.validate_each_epoch") {
    c.policy.validate_each_epoch = parse_bool(key, value);
  } else if (key == "model.input_size") {
    c.model.input_size = parse_uint(key, value);
  } else if (key == "model.channels") {
    const auto ch = parse_uint_list(key, value);
    if (ch.size() != kNumBlocks) {
      throw Error(ErrorCode::kInvalidConfig,
                  "model.channels needs " + std::to_string(kNumBlocks) + " values");
    }
    std::copy(ch.begin(), ch.end(), c.model.channels.begin());
  } else {
    throw Error(ErrorCode::kInvalidConfig, "unknown setting '" + key + "'");
  }
}

ServiceConfig load_service_config(const std::filesystem::path& path, ServiceConfig base) {
  for (const auto& [k, v] : read_key_values(path)) apply_service_setting(base, k, v);
  base.model.validate();
  return base;
}

namespace {

std::shared_ptr<const PublishedModel> make_published(std::uint64_t version, ModelWeights weights,
                                                     std::uint64_t trained_on, std::string at) {
  auto m = std::make_shared<PublishedModel>();
  m->version = version;
  m->checksum = crc32_ieee(serialize_weights(weights));
  m->weights = std::move(weights);
  m->trained_on = trained_on;
  m->published_at = std::move(at);
  return m;
}

}  // namespace

CorrosionService::CorrosionService(ServiceConfig config, Clock clock)
    : config_(std::move(config)),
      store_((config_.model.validate(), config_.data_dir), config_.model.input_size, std::move(clock)),
      quiz_rng_(mix_seed(config_.seed, 0x91Au)) {
  if (!config_.data_dir.empty()) std::filesystem::create_directories(config_.data_dir / "models");
  load_published();
  if (config_.background_training) worker_ = std::thread([this] { worker_loop(); });
}

CorrosionService::~CorrosionService() {
  {
    std::lock_guard lock(worker_mutex_);
    stopping_ = true;
  }
  worker_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

std::filesystem::path CorrosionService::model_path(std::uint64_t version) const {
  return config_.data_dir / "models" / ("v" + std::to_string(version) + ".cdw");
}

void CorrosionService::load_published() {
  const auto history = store_.read_history();
  if (history.empty()) {
    publish(make_published(0, build_model(config_.model, config_.seed), 0, store_.now()));
    return;
  }
  const AccuracyPoint& last = history.back();
  ModelWeights w = config_.data_dir.empty()
                       ? build_model(config_.model, config_.seed)
                       : load_weights(model_path(last.session_id), config_.model);
  gained_at_last_session_ = last.labels_gained;
  publish(make_published(last.session_id, std::move(w), last.trained_on, last.measured_at));
}

void CorrosionService::publish(std::shared_ptr<const PublishedModel> model) {
  std::lock_guard lock(model_mutex_);
  model_ = std::move(model);
}

std::shared_ptr<const PublishedModel> CorrosionService::current_model() const {
  std::lock_guard lock(model_mutex_);
  return model_;
}

std::vector<std::uint64_t> CorrosionService::version_history() const {
  std::vector<std::uint64_t> out;
  for (const auto& p : store_.read_history()) out.push_back(p.session_id);
  return out;
}

void CorrosionService::bootstrap() {
  if (!store_.read_history().empty()) return;
  if (store_.training_snapshot()->empty() || store_.validation_set()->empty()) return;
  retrain_now();
}

std::vector<ImageRecord> CorrosionService::quiz() {
  std::lock_guard lock(rng_mutex_);
  return store_.select_quiz_batch(quiz_rng_);
}

std::vector<ImageRecord> CorrosionService::quiz(Rng& rng) { return store_.select_quiz_batch(rng); }

BallotResult CorrosionService::submit_ballot(std::span<const BallotEntry> ballot,
                                             const std::string& token) {
  if (ballot.size() > 4) {
    throw Error(ErrorCode::kMalformedRequest, "a ballot holds at most 4 entries");
  }
  if (token.empty()) throw Error(ErrorCode::kMalformedRequest, "missing voter token");
  const auto changes = store_.record_votes(ballot, token);
  BallotResult out{ballot.size(), {}};
  for (const auto& c : changes) out.newly_labeled.push_back(c.image_id);
  maybe_trigger();
  return out;
}

DetectResult CorrosionService::detect(std::span<const std::uint8_t> payload) {
  if (payload.size() > config_.max_upload_bytes) {
    throw Error(ErrorCode::kPayloadTooLarge, "upload of " + std::to_string(payload.size()) +
                                                 " bytes exceeds the limit of " +
                                                 std::to_string(config_.max_upload_bytes));
  }
  const ImageRecord r = store_.add_image(payload, Source::kUserUpload, Partition::kTrainPool);
  const auto pixels = store_.pixels(r.id);
  const auto model = current_model();
  DetectResult out;
  out.image_id = r.id;
  out.prediction = predict(config_.model, model->weights, *pixels);
  out.model_version = model->version;
  out.model_checksum = model->checksum;
  return out;
}

void CorrosionService::correct(const std::string& image_id, bool corrosion,
                               const std::string& token) {
  if (token.empty()) throw Error(ErrorCode::kMalformedRequest, "missing voter token");
  const auto r = store_.find(image_id);
  if (!r) throw Error(ErrorCode::kUnknownImage, "unknown image " + image_id);
  if (r->source != Source::kUserUpload) {
    throw Error(ErrorCode::kNotUploaded, "image " + image_id + " was not uploaded by a user");
  }
  const BallotEntry entry{image_id, corrosion};
  store_.record_votes(std::span(&entry, 1), token, "correct");
  maybe_trigger();
}

ServiceStats CorrosionService::stats() const {
  ServiceStats s;
  s.accuracy_history = store_.read_history();
  const auto c = store_.counters();
  s.cumulative_votes = c.cumulative_votes;
  s.cumulative_uploads = c.cumulative_uploads;
  s.labeled_count = c.labeled_count;
  s.model_version = current_model()->version;
  return s;
}

bool CorrosionService::trigger_due() const {
  if (config_.policy.trigger != RetrainPolicy::Trigger::kEveryKNewLabels) return false;
  return store_.counters().labels_gained >= gained_at_last_session_.load() + config_.policy.k;
}

void CorrosionService::maybe_trigger() {
  if (!trigger_due()) return;
  if (config_.background_training) {
    request_retrain();
  } else {
    retrain_now();
  }
}

RetrainResult CorrosionService::retrain_now() {
  std::lock_guard session(session_mutex_);
  in_flight_ = true;
  RetrainResult r;
  try {
    r = run_session_locked();
  } catch (...) {
    in_flight_ = false;
    throw;
  }
  in_flight_ = false;
  return r;
}

RetrainResult CorrosionService::run_session_locked() {
  StoreCounters at{};
  const Snapshot train = store_.training_snapshot(&at);
  const Snapshot val = store_.validation_set();
  const auto val_ids = store_.validation_ids();
  for (const auto& item : *train) {
    if (val_ids.count(item.id)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "validation image " + item.id + " leaked into a training snapshot");
    }
  }
  RetrainResult result;
  if (train->empty() || val->empty()) {
    result.message = train->empty() ? "no labeled training images" : "no validation images";
    log_event(LogLevel::kWarn, "retrain_skipped", {{"reason", result.message}});
    return result;
  }

  const auto current = current_model();
  const bool baseline = store_.read_history().empty();
  const std::uint64_t version = current->version + 1;
  SessionSpec spec;
  spec.epochs = baseline ? config_.policy.baseline_epochs : config_.policy.session_epochs;
  spec.batch_size = config_.policy.batch_size;
  spec.hyper.lr = config_.policy.lr;
  spec.seed = mix_seed(config_.seed, version);
  spec.validate_each_epoch = config_.policy.validate_each_epoch;
  if (!config_.policy.from_scratch) spec.resume_from = current->weights;

  log_event(LogLevel::kInfo, "retrain_started",
            {{"version", version}, {"trained_on", train->size()}, {"epochs", spec.epochs}});
  const auto samples = samples_of(train);
  const auto val_samples = samples_of(val);
  SessionResult session;
  try {
    session = run_session(config_.model, samples, val_samples, spec);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNonFiniteLoss) throw;
    log_event(LogLevel::kError, "retrain_failed",
              {{"version", version}, {"code", error_code_name(e.code())}, {"message", e.what()}});
    result.outcome = RetrainOutcome::kFailed;
    result.message = e.what();
    // Wait for another k labels before retrying.
    gained_at_last_session_ = at.labels_gained;
    return result;
  }

  AccuracyPoint point;
  point.accuracy = session.report.final_val_accuracy;
  point.cumulative_votes = at.cumulative_votes;
  point.cumulative_uploads = at.cumulative_uploads;
  point.session_id = version;
  point.trained_on = train->size();
  point.labels_gained = at.labels_gained;
  point.measured_at = store_.now();

  // File first, then the log entry that makes it the current version, then
  // the in-memory swap. A crash in between leaves an unreferenced file.
  if (!config_.data_dir.empty()) save_weights(session.weights, model_path(version));
  store_.append_accuracy_point(point);
  gained_at_last_session_ = at.labels_gained;
  publish(make_published(version, std::move(session.weights), point.trained_on, point.measured_at));

  log_event(LogLevel::kInfo, "model_published",
            {{"version", version},
             {"accuracy", point.accuracy},
             {"trained_on", point.trained_on},
             {"seconds", session.report.duration_seconds}});
  result.outcome = RetrainOutcome::kPublished;
  result.version = version;
  result.report = std::move(session.report);
  return result;
}

bool CorrosionService::request_retrain() {
  if (!config_.background_training) {
    retrain_now();
    return true;
  }
  std::lock_guard lock(worker_mutex_);
  if (in_flight_ || work_requested_) return false;
  work_requested_ = true;
  worker_cv_.notify_all();
  return true;
}

void CorrosionService::wait_idle() {
  std::unique_lock lock(worker_mutex_);
  idle_cv_.wait(lock, [this] { return !work_requested_ && !in_flight_; });
}

void CorrosionService::worker_loop() {
  std::unique_lock lock(worker_mutex_);
  while (true) {
    worker_cv_.wait(lock, [this] { return stopping_ || work_requested_; });
    if (stopping_) return;
    in_flight_ = true;
    work_requested_ = false;
    lock.unlock();
    try {
      std::lock_guard session(session_mutex_);
      run_session_locked();
    } catch (const std::exception& e) {
      log_event(LogLevel::kError, "retrain_error", {{"message", e.what()}});
    }
    lock.lock();
    in_flight_ = false;
    // Labels that arrived during the session may already justify another.
    lock.unlock();
    const bool again = trigger_due();
    lock.lock();
    if (again && !stopping_) work_requested_ = true;
    if (!work_requested_) idle_cv_.notify_all();
  }
}

}  // namespace corrosion
