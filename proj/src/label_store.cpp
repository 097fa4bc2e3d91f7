#include "corrosion/label_store.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <mutex>
#include <json.hpp>

#include "corrosion/error.hpp"

namespace corrosion {

using json = nlohmann::json;

const char* source_name(Source s) {
  return s == Source::kUserUpload ? "user_upload" : "seed_corpus";
}

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::kTrainPool: return "train_pool";
    case Partition::kValidation: return "validation";
    case Partition::kQuizOnly: return "quiz_only";
  }
  return "unknown";
}

Source parse_source(const std::string& s) {
  if (s == "seed_corpus") return Source::kSeedCorpus;
  if (s == "user_upload") return Source::kUserUpload;
  throw Error(ErrorCode::kInvalidArgument, "unknown source '" + s + "'");
}

Partition parse_partition(const std::string& s) {
  if (s == "train_pool") return Partition::kTrainPool;
  if (s == "validation") return Partition::kValidation;
  if (s == "quiz_only") return Partition::kQuizOnly;
  throw Error(ErrorCode::kInvalidArgument, "unknown partition '" + s + "'");
}

Label parse_label(const std::string& s) {
  if (s == "corrosion") return Label::kCorrosion;
  if (s == "no_corrosion") return Label::kNoCorrosion;
  throw Error(ErrorCode::kInvalidArgument, "unknown label '" + s + "'");
}

std::optional<Label> aggregate_label(const VoteTally& tally, std::optional<Label> expert) {
  if (tally.total() >= kVoteThreshold && tally.corrosion != tally.no_corrosion) {
    return tally.corrosion > tally.no_corrosion ? Label::kCorrosion : Label::kNoCorrosion;
  }
  return expert;
}

std::vector<LabeledImage> samples_of(const Snapshot& snapshot) {
  std::vector<LabeledImage> out;
  out.reserve(snapshot->size());
  for (const auto& item : *snapshot) out.push_back(item.sample);
  return out;
}

std::string rfc3339_now() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms.count()));
  return out;
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot read " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error(ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace

LabelStore::LabelStore(std::filesystem::path data_dir, std::size_t input_size, Clock clock)
    : dir_(std::move(data_dir)), input_size_(input_size), clock_(std::move(clock)) {
  if (dir_.empty()) return;
  std::filesystem::create_directories(dir_ / "images");
  replay();
  log_ = std::fopen((dir_ / "events.jsonl").string().c_str(), "ab");
  if (!log_) throw Error(ErrorCode::kIo, "cannot open event log in " + dir_.string());
}

LabelStore::~LabelStore() {
  if (log_) std::fclose(log_);
}

void LabelStore::append_line(const std::string& line) {
  if (!log_) return;
  if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fputc('\n', log_) == EOF ||
      std::fflush(log_) != 0) {
    throw Error(ErrorCode::kIo, "event log write failed");
  }
}

void LabelStore::replay() {
  const auto path = dir_ / "events.jsonl";
  if (!std::filesystem::exists(path)) return;
  std::ifstream f(path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> lines;
  while (std::getline(f, line)) lines.push_back(line);
  f.close();
  // Byte offset just past the last fully applied record. A torn tail (partial
  // line or partial ballot) is cut off so new appends start on a clean line.
  std::uintmax_t offset = 0, committed = 0;
  // Votes are applied only once their whole ballot has been read back.
  std::vector<Vote> pending;
  std::size_t pending_size = 0;
  std::string pending_key;
  // A torn final line (crash mid-append) is dropped; everything else must parse.
  for (const auto& l : lines) {
    ++lineno;
    offset += l.size() + 1;
    if (l.empty()) {
      if (pending_size == 0) committed = offset;
      continue;
    }
    json ev;
    try {
      ev = json::parse(l);
    } catch (const json::parse_error&) {
      if (lineno == lines.size()) break;
      throw Error(ErrorCode::kIo, "corrupt event log line " + std::to_string(lineno));
    }
    const std::string type = ev.at("type");
    if (type == "image_added") {
      ImageRecord r;
      r.id = ev.at("id");
      r.source = parse_source(ev.at("source"));
      r.partition = parse_partition(ev.at("partition"));
      if (ev.contains("expert_label") && !ev["expert_label"].is_null())
        r.expert_label = parse_label(ev["expert_label"]);
      r.created_at = ev.at("ts");
      r.extension = ev.value("ext", "png");
      const auto img = decode_image(read_bytes(dir_ / "images" / (r.id + "." + r.extension)));
      apply_image_added(std::move(r),
                        std::make_shared<const Tensor>(to_model_input(img, input_size_)));
      committed = offset;
    } else if (type == "vote") {
      Vote v;
      v.image_id = ev.at("image_id");
      v.voter_token = ev.at("token");
      v.corrosion = ev.at("corrosion");
      v.cast_at = ev.at("ts");
      v.ballot = ev.value("ballot", std::uint64_t{0});
      pending.push_back(std::move(v));
      if (pending.size() == pending_size) {
        for (const auto& pv : pending) apply_vote(pv);
        seen_ballots_.insert(pending_key);
        pending.clear();
        pending_size = 0;
        committed = offset;
      }
    } else if (type == "ballot") {
      pending.clear();
      pending_size = ev.at("size");
      pending_key = ev.at("key").get<std::string>();
      next_ballot_ = std::max(next_ballot_, ev.at("ballot").get<std::uint64_t>() + 1);
    } else if (type == "accuracy") {
      AccuracyPoint p;
      p.measured_at = ev.at("ts");
      p.accuracy = ev.at("accuracy");
      p.cumulative_votes = ev.at("votes");
      p.cumulative_uploads = ev.at("uploads");
      p.session_id = ev.at("session");
      p.trained_on = ev.value("trained_on", std::uint64_t{0});
      p.labels_gained = ev.value("labels_gained", std::uint64_t{0});
      history_.push_back(p);
      committed = offset;
    }
  }
  const auto size = std::filesystem::file_size(path);
  if (committed < size) {
    std::filesystem::resize_file(path, committed);
  } else if (committed > size) {
    // Last record is complete but its newline never made it to disk.
    std::ofstream(path, std::ios::app | std::ios::binary) << '\n';
  }
}

void LabelStore::apply_image_added(ImageRecord record, std::shared_ptr<const Tensor> pixels) {
  record.label = aggregate_label(record.tally, record.expert_label);
  if (record.source == Source::kUserUpload) ++counters_.cumulative_uploads;
  ++counters_.images;
  if (record.quiz_eligible()) ++counters_.quiz_eligible;
  if (record.train_eligible()) ++counters_.labeled_count;
  index_[record.id] = entries_.size();
  entries_.push_back({std::move(record), std::move(pixels)});
}

LabelChange LabelStore::apply_vote(const Vote& vote) {
  auto it = index_.find(vote.image_id);
  if (it == index_.end()) throw Error(ErrorCode::kUnknownImage, "unknown image " + vote.image_id);
  ImageRecord& r = entries_[it->second].record;
  const bool was_train = r.train_eligible();
  LabelChange change{r.id, r.label, std::nullopt};
  (vote.corrosion ? r.tally.corrosion : r.tally.no_corrosion) += 1;
  r.label = aggregate_label(r.tally, r.expert_label);
  change.after = r.label;
  const bool is_train = r.train_eligible();
  if (is_train && !was_train) {
    ++counters_.labeled_count;
    ++counters_.labels_gained;
  } else if (!is_train && was_train) {
    --counters_.labeled_count;
  }
  ++counters_.cumulative_votes;
  votes_.push_back(vote);
  next_ballot_ = std::max(next_ballot_, vote.ballot + 1);
  return change;
}

ImageRecord LabelStore::add_image(std::span<const std::uint8_t> encoded, Source source,
                                  Partition partition, std::optional<Label> expert_label) {
  if (partition == Partition::kValidation && !expert_label) {
    throw Error(ErrorCode::kMissingExpertLabel, "validation images need an expert label");
  }
  const ImageFormat format = detect_format(encoded);
  const RgbImage img = decode_image(encoded);
  auto pixels = std::make_shared<const Tensor>(to_model_input(img, input_size_));

  std::unique_lock lock(mutex_);
  char id[32];
  std::snprintf(id, sizeof id, "img-%06zu", entries_.size() + 1);
  ImageRecord r;
  r.id = id;
  r.source = source;
  r.partition = partition;
  r.expert_label = expert_label;
  r.created_at = clock_();
  r.extension = format_extension(format);

  if (!dir_.empty()) {
    write_bytes(dir_ / "images" / (r.id + "." + r.extension), encoded);
    json ev = {{"type", "image_added"},     {"ts", r.created_at},
               {"id", r.id},                {"source", source_name(source)},
               {"partition", partition_name(partition)}, {"ext", r.extension}};
    ev["expert_label"] = expert_label ? json(label_name(*expert_label)) : json(nullptr);
    append_line(ev.dump());
  }
  apply_image_added(r, std::move(pixels));
  return entries_.back().record;
}

std::string LabelStore::ballot_key(std::span<const BallotEntry> ballot, const std::string& token,
                                   const std::string& scope) {
  std::vector<std::string> ids;
  for (const auto& b : ballot) ids.push_back(b.image_id);
  std::sort(ids.begin(), ids.end());
  std::string key = scope + ":" + token + "|";
  for (const auto& id : ids) key += id + ",";
  return key;
}

std::vector<LabelChange> LabelStore::record_votes(std::span<const BallotEntry> ballot,
                                                  const std::string& voter_token,
                                                  const std::string& scope) {
  if (ballot.empty()) throw Error(ErrorCode::kMalformedRequest, "empty ballot");
  std::unique_lock lock(mutex_);
  std::set<std::string> distinct;
  for (const auto& b : ballot) {
    auto it = index_.find(b.image_id);
    if (it == index_.end()) throw Error(ErrorCode::kUnknownImage, "unknown image " + b.image_id);
    if (!entries_[it->second].record.quiz_eligible()) {
      throw Error(ErrorCode::kNotQuizEligible, "image " + b.image_id + " is not open for voting");
    }
    if (!distinct.insert(b.image_id).second) {
      throw Error(ErrorCode::kMalformedRequest, "image " + b.image_id + " listed twice in ballot");
    }
  }
  const std::string key = ballot_key(ballot, voter_token, scope);
  if (seen_ballots_.count(key)) {
    throw Error(ErrorCode::kDuplicateBallot, "ballot already submitted with this token");
  }

  const std::uint64_t ballot_no = next_ballot_++;
  const std::string ts = clock_();
  if (log_) {
    std::string lines = json{{"type", "ballot"}, {"ts", ts},           {"ballot", ballot_no},
                             {"key", key},       {"size", ballot.size()}}
                            .dump();
    for (const auto& b : ballot) {
      lines += "\n" + json{{"type", "vote"},         {"ts", ts},
                           {"image_id", b.image_id}, {"token", voter_token},
                           {"corrosion", b.corrosion}, {"ballot", ballot_no}}
                          .dump();
    }
    append_line(lines);
  }
  seen_ballots_.insert(key);
  std::vector<LabelChange> changes;
  for (const auto& b : ballot) {
    auto c = apply_vote({b.image_id, voter_token, b.corrosion, ts, ballot_no});
    if (c.before != c.after) changes.push_back(std::move(c));
  }
  return changes;
}

std::vector<ImageRecord> LabelStore::select_quiz_batch(Rng& rng) const {
  constexpr std::size_t kBatch = 4;
  std::shared_lock lock(mutex_);
  std::vector<std::size_t> pool;
  std::vector<double> weight;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& r = entries_[i].record;
    if (!r.quiz_eligible()) continue;
    pool.push_back(i);
    weight.push_back(1.0 / (1.0 + static_cast<double>(r.tally.total())));
  }
  if (pool.size() < kBatch) {
    throw Error(ErrorCode::kPoolTooSmall, "quiz needs 4 eligible images, have " +
                                              std::to_string(pool.size()));
  }
  std::vector<ImageRecord> out;
  for (std::size_t k = 0; k < kBatch; ++k) {
    double total = 0.0;
    for (double w : weight) total += w;
    double u = rng.uniform() * total;
    std::size_t pick = weight.size() - 1;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      if (weight[i] == 0.0) continue;
      if (u < weight[i]) {
        pick = i;
        break;
      }
      u -= weight[i];
    }
    while (weight[pick] == 0.0) --pick;  // rounding landed past the last live slot
    out.push_back(entries_[pool[pick]].record);
    weight[pick] = 0.0;
  }
  return out;
}

Snapshot LabelStore::snapshot_where(bool validation, StoreCounters* counters_at) const {
  std::shared_lock lock(mutex_);
  if (counters_at) *counters_at = counters_;
  auto items = std::make_shared<std::vector<SnapshotItem>>();
  for (const auto& e : entries_) {
    const auto& r = e.record;
    const bool take = validation ? r.partition == Partition::kValidation : r.train_eligible();
    if (!take) continue;
    const Label l = validation ? *r.expert_label : *r.label;
    items->push_back({r.id, {*e.pixels, l}});
  }
  return items;
}

Snapshot LabelStore::training_snapshot() const { return snapshot_where(false, nullptr); }
Snapshot LabelStore::training_snapshot(StoreCounters* counters_at) const {
  return snapshot_where(false, counters_at);
}
Snapshot LabelStore::validation_set() const { return snapshot_where(true, nullptr); }

void LabelStore::append_accuracy_point(const AccuracyPoint& point) {
  if (!(point.accuracy >= 0.0 && point.accuracy <= 1.0)) {
    throw Error(ErrorCode::kAccuracyOutOfRange,
                "accuracy must lie in [0,1], got " + std::to_string(point.accuracy));
  }
  std::unique_lock lock(mutex_);
  AccuracyPoint p = point;
  if (p.measured_at.empty()) p.measured_at = clock_();
  append_line(json{{"type", "accuracy"},
                   {"ts", p.measured_at},
                   {"accuracy", p.accuracy},
                   {"votes", p.cumulative_votes},
                   {"uploads", p.cumulative_uploads},
                   {"session", p.session_id},
                   {"trained_on", p.trained_on},
                   {"labels_gained", p.labels_gained}}
                  .dump());
  history_.push_back(p);
}

std::vector<AccuracyPoint> LabelStore::read_history() const {
  std::shared_lock lock(mutex_);
  return history_;
}

std::optional<ImageRecord> LabelStore::find(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return entries_[it->second].record;
}

std::shared_ptr<const Tensor> LabelStore::pixels(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = index_.find(id);
  if (it == index_.end()) throw Error(ErrorCode::kUnknownImage, "unknown image " + id);
  return entries_[it->second].pixels;
}

std::vector<ImageRecord> LabelStore::images() const {
  std::shared_lock lock(mutex_);
  std::vector<ImageRecord> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.record);
  return out;
}

std::vector<Vote> LabelStore::votes() const {
  std::shared_lock lock(mutex_);
  return votes_;
}

StoreCounters LabelStore::counters() const {
  std::shared_lock lock(mutex_);
  return counters_;
}

std::set<std::string> LabelStore::validation_ids() const {
  std::shared_lock lock(mutex_);
  std::set<std::string> ids;
  for (const auto& e : entries_)
    if (e.record.partition == Partition::kValidation) ids.insert(e.record.id);
  return ids;
}

std::filesystem::path LabelStore::image_path(const ImageRecord& record) const {
  return dir_ / "images" / (record.id + "." + record.extension);
}

}  // namespace corrosion
