#pragma once

// Shared domain types for the retrieval / critic / generation pipeline.
// All types are plain values; they are immutable once handed to the pipeline.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include <json.hpp>

namespace reag {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

// Broad failure class. The CLI maps these onto its exit codes.
enum class ErrorKind { usage, data, backend };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

// ---------------------------------------------------------------------------
// Knowledge-base documents and queries
// ---------------------------------------------------------------------------

struct Passage {
  std::string passage_id;
  std::string text;
  std::string parent_doc;

  bool operator==(const Passage&) const = default;
};

struct Document {
  std::string doc_id;
  std::string metadata;  // title + summary
  std::optional<std::string> image_ref;
  std::vector<Passage> passages;

  bool operator==(const Document&) const = default;
};

struct Query {
  std::string question;
  std::string image_ref;
  std::optional<std::string> crop_ref;

  bool operator==(const Query&) const = default;
};

enum class Dataset { infoseek, evqa };
enum class TaskKind { entity, time, numerical, single, multi };

struct QuestionTask {
  Dataset dataset = Dataset::infoseek;
  TaskKind kind = TaskKind::entity;

  bool operator==(const QuestionTask&) const = default;
};

// Closed interval [lo, hi].
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double length() const { return hi - lo; }
  bool contains(double x) const { return lo <= x && x <= hi; }
  bool operator==(const Interval&) const = default;
};

// One ground-truth alternative: free text, a scalar, or a closed interval.
using AnswerValue = std::variant<std::string, double, Interval>;

struct GroundTruth {
  std::vector<AnswerValue> alternatives;

  bool operator==(const GroundTruth&) const = default;
};

enum class RetrievalModality { image_to_text, image_to_image };

// Which retrieval stage produced a hit.
enum class Stage { coarse, fine };

struct RetrievalHit {
  std::string doc_id;
  double score = 0.0;
  Stage stage = Stage::coarse;

  bool operator==(const RetrievalHit&) const = default;
};

// ---------------------------------------------------------------------------
// Enum <-> string
// ---------------------------------------------------------------------------

inline std::string_view to_string(Dataset d) { return d == Dataset::infoseek ? "infoseek" : "evqa"; }

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::entity: return "entity";
    case TaskKind::time: return "time";
    case TaskKind::numerical: return "numerical";
    case TaskKind::single: return "single";
    case TaskKind::multi: return "multi";
  }
  return "entity";
}

inline std::string_view to_string(RetrievalModality m) {
  return m == RetrievalModality::image_to_text ? "image_to_text" : "image_to_image";
}

inline std::string_view to_string(Stage s) { return s == Stage::coarse ? "coarse" : "fine"; }

inline Dataset parse_dataset(std::string_view s) {
  if (s == "infoseek") return Dataset::infoseek;
  if (s == "evqa") return Dataset::evqa;
  throw DataError("unknown dataset '" + std::string(s) + "'");
}

inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "entity") return TaskKind::entity;
  if (s == "time") return TaskKind::time;
  if (s == "numerical") return TaskKind::numerical;
  if (s == "single") return TaskKind::single;
  if (s == "multi") return TaskKind::multi;
  throw DataError("unknown task kind '" + std::string(s) + "'");
}

inline RetrievalModality parse_modality(std::string_view s) {
  if (s == "image_to_text") return RetrievalModality::image_to_text;
  if (s == "image_to_image") return RetrievalModality::image_to_image;
  throw DataError("unknown retrieval modality '" + std::string(s) + "'");
}

inline Stage parse_stage(std::string_view s) {
  if (s == "coarse") return Stage::coarse;
  if (s == "fine") return Stage::fine;
  throw DataError("unknown retrieval stage '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline bool is_blank(std::string_view s) {
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

inline void validate(const Document& doc) {
  if (doc.doc_id.empty()) throw DataError("document has an empty doc_id");
  if (doc.passages.empty()) throw DataError("document '" + doc.doc_id + "' has no passages");
  std::unordered_set<std::string> seen;
  for (const auto& p : doc.passages) {
    if (!seen.insert(p.passage_id).second)
      throw DataError("document '" + doc.doc_id + "' repeats passage id '" + p.passage_id + "'");
    if (is_blank(p.text))
      throw DataError("passage '" + p.passage_id + "' of document '" + doc.doc_id + "' is empty");
    if (p.parent_doc != doc.doc_id)
      throw DataError("passage '" + p.passage_id + "' does not belong to document '" + doc.doc_id + "'");
  }
}

inline void validate(const Query& q) {
  if (is_blank(q.question)) throw DataError("query question is empty");
}

inline void validate(const QuestionTask& t) {
  if (t.kind == TaskKind::numerical && t.dataset != Dataset::infoseek)
    throw DataError("numerical questions only exist in infoseek");
  if (t.kind == TaskKind::multi && t.dataset != Dataset::evqa)
    throw DataError("multi-answer questions only exist in evqa");
}

inline void validate(const GroundTruth& gt) {
  if (gt.alternatives.empty()) throw DataError("ground truth has no alternatives");
  for (const auto& alt : gt.alternatives) {
    if (const auto* iv = std::get_if<Interval>(&alt); iv && !(iv->lo <= iv->hi))
      throw DataError("ground-truth interval has lo > hi");
  }
}

// ---------------------------------------------------------------------------
// Pipeline configuration
// ---------------------------------------------------------------------------

struct PipelineConfig {
  int top_k = 20;
  double critic_threshold = 0.1;
  double gamma = 1.0;   // task-reward weight
  double delta = 0.2;   // format-reward weight
  double alpha = 0.8;   // answer-vs-trace SFT weight
  double clip_epsilon = 0.2;
  int group_size = 8;
  double temperature = 1.0;
  double repetition_penalty = 1.05;
  int max_tokens = 512;
  RetrievalModality retrieval_modality = RetrievalModality::image_to_text;

  // Ablation switches. Both on is the full pipeline.
  bool enable_critic = true;
  bool enable_fine_retrieval = true;

  // Concurrency limits; 1 means sequential.
  int workers = 1;
  int critic_in_flight = 4;

  bool operator==(const PipelineConfig&) const = default;
};

struct ConfigViolation {
  std::string field;
  std::string bound;
};

// Empty when the configuration is valid.
inline std::vector<ConfigViolation> validate_config(const PipelineConfig& cfg) {
  std::vector<ConfigViolation> out;
  auto finite_positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (cfg.top_k <= 0) out.push_back({"top_k", "must be > 0"});
  if (!(cfg.critic_threshold >= 0.0 && cfg.critic_threshold <= 1.0))
    out.push_back({"critic_threshold", "must lie in [0, 1]"});
  if (!std::isfinite(cfg.gamma)) out.push_back({"gamma", "must be finite"});
  if (!std::isfinite(cfg.delta)) out.push_back({"delta", "must be finite"});
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) out.push_back({"alpha", "must lie in [0, 1]"});
  if (!finite_positive(cfg.clip_epsilon)) out.push_back({"clip_epsilon", "must be > 0"});
  if (cfg.group_size <= 0) out.push_back({"group_size", "must be > 0"});
  if (!finite_positive(cfg.temperature)) out.push_back({"temperature", "must be > 0"});
  if (!finite_positive(cfg.repetition_penalty)) out.push_back({"repetition_penalty", "must be > 0"});
  if (cfg.max_tokens <= 0) out.push_back({"max_tokens", "must be > 0"});
  if (cfg.workers <= 0) out.push_back({"workers", "must be > 0"});
  if (cfg.critic_in_flight <= 0) out.push_back({"critic_in_flight", "must be > 0"});
  return out;
}

// Throws a UsageError listing every violation.
inline const PipelineConfig& validated(const PipelineConfig& cfg) {
  auto violations = validate_config(cfg);
  if (violations.empty()) return cfg;
  std::ostringstream msg;
  msg << "invalid pipeline config:";
  for (const auto& v : violations) msg << ' ' << v.field << " (" << v.bound << ");";
  throw UsageError(msg.str());
}

// 64-bit FNV-1a. Used for stable fingerprints and mock-backend seeding.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// JSON mapping (snake_case field names)
// ---------------------------------------------------------------------------

inline void to_json(json& j, const Passage& p) {
  j = json{{"passage_id", p.passage_id}, {"text", p.text}, {"parent_doc", p.parent_doc}};
}

inline void from_json(const json& j, Passage& p) {
  j.at("passage_id").get_to(p.passage_id);
  j.at("text").get_to(p.text);
  p.parent_doc = j.value("parent_doc", std::string{});
}

inline void to_json(json& j, const Document& d) {
  j = json{{"doc_id", d.doc_id}, {"metadata", d.metadata}, {"passages", d.passages}};
  j["image_ref"] = d.image_ref ? json(*d.image_ref) : json(nullptr);
}

// Passages may omit parent_doc; it is filled from the enclosing document.
inline void from_json(const json& j, Document& d) {
  j.at("doc_id").get_to(d.doc_id);
  d.metadata = j.value("metadata", std::string{});
  d.image_ref.reset();
  if (auto it = j.find("image_ref"); it != j.end() && !it->is_null()) d.image_ref = it->get<std::string>();
  j.at("passages").get_to(d.passages);
  for (auto& p : d.passages)
    if (p.parent_doc.empty()) p.parent_doc = d.doc_id;
}

inline void to_json(json& j, const Query& q) {
  j = json{{"question", q.question}, {"image_ref", q.image_ref}};
  j["crop_ref"] = q.crop_ref ? json(*q.crop_ref) : json(nullptr);
}

inline void from_json(const json& j, Query& q) {
  j.at("question").get_to(q.question);
  q.image_ref = j.value("image_ref", std::string{});
  q.crop_ref.reset();
  if (auto it = j.find("crop_ref"); it != j.end() && !it->is_null()) q.crop_ref = it->get<std::string>();
}

inline void to_json(json& j, const QuestionTask& t) {
  j = json{{"dataset", to_string(t.dataset)}, {"kind", to_string(t.kind)}};
}

inline void from_json(const json& j, QuestionTask& t) {
  t.dataset = parse_dataset(j.at("dataset").get<std::string>());
  t.kind = parse_task_kind(j.at("kind").get<std::string>());
}

// Text -> JSON string, scalar -> number, interval -> {"lo": .., "hi": ..}.
// Intervals are also accepted as a two-element array.
inline json answer_value_to_json(const AnswerValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  if (const auto* d = std::get_if<double>(&v)) return *d;
  const auto& iv = std::get<Interval>(v);
  return json{{"lo", iv.lo}, {"hi", iv.hi}};
}

inline AnswerValue answer_value_from_json(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number()) return j.get<double>();
  if (j.is_array() && j.size() == 2) return Interval{j[0].get<double>(), j[1].get<double>()};
  if (j.is_object() && j.contains("lo") && j.contains("hi"))
    return Interval{j.at("lo").get<double>(), j.at("hi").get<double>()};
  throw DataError("unsupported ground-truth value: " + j.dump());
}

inline void to_json(json& j, const GroundTruth& gt) {
  json alts = json::array();
  for (const auto& a : gt.alternatives) alts.push_back(answer_value_to_json(a));
  j = json{{"alternatives", alts}};
}

// Accepts {"alternatives": [...]}, a bare array of alternatives, or a single
// value. A top-level array is always a list; an interval inside it is written
// {"lo", "hi"} or [lo, hi].
inline void from_json(const json& j, GroundTruth& gt) {
  gt.alternatives.clear();
  const json& alts = j.is_object() && j.contains("alternatives") ? j.at("alternatives") : j;
  if (alts.is_array()) {
    for (const auto& a : alts) gt.alternatives.push_back(answer_value_from_json(a));
  } else {
    gt.alternatives.push_back(answer_value_from_json(alts));
  }
}

inline void to_json(json& j, const RetrievalHit& h) {
  j = json{{"doc_id", h.doc_id}, {"score", h.score}, {"stage", to_string(h.stage)}};
}

inline void from_json(const json& j, RetrievalHit& h) {
  j.at("doc_id").get_to(h.doc_id);
  j.at("score").get_to(h.score);
  h.stage = parse_stage(j.value("stage", std::string{"coarse"}));
}

inline void to_json(json& j, const PipelineConfig& c) {
  j = json{{"top_k", c.top_k},
           {"critic_threshold", c.critic_threshold},
           {"gamma", c.gamma},
           {"delta", c.delta},
           {"alpha", c.alpha},
           {"clip_epsilon", c.clip_epsilon},
           {"group_size", c.group_size},
           {"temperature", c.temperature},
           {"repetition_penalty", c.repetition_penalty},
           {"max_tokens", c.max_tokens},
           {"retrieval_modality", to_string(c.retrieval_modality)},
           {"enable_critic", c.enable_critic},
           {"enable_fine_retrieval", c.enable_fine_retrieval},
           {"workers", c.workers},
           {"critic_in_flight", c.critic_in_flight}};
}

// Missing keys keep their defaults.
inline void from_json(const json& j, PipelineConfig& c) {
  PipelineConfig d;
  c.top_k = j.value("top_k", d.top_k);
  c.critic_threshold = j.value("critic_threshold", d.critic_threshold);
  c.gamma = j.value("gamma", d.gamma);
  c.delta = j.value("delta", d.delta);
  c.alpha = j.value("alpha", d.alpha);
  c.clip_epsilon = j.value("clip_epsilon", d.clip_epsilon);
  c.group_size = j.value("group_size", d.group_size);
  c.temperature = j.value("temperature", d.temperature);
  c.repetition_penalty = j.value("repetition_penalty", d.repetition_penalty);
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.retrieval_modality = parse_modality(j.value("retrieval_modality", std::string{to_string(d.retrieval_modality)}));
  c.enable_critic = j.value("enable_critic", d.enable_critic);
  c.enable_fine_retrieval = j.value("enable_fine_retrieval", d.enable_fine_retrieval);
  c.workers = j.value("workers", d.workers);
  c.critic_in_flight = j.value("critic_in_flight", d.critic_in_flight);
}

// Stable hex digest of the canonical JSON form.
inline std::string config_fingerprint(const PipelineConfig& cfg) {
  std::ostringstream os;
  os << std::hex << fnv1a(json(cfg).dump());
  return os.str();
}

}  // namespace reag
