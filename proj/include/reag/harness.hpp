#pragma once

// Dataset ingestion, end-to-end pipeline assembly, evaluation and sweeps.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "reag/backends.hpp"
#include "reag/core.hpp"
#include "reag/critic_filter.hpp"
#include "reag/knowledge_base.hpp"
#include "reag/parallel.hpp"
#include "reag/prompts.hpp"
#include "reag/retrieval.hpp"
#include "reag/reward.hpp"
#include "reag/vector_index.hpp"

namespace reag {

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

enum class SplitTag { unseen_q, unseen_e, single_hop, two_hop };

inline std::string_view to_string(SplitTag t) {
  switch (t) {
    case SplitTag::unseen_q: return "unseen_q";
    case SplitTag::unseen_e: return "unseen_e";
    case SplitTag::single_hop: return "single_hop";
    case SplitTag::two_hop: return "two_hop";
  }
  return "?";
}

inline SplitTag parse_split_tag(std::string_view s) {
  if (s == "unseen_q") return SplitTag::unseen_q;
  if (s == "unseen_e") return SplitTag::unseen_e;
  if (s == "single_hop") return SplitTag::single_hop;
  if (s == "two_hop") return SplitTag::two_hop;
  throw DataError("unknown split tag '" + std::string(s) + "'");
}

struct QARecord {
  std::string id;
  Query query;
  GroundTruth ground_truth;
  QuestionTask task;
  std::set<SplitTag> split_tags;
  std::optional<std::string> oracle_doc;
};

inline void validate(const QARecord& r) {
  if (is_blank(r.id)) throw DataError("record id must be non-empty");
  validate(r.query);
  validate(r.ground_truth);
  validate(r.task);
  for (auto t : r.split_tags) {
    const bool infoseek_tag = t == SplitTag::unseen_q || t == SplitTag::unseen_e;
    if (infoseek_tag != (r.task.dataset == Dataset::infoseek))
      throw DataError("record '" + r.id + "': split '" + std::string(to_string(t)) + "' does not belong to dataset " +
                      std::string(to_string(r.task.dataset)));
  }
}

inline void to_json(json& j, const QARecord& r) {
  json splits = json::array();
  for (auto t : r.split_tags) splits.push_back(to_string(t));
  j = json{{"id", r.id}, {"query", r.query}, {"ground_truth", r.ground_truth}, {"task", r.task}, {"splits", splits}};
  if (r.oracle_doc) j["oracle_doc"] = *r.oracle_doc;
}

inline void from_json(const json& j, QARecord& r) {
  j.at("id").get_to(r.id);
  j.at("query").get_to(r.query);
  j.at("ground_truth").get_to(r.ground_truth);
  j.at("task").get_to(r.task);
  r.split_tags.clear();
  if (j.contains("splits"))
    for (const auto& s : j.at("splits")) r.split_tags.insert(parse_split_tag(s.get<std::string>()));
  r.oracle_doc.reset();
  if (j.contains("oracle_doc") && !j.at("oracle_doc").is_null()) r.oracle_doc = j.at("oracle_doc").get<std::string>();
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

// Calls fn(json, line_number) for every non-blank line. Parse and validation
// failures are rethrown as DataError citing the line.
template <typename Fn>
void for_each_jsonl(std::istream& in, const std::string& source, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    try {
      fn(json::parse(line), lineno);
    } catch (const json::exception& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

inline KnowledgeBase ingest_kb(std::istream& in, const std::string& source = "<kb>") {
  std::vector<Document> docs;
  std::map<std::string, std::size_t> seen;
  for_each_jsonl(in, source, [&](const json& j, std::size_t lineno) {
    auto doc = j.get<Document>();
    validate(doc);
    if (auto [it, inserted] = seen.emplace(doc.doc_id, lineno); !inserted)
      throw DataError("duplicate doc_id '" + doc.doc_id + "' (first seen on line " + std::to_string(it->second) + ")");
    docs.push_back(std::move(doc));
  });
  return KnowledgeBase(std::move(docs));
}

inline KnowledgeBase ingest_kb(const std::filesystem::path& path) {
  auto in = open_input(path);
  return ingest_kb(in, path.string());
}

inline std::vector<QARecord> ingest_qa(std::istream& in, const std::string& source = "<qa>") {
  std::vector<QARecord> records;
  std::map<std::string, std::size_t> seen;
  for_each_jsonl(in, source, [&](const json& j, std::size_t lineno) {
    auto r = j.get<QARecord>();
    validate(r);
    if (auto [it, inserted] = seen.emplace(r.id, lineno); !inserted)
      throw DataError("duplicate record id '" + r.id + "' (first seen on line " + std::to_string(it->second) + ")");
    records.push_back(std::move(r));
  });
  return records;
}

inline std::vector<QARecord> ingest_qa(const std::filesystem::path& path) {
  auto in = open_input(path);
  return ingest_qa(in, path.string());
}

// One metadata row per document, plus an image row when the document has one.
inline VectorIndex build_index(const KnowledgeBase& kb, const EmbedderBackend& embedder) {
  std::vector<IndexEntry> entries;
  for (const auto& doc : kb.documents()) {
    entries.push_back({doc.doc_id, embedder.embed(Resource::text(doc.metadata)), ModalityTag::metadata});
    if (doc.image_ref) entries.push_back({doc.doc_id, embedder.embed(Resource::image(*doc.image_ref)), ModalityTag::image});
  }
  return VectorIndex::build(std::move(entries));
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

enum class PipelineMode { retrieval, oracle };

inline std::string_view to_string(PipelineMode m) { return m == PipelineMode::retrieval ? "retrieval" : "oracle"; }

struct Provenance {
  PipelineMode mode = PipelineMode::retrieval;
  std::vector<RetrievalHit> coarse_hits;
  std::vector<RetrievalHit> fine_hits;
  std::vector<RetrievalHit> merged_hits;
  std::optional<std::string> subject;
  std::optional<std::string> crop_ref;
  bool empty_retrieval = false;
  std::size_t passages_before_filter = 0;
  std::size_t passages_after_filter = 0;
  bool critic_skipped = false;
  std::vector<CriticVerdict> verdicts;
  bool no_passage_prompt = false;
  std::string system_prompt;
  std::string user_prompt;
  std::string raw_output;
  std::optional<std::string> failed_stage;
  std::optional<std::string> error;
};

struct PipelineResult {
  std::string record_id;
  ExtractedAnswer answer;
  RewardBreakdown reward;
  Provenance provenance;
};

namespace pipeline_detail {

// Filter -> prompt -> generate -> extract -> score, shared by both modes.
inline void answer_from_passages(const QARecord& record, const std::vector<Passage>& noisy, const Backends& backends,
                                 const PipelineConfig& cfg, PipelineResult& out, std::string& stage) {
  auto& prov = out.provenance;
  prov.passages_before_filter = noisy.size();

  stage = "filter";
  std::vector<Passage> relevant;
  if (cfg.enable_critic) {
    auto filtered = filter_passages(record.query, noisy, *backends.critic, cfg.critic_threshold, cfg.critic_in_flight);
    prov.verdicts = std::move(filtered.verdicts);
    relevant = std::move(filtered.relevant);
  } else {
    prov.critic_skipped = true;
    relevant = noisy;
  }
  prov.passages_after_filter = relevant.size();

  stage = "prompt";
  std::vector<std::string> texts;
  texts.reserve(relevant.size());
  for (const auto& p : relevant) texts.push_back(p.text);
  prov.no_passage_prompt = texts.empty();
  prov.system_prompt = std::string(prompts::kGeneratorSystem);
  prov.user_prompt = prompts::generator_user(record.query.question, texts);

  stage = "generate";
  GenerationRequest req;
  req.system_prompt = prov.system_prompt;
  req.user_prompt = prov.user_prompt;
  req.image_refs = {record.query.image_ref};
  req.temperature = cfg.temperature;
  req.repetition_penalty = cfg.repetition_penalty;
  req.max_tokens = cfg.max_tokens;
  prov.raw_output = backends.generator->generate(req).text;

  stage = "score";
  out.reward = score_output(prov.raw_output, record.ground_truth, record.task, cfg.gamma, cfg.delta);
  out.answer = out.reward.answer;
}

template <typename Body>
PipelineResult guarded(const QARecord& record, PipelineMode mode, Body&& body) {
  PipelineResult out;
  out.record_id = record.id;
  out.provenance.mode = mode;
  std::string stage = "setup";
  try {
    body(out, stage);
  } catch (const std::exception& e) {
    out.provenance.failed_stage = stage;
    out.provenance.error = e.what();
    out.reward = RewardBreakdown{};
    out.answer = out.reward.answer;
  }
  return out;
}

}  // namespace pipeline_detail

// coarse -> fine -> merge -> filter -> prompt -> generate -> extract. Any
// stage failure is recorded in the provenance and the record scores 0.
inline PipelineResult run_pipeline(const QARecord& record, const KnowledgeBase& kb, const SearchIndex& index,
                                   const Backends& backends, const PipelineConfig& cfg) {
  return pipeline_detail::guarded(record, PipelineMode::retrieval, [&](PipelineResult& out, std::string& stage) {
    auto& prov = out.provenance;
    stage = "coarse";
    prov.coarse_hits = coarse_retrieve(record.query, index, cfg.top_k, *backends.embedder, cfg.retrieval_modality);
    if (cfg.enable_fine_retrieval) {
      stage = "fine";
      auto fine =
          fine_retrieve(record.query, index, cfg.top_k, *backends.embedder, *backends.region, cfg.retrieval_modality);
      prov.subject = std::move(fine.subject);
      prov.crop_ref = std::move(fine.crop_ref);
      prov.fine_hits = std::move(fine.hits);
    }
    stage = "merge";
    auto noisy = merge_rank(prov.coarse_hits, prov.fine_hits, kb, cfg.top_k);
    prov.merged_hits = noisy.source_hits;
    prov.empty_retrieval = noisy.passages.empty();
    pipeline_detail::answer_from_passages(record, noisy.passages, backends, cfg, out, stage);
  });
}

// Retrieval is skipped: every passage of the oracle document goes to the critic.
inline PipelineResult run_oracle(const QARecord& record, const KnowledgeBase& kb, const Backends& backends,
                                 const PipelineConfig& cfg) {
  if (!record.oracle_doc) throw DataError("record '" + record.id + "' has no oracle_doc");
  const Document* doc = kb.find(*record.oracle_doc);
  if (!doc) throw DataError("record '" + record.id + "': oracle_doc '" + *record.oracle_doc + "' is not in the KB");
  return pipeline_detail::guarded(record, PipelineMode::oracle, [&](PipelineResult& out, std::string& stage) {
    pipeline_detail::answer_from_passages(record, doc->passages, backends, cfg, out, stage);
  });
}

// Records run on up to cfg.workers threads; results come back in record order.
inline std::vector<PipelineResult> run_batch(const std::vector<QARecord>& records, const KnowledgeBase& kb,
                                             const SearchIndex& index, const Backends& backends,
                                             const PipelineConfig& cfg, PipelineMode mode = PipelineMode::retrieval) {
  validated(cfg);
  if (mode == PipelineMode::oracle)
    for (const auto& r : records) {
      if (!r.oracle_doc) throw DataError("record '" + r.id + "' has no oracle_doc");
      if (!kb.find(*r.oracle_doc)) throw DataError("record '" + r.id + "': oracle_doc '" + *r.oracle_doc + "' is not in the KB");
    }
  std::vector<PipelineResult> results(records.size());
  parallel_for_index(records.size(), cfg.workers, [&](std::size_t i) {
    results[i] = mode == PipelineMode::oracle ? run_oracle(records[i], kb, backends, cfg)
                                              : run_pipeline(records[i], kb, index, backends, cfg);
  });
  return results;
}

inline void to_json(json& j, const Provenance& p) {
  j = json{{"mode", to_string(p.mode)},
           {"coarse_hits", p.coarse_hits},
           {"fine_hits", p.fine_hits},
           {"merged_hits", p.merged_hits},
           {"empty_retrieval", p.empty_retrieval},
           {"passages_before_filter", p.passages_before_filter},
           {"passages_after_filter", p.passages_after_filter},
           {"critic_skipped", p.critic_skipped},
           {"verdicts", p.verdicts},
           {"no_passage_prompt", p.no_passage_prompt},
           {"system_prompt", p.system_prompt},
           {"user_prompt", p.user_prompt},
           {"raw_output", p.raw_output}};
  j["subject"] = p.subject ? json(*p.subject) : json(nullptr);
  j["crop_ref"] = p.crop_ref ? json(*p.crop_ref) : json(nullptr);
  j["failed_stage"] = p.failed_stage ? json(*p.failed_stage) : json(nullptr);
  j["error"] = p.error ? json(*p.error) : json(nullptr);
}

inline void to_json(json& j, const PipelineResult& r) {
  j = json{{"id", r.record_id}, {"reward", r.reward}, {"provenance", r.provenance}};
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct SplitAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

inline constexpr std::string_view kAllSplit = "all";

struct EvalReport {
  // "all" plus every split tag with at least one record. Empty splits are absent.
  std::map<std::string, SplitAccuracy> splits;
  std::size_t records = 0;
  std::size_t failures = 0;
  double mean_passages_pre_filter = 0.0;
  double mean_passages_post_filter = 0.0;
  double mean_format_reward = 0.0;
  std::string config_fingerprint;
};

// Micro-averaged: "all" is correct/total over the whole record set, not a mean
// of split accuracies. Folds in record order.
inline EvalReport evaluate(const std::vector<QARecord>& records, const std::vector<PipelineResult>& results,
                           const PipelineConfig& cfg) {
  if (records.empty()) throw UsageError("evaluate: no records");
  if (records.size() != results.size()) throw UsageError("evaluate: records and results differ in length");
  EvalReport rep;
  rep.records = records.size();
  rep.config_fingerprint = config_fingerprint(cfg);
  double pre = 0.0, post = 0.0, fmt = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& res = results[i];
    if (res.record_id != records[i].id) throw UsageError("evaluate: results are not in record order");
    const bool correct = res.reward.task == 1;
    auto bump = [&](const std::string& split) {
      auto& s = rep.splits[split];
      ++s.total;
      if (correct) ++s.correct;
    };
    bump(std::string(kAllSplit));
    for (auto t : records[i].split_tags) bump(std::string(to_string(t)));
    if (res.provenance.error) ++rep.failures;
    pre += static_cast<double>(res.provenance.passages_before_filter);
    post += static_cast<double>(res.provenance.passages_after_filter);
    fmt += res.reward.format;
  }
  const double n = static_cast<double>(records.size());
  rep.mean_passages_pre_filter = pre / n;
  rep.mean_passages_post_filter = post / n;
  rep.mean_format_reward = fmt / n;
  return rep;
}

inline void to_json(json& j, const SplitAccuracy& s) {
  j = json{{"correct", s.correct}, {"total", s.total}, {"accuracy", s.accuracy()}};
}

inline void to_json(json& j, const EvalReport& r) {
  j = json{{"splits", r.splits},
           {"records", r.records},
           {"failures", r.failures},
           {"mean_passages_pre_filter", r.mean_passages_pre_filter},
           {"mean_passages_post_filter", r.mean_passages_post_filter},
           {"mean_format_reward", r.mean_format_reward},
           {"config_fingerprint", r.config_fingerprint}};
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class SweepAxis { k, threshold };

inline std::string_view to_string(SweepAxis a) { return a == SweepAxis::k ? "k" : "threshold"; }

inline SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "k") return SweepAxis::k;
  if (s == "threshold") return SweepAxis::threshold;
  throw UsageError("unknown sweep axis '" + std::string(s) + "' (expected k or threshold)");
}

struct SweepRow {
  double value = 0.0;
  EvalReport report;
};

inline PipelineConfig with_axis_value(PipelineConfig cfg, SweepAxis axis, double value) {
  if (axis == SweepAxis::k) {
    if (value != std::floor(value)) throw UsageError("sweep: k values must be integers");
    cfg.top_k = static_cast<int>(value);
  } else {
    cfg.critic_threshold = value;
  }
  return cfg;
}

// One full evaluation per value.
inline std::vector<SweepRow> sweep(const std::vector<QARecord>& records, const KnowledgeBase& kb,
                                   const SearchIndex& index, const Backends& backends, const PipelineConfig& base,
                                   SweepAxis axis, const std::vector<double>& values,
                                   PipelineMode mode = PipelineMode::retrieval) {
  if (values.empty()) throw UsageError("sweep: no values");
  std::vector<SweepRow> rows;
  rows.reserve(values.size());
  for (double v : values) {
    const auto cfg = with_axis_value(base, axis, v);
    validated(cfg);
    rows.push_back({v, evaluate(records, run_batch(records, kb, index, backends, cfg, mode), cfg)});
  }
  return rows;
}

// Shortest text that round-trips.
inline std::string format_csv_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string sweep_csv(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::set<std::string> split_names;
  for (const auto& r : rows)
    for (const auto& [name, _] : r.report.splits)
      if (name != kAllSplit) split_names.insert(name);
  std::ostringstream os;
  os << to_string(axis) << ",accuracy_all,correct,total,mean_passages_pre_filter,mean_passages_post_filter,failures";
  for (const auto& s : split_names) os << ",accuracy_" << s;
  os << '\n';
  for (const auto& r : rows) {
    const auto& all = r.report.splits.at(std::string(kAllSplit));
    os << format_csv_number(r.value) << ',' << format_csv_number(all.accuracy()) << ',' << all.correct << ','
       << all.total << ',' << format_csv_number(r.report.mean_passages_pre_filter) << ','
       << format_csv_number(r.report.mean_passages_post_filter) << ',' << r.report.failures;
    for (const auto& s : split_names) {
      os << ',';
      if (auto it = r.report.splits.find(s); it != r.report.splits.end()) os << format_csv_number(it->second.accuracy());
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace reag
