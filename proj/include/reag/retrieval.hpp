#pragma once

// Two-stage document retrieval: coarse (whole query image) and fine (a crop
// around the question's subject), merged by per-document max score.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "reag/backends.hpp"
#include "reag/core.hpp"
#include "reag/knowledge_base.hpp"
#include "reag/vector_index.hpp"

namespace reag {

struct NoisyPassageSet {
  std::vector<Passage> passages;
  std::vector<RetrievalHit> source_hits;  // one merged hit per retained document, in rank order
};

// ---------------------------------------------------------------------------
// Subject extraction
// ---------------------------------------------------------------------------

namespace subject_detail {

inline const std::set<std::string, std::less<>>& function_words() {
  static const std::set<std::string, std::less<>> words{
      "a", "an", "the", "this", "these", "that", "those", "what", "which", "who", "whom", "whose", "when", "where",
      "why", "how", "is", "are", "was", "were", "be", "been", "being", "am", "do", "does", "did", "doing", "have",
      "has", "had", "having", "can", "could", "will", "would", "shall", "should", "may", "might", "must", "of", "by",
      "in", "from", "on", "at", "for", "with", "to", "into", "onto", "about", "above", "below", "under", "over",
      "between", "through", "during", "before", "after", "near", "than", "as", "and", "or", "but", "if", "not", "no",
      "nor", "so", "it", "its", "they", "them", "their", "there", "here", "he", "she", "his", "her", "him", "we",
      "us", "our", "you", "your", "i", "me", "my", "one", "ones", "some", "any", "each", "every", "all", "both",
      "either", "neither", "many", "much", "more", "most", "few", "several", "other", "another", "such", "own",
      "s", "whats", "whos", "many", "long", "far", "often", "ever", "also", "still", "currently", "usually"};
  return words;
}

inline const std::set<std::string, std::less<>>& verbs() {
  static const std::set<std::string, std::less<>> words{
      "design", "designs", "build", "builds", "make", "makes", "made", "found", "find", "create", "creates", "name",
      "names", "call", "calls", "use", "uses", "produce", "produces", "paint", "paints", "write", "writes", "written",
      "invent", "invents", "discover", "discovers", "born", "die", "dies", "live", "lives", "belong", "belongs",
      "come", "comes", "came", "go", "goes", "went", "see", "seen", "show", "shows", "shown", "depict", "depicts",
      "feature", "features", "contain", "contains", "play", "plays", "serve", "serves", "open", "opens", "close",
      "closes", "establish", "establishes", "own", "owns", "grow", "grows", "grew", "eat", "eats", "eaten", "weigh",
      "weighs", "measure", "measures", "cover", "covers", "flow", "flows", "originate", "originates", "refer",
      "refers", "represent", "represents", "hold", "holds", "held", "locate", "get", "gets", "got", "run", "runs",
      "ran", "begin", "began", "begun", "become", "became", "take", "takes", "took", "give", "gives", "gave"};
  return words;
}

inline const std::set<std::string, std::less<>>& adjectives() {
  static const std::set<std::string, std::less<>> words{
      "big", "small", "large", "tall", "high", "short", "old", "new", "red", "blue", "green", "yellow", "black",
      "white", "brown", "gray", "grey", "orange", "pink", "purple", "first", "last", "main", "famous", "largest",
      "biggest", "tallest", "highest", "longest", "oldest", "average", "maximum", "minimum", "total", "typical",
      "different", "similar", "same", "certain", "particular", "native", "current", "original", "official",
      "known", "located", "called", "named"};
  return words;
}

inline bool looks_like_past_participle(std::string_view w) {
  return w.size() > 4 && w.ends_with("ed") && !w.ends_with("eed");
}

inline bool is_noun(std::string_view w) {
  if (w.empty()) return false;
  if (!std::all_of(w.begin(), w.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '-'; }))
    return false;
  if (function_words().contains(w) || verbs().contains(w) || adjectives().contains(w)) return false;
  return !looks_like_past_participle(w);
}

inline bool is_modifier(std::string_view w) {
  return w == "a" || w == "an" || w == "the" || adjectives().contains(w) || w == "its" || w == "their" || w == "his" ||
         w == "her";
}

inline std::vector<std::string> tokenize(std::string_view question) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : question) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '-') {
      cur += static_cast<char>(std::tolower(u));
    } else if (c == '\'') {
      // possessive / contraction: "lake's" -> "lake", "s"
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

// Contiguous noun run starting at `i` after skipping modifiers; empty if none.
inline std::string noun_run(const std::vector<std::string>& tokens, std::size_t i) {
  while (i < tokens.size() && is_modifier(tokens[i])) ++i;
  std::string run;
  while (i < tokens.size() && is_noun(tokens[i])) {
    if (!run.empty()) run += ' ';
    run += tokens[i++];
  }
  return run;
}

}  // namespace subject_detail

inline const std::set<std::string, std::less<>>& subject_prepositions() {
  static const std::set<std::string, std::less<>> p{"of", "by", "in", "from", "on", "at", "for", "with"};
  return p;
}

// Priority: noun phrase after "this"/"these", then the first prepositional
// object, then the last noun in the question.
inline std::optional<std::string> extract_subject(std::string_view question) {
  using namespace subject_detail;
  const auto tokens = tokenize(question);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == "this" || tokens[i] == "these") {
      if (auto run = noun_run(tokens, i + 1); !run.empty()) return run;
    }
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (subject_prepositions().contains(tokens[i])) {
      std::size_t j = i + 1;
      if (j < tokens.size() && (tokens[j] == "this" || tokens[j] == "these" || tokens[j] == "that" || tokens[j] == "those"))
        ++j;
      if (auto run = noun_run(tokens, j); !run.empty()) return run;
    }
  }
  for (std::size_t i = tokens.size(); i-- > 0;)
    if (is_noun(tokens[i])) return tokens[i];
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Retrieval stages
// ---------------------------------------------------------------------------

namespace retrieval_detail {

inline BackendError with_stage(const BackendError& e, std::string_view stage) {
  return BackendError(e.reason(), std::string(stage) + " retrieval: " + e.what(), e.status());
}

}  // namespace retrieval_detail

inline std::vector<RetrievalHit> coarse_retrieve(const Query& query, const SearchIndex& index, int k,
                                                 const EmbedderBackend& embedder,
                                                 RetrievalModality modality = RetrievalModality::image_to_text) {
  if (index.size() == 0 || k <= 0) return {};
  try {
    const auto v = embedder.embed(Resource::image(query.image_ref));
    return index.search(v, k, searched_modality(modality), Stage::coarse);
  } catch (const BackendError& e) {
    throw retrieval_detail::with_stage(e, "coarse");
  }
}

struct FineRetrieval {
  std::optional<std::string> subject;
  std::optional<std::string> crop_ref;
  std::vector<RetrievalHit> hits;
};

// A crop supplied with the query is used as-is; otherwise the region proposer
// is asked for one. No subject or no detection yields no hits.
inline FineRetrieval fine_retrieve(const Query& query, const SearchIndex& index, int k, const EmbedderBackend& embedder,
                                   const RegionProposerBackend& region,
                                   RetrievalModality modality = RetrievalModality::image_to_text) {
  FineRetrieval out;
  out.subject = extract_subject(query.question);
  if (index.size() == 0 || k <= 0) return out;
  try {
    if (query.crop_ref) {
      out.crop_ref = query.crop_ref;
    } else {
      if (!out.subject) return out;
      out.crop_ref = region.propose_region(query.image_ref, *out.subject);
      if (!out.crop_ref) return out;
    }
    const auto v = embedder.embed(Resource::image(*out.crop_ref));
    out.hits = index.search(v, k, searched_modality(modality), Stage::fine);
  } catch (const BackendError& e) {
    throw retrieval_detail::with_stage(e, "fine");
  }
  return out;
}

// Union of both hit lists with per-document max score, sorted by descending
// score (ties by ascending doc_id), truncated to k documents. Passages keep
// their in-document order.
inline NoisyPassageSet merge_rank(const std::vector<RetrievalHit>& coarse, const std::vector<RetrievalHit>& fine,
                                  const KnowledgeBase& kb, int k) {
  std::map<std::string, RetrievalHit> best;
  auto absorb = [&](const std::vector<RetrievalHit>& hits) {
    for (const auto& h : hits) {
      if (!kb.find(h.doc_id)) throw DataError("merge_rank: unknown doc_id '" + h.doc_id + "'");
      auto [it, inserted] = best.try_emplace(h.doc_id, h);
      if (!inserted && h.score > it->second.score) it->second = h;
    }
  };
  absorb(coarse);
  absorb(fine);

  std::vector<RetrievalHit> merged;
  merged.reserve(best.size());
  for (auto& [id, h] : best) merged.push_back(std::move(h));
  std::stable_sort(merged.begin(), merged.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
  if (k < 0) k = 0;
  if (merged.size() > static_cast<std::size_t>(k)) merged.resize(static_cast<std::size_t>(k));

  NoisyPassageSet out;
  for (const auto& h : merged) {
    const auto& doc = kb.at(h.doc_id);
    out.passages.insert(out.passages.end(), doc.passages.begin(), doc.passages.end());
  }
  out.source_hits = std::move(merged);
  return out;
}

struct RetrievalOutcome {
  std::vector<RetrievalHit> coarse;
  FineRetrieval fine;
  NoisyPassageSet noisy;
};

inline RetrievalOutcome retrieve(const Query& query, const KnowledgeBase& kb, const SearchIndex& index,
                                 const Backends& backends, const PipelineConfig& cfg) {
  RetrievalOutcome out;
  out.coarse = coarse_retrieve(query, index, cfg.top_k, *backends.embedder, cfg.retrieval_modality);
  if (cfg.enable_fine_retrieval)
    out.fine = fine_retrieve(query, index, cfg.top_k, *backends.embedder, *backends.region, cfg.retrieval_modality);
  out.noisy = merge_rank(out.coarse, out.fine.hits, kb, cfg.top_k);
  return out;
}

inline void to_json(json& j, const NoisyPassageSet& n) {
  j = json{{"passages", n.passages}, {"source_hits", n.source_hits}};
}

}  // namespace reag
