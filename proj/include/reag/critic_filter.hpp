#pragma once

// Critic gating: a passage survives iff its yes-probability is strictly
// greater than the threshold.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "reag/backends.hpp"
#include "reag/core.hpp"
#include "reag/parallel.hpp"
#include "reag/retrieval.hpp"

namespace reag {

struct CriticVerdict {
  std::string passage_id;
  double yes_probability = 0.0;
  bool kept = false;
  std::optional<std::string> error;  // set when the critic call failed; such passages are dropped

  bool operator==(const CriticVerdict&) const = default;
};

struct FilterResult {
  std::vector<Passage> relevant;
  std::vector<CriticVerdict> verdicts;
  std::size_t failures = 0;
};

inline bool passes_threshold(double yes_probability, double threshold) { return yes_probability > threshold; }

inline FilterResult filter_passages(const Query& query, const std::vector<Passage>& passages,
                                    const CriticBackend& critic, double threshold, int in_flight = 1) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("critic threshold must lie in [0, 1]");
  FilterResult out;
  out.verdicts.resize(passages.size());
  parallel_for_index(passages.size(), in_flight, [&](std::size_t i) {
    auto& v = out.verdicts[i];
    v.passage_id = passages[i].passage_id;
    try {
      const double p = critic.yes_probability(query, passages[i]);
      if (!(p >= 0.0 && p <= 1.0)) throw BackendError(BackendError::Reason::malformed, "yes-probability outside [0, 1]");
      v.yes_probability = p;
      v.kept = passes_threshold(p, threshold);
    } catch (const Error& e) {
      v.error = e.what();
      v.kept = false;
    }
  });
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (out.verdicts[i].error) ++out.failures;
    if (out.verdicts[i].kept) out.relevant.push_back(passages[i]);
  }
  return out;
}

inline FilterResult filter_passages(const Query& query, const NoisyPassageSet& noisy, const CriticBackend& critic,
                                    double threshold, int in_flight = 1) {
  return filter_passages(query, noisy.passages, critic, threshold, in_flight);
}

struct ThresholdCount {
  double threshold = 0.0;
  std::size_t kept = 0;
};

// Failed verdicts never count as kept.
inline std::vector<ThresholdCount> sweep_threshold(const std::vector<CriticVerdict>& verdicts,
                                                   const std::vector<double>& thresholds) {
  std::vector<ThresholdCount> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto kept = std::count_if(verdicts.begin(), verdicts.end(), [t](const CriticVerdict& v) {
      return !v.error && passes_threshold(v.yes_probability, t);
    });
    out.push_back({t, static_cast<std::size_t>(kept)});
  }
  return out;
}

inline void to_json(json& j, const CriticVerdict& v) {
  j = json{{"passage_id", v.passage_id}, {"yes_probability", v.yes_probability}, {"kept", v.kept}};
  if (v.error) j["error"] = *v.error;
}

}  // namespace reag
