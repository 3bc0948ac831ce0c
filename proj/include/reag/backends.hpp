#pragma once

// Model-inference interfaces used by the pipeline plus deterministic mock
// implementations. Mocks are pure functions of (seed, inputs, fixture tables).

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "reag/core.hpp"
#include "reag/vector_index.hpp"

namespace reag {

class BackendError : public Error {
 public:
  enum class Reason { transport, timeout, status, malformed, unresolvable, missing_logprobs };

  BackendError(Reason reason, const std::string& what, int status = 0)
      : Error(ErrorKind::backend, what), reason_(reason), status_(status) {}

  Reason reason() const noexcept { return reason_; }
  int status() const noexcept { return status_; }

 private:
  Reason reason_;
  int status_;
};

// Something an embedder can encode: an image locator or a text string.
struct Resource {
  enum class Kind { image, text };
  Kind kind = Kind::image;
  std::string value;

  static Resource image(std::string ref) { return {Kind::image, std::move(ref)}; }
  static Resource text(std::string t) { return {Kind::text, std::move(t)}; }

  std::string key() const { return (kind == Kind::image ? "image:" : "text:") + value; }
};

struct GenerationRequest {
  std::string system_prompt;
  std::string user_prompt;
  std::vector<std::string> image_refs;
  double temperature = 1.0;
  double repetition_penalty = 1.05;
  int max_tokens = 512;
  bool want_logprobs = false;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  // Alternatives reported by the server at this position, token -> logprob.
  std::map<std::string, double> top;
};

struct GenerationResult {
  std::string text;  // raw, untrimmed
  std::vector<TokenLogprob> token_logprobs;
};

class EmbedderBackend {
 public:
  virtual ~EmbedderBackend() = default;
  virtual EmbeddingVector embed(const Resource& resource) const = 0;
};

class CriticBackend {
 public:
  virtual ~CriticBackend() = default;
  virtual double yes_probability(const Query& query, const Passage& passage) const = 0;
};

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  virtual GenerationResult generate(const GenerationRequest& request) const = 0;
};

class RegionProposerBackend {
 public:
  virtual ~RegionProposerBackend() = default;
  // nullopt means "no detection"; failures throw BackendError.
  virtual std::optional<std::string> propose_region(const std::string& image_ref, const std::string& subject) const = 0;
};

struct Backends {
  std::shared_ptr<const EmbedderBackend> embedder;
  std::shared_ptr<const CriticBackend> critic;
  std::shared_ptr<const GeneratorBackend> generator;
  std::shared_ptr<const RegionProposerBackend> region;
};

// ---------------------------------------------------------------------------
// Critic probability from first-token log-probabilities
// ---------------------------------------------------------------------------

inline bool is_affirmative_token(std::string_view t) { return t == "Yes" || t == "yes" || t == " Yes" || t == " yes"; }
inline bool is_negative_token(std::string_view t) { return t == "No" || t == "no" || t == " No" || t == " no"; }

// Affirmative probability mass normalised over affirmative + negative variants
// found at the first generated position.
inline double yes_probability_from_logprobs(const TokenLogprob& first) {
  std::map<std::string, double> seen = first.top;
  seen.emplace(first.token, first.logprob);
  double yes = 0.0;
  double no = 0.0;
  for (const auto& [tok, lp] : seen) {
    if (std::isnan(lp) || lp == INFINITY)
      throw BackendError(BackendError::Reason::malformed, "non-finite logprob for token '" + tok + "'");
    if (is_affirmative_token(tok)) yes += std::exp(lp);
    else if (is_negative_token(tok)) no += std::exp(lp);
  }
  if (yes + no <= 0.0)
    throw BackendError(BackendError::Reason::malformed, "critic reply carries no Yes/No token probabilities");
  return yes / (yes + no);
}

// ---------------------------------------------------------------------------
// Mocks
// ---------------------------------------------------------------------------

// splitmix64 step; a portable, seedable stream for the mocks.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline double unit_double(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view key) {
  std::uint64_t s = fnv1a(key, fnv1a(std::to_string(seed)));
  return splitmix64(s);
}

class MockEmbedder final : public EmbedderBackend {
 public:
  using Overrides = std::map<std::string, std::vector<double>>;  // Resource::key() -> vector

  MockEmbedder(std::uint64_t seed, std::size_t dim, Overrides overrides = {})
      : seed_(seed), dim_(dim), overrides_(std::move(overrides)) {
    if (dim_ == 0) throw UsageError("mock embedder dim must be > 0");
  }

  EmbeddingVector embed(const Resource& resource) const override {
    if (resource.value.empty())
      throw BackendError(BackendError::Reason::unresolvable, "mock embedder: empty resource locator");
    if (auto it = overrides_.find(resource.key()); it != overrides_.end()) {
      if (it->second.size() != dim_)
        throw BackendError(BackendError::Reason::malformed, "mock embedder: override '" + it->first + "' has wrong dim");
      return EmbeddingVector(it->second);
    }
    std::uint64_t state = mix_seed(seed_, resource.key());
    std::vector<double> v(dim_);
    double norm = 0.0;
    for (auto& x : v) {
      x = 2.0 * unit_double(splitmix64(state)) - 1.0;
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return EmbeddingVector(std::move(v));
  }

  std::size_t dim() const { return dim_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
  Overrides overrides_;
};

class MockCritic final : public CriticBackend {
 public:
  using Overrides = std::map<std::string, double>;  // passage_id -> probability

  explicit MockCritic(std::uint64_t seed, Overrides overrides = {}) : seed_(seed), overrides_(std::move(overrides)) {}

  double yes_probability(const Query&, const Passage& passage) const override {
    if (auto it = overrides_.find(passage.passage_id); it != overrides_.end()) return it->second;
    return unit_double(mix_seed(seed_, passage.passage_id));
  }

 private:
  std::uint64_t seed_;
  Overrides overrides_;
};

// Scripted generator. Lookup order: exact prompt hash, then the first rule
// whose `match` is a substring of the user prompt, then the default output.
class MockGenerator final : public GeneratorBackend {
 public:
  struct Rule {
    std::string match;
    std::string output;
  };

  static constexpr std::string_view kDefaultOutput = "<think>No scripted reasoning.</think><answer>unknown</answer>";

  MockGenerator() = default;
  explicit MockGenerator(std::vector<Rule> rules, std::map<std::uint64_t, std::string> exact = {},
                         std::string default_output = std::string(kDefaultOutput))
      : rules_(std::move(rules)), exact_(std::move(exact)), default_output_(std::move(default_output)) {}

  static std::uint64_t prompt_hash(std::string_view system_prompt, std::string_view user_prompt) {
    return fnv1a(user_prompt, fnv1a("\x1f", fnv1a(system_prompt)));
  }

  GenerationResult generate(const GenerationRequest& request) const override {
    GenerationResult result;
    result.text = pick(request);
    if (request.want_logprobs) {
      // One pseudo-token per whitespace-separated word, each with a fixed
      // hash-derived logprob.
      std::size_t i = 0;
      while (i < result.text.size()) {
        const auto start = result.text.find_first_not_of(" \t\n", i);
        if (start == std::string::npos) break;
        const auto end = std::min(result.text.find_first_of(" \t\n", start), result.text.size());
        std::string tok = result.text.substr(start, end - start);
        const double lp = -unit_double(mix_seed(0, tok));
        result.token_logprobs.push_back({tok, lp, {}});
        i = end;
      }
    }
    return result;
  }

 private:
  const std::string& pick(const GenerationRequest& request) const {
    if (auto it = exact_.find(prompt_hash(request.system_prompt, request.user_prompt)); it != exact_.end())
      return it->second;
    for (const auto& rule : rules_)
      if (request.user_prompt.find(rule.match) != std::string::npos) return rule.output;
    return default_output_;
  }

  std::vector<Rule> rules_;
  std::map<std::uint64_t, std::string> exact_;
  std::string default_output_ = std::string(kDefaultOutput);
};

class MockRegionProposer final : public RegionProposerBackend {
 public:
  enum class Fallback { identity, none };
  using Table = std::map<std::pair<std::string, std::string>, std::optional<std::string>>;

  explicit MockRegionProposer(Fallback fallback = Fallback::identity, Table table = {})
      : fallback_(fallback), table_(std::move(table)) {}

  std::optional<std::string> propose_region(const std::string& image_ref, const std::string& subject) const override {
    if (subject.empty()) throw DataError("propose_region: subject must be non-empty");
    if (auto it = table_.find({image_ref, subject}); it != table_.end()) return it->second;
    if (fallback_ == Fallback::identity) return image_ref;
    return std::nullopt;
  }

 private:
  Fallback fallback_;
  Table table_;
};

}  // namespace reag
