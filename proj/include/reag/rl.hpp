#pragma once

// Policy-optimisation mathematics and a desk-scale toy policy to exercise it.
//
// The objective is the group-relative clipped surrogate averaged over every
// token of every completion in the group (not per sequence), with no KL term.
// Old-policy log-probabilities are constants; gradients are taken with
// respect to the current policy's per-token log-probabilities and then pushed
// through the toy policy's softmax.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "reag/core.hpp"
#include "reag/reward.hpp"

namespace reag {

struct TrainingDiverged : DataError {
  explicit TrainingDiverged(const std::string& what) : DataError(what) {}
};

// ---------------------------------------------------------------------------
// Completions and advantages
// ---------------------------------------------------------------------------

enum class SegmentKind { trace, answer };

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  SegmentKind kind = SegmentKind::trace;
};

struct Completion {
  std::vector<int> token_ids;
  std::vector<double> logprobs_new;
  std::vector<double> logprobs_old;
  double reward = 0.0;
  std::vector<Segment> segments;

  std::size_t size() const { return token_ids.size(); }
};

inline void validate(const Completion& c) {
  if (c.logprobs_new.size() != c.token_ids.size() || c.logprobs_old.size() != c.token_ids.size())
    throw DataError("completion: token and logprob arrays differ in length");
  if (c.segments.empty()) return;
  std::size_t cursor = 0;
  for (const auto& s : c.segments) {
    if (s.begin != cursor || s.end < s.begin) throw DataError("completion: segments do not partition the sequence");
    cursor = s.end;
  }
  if (cursor != c.token_ids.size()) throw DataError("completion: segments do not cover the sequence");
}

struct AdvantageGroup {
  std::vector<double> rewards;
  std::vector<double> advantages;
  bool degenerate = false;
};

inline constexpr double kDegenerateStd = 1e-12;

// (R_i - mean) / std with the population standard deviation. Zero-variance
// groups get all-zero advantages.
inline AdvantageGroup compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw UsageError("compute_advantages: a group needs at least 2 rewards");
  AdvantageGroup g;
  g.rewards.assign(rewards.begin(), rewards.end());
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  g.advantages.assign(rewards.size(), 0.0);
  if (!(sd >= kDegenerateStd)) {
    g.degenerate = true;
    return g;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) g.advantages[i] = (rewards[i] - mean) / sd;
  return g;
}

struct TokenRatio {
  double value = 1.0;
  bool clamped = false;
};

inline constexpr double kDefaultRatioCeiling = 1e6;

inline TokenRatio token_ratio(double logprob_new, double logprob_old, double ceiling = kDefaultRatioCeiling) {
  if (!std::isfinite(logprob_new) || !std::isfinite(logprob_old)) throw DataError("token_ratio: non-finite logprob");
  const double d = logprob_new - logprob_old;
  if (d > std::log(ceiling)) return {ceiling, true};
  return {std::exp(d), false};
}

// ---------------------------------------------------------------------------
// Clipped token-level objective
// ---------------------------------------------------------------------------

struct TokenDiagnostics {
  double ratio = 1.0;
  bool clipped = false;  // the clipped branch won the min
  bool clamped = false;  // ratio hit the overflow ceiling
  double term = 0.0;
};

struct ObjectiveResult {
  double value = 0.0;
  std::size_t total_tokens = 0;
  std::size_t clamped_tokens = 0;
  // d value / d logprobs_new, shaped like the group.
  std::vector<std::vector<double>> grad_logprob_new;
  std::vector<std::vector<TokenDiagnostics>> tokens;
};

inline ObjectiveResult grpo_objective(std::span<const Completion> group, const AdvantageGroup& adv, double clip_epsilon,
                                      double ratio_ceiling = kDefaultRatioCeiling) {
  if (group.empty()) throw DataError("grpo_objective: empty group");
  if (adv.advantages.size() != group.size()) throw DataError("grpo_objective: advantages not aligned with completions");
  ObjectiveResult out;
  for (const auto& c : group) {
    validate(c);
    out.total_tokens += c.size();
  }
  if (out.total_tokens == 0) throw DataError("grpo_objective: group has no tokens");
  const double inv_total = 1.0 / static_cast<double>(out.total_tokens);

  out.grad_logprob_new.resize(group.size());
  out.tokens.resize(group.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& c = group[i];
    const double a = adv.advantages[i];
    auto& grad = out.grad_logprob_new[i];
    auto& diag = out.tokens[i];
    grad.assign(c.size(), 0.0);
    diag.resize(c.size());
    double completion_sum = 0.0;
    for (std::size_t t = 0; t < c.size(); ++t) {
      const auto r = token_ratio(c.logprobs_new[t], c.logprobs_old[t], ratio_ceiling);
      const double unclipped = r.value * a;
      const double clipped = std::clamp(r.value, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * a;
      const bool use_clipped = clipped < unclipped;
      const double term = use_clipped ? clipped : unclipped;
      diag[t] = {r.value, use_clipped, r.clamped, term};
      if (r.clamped) ++out.clamped_tokens;
      // d(r * A)/d logprob_new = r * A; the clipped branch is constant.
      grad[t] = (use_clipped || r.clamped) ? 0.0 : unclipped * inv_total;
      completion_sum += term;
    }
    sum += completion_sum;
  }
  out.value = sum * inv_total;
  return out;
}

// ---------------------------------------------------------------------------
// Supervised cold-start loss
// ---------------------------------------------------------------------------

struct SftResult {
  double value = 0.0;
  double answer_nll = 0.0;
  double trace_nll = 0.0;
  std::vector<double> grad_logprob;  // d value / d logprobs_new
};

// alpha * mean NLL(answer tokens) + (1 - alpha) * mean NLL(trace tokens),
// computed from logprobs_new.
inline SftResult sft_loss(const Completion& c, double alpha) {
  validate(c);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("sft_loss: alpha must lie in [0, 1]");
  std::size_t n_answer = 0, n_trace = 0;
  for (const auto& s : c.segments) (s.kind == SegmentKind::answer ? n_answer : n_trace) += s.end - s.begin;
  if (n_answer == 0 || n_trace == 0) throw DataError("sft_loss: both trace and answer segments must be non-empty");

  SftResult out;
  out.grad_logprob.assign(c.size(), 0.0);
  for (const auto& s : c.segments) {
    const bool answer = s.kind == SegmentKind::answer;
    const double weight = answer ? alpha / static_cast<double>(n_answer) : (1.0 - alpha) / static_cast<double>(n_trace);
    for (std::size_t t = s.begin; t < s.end; ++t) {
      (answer ? out.answer_nll : out.trace_nll) -= c.logprobs_new[t];
      out.grad_logprob[t] = -weight;
    }
  }
  out.answer_nll /= static_cast<double>(n_answer);
  out.trace_nll /= static_cast<double>(n_trace);
  out.value = alpha * out.answer_nll + (1.0 - alpha) * out.trace_nll;
  return out;
}

// ---------------------------------------------------------------------------
// Toy autoregressive policy
// ---------------------------------------------------------------------------

// Tabular softmax policy. The context of step t is (prompt symbol, previous
// token); each context owns one row of vocabulary logits.
class ToyPolicy {
 public:
  ToyPolicy(int vocab_size, int max_len, int num_prompts, double temperature = 1.0)
      : vocab_(vocab_size), max_len_(max_len), num_prompts_(num_prompts), temperature_(temperature) {
    if (vocab_ <= 0 || max_len_ <= 0 || num_prompts_ <= 0) throw UsageError("ToyPolicy: sizes must be positive");
    if (!(temperature_ > 0.0)) throw UsageError("ToyPolicy: temperature must be > 0");
    params_.assign(static_cast<std::size_t>(rows() * vocab_), 0.0);
  }

  int vocab_size() const { return vocab_; }
  int max_len() const { return max_len_; }
  int num_prompts() const { return num_prompts_; }
  int rows() const { return num_prompts_ * (vocab_ + 1); }
  double temperature() const { return temperature_; }

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  // prev_token is -1 at the first step.
  int context_row(int prompt, int prev_token) const { return prompt * (vocab_ + 1) + (prev_token + 1); }

  std::span<const double> logits(int row) const {
    return {params_.data() + static_cast<std::size_t>(row * vocab_), static_cast<std::size_t>(vocab_)};
  }

  // softmax(logits / temperature)
  std::vector<double> probabilities(int row) const {
    const auto l = logits(row);
    std::vector<double> p(l.size());
    const double mx = *std::max_element(l.begin(), l.end()) / temperature_;
    double z = 0.0;
    for (std::size_t j = 0; j < l.size(); ++j) z += (p[j] = std::exp(l[j] / temperature_ - mx));
    for (auto& x : p) x /= z;
    return p;
  }

  double logprob(int row, int token) const {
    const auto l = logits(row);
    const double mx = *std::max_element(l.begin(), l.end()) / temperature_;
    double z = 0.0;
    for (double x : l) z += std::exp(x / temperature_ - mx);
    return l[static_cast<std::size_t>(token)] / temperature_ - mx - std::log(z);
  }

  // Per-token log-probabilities of a fixed token sequence.
  std::vector<double> sequence_logprobs(int prompt, std::span<const int> tokens) const {
    std::vector<double> out;
    out.reserve(tokens.size());
    int prev = -1;
    for (int tok : tokens) {
      out.push_back(logprob(context_row(prompt, prev), tok));
      prev = tok;
    }
    return out;
  }

  // Accumulates sum_t g_t * d logprob_t / d params into grad.
  void backprop(int prompt, std::span<const int> tokens, std::span<const double> grad_logprob,
                std::span<double> grad) const {
    int prev = -1;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      const int row = context_row(prompt, prev);
      if (grad_logprob[t] != 0.0) {
        const auto p = probabilities(row);
        double* g = grad.data() + static_cast<std::size_t>(row * vocab_);
        for (int j = 0; j < vocab_; ++j)
          g[j] += grad_logprob[t] * ((j == tokens[t] ? 1.0 : 0.0) - p[static_cast<std::size_t>(j)]) / temperature_;
      }
      prev = tokens[t];
    }
  }

  template <typename Rng>
  std::vector<int> sample(int prompt, Rng& rng) const {
    std::vector<int> tokens;
    tokens.reserve(static_cast<std::size_t>(max_len_));
    int prev = -1;
    for (int t = 0; t < max_len_; ++t) {
      const auto p = probabilities(context_row(prompt, prev));
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      double acc = 0.0;
      int tok = vocab_ - 1;
      for (int j = 0; j < vocab_; ++j) {
        acc += p[static_cast<std::size_t>(j)];
        if (u < acc) {
          tok = j;
          break;
        }
      }
      tokens.push_back(tok);
      prev = tok;
    }
    return tokens;
  }

 private:
  int vocab_;
  int max_len_;
  int num_prompts_;
  double temperature_;
  std::vector<double> params_;
};

// A sampled completion together with the prompt that produced it and the
// frozen sampling-time log-probabilities.
struct ToyRollout {
  int prompt = 0;
  std::vector<int> tokens;
  std::vector<double> logprobs_old;
  std::vector<Segment> segments;
};

inline Completion to_completion(const ToyPolicy& policy, const ToyRollout& r, double reward = 0.0) {
  Completion c;
  c.token_ids = r.tokens;
  c.logprobs_new = policy.sequence_logprobs(r.prompt, r.tokens);
  c.logprobs_old = r.logprobs_old.empty() ? c.logprobs_new : r.logprobs_old;
  c.reward = reward;
  c.segments = r.segments;
  return c;
}

// Objective value and its gradient with respect to the policy parameters.
inline double grpo_objective_and_grad(const ToyPolicy& policy, std::span<const ToyRollout> rollouts,
                                      const AdvantageGroup& adv, double clip_epsilon, std::vector<double>& grad) {
  std::vector<Completion> group;
  group.reserve(rollouts.size());
  for (const auto& r : rollouts) group.push_back(to_completion(policy, r));
  const auto obj = grpo_objective(group, adv, clip_epsilon);
  grad.assign(policy.params().size(), 0.0);
  for (std::size_t i = 0; i < rollouts.size(); ++i)
    policy.backprop(rollouts[i].prompt, rollouts[i].tokens, obj.grad_logprob_new[i], grad);
  return obj.value;
}

inline double sft_loss_and_grad(const ToyPolicy& policy, const ToyRollout& rollout, double alpha,
                                std::vector<double>& grad) {
  const auto res = sft_loss(to_completion(policy, rollout), alpha);
  grad.assign(policy.params().size(), 0.0);
  policy.backprop(rollout.prompt, rollout.tokens, res.grad_logprob, grad);
  return res.value;
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

inline constexpr double kGradientAbsFloor = 1e-7;

// Compares the analytic gradient of `objective` against central differences,
// parameter by parameter. Returns max |analytic - numeric| / max(|analytic|,
// |numeric|, abs_floor). `objective(policy, grad)` returns the value and
// writes the analytic gradient.
template <typename Objective>
double finite_diff_check(ToyPolicy& policy, Objective&& objective, double step, double abs_floor = kGradientAbsFloor) {
  if (!(step > 0.0)) throw UsageError("finite_diff_check: step must be > 0");
  std::vector<double> analytic;
  const double base = objective(std::as_const(policy), analytic);
  if (!std::isfinite(base)) throw DataError("finite_diff_check: objective is not finite");
  std::vector<double> scratch;
  auto params = policy.params();
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + step;
    const double up = objective(std::as_const(policy), scratch);
    params[k] = saved - step;
    const double down = objective(std::as_const(policy), scratch);
    params[k] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw DataError("finite_diff_check: objective is not finite");
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), abs_floor});
    worst = std::max(worst, std::abs(analytic[k] - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Synthetic copy task and trainer
// ---------------------------------------------------------------------------

// Vocabulary: the four template tags followed by `num_symbols` answer symbols
// ("a", "b", ...). A prompt is a symbol index; the correct completion puts that
// symbol inside the answer tags.
class CopyTokenTask {
 public:
  explicit CopyTokenTask(int num_symbols = 4) : num_symbols_(num_symbols) {
    if (num_symbols_ <= 0 || num_symbols_ > 26) throw UsageError("CopyTokenTask: 1..26 symbols");
  }

  static constexpr int kThinkOpenId = 0;
  static constexpr int kThinkCloseId = 1;
  static constexpr int kAnswerOpenId = 2;
  static constexpr int kAnswerCloseId = 3;

  int vocab_size() const { return 4 + num_symbols_; }
  int num_prompts() const { return num_symbols_; }

  std::string symbol(int prompt) const { return std::string(1, static_cast<char>('a' + prompt)); }

  std::string token_text(int id) const {
    switch (id) {
      case kThinkOpenId: return std::string(kThinkOpen);
      case kThinkCloseId: return std::string(kThinkClose);
      case kAnswerOpenId: return std::string(kAnswerOpen);
      case kAnswerCloseId: return std::string(kAnswerClose);
      default: return symbol(id - 4);
    }
  }

  // Tags are concatenated verbatim; symbols are space-separated words.
  std::string decode(std::span<const int> tokens) const {
    std::string out;
    for (int t : tokens) out += t < 4 ? token_text(t) : " " + token_text(t) + " ";
    return out;
  }

  GroundTruth ground_truth(int prompt) const { return GroundTruth{{symbol(prompt)}}; }
  QuestionTask question_task() const { return {Dataset::infoseek, TaskKind::entity}; }

  // Everything up to and including the first </think> is trace; the rest is answer.
  static std::vector<Segment> segments(std::span<const int> tokens) {
    const auto it = std::find(tokens.begin(), tokens.end(), kThinkCloseId);
    const std::size_t split = it == tokens.end() ? 0 : static_cast<std::size_t>(it - tokens.begin()) + 1;
    std::vector<Segment> s;
    if (split > 0) s.push_back({0, split, SegmentKind::trace});
    if (split < tokens.size()) s.push_back({split, tokens.size(), SegmentKind::answer});
    return s;
  }

 private:
  int num_symbols_;
};

struct TrainOptions {
  int iterations = 300;
  double learning_rate = 50.0;
  std::uint64_t seed = 1;
};

struct IterationStats {
  int iteration = 0;
  double mean_task_reward = 0.0;
  double mean_format_reward = 0.0;
  double objective = 0.0;
};

struct TrainResult {
  std::vector<IterationStats> curve;
  int best_iteration = 0;
  double best_mean_task_reward = 0.0;
  std::vector<double> best_params;
};

// Sample a group for one prompt, score it with the rule-based rewards,
// normalise advantages, take one gradient-ascent step. Sampling always uses
// the freshly updated parameters, so every update is on-policy.
inline TrainResult train_toy(ToyPolicy& policy, const CopyTokenTask& task, const PipelineConfig& cfg,
                             const TrainOptions& opts,
                             const std::function<void(const IterationStats&)>& on_iteration = {}) {
  if (cfg.group_size < 2) throw UsageError("train_toy: group_size must be >= 2");
  if (policy.vocab_size() != task.vocab_size() || policy.num_prompts() != task.num_prompts())
    throw UsageError("train_toy: policy and task shapes differ");
  std::mt19937_64 rng(opts.seed);
  TrainResult result;
  result.best_params.assign(policy.params().begin(), policy.params().end());
  result.best_mean_task_reward = -1.0;
  std::vector<double> grad;
  const auto n = static_cast<std::size_t>(cfg.group_size);

  for (int it = 0; it < opts.iterations; ++it) {
    const int prompt = static_cast<int>(rng() % static_cast<std::uint64_t>(task.num_prompts()));
    std::vector<ToyRollout> rollouts(n);
    std::vector<double> rewards(n);
    IterationStats stats;
    stats.iteration = it;
    for (std::size_t g = 0; g < n; ++g) {
      auto& r = rollouts[g];
      r.prompt = prompt;
      r.tokens = policy.sample(prompt, rng);
      r.logprobs_old = policy.sequence_logprobs(prompt, r.tokens);
      r.segments = CopyTokenTask::segments(r.tokens);
      const auto score =
          score_output(task.decode(r.tokens), task.ground_truth(prompt), task.question_task(), cfg.gamma, cfg.delta);
      rewards[g] = score.total;
      stats.mean_task_reward += score.task;
      stats.mean_format_reward += score.format;
    }
    stats.mean_task_reward /= static_cast<double>(n);
    stats.mean_format_reward /= static_cast<double>(n);

    const auto adv = compute_advantages(rewards);
    stats.objective = grpo_objective_and_grad(policy, rollouts, adv, cfg.clip_epsilon, grad);
    auto params = policy.params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      params[k] += opts.learning_rate * grad[k];
      if (!std::isfinite(params[k]))
        throw TrainingDiverged("train_toy: non-finite parameter " + std::to_string(k) + " at iteration " +
                               std::to_string(it) + " (objective " + std::to_string(stats.objective) + ")");
    }

    if (stats.mean_task_reward > result.best_mean_task_reward) {
      result.best_mean_task_reward = stats.mean_task_reward;
      result.best_iteration = it;
      result.best_params.assign(params.begin(), params.end());
    }
    result.curve.push_back(stats);
    if (on_iteration) on_iteration(stats);
  }
  return result;
}

// Mean task reward of `samples` fresh completions per prompt.
inline double evaluate_toy(const ToyPolicy& policy, const CopyTokenTask& task, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double total = 0.0;
  int count = 0;
  for (int p = 0; p < task.num_prompts(); ++p) {
    for (int s = 0; s < samples; ++s) {
      const auto tokens = policy.sample(p, rng);
      total += task_reward(extract_answer(task.decode(tokens)), task.ground_truth(p), task.question_task()).reward;
      ++count;
    }
  }
  return count ? total / count : 0.0;
}

}  // namespace reag
