#pragma once

// Rule-based verification of generated answers.
//
//   extract_answer  -> pull the prediction out of a raw completion
//   normalize       -> canonical text plus optional scalar / interval parse
//   task_reward     -> exact match, numeric match (psi_num) or item-set IoU,
//                      maximised over ground-truth alternatives
//   format_reward   -> 1 iff the completion is exactly <think>..</think><answer>..</answer>
//   total_reward    -> gamma * task + delta * format

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "reag/core.hpp"

namespace reag {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";

// Absolute tolerance for scalar-vs-scalar numeric matches.
inline constexpr double kScalarTolerance = 0.1;
// Slack absorbing binary rounding of decimal inputs, e.g. 3.92 - 3.82.
inline constexpr double kScalarSlack = 1e-9;
inline constexpr double kIouThreshold = 0.5;

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

enum class ExtractionPath { answer_tags, after_answer_open, after_think_close, whole_output };

inline std::string_view to_string(ExtractionPath p) {
  switch (p) {
    case ExtractionPath::answer_tags: return "answer_tags";
    case ExtractionPath::after_answer_open: return "after_answer_open";
    case ExtractionPath::after_think_close: return "after_think_close";
    case ExtractionPath::whole_output: return "whole_output";
  }
  return "whole_output";
}

struct ExtractedAnswer {
  std::string raw_output;
  std::string extracted;
  ExtractionPath extraction_path = ExtractionPath::whole_output;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n\f\v");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\f\v");
  return std::string(s.substr(b, e - b + 1));
}

// Removes the four template tags and chat-control tokens of the form <|...|>.
inline std::string strip_special_tokens(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '<') {
      bool matched = false;
      for (auto tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose}) {
        if (s.substr(i, tag.size()) == tag) {
          i += tag.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
      if (s.substr(i, 2) == "<|") {
        const auto end = s.find("|>", i + 2);
        if (end != std::string_view::npos) {
          i = end + 2;
          continue;
        }
      }
    }
    out += s[i++];
  }
  return out;
}

inline ExtractedAnswer extract_answer(std::string_view output) {
  ExtractedAnswer out;
  out.raw_output = std::string(output);
  std::string_view body;
  if (const auto open = output.find(kAnswerOpen); open != std::string_view::npos) {
    const auto start = open + kAnswerOpen.size();
    if (const auto close = output.find(kAnswerClose, start); close != std::string_view::npos) {
      body = output.substr(start, close - start);
      out.extraction_path = ExtractionPath::answer_tags;
    } else {
      body = output.substr(start);
      out.extraction_path = ExtractionPath::after_answer_open;
    }
  } else if (const auto think = output.find(kThinkClose); think != std::string_view::npos) {
    body = output.substr(think + kThinkClose.size());
    out.extraction_path = ExtractionPath::after_think_close;
  } else {
    body = output;
    out.extraction_path = ExtractionPath::whole_output;
  }
  out.extracted = trim(strip_special_tokens(body));
  return out;
}

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

struct NormalizedAnswer {
  std::string text;
  std::optional<double> parsed_number;
  std::optional<Interval> parsed_interval;

  bool operator==(const NormalizedAnswer&) const = default;
};

namespace normalize_detail {

// Shipped contraction table (20 entries).
inline constexpr std::array<std::pair<std::string_view, std::string_view>, 20> kContractions{{
    {"don't", "do not"},       {"doesn't", "does not"},   {"didn't", "did not"},   {"isn't", "is not"},
    {"aren't", "are not"},     {"wasn't", "was not"},     {"weren't", "were not"}, {"can't", "cannot"},
    {"couldn't", "could not"}, {"won't", "will not"},     {"wouldn't", "would not"},
    {"shouldn't", "should not"}, {"haven't", "have not"}, {"hasn't", "has not"},   {"hadn't", "had not"},
    {"it's", "it is"},         {"that's", "that is"},     {"there's", "there is"}, {"i'm", "i am"},
    {"they're", "they are"},
}};

inline constexpr std::array<std::string_view, 21> kUnits{
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty"};

inline constexpr std::array<std::string_view, 8> kTens{"twenty", "thirty", "forty", "fifty",
                                                       "sixty",  "seventy", "eighty", "ninety"};

inline std::optional<int> unit_value(std::string_view w) {
  for (std::size_t i = 0; i < kUnits.size(); ++i)
    if (kUnits[i] == w) return static_cast<int>(i);
  return std::nullopt;
}

inline std::optional<int> tens_value(std::string_view w) {
  for (std::size_t i = 0; i < kTens.size(); ++i)
    if (kTens[i] == w) return static_cast<int>(20 + 10 * i);
  return std::nullopt;
}

inline bool is_digit(char c) { return c >= '0' && c <= '9'; }

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const auto start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.emplace_back(s.substr(start, i - start));
  }
  return out;
}

inline std::string lowercase_ascii(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    // Typographic apostrophe and dashes become their ASCII forms.
    if (s.substr(i, 3) == "\xE2\x80\x99" || s.substr(i, 3) == "\xE2\x80\x98") {
      out += '\'';
      i += 2;
    } else if (s.substr(i, 3) == "\xE2\x80\x93" || s.substr(i, 3) == "\xE2\x80\x94") {
      out += '-';
      i += 2;
    } else {
      const auto u = static_cast<unsigned char>(s[i]);
      out += u < 0x80 ? static_cast<char>(std::tolower(u)) : s[i];
    }
  }
  return out;
}

inline std::string expand_contractions(std::string_view s) {
  std::string out;
  for (const auto& tok : split_ws(s)) {
    // Match the token's core, ignoring surrounding punctuation other than apostrophes.
    std::size_t b = 0, e = tok.size();
    auto keep = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '\''; };
    while (b < e && !keep(tok[b])) ++b;
    while (e > b && !keep(tok[e - 1])) --e;
    const std::string_view core(tok.data() + b, e - b);
    std::string replaced = tok;
    for (const auto& [from, to] : kContractions) {
      if (core == from) {
        replaced = tok.substr(0, b) + std::string(to) + tok.substr(e);
        break;
      }
    }
    if (!out.empty()) out += ' ';
    out += replaced;
  }
  return out;
}

inline std::string strip_punctuation(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 8);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    const char prev = out.empty() ? ' ' : out.back();
    const char next = i + 1 < s.size() ? s[i + 1] : ' ';
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x80 || std::isalnum(u) || std::isspace(u)) {
      out += std::isspace(u) ? ' ' : c;
    } else if (c == '.') {
      out += is_digit(prev) && is_digit(next) ? "." : " ";
    } else if (c == ',') {
      if (!(is_digit(prev) && is_digit(next))) out += ' ';
    } else if (c == '-') {
      if (is_digit(prev) && is_digit(next)) out += " to ";
      else if (prev == ' ' && is_digit(next)) out += '-';
      else out += ' ';
    } else if (c == '\'') {
      // dropped: "o'neill" -> "oneill"
    } else {
      out += ' ';
    }
  }
  return out;
}

// "-3.82km" -> -3.82. The token must start with a number.
inline std::optional<double> leading_number(std::string_view tok) {
  std::size_t i = 0;
  if (i < tok.size() && tok[i] == '-') ++i;
  const auto digits_start = i;
  while (i < tok.size() && is_digit(tok[i])) ++i;
  if (i == digits_start) return std::nullopt;
  if (i + 1 < tok.size() && tok[i] == '.' && is_digit(tok[i + 1])) {
    ++i;
    while (i < tok.size() && is_digit(tok[i])) ++i;
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + i, v);
  if (ec != std::errc{}) return std::nullopt;
  return v;
}

inline std::optional<double> whole_number(std::string_view tok) {
  auto v = leading_number(tok);
  if (!v) return std::nullopt;
  // Reject trailing junk for interval endpoints such as "3x".
  std::size_t i = tok.front() == '-' ? 1 : 0;
  while (i < tok.size() && (is_digit(tok[i]) || tok[i] == '.')) ++i;
  return i == tok.size() ? v : std::nullopt;
}

inline std::optional<Interval> parse_interval(const std::vector<std::string>& t) {
  auto make = [](double a, double b) { return Interval{std::min(a, b), std::max(a, b)}; };
  if (t.size() >= 3) {
    if (auto a = whole_number(t[0]); a && t[1] == "to")
      if (auto b = leading_number(t[2])) return make(*a, *b);
  }
  if (t.size() >= 4 && (t[0] == "between" || t[0] == "from")) {
    const std::string_view joiner = t[0] == "between" ? "and" : "to";
    if (auto a = whole_number(t[1]); a && t[2] == joiner)
      if (auto b = leading_number(t[3])) return make(*a, *b);
  }
  return std::nullopt;
}

}  // namespace normalize_detail

// Lowercase, expand contractions, strip punctuation, drop articles, map number
// words to digits, collapse whitespace; then parse an interval ("X to Y",
// "X-Y", "between X and Y") or, failing that, a leading scalar. A point
// interval is reported as a scalar.
inline NormalizedAnswer normalize(std::string_view answer) {
  using namespace normalize_detail;
  const std::string cleaned = strip_punctuation(expand_contractions(lowercase_ascii(answer)));

  std::vector<std::string> tokens;
  const auto raw = split_ws(cleaned);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& w = raw[i];
    if (w == "a" || w == "an" || w == "the") continue;
    if (auto tens = tens_value(w)) {
      if (i + 1 < raw.size()) {
        if (auto unit = unit_value(raw[i + 1]); unit && *unit >= 1 && *unit <= 9) {
          tokens.push_back(std::to_string(*tens + *unit));
          ++i;
          continue;
        }
      }
      tokens.push_back(std::to_string(*tens));
      continue;
    }
    if (auto unit = unit_value(w)) {
      tokens.push_back(std::to_string(*unit));
      continue;
    }
    tokens.push_back(w);
  }

  NormalizedAnswer out;
  for (const auto& t : tokens) {
    if (!out.text.empty()) out.text += ' ';
    out.text += t;
  }
  if (auto iv = parse_interval(tokens)) {
    if (iv->lo == iv->hi) out.parsed_number = iv->lo;
    else out.parsed_interval = iv;
  } else if (!tokens.empty()) {
    out.parsed_number = leading_number(tokens.front());
  }
  return out;
}

// Shortest round-trip decimal form of a number.
inline std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Ground-truth alternatives expressed in normalised form.
inline NormalizedAnswer normalize_value(const AnswerValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return normalize(*s);
  if (const auto* d = std::get_if<double>(&v)) return NormalizedAnswer{format_number(*d), *d, std::nullopt};
  const auto& iv = std::get<Interval>(v);
  NormalizedAnswer out{format_number(iv.lo) + " to " + format_number(iv.hi), std::nullopt, std::nullopt};
  if (iv.lo == iv.hi) out.parsed_number = iv.lo;
  else out.parsed_interval = iv;
  return out;
}

// ---------------------------------------------------------------------------
// Matchers
// ---------------------------------------------------------------------------

enum class Matcher { exact, numeric_scalar, scalar_in_interval, interval_iou, set_iou };

inline std::string_view to_string(Matcher m) {
  switch (m) {
    case Matcher::exact: return "exact";
    case Matcher::numeric_scalar: return "numeric_scalar";
    case Matcher::scalar_in_interval: return "scalar_in_interval";
    case Matcher::interval_iou: return "interval_iou";
    case Matcher::set_iou: return "set_iou";
  }
  return "exact";
}

inline double interval_iou(const Interval& a, const Interval& b) {
  const double inter = std::min(a.hi, b.hi) - std::max(a.lo, b.lo);
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(a.hi, b.hi) - std::min(a.lo, b.lo);
  return uni > 0.0 ? inter / uni : 0.0;
}

struct MatchResult {
  int reward = 0;
  Matcher matcher = Matcher::exact;
};

// Numeric match between a prediction and one ground-truth alternative.
inline MatchResult psi_num(const NormalizedAnswer& pred, const NormalizedAnswer& gt) {
  if (pred.parsed_number && gt.parsed_number)
    return {std::abs(*pred.parsed_number - *gt.parsed_number) <= kScalarTolerance + kScalarSlack ? 1 : 0,
            Matcher::numeric_scalar};
  if (pred.parsed_number && gt.parsed_interval)
    return {gt.parsed_interval->contains(*pred.parsed_number) ? 1 : 0, Matcher::scalar_in_interval};
  if (pred.parsed_interval && gt.parsed_interval)
    return {interval_iou(*pred.parsed_interval, *gt.parsed_interval) >= kIouThreshold ? 1 : 0, Matcher::interval_iou};
  if (pred.parsed_interval) return {0, Matcher::interval_iou};
  return {0, gt.parsed_interval ? Matcher::scalar_in_interval : Matcher::numeric_scalar};
}

inline MatchResult psi_num(const NormalizedAnswer& pred, const AnswerValue& gt) { return psi_num(pred, normalize_value(gt)); }

// Items of a multi-answer string: split on ",", "&" and " and ", each
// normalised, empties dropped.
inline std::set<std::string> answer_items(std::string_view s) {
  std::set<std::string> items;
  const std::string lowered = normalize_detail::lowercase_ascii(s);
  std::size_t start = 0;
  auto push = [&](std::size_t end) {
    auto item = normalize(std::string_view(lowered).substr(start, end - start)).text;
    if (!item.empty()) items.insert(std::move(item));
  };
  for (std::size_t i = 0; i < lowered.size();) {
    if (lowered[i] == ',' || lowered[i] == '&') {
      push(i);
      start = ++i;
    } else if (lowered.compare(i, 5, " and ") == 0) {
      push(i);
      i += 5;
      start = i;
    } else {
      ++i;
    }
  }
  push(lowered.size());
  return items;
}

inline double set_iou(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::set<std::string> answer_items(const AnswerValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return answer_items(std::string_view(*s));
  return {normalize_value(v).text};
}

struct TaskScore {
  int reward = 0;
  Matcher matcher = Matcher::exact;
  std::optional<std::size_t> matched_alternative;
};

// Maximum over ground-truth alternatives; the first alternative reaching the
// maximum is reported.
inline TaskScore task_reward(const ExtractedAnswer& pred, const GroundTruth& gt, const QuestionTask& task) {
  TaskScore best;
  bool have_matcher = false;
  if (task.dataset == Dataset::infoseek && task.kind == TaskKind::numerical) {
    const auto p = normalize(pred.extracted);
    for (std::size_t i = 0; i < gt.alternatives.size(); ++i) {
      const auto m = psi_num(p, gt.alternatives[i]);
      if (!have_matcher || m.reward > best.reward) {
        best.matcher = m.matcher;
        have_matcher = true;
      }
      if (m.reward > best.reward) {
        best.reward = m.reward;
        best.matched_alternative = i;
      }
    }
    return best;
  }
  if (task.dataset == Dataset::evqa && task.kind == TaskKind::multi) {
    best.matcher = Matcher::set_iou;
    const auto p = answer_items(std::string_view(pred.extracted));
    for (std::size_t i = 0; i < gt.alternatives.size(); ++i) {
      if (set_iou(p, answer_items(gt.alternatives[i])) >= kIouThreshold) {
        best.reward = 1;
        best.matched_alternative = i;
        break;
      }
    }
    return best;
  }
  best.matcher = Matcher::exact;
  const auto p = normalize(pred.extracted).text;
  for (std::size_t i = 0; i < gt.alternatives.size(); ++i) {
    if (p == normalize_value(gt.alternatives[i]).text) {
      best.reward = 1;
      best.matched_alternative = i;
      break;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Format and total reward
// ---------------------------------------------------------------------------

namespace format_detail {

inline std::size_t count(std::string_view s, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string_view::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

}  // namespace format_detail

inline int format_reward(std::string_view output) {
  using format_detail::count;
  for (auto tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose})
    if (count(output, tag) != 1) return 0;
  const auto t0 = output.find(kThinkOpen);
  const auto t1 = output.find(kThinkClose);
  const auto a0 = output.find(kAnswerOpen);
  const auto a1 = output.find(kAnswerClose);
  if (!(t0 < t1 && t1 < a0 && a0 < a1)) return 0;
  if (!is_blank(output.substr(0, t0))) return 0;
  if (!is_blank(output.substr(t1 + kThinkClose.size(), a0 - t1 - kThinkClose.size()))) return 0;
  if (!is_blank(output.substr(a1 + kAnswerClose.size()))) return 0;
  return 1;
}

inline double total_reward(int task, int format, double gamma, double delta) {
  return gamma * static_cast<double>(task) + delta * static_cast<double>(format);
}

struct RewardBreakdown {
  int task = 0;
  int format = 0;
  double total = 0.0;
  Matcher matcher = Matcher::exact;
  std::optional<std::size_t> matched_alternative;
  ExtractedAnswer answer;
};

inline RewardBreakdown score_output(std::string_view output, const GroundTruth& gt, const QuestionTask& task,
                                    double gamma, double delta) {
  RewardBreakdown out;
  out.answer = extract_answer(output);
  const auto ts = task_reward(out.answer, gt, task);
  out.task = ts.reward;
  out.matcher = ts.matcher;
  out.matched_alternative = ts.matched_alternative;
  out.format = format_reward(output);
  out.total = total_reward(out.task, out.format, gamma, delta);
  return out;
}

inline void to_json(json& j, const ExtractedAnswer& a) {
  j = json{{"extracted", a.extracted}, {"extraction_path", to_string(a.extraction_path)}};
}

inline void to_json(json& j, const RewardBreakdown& r) {
  j = json{{"task", r.task},
           {"format", r.format},
           {"total", r.total},
           {"matcher", to_string(r.matcher)},
           {"extracted", r.answer.extracted},
           {"extraction_path", to_string(r.answer.extraction_path)}};
  j["matched_alternative"] = r.matched_alternative ? json(*r.matched_alternative) : json(nullptr);
}

}  // namespace reag
