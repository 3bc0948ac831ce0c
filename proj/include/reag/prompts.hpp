#pragma once

// Prompt templates for the critic, the generator and reasoning-trace
// collection. The template bodies are byte-exact; tests/golden guards them.

#include <map>
#include <span>
#include <string>
#include <string_view>

namespace reag::prompts {

inline constexpr std::string_view kCriticSystem =
    R"(You are a multimodal reasoning assistant specialized in Knowledge-Based Visual Question Answering (KB-VQA).

Your task is to evaluate whether a given text passage provides useful and relevant information for answering a question about an image.

You will be given:

- Image: a visual scene containing entities, actions, and context.

- Question: a natural-language question that refers to the image.

- Text Passage: an external knowledge snippet retrieved from a database.

You must analyze the semantic alignment between the text, the image, and the question.
Follow these steps carefully before giving your final decision:

1. Understand the visual scene: Identify the key objects, people, actions, and context visible in the image.

2. Interpret the question: Determine what information the question seeks (e.g., factual, reasoning, counting, attribute-based).

3. Analyze the text passage: Extract the main claims, facts, and entities mentioned in the text.

Compare for relevance: Assess whether the information in the text:

- Contains at least one sentence that supports answering the question about the image, OR

- Provides background knowledge needed to interpret or reason about the image-question pair.

Important:

- If even a single sentence in the passage is relevant or useful, consider the entire passage as relevant and answer "Yes”.

- If no part of the passage contributes meaningfully to answering the question, answer "No”.

Output only one word:

"Yes" -> if the text provides relevant or useful information for answering the question.

"No" -> if the text is irrelevant or unhelpful.)";

// Trailing spaces after "above:" and "question?" are part of the template.
inline constexpr std::string_view kCriticUser =
    "Here is the question on the image above: \n"
    "\n"
    "{Question}\n"
    "\n"
    "Here is the text passage to analyze:\n"
    "{Passage}\n"
    "\n"
    "Does the text passage contain at least one sentence that may have some information useful to answer the user "
    "question? \n"
    "\"Yes\"/\"No\" answer:";

inline constexpr std::string_view kGeneratorSystem =
    "A conversation between User and Assistant. The user asks a question, and the Assistant solves it. The assistant "
    "first thinks about the reasoning process and then provides the user with the answer. The reasoning process and "
    "answer are enclosed within <think> </think> and <answer> </answer> tags, respectively, i.e., <think>reasoning "
    "process here</think><answer>short answer here</answer>.";

// The generator user prompt is assembled from these pieces: header, then one
// paragraph per passage joined by a blank line, then the closing period.
inline constexpr std::string_view kGeneratorUserHeader =
    "{Question} \n"
    "\n"
    "The following paragraphs may contain useful information to help answer the question correctly:\n"
    "\n";
inline constexpr std::string_view kParagraphOpen = "<paragraph>";
inline constexpr std::string_view kParagraphClose = "</paragraph>";
inline constexpr std::string_view kParagraphSeparator = "\n\n";
inline constexpr std::string_view kGeneratorUserFooter = ".";

inline constexpr std::string_view kTraceSystem =
    R"(You are a multimodal reasoning assistant.

Your goal is to analyze the image, the question, and the retrieved passage, and then produce a hidden reasoning trace that logically leads to the given answer.

The reasoning must be step-by-step, plausible, and based on both the visual evidence and the retrieved text passage.

You MUST explicitly state, within your reasoning trace, whether the passage is relevant or not according to the information provided (i.e., if it is labeled as "irrelevant", your reasoning must clearly and logically explain why it is not relevant, and if it is labeled as "relevant", your reasoning must logically support its relevance).

Do not mention, restate, or hint at the correct answer in the reasoning trace.

Your reasoning trace should include:

- Description of relevant visual evidence (objects, spatial relations, attributes).

- Analysis of the retrieved passage (what it states, whether it supports or contradicts the image/question, and its relevance).

- Logical deduction that connects the visual and textual evidence to reach a conclusion.

Here you have two good examples of reasoning traces:

EXAMPLE 1 with Relevant passage:

Question: {Example 1 Question}

Retrieved Relevant Passage: )"
    "\n"
    R"(
{Example 1 Relevant Passage}

Correct answer: {Example 1 Answer}

Output:

<think> {Example 1 Reasoning Trace} </think>

<answer> {Example 1 Answer} </answer>

EXAMPLE 2 with Irrelevant passage:

Question: {Example 2 Question}

Retrieved Irrelevant Passage: )"
    "\n"
    R"(
{Example 2 Irrelevant Passage}

Correct answer: {Example 2 Answer}


Output:

<think> {Example 2 Reasoning Trace} </think>

<answer> {Example 2 Answer} </answer>

Output your reasoning and the correct answer using the exact format below:

<think> [your reasoning trace here] </think>

<answer> [the provided answer] </answer>)";

inline constexpr std::string_view kTraceUser =
    "Question: {Question}\n"
    "\n"
    "Retrieved {Relevant} Passage: {Passage}\n"
    "\n"
    "Correct Answer: {Answer}\n"
    "\n"
    "Please produce a reasoning trace that could logically lead to this answer, based on both the image and the "
    "retrieved passage if relevant. \n"
    "\n"
    "Do not mention or hint at the answer explicitly in your reasoning.\n"
    "\n"
    "Concentrate on providing a coherent explanation that supports the indicated relevance or irrelevance of the "
    "passage in the reasoning trace, integrating both textual and visual evidence.\n"
    "\n"
    "Make sure to insert the correct answer between the answer tags.";

// Single left-to-right pass: substituted values are never rescanned, and
// placeholders without a binding are copied through.
inline std::string substitute(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name = tmpl.substr(i + 1, close - i - 1);
        if (auto it = values.find(name); it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

inline std::string critic_user(std::string_view question, std::string_view passage) {
  return substitute(kCriticUser, {{"Question", std::string(question)}, {"Passage", std::string(passage)}});
}

// With no passages the question alone is sent.
inline std::string generator_user(std::string_view question, std::span<const std::string> passages) {
  if (passages.empty()) return std::string(question);
  std::string out = substitute(kGeneratorUserHeader, {{"Question", std::string(question)}});
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (i > 0) out += kParagraphSeparator;
    out += kParagraphOpen;
    out += passages[i];
    out += kParagraphClose;
  }
  out += kGeneratorUserFooter;
  return out;
}

// The un-substituted generator user prompt, with {Passage_1} ... {Passage_j}.
inline std::string generator_user_template() {
  std::string out(kGeneratorUserHeader);
  out += kParagraphOpen;
  out += "{Passage_1}";
  out += kParagraphClose;
  out += kParagraphSeparator;
  out += "...";
  out += kParagraphSeparator;
  out += kParagraphOpen;
  out += "{Passage_j}";
  out += kParagraphClose;
  out += kGeneratorUserFooter;
  return out;
}

struct TraceExample {
  std::string question;
  std::string passage;
  std::string answer;
  std::string reasoning;
};

inline std::string trace_system(const TraceExample& relevant, const TraceExample& irrelevant) {
  return substitute(kTraceSystem, {{"Example 1 Question", relevant.question},
                                   {"Example 1 Relevant Passage", relevant.passage},
                                   {"Example 1 Answer", relevant.answer},
                                   {"Example 1 Reasoning Trace", relevant.reasoning},
                                   {"Example 2 Question", irrelevant.question},
                                   {"Example 2 Irrelevant Passage", irrelevant.passage},
                                   {"Example 2 Answer", irrelevant.answer},
                                   {"Example 2 Reasoning Trace", irrelevant.reasoning}});
}

inline std::string trace_user(std::string_view question, bool relevant, std::string_view passage,
                              std::string_view answer) {
  return substitute(kTraceUser, {{"Question", std::string(question)},
                                 {"Relevant", relevant ? "Relevant" : "Irrelevant"},
                                 {"Passage", std::string(passage)},
                                 {"Answer", std::string(answer)}});
}

}  // namespace reag::prompts
