#pragma once

// JSON-over-HTTP backends for chat-style inference servers.
//
// Wire contract (all POST, application/json):
//
//   /v1/generate  {model, messages:[{role, content:[{type:"text"|"image", value}]}],
//                  temperature, repetition_penalty, max_tokens, logprobs}
//              -> {text, token_logprobs?:[{token, logprob, top_logprobs?:{token: logprob}}]}
//   /v1/embed     {model, input:{type:"text"|"image", value}} -> {embedding:[...]}
//   /v1/region    {model, image, subject} -> {crop: string | null}
//
// The client never looks inside generated text; bytes are passed through.

#include <algorithm>
#include <chrono>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>

#include "reag/backends.hpp"
#include "reag/prompts.hpp"

namespace reag {

class HttpClient {
 public:
  HttpClient(std::string endpoint, std::string model, std::chrono::milliseconds timeout, int max_in_flight = 4)
      : endpoint_(std::move(endpoint)),
        model_(std::move(model)),
        timeout_(timeout),
        slots_(std::make_shared<std::counting_semaphore<1024>>(std::clamp(max_in_flight, 1, 1024))) {
    while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
    if (endpoint_.empty()) throw UsageError("http backend requires an endpoint");
  }

  const std::string& model() const { return model_; }

  // One retry on transport failure; HTTP status errors are not retried.
  json post(const std::string& path, const json& body) const {
    const std::string payload = body.dump();
    slots_->acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{*slots_};

    std::optional<BackendError> last;
    for (int attempt = 0; attempt < 2; ++attempt) {
      httplib::Client cli(endpoint_);
      cli.set_connection_timeout(timeout_);
      cli.set_read_timeout(timeout_);
      cli.set_write_timeout(timeout_);
      const auto started = std::chrono::steady_clock::now();
      auto res = cli.Post(path, payload, "application/json");
      if (!res) {
        const auto elapsed = std::chrono::steady_clock::now() - started;
        const bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                               (res.error() == httplib::Error::Read && elapsed >= timeout_);
        last.emplace(timed_out ? BackendError::Reason::timeout : BackendError::Reason::transport,
                     endpoint_ + path + ": " + (timed_out ? "timed out" : httplib::to_string(res.error())));
        continue;
      }
      if (res->status < 200 || res->status >= 300)
        throw BackendError(BackendError::Reason::status,
                           endpoint_ + path + ": HTTP " + std::to_string(res->status) + " " + res->body, res->status);
      try {
        return json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw BackendError(BackendError::Reason::malformed, endpoint_ + path + ": malformed reply: " + e.what());
      }
    }
    throw *last;
  }

 private:
  std::string endpoint_;
  std::string model_;
  std::chrono::milliseconds timeout_;
  std::shared_ptr<std::counting_semaphore<1024>> slots_;
};

inline json generation_request_to_json(const std::string& model, const GenerationRequest& req) {
  json user_content = json::array();
  for (const auto& ref : req.image_refs) user_content.push_back({{"type", "image"}, {"value", ref}});
  user_content.push_back({{"type", "text"}, {"value", req.user_prompt}});
  json messages = json::array();
  messages.push_back({{"role", "system"}, {"content", json::array({{{"type", "text"}, {"value", req.system_prompt}}})}});
  messages.push_back({{"role", "user"}, {"content", user_content}});
  return json{{"model", model},
              {"messages", messages},
              {"temperature", req.temperature},
              {"repetition_penalty", req.repetition_penalty},
              {"max_tokens", req.max_tokens},
              {"logprobs", req.want_logprobs}};
}

inline GenerationResult generation_result_from_json(const json& j, bool want_logprobs) {
  if (!j.is_object() || !j.contains("text") || !j.at("text").is_string())
    throw BackendError(BackendError::Reason::malformed, "generation reply lacks a 'text' string");
  GenerationResult out;
  out.text = j.at("text").get<std::string>();
  if (auto it = j.find("token_logprobs"); it != j.end() && it->is_array()) {
    try {
      for (const auto& t : *it) {
        TokenLogprob tl;
        tl.token = t.at("token").get<std::string>();
        tl.logprob = t.at("logprob").get<double>();
        if (auto top = t.find("top_logprobs"); top != t.end() && top->is_object())
          for (const auto& [tok, lp] : top->items()) tl.top[tok] = lp.get<double>();
        out.token_logprobs.push_back(std::move(tl));
      }
    } catch (const json::exception& e) {
      throw BackendError(BackendError::Reason::malformed, std::string("bad token_logprobs entry: ") + e.what());
    }
  }
  if (want_logprobs && out.token_logprobs.empty())
    throw BackendError(BackendError::Reason::missing_logprobs, "logprobs requested but the reply carries none");
  return out;
}

class HttpGenerator final : public GeneratorBackend {
 public:
  explicit HttpGenerator(HttpClient client) : client_(std::move(client)) {}

  GenerationResult generate(const GenerationRequest& request) const override {
    if (!(request.temperature > 0.0)) throw DataError("generation temperature must be > 0");
    return generation_result_from_json(client_.post("/v1/generate", generation_request_to_json(client_.model(), request)),
                                       request.want_logprobs);
  }

 private:
  HttpClient client_;
};

// Critic served by a chat endpoint: one-token generation with logprobs.
class HttpCritic final : public CriticBackend {
 public:
  explicit HttpCritic(HttpClient client) : client_(std::move(client)) {}

  double yes_probability(const Query& query, const Passage& passage) const override {
    GenerationRequest req;
    req.system_prompt = std::string(prompts::kCriticSystem);
    req.user_prompt = prompts::critic_user(query.question, passage.text);
    req.image_refs = {query.image_ref};
    req.max_tokens = 1;
    req.want_logprobs = true;
    auto result = generation_result_from_json(client_.post("/v1/generate", generation_request_to_json(client_.model(), req)),
                                              true);
    return yes_probability_from_logprobs(result.token_logprobs.front());
  }

 private:
  HttpClient client_;
};

class HttpEmbedder final : public EmbedderBackend {
 public:
  explicit HttpEmbedder(HttpClient client) : client_(std::move(client)) {}

  EmbeddingVector embed(const Resource& resource) const override {
    json body{{"model", client_.model()},
              {"input", {{"type", resource.kind == Resource::Kind::image ? "image" : "text"}, {"value", resource.value}}}};
    const json reply = client_.post("/v1/embed", body);
    try {
      return EmbeddingVector(reply.at("embedding").get<std::vector<double>>());
    } catch (const json::exception& e) {
      throw BackendError(BackendError::Reason::malformed, std::string("embedding reply: ") + e.what());
    } catch (const DataError& e) {
      throw BackendError(BackendError::Reason::malformed, std::string("embedding reply: ") + e.what());
    }
  }

 private:
  HttpClient client_;
};

class HttpRegionProposer final : public RegionProposerBackend {
 public:
  explicit HttpRegionProposer(HttpClient client) : client_(std::move(client)) {}

  std::optional<std::string> propose_region(const std::string& image_ref, const std::string& subject) const override {
    if (subject.empty()) throw DataError("propose_region: subject must be non-empty");
    const json reply = client_.post("/v1/region", {{"model", client_.model()}, {"image", image_ref}, {"subject", subject}});
    if (!reply.is_object() || !reply.contains("crop"))
      throw BackendError(BackendError::Reason::malformed, "region reply lacks 'crop'");
    const auto& crop = reply.at("crop");
    if (crop.is_null()) return std::nullopt;
    if (!crop.is_string()) throw BackendError(BackendError::Reason::malformed, "region 'crop' must be a string or null");
    return crop.get<std::string>();
  }

 private:
  HttpClient client_;
};

}  // namespace reag
