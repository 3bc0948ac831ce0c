#pragma once

// Backend specifications and the TOML-style configuration file.
//
//   [pipeline]            any PipelineConfig field, e.g. top_k = 20
//   [embedder] [critic] [generator] [region]
//     kind = "mock" | "http"
//     endpoint = "http://host:port"   (http)
//     model = "name"                  (http)
//     timeout_ms = 30000
//     seed = 7                        (mock)
//     ...mock fixture options, paths relative to the config file
//
// REAG_ENDPOINT, REAG_MODEL and REAG_TIMEOUT_MS override every backend section.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "reag/backends.hpp"
#include "reag/core.hpp"
#include "reag/http_backends.hpp"

namespace reag {

enum class BackendKind { mock, http };

struct BackendSpec {
  BackendKind kind = BackendKind::mock;
  std::optional<std::string> endpoint;
  std::optional<std::string> model_name;
  std::chrono::milliseconds timeout{30000};
  std::optional<std::uint64_t> seed = 0;
  // Mock fixture options (dim, overrides, script, fallback, table, ...).
  std::map<std::string, std::string> options;
};

inline void validate(const BackendSpec& spec, const std::string& section) {
  if (spec.kind == BackendKind::http && (!spec.endpoint || spec.endpoint->empty()))
    throw UsageError("[" + section + "] http backend requires an endpoint");
  if (spec.kind == BackendKind::mock && !spec.seed) throw UsageError("[" + section + "] mock backend requires a seed");
  if (spec.timeout.count() <= 0) throw UsageError("[" + section + "] timeout_ms must be > 0");
}

struct AppConfig {
  PipelineConfig pipeline;
  BackendSpec embedder;
  BackendSpec critic;
  BackendSpec generator;
  BackendSpec region;
  std::filesystem::path base_dir = ".";
};

using ConfigTable = std::map<std::string, std::map<std::string, json>>;

// Parses `[section]` headers and `key = value` lines. Values are quoted
// strings, booleans, integers or reals; `#` starts a comment.
inline ConfigTable parse_config_text(const std::string& text) {
  ConfigTable table;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    // Strip comments outside quotes.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    json value;
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"') {
      value = raw.substr(1, raw.size() - 2);
    } else if (raw == "true" || raw == "false") {
      value = raw == "true";
    } else {
      try {
        value = json::parse(raw);
      } catch (const json::exception&) {
        throw UsageError("config line " + std::to_string(lineno) + ": cannot parse value '" + raw + "'");
      }
      if (!value.is_number()) throw UsageError("config line " + std::to_string(lineno) + ": unsupported value '" + raw + "'");
    }
    table[section][key] = value;
  }
  return table;
}

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

inline std::optional<std::string> process_env(const char* name) {
  if (const char* v = std::getenv(name)) return std::string(v);
  return std::nullopt;
}

inline BackendSpec backend_spec_from(const std::map<std::string, json>& kv) {
  BackendSpec spec;
  for (const auto& [key, value] : kv) {
    auto as_string = [&] { return value.is_string() ? value.get<std::string>() : value.dump(); };
    if (key == "kind") {
      const auto k = as_string();
      if (k == "mock") spec.kind = BackendKind::mock;
      else if (k == "http") spec.kind = BackendKind::http;
      else throw UsageError("unknown backend kind '" + k + "'");
    } else if (key == "endpoint") {
      spec.endpoint = as_string();
    } else if (key == "model") {
      spec.model_name = as_string();
    } else if (key == "timeout_ms") {
      spec.timeout = std::chrono::milliseconds(value.get<long long>());
    } else if (key == "seed") {
      spec.seed = value.get<std::uint64_t>();
    } else {
      spec.options[key] = as_string();
    }
  }
  return spec;
}

inline void apply_env_overrides(BackendSpec& spec, const EnvLookup& env) {
  if (auto v = env("REAG_ENDPOINT")) spec.endpoint = *v;
  if (auto v = env("REAG_MODEL")) spec.model_name = *v;
  if (auto v = env("REAG_TIMEOUT_MS")) {
    try {
      spec.timeout = std::chrono::milliseconds(std::stoll(*v));
    } catch (const std::exception&) {
      throw UsageError("REAG_TIMEOUT_MS is not an integer: '" + *v + "'");
    }
  }
}

inline AppConfig parse_app_config(const std::string& text, const std::filesystem::path& base_dir = ".",
                                  const EnvLookup& env = process_env) {
  const ConfigTable table = parse_config_text(text);
  AppConfig cfg;
  cfg.base_dir = base_dir;
  for (const auto& [section, kv] : table) {
    if (section == "pipeline") {
      json j = json::object();
      for (const auto& [k, v] : kv) j[k] = v;
      try {
        cfg.pipeline = j.get<PipelineConfig>();
      } catch (const json::exception& e) {
        throw UsageError(std::string("[pipeline] ") + e.what());
      }
    } else if (section == "embedder") {
      cfg.embedder = backend_spec_from(kv);
    } else if (section == "critic") {
      cfg.critic = backend_spec_from(kv);
    } else if (section == "generator") {
      cfg.generator = backend_spec_from(kv);
    } else if (section == "region") {
      cfg.region = backend_spec_from(kv);
    } else {
      throw UsageError("unknown config section [" + section + "]");
    }
  }
  for (auto* spec : {&cfg.embedder, &cfg.critic, &cfg.generator, &cfg.region}) apply_env_overrides(*spec, env);
  validate(cfg.embedder, "embedder");
  validate(cfg.critic, "critic");
  validate(cfg.generator, "generator");
  validate(cfg.region, "region");
  validated(cfg.pipeline);
  return cfg;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline AppConfig load_app_config(const std::filesystem::path& path, const EnvLookup& env = process_env) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return parse_app_config(text, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path(), env);
}

namespace detail {

inline json load_fixture_json(const AppConfig& cfg, const std::string& rel) {
  const auto path = cfg.base_dir / rel;
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw DataError("malformed fixture '" + path.string() + "': " + e.what());
  }
}

inline HttpClient http_client(const BackendSpec& spec, int in_flight) {
  return HttpClient(*spec.endpoint, spec.model_name.value_or(""), spec.timeout, in_flight);
}

inline std::string option(const BackendSpec& spec, const std::string& key, const std::string& fallback = "") {
  auto it = spec.options.find(key);
  return it == spec.options.end() ? fallback : it->second;
}

}  // namespace detail

inline Backends make_backends(const AppConfig& cfg) {
  Backends b;
  const int in_flight = cfg.pipeline.critic_in_flight;

  if (cfg.embedder.kind == BackendKind::http) {
    b.embedder = std::make_shared<HttpEmbedder>(detail::http_client(cfg.embedder, in_flight));
  } else {
    MockEmbedder::Overrides overrides;
    if (auto f = detail::option(cfg.embedder, "overrides"); !f.empty())
      overrides = detail::load_fixture_json(cfg, f).get<MockEmbedder::Overrides>();
    b.embedder = std::make_shared<MockEmbedder>(*cfg.embedder.seed, std::stoul(detail::option(cfg.embedder, "dim", "64")),
                                                std::move(overrides));
  }

  if (cfg.critic.kind == BackendKind::http) {
    b.critic = std::make_shared<HttpCritic>(detail::http_client(cfg.critic, in_flight));
  } else {
    MockCritic::Overrides overrides;
    if (auto f = detail::option(cfg.critic, "overrides"); !f.empty())
      overrides = detail::load_fixture_json(cfg, f).get<MockCritic::Overrides>();
    b.critic = std::make_shared<MockCritic>(*cfg.critic.seed, std::move(overrides));
  }

  if (cfg.generator.kind == BackendKind::http) {
    b.generator = std::make_shared<HttpGenerator>(detail::http_client(cfg.generator, in_flight));
  } else {
    std::vector<MockGenerator::Rule> rules;
    if (auto f = detail::option(cfg.generator, "script"); !f.empty())
      for (const auto& r : detail::load_fixture_json(cfg, f))
        rules.push_back({r.at("match").get<std::string>(), r.at("output").get<std::string>()});
    b.generator = std::make_shared<MockGenerator>(
        std::move(rules), std::map<std::uint64_t, std::string>{},
        detail::option(cfg.generator, "default_output", std::string(MockGenerator::kDefaultOutput)));
  }

  if (cfg.region.kind == BackendKind::http) {
    b.region = std::make_shared<HttpRegionProposer>(detail::http_client(cfg.region, in_flight));
  } else {
    const auto fb = detail::option(cfg.region, "fallback", "identity");
    if (fb != "identity" && fb != "none") throw UsageError("[region] fallback must be 'identity' or 'none'");
    MockRegionProposer::Table table;
    if (auto f = detail::option(cfg.region, "table"); !f.empty())
      for (const auto& r : detail::load_fixture_json(cfg, f)) {
        std::optional<std::string> crop;
        if (r.contains("crop") && !r.at("crop").is_null()) crop = r.at("crop").get<std::string>();
        table[{r.at("image").get<std::string>(), r.at("subject").get<std::string>()}] = crop;
      }
    b.region = std::make_shared<MockRegionProposer>(
        fb == "identity" ? MockRegionProposer::Fallback::identity : MockRegionProposer::Fallback::none, std::move(table));
  }
  return b;
}

}  // namespace reag
