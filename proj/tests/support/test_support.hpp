#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "reag/reag.hpp"

namespace reag::test_support {

inline std::filesystem::path golden_dir() { return REAG_GOLDEN_DIR; }
inline std::filesystem::path test_data_dir() { return REAG_TEST_DATA_DIR; }

inline std::string read_golden(const std::string& name) { return read_text_file(golden_dir() / name); }

// ---------------------------------------------------------------------------
// Local HTTP stub
// ---------------------------------------------------------------------------

struct RecordedRequest {
  std::string path;
  std::string body;
};

// Serves POST routes on 127.0.0.1 with an ephemeral port and records every
// request body it receives.
class StubServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  StubServer() = default;
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;
  ~StubServer() { stop(); }

  void route(const std::string& path, Handler h) {
    server_.Post(path, [this, h](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mu_);
        requests_.push_back({req.path, req.body});
      }
      h(req, res);
    });
  }

  // Replies with a fixed JSON body.
  void route_json(const std::string& path, const json& reply, int status = 200) {
    route(path, [reply, status](const httplib::Request&, httplib::Response& res) {
      res.status = status;
      res.set_content(reply.dump(), "application/json");
    });
  }

  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::vector<RecordedRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  std::vector<RecordedRequest> requests_;
};

// ---------------------------------------------------------------------------
// Index spy
// ---------------------------------------------------------------------------

class CountingIndex final : public SearchIndex {
 public:
  explicit CountingIndex(const SearchIndex& inner) : inner_(inner) {}
  std::size_t size() const override { return inner_.size(); }
  std::size_t dim() const override { return inner_.dim(); }
  std::vector<RetrievalHit> search(const EmbeddingVector& q, int k, std::optional<ModalityTag> m,
                                   Stage s) const override {
    ++searches_;
    return inner_.search(q, k, m, s);
  }
  int searches() const { return searches_.load(); }

 private:
  const SearchIndex& inner_;
  mutable std::atomic<int> searches_{0};
};

// ---------------------------------------------------------------------------
// Scripted ablation fixture
// ---------------------------------------------------------------------------

// 60 documents whose image embeddings are the basis vectors e_0..e_59:
//   0..19  gold documents (record r's answer lives in doc r)
//   20..39 distractors, every passage contains "MISLEADING"
//   40..59 fillers
// Query images are mixtures chosen so that
//   records 0..4   coarse top-20 = gold + 19 fillers
//   records 5..9   coarse top-20 = gold + 19 distractors
//   records 10..19 coarse top-20 = 20 distractors; the subject crop hits gold.
// The critic keeps gold (0.9) and fillers (0.3) and drops distractors (0.01).
// The generator answers wrongly whenever a MISLEADING passage is in the
// prompt, correctly when record r's gold marker is, and "unknown" otherwise.
struct AblationFixture {
  KnowledgeBase kb;
  std::vector<QARecord> records;
  Backends backends;
  VectorIndex index;
  PipelineConfig base;
};

inline constexpr int kFixtureDim = 64;
inline constexpr int kFixtureRecords = 20;

inline std::string fixture_gold_marker(int r) { return "[gold-" + std::to_string(r) + "]"; }
inline std::string fixture_answer(int r) { return "Entity " + std::to_string(r); }

inline AblationFixture make_ablation_fixture() {
  auto basis = [](std::initializer_list<std::pair<int, double>> parts) {
    std::vector<double> v(kFixtureDim, 0.0);
    for (auto [i, w] : parts) v[static_cast<std::size_t>(i)] += w;
    return v;
  };

  std::vector<Document> docs;
  MockEmbedder::Overrides emb;
  MockCritic::Overrides critic;
  for (int j = 0; j < 60; ++j) {
    Document d;
    d.doc_id = "doc" + std::to_string(j);
    d.image_ref = "doc" + std::to_string(j) + ".jpg";
    d.metadata = "Document " + std::to_string(j);
    const bool gold = j < 20, distractor = j >= 20 && j < 40;
    for (int p = 0; p < 2; ++p) {
      Passage ps;
      ps.passage_id = d.doc_id + "_p" + std::to_string(p);
      ps.parent_doc = d.doc_id;
      if (gold)
        ps.text = p == 0 ? "The building " + fixture_gold_marker(j) + " was designed by " + fixture_answer(j) + "."
                         : "It is a listed structure.";
      else if (distractor)
        ps.text = "MISLEADING note " + std::to_string(j) + "-" + std::to_string(p) + " about an unrelated architect.";
      else
        ps.text = "Filler passage " + std::to_string(j) + "-" + std::to_string(p) + ".";
      critic[ps.passage_id] = gold ? (p == 0 ? 0.9 : 0.05) : distractor ? 0.01 : 0.3;
      d.passages.push_back(std::move(ps));
    }
    emb["image:" + *d.image_ref] = basis({{j, 1.0}});
    docs.push_back(std::move(d));
  }

  AblationFixture fx{KnowledgeBase(docs), {}, {}, {}, {}};
  MockRegionProposer::Table regions;
  std::vector<MockGenerator::Rule> rules{{"MISLEADING", "<think>The notes disagree.</think><answer>Someone Else</answer>"}};
  for (int r = 0; r < kFixtureRecords; ++r) {
    QARecord rec;
    rec.id = "q" + std::to_string(r);
    rec.query.question = "Who designed this building?";
    rec.query.image_ref = "query" + std::to_string(r) + ".jpg";
    rec.ground_truth.alternatives = {fixture_answer(r)};
    rec.task = {Dataset::evqa, TaskKind::single};
    rec.split_tags = {r % 2 == 0 ? SplitTag::single_hop : SplitTag::two_hop};
    rec.oracle_doc = "doc" + std::to_string(r);

    std::vector<double> q(kFixtureDim, 0.0);
    if (r < 5) {
      q[static_cast<std::size_t>(r)] = 1.0;
      for (int f = 40; f < 59; ++f) q[static_cast<std::size_t>(f)] = 0.5;
    } else if (r < 10) {
      q[static_cast<std::size_t>(r)] = 1.0;
      for (int d = 20; d < 39; ++d) q[static_cast<std::size_t>(d)] = 0.5;
    } else {
      for (int d = 20; d < 40; ++d) q[static_cast<std::size_t>(d)] = 1.0;
      const std::string crop = "crop" + std::to_string(r) + ".jpg";
      regions[{rec.query.image_ref, "building"}] = crop;
      emb["image:" + crop] = basis({{r, 1.0}});
    }
    emb["image:" + rec.query.image_ref] = q;
    rules.push_back({fixture_gold_marker(r),
                     "<think>The passage names the architect.</think><answer>" + fixture_answer(r) + "</answer>"});
    fx.records.push_back(std::move(rec));
  }

  auto embedder = std::make_shared<MockEmbedder>(7, kFixtureDim, std::move(emb));
  fx.backends.embedder = embedder;
  fx.backends.critic = std::make_shared<MockCritic>(11, std::move(critic));
  fx.backends.generator = std::make_shared<MockGenerator>(std::move(rules));
  fx.backends.region = std::make_shared<MockRegionProposer>(MockRegionProposer::Fallback::none, std::move(regions));
  fx.index = build_index(fx.kb, *embedder);
  fx.base.retrieval_modality = RetrievalModality::image_to_image;
  return fx;
}

inline double accuracy(const AblationFixture& fx, const PipelineConfig& cfg) {
  const auto results = run_batch(fx.records, fx.kb, fx.index, fx.backends, cfg);
  return evaluate(fx.records, results, cfg).splits.at("all").accuracy();
}

}  // namespace reag::test_support
