#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace reag;
using namespace reag::test_support;

namespace {

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
  return n;
}

class ThrowingGenerator final : public GeneratorBackend {
 public:
  GenerationResult generate(const GenerationRequest&) const override {
    throw BackendError(BackendError::Reason::status, "HTTP 503", 503);
  }
};

PipelineResult result_with(const std::string& id, int task) {
  PipelineResult r;
  r.record_id = id;
  r.reward.task = task;
  return r;
}

QARecord record_with(const std::string& id, std::set<SplitTag> tags) {
  QARecord r;
  r.id = id;
  r.query.question = "Q?";
  r.ground_truth.alternatives = {std::string("a")};
  r.task = {Dataset::infoseek, TaskKind::entity};
  r.split_tags = std::move(tags);
  return r;
}

// A five-passage oracle document where the critic keeps o1 and o3.
struct OracleSetup {
  KnowledgeBase kb;
  Backends backends;
  QARecord record;
};

OracleSetup oracle_setup() {
  Document d;
  d.doc_id = "oracle";
  MockCritic::Overrides probs;
  for (int i = 0; i < 5; ++i) {
    const std::string id = "o" + std::to_string(i);
    d.passages.push_back({id, "Oracle passage number " + std::to_string(i) + ".", "oracle"});
    probs[id] = (i == 1 || i == 3) ? 0.8 : 0.02;
  }
  OracleSetup s{KnowledgeBase({d}), {}, {}};
  s.backends.embedder = std::make_shared<MockEmbedder>(1, 8);
  s.backends.critic = std::make_shared<MockCritic>(1, probs);
  s.backends.generator = std::make_shared<MockGenerator>();
  s.backends.region = std::make_shared<MockRegionProposer>();
  s.record.id = "r";
  s.record.query = {"Who designed this dock?", "dock.jpg", std::nullopt};
  s.record.ground_truth.alternatives = {std::string("Jesse Hartley")};
  s.record.task = {Dataset::evqa, TaskKind::single};
  s.record.oracle_doc = "oracle";
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

TEST(Ingest, ValidKb) {
  std::istringstream in(R"({"doc_id":"a","metadata":"A","passages":[{"passage_id":"a1","text":"x"}]}
{"doc_id":"b","metadata":"B","image_ref":"b.jpg","passages":[{"passage_id":"b1","text":"y"},{"passage_id":"b2","text":"z"}]}

{"doc_id":"c","metadata":"C","passages":[{"passage_id":"c1","text":"w"}]}
)");
  const auto kb = ingest_kb(in);
  EXPECT_EQ(kb.size(), 3u);
  EXPECT_EQ(kb.passage_count(), 4u);
}

TEST(Ingest, DuplicateIdCitesLine) {
  std::istringstream in(R"({"doc_id":"a","passages":[{"passage_id":"a1","text":"x"}]}
{"doc_id":"a","passages":[{"passage_id":"a2","text":"y"}]}
)");
  try {
    ingest_kb(in, "kb.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("kb.jsonl:2:", 0), 0u) << e.what();
  }
}

TEST(Ingest, BadLinesCiteLine) {
  std::istringstream empty_passages(R"({"doc_id":"a","passages":[]})");
  EXPECT_THROW(ingest_kb(empty_passages), DataError);
  std::istringstream malformed("\n\n{not json\n");
  try {
    ingest_kb(malformed, "kb.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("kb.jsonl:3:", 0), 0u) << e.what();
  }
}

TEST(Ingest, QaRecords) {
  std::istringstream in(
      R"({"id":"q1","query":{"question":"How tall?","image_ref":"i.jpg"},"ground_truth":[{"lo":10,"hi":20}],"task":{"dataset":"infoseek","kind":"numerical"},"splits":["unseen_q"]}
{"id":"q2","query":{"question":"Who?","image_ref":"j.jpg"},"ground_truth":"Bob","task":{"dataset":"evqa","kind":"single"},"splits":["two_hop"],"oracle_doc":"d"}
)");
  const auto qa = ingest_qa(in);
  ASSERT_EQ(qa.size(), 2u);
  EXPECT_TRUE(qa[0].split_tags.count(SplitTag::unseen_q));
  EXPECT_EQ(qa[1].oracle_doc, "d");
  EXPECT_EQ(json(qa[1]).get<QARecord>().id, "q2");
}

TEST(Ingest, SplitTagsMustMatchDataset) {
  std::istringstream in(
      R"({"id":"q","query":{"question":"Who?","image_ref":"i"},"ground_truth":"x","task":{"dataset":"evqa","kind":"single"},"splits":["unseen_e"]})");
  EXPECT_THROW(ingest_qa(in), DataError);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

TEST(Pipeline, GoldPassageSurvivesAndIsAnswered) {
  const auto fx = make_ablation_fixture();
  const auto r = run_pipeline(fx.records[0], fx.kb, fx.index, fx.backends, fx.base);
  EXPECT_EQ(r.reward.task, 1);
  EXPECT_EQ(r.reward.format, 1);
  EXPECT_DOUBLE_EQ(r.reward.total, 1.2);
  const auto& p = r.provenance;
  EXPECT_FALSE(p.error);
  EXPECT_EQ(p.coarse_hits.size(), 20u);
  EXPECT_EQ(p.subject, "building");
  EXPECT_FALSE(p.crop_ref);
  EXPECT_EQ(p.passages_before_filter, 40u);
  EXPECT_LT(p.passages_after_filter, p.passages_before_filter);
  EXPECT_EQ(p.verdicts.size(), 40u);
  EXPECT_NE(p.user_prompt.find(fixture_gold_marker(0)), std::string::npos);
  EXPECT_EQ(p.system_prompt, std::string(prompts::kGeneratorSystem));
}

TEST(Pipeline, CriticDropsEverything) {
  const auto fx = make_ablation_fixture();
  auto cfg = fx.base;
  cfg.critic_threshold = 1.0;
  const auto r = run_pipeline(fx.records[0], fx.kb, fx.index, fx.backends, cfg);
  EXPECT_EQ(r.provenance.passages_after_filter, 0u);
  EXPECT_TRUE(r.provenance.no_passage_prompt);
  EXPECT_EQ(r.provenance.user_prompt, fx.records[0].query.question);
  EXPECT_EQ(r.provenance.raw_output, MockGenerator::kDefaultOutput);
  EXPECT_FALSE(r.provenance.error);
}

TEST(Pipeline, EmptyKb) {
  auto fx = make_ablation_fixture();
  const KnowledgeBase empty;
  const VectorIndex none;
  const auto r = run_pipeline(fx.records[0], empty, none, fx.backends, fx.base);
  EXPECT_TRUE(r.provenance.empty_retrieval);
  EXPECT_TRUE(r.provenance.no_passage_prompt);
  EXPECT_FALSE(r.provenance.raw_output.empty());
  EXPECT_FALSE(r.provenance.error);
}

TEST(Pipeline, StageFailureScoresZeroWithoutAbortingBatch) {
  auto fx = make_ablation_fixture();
  fx.backends.generator = std::make_shared<ThrowingGenerator>();
  const auto results = run_batch(fx.records, fx.kb, fx.index, fx.backends, fx.base);
  ASSERT_EQ(results.size(), fx.records.size());
  for (const auto& r : results) {
    EXPECT_EQ(r.provenance.failed_stage, "generate");
    EXPECT_EQ(r.reward.total, 0.0);
  }
  EXPECT_EQ(evaluate(fx.records, results, fx.base).failures, fx.records.size());
}

TEST(Pipeline, CriticSwitchOffForwardsEverything) {
  const auto fx = make_ablation_fixture();
  auto cfg = fx.base;
  cfg.enable_critic = false;
  const auto r = run_pipeline(fx.records[5], fx.kb, fx.index, fx.backends, cfg);
  EXPECT_TRUE(r.provenance.critic_skipped);
  EXPECT_EQ(r.provenance.passages_after_filter, r.provenance.passages_before_filter);
}

TEST(Oracle, CriticKeepsTwoOfFive) {
  const auto s = oracle_setup();
  const auto r = run_oracle(s.record, s.kb, s.backends, PipelineConfig{});
  EXPECT_EQ(r.provenance.passages_before_filter, 5u);
  EXPECT_EQ(r.provenance.passages_after_filter, 2u);
  const auto& prompt = r.provenance.user_prompt;
  EXPECT_EQ(count_of(prompt, "<paragraph>"), 2u);
  EXPECT_NE(prompt.find("number 1."), std::string::npos);
  EXPECT_NE(prompt.find("number 3."), std::string::npos);
  EXPECT_LT(prompt.find("number 1."), prompt.find("number 3."));
}

TEST(Oracle, OpenGateForwardsAll) {
  const auto s = oracle_setup();
  PipelineConfig cfg;
  cfg.critic_threshold = 0.0;
  const auto r = run_oracle(s.record, s.kb, s.backends, cfg);
  EXPECT_EQ(count_of(r.provenance.user_prompt, "<paragraph>"), 5u);
}

TEST(Oracle, MissingDocument) {
  auto s = oracle_setup();
  s.record.oracle_doc = "nowhere";
  EXPECT_THROW(run_oracle(s.record, s.kb, s.backends, PipelineConfig{}), DataError);
  s.record.oracle_doc.reset();
  EXPECT_THROW(run_oracle(s.record, s.kb, s.backends, PipelineConfig{}), DataError);
}

TEST(Oracle, NeverSearchesTheIndex) {
  const auto fx = make_ablation_fixture();
  CountingIndex spy(fx.index);
  run_batch(fx.records, fx.kb, spy, fx.backends, fx.base, PipelineMode::oracle);
  EXPECT_EQ(spy.searches(), 0);
  // Coarse plus fine: record 10 has a region crop.
  run_pipeline(fx.records[10], fx.kb, spy, fx.backends, fx.base);
  EXPECT_EQ(spy.searches(), 2);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

TEST(Evaluate, TwoOfFour) {
  std::vector<QARecord> recs;
  std::vector<PipelineResult> res;
  for (int i = 0; i < 4; ++i) {
    recs.push_back(record_with("r" + std::to_string(i), {}));
    res.push_back(result_with("r" + std::to_string(i), i % 2));
  }
  const auto rep = evaluate(recs, res, PipelineConfig{});
  EXPECT_DOUBLE_EQ(rep.splits.at("all").accuracy(), 0.5);
  EXPECT_EQ(rep.splits.size(), 1u);
}

TEST(Evaluate, MicroAverageAndEmptySplitsOmitted) {
  std::vector<QARecord> recs{record_with("a", {SplitTag::unseen_q}), record_with("b", {SplitTag::unseen_q}),
                             record_with("c", {SplitTag::unseen_e}), record_with("d", {SplitTag::unseen_e})};
  std::vector<PipelineResult> res{result_with("a", 1), result_with("b", 0), result_with("c", 1), result_with("d", 0)};
  const auto rep = evaluate(recs, res, PipelineConfig{});
  EXPECT_DOUBLE_EQ(rep.splits.at("unseen_q").accuracy(), 0.5);
  EXPECT_DOUBLE_EQ(rep.splits.at("unseen_e").accuracy(), 0.5);
  EXPECT_DOUBLE_EQ(rep.splits.at("all").accuracy(), 0.5);
  EXPECT_EQ(rep.splits.count("single_hop"), 0u);
  EXPECT_EQ(rep.splits.count("two_hop"), 0u);

  // Unequal split sizes: the micro-average differs from the mean of splits.
  recs.push_back(record_with("e", {SplitTag::unseen_e}));
  res.push_back(result_with("e", 1));
  const auto rep2 = evaluate(recs, res, PipelineConfig{});
  EXPECT_DOUBLE_EQ(rep2.splits.at("all").accuracy(), 3.0 / 5.0);
}

TEST(Evaluate, Errors) {
  EXPECT_THROW(evaluate({}, {}, PipelineConfig{}), UsageError);
  EXPECT_THROW(evaluate({record_with("a", {})}, {result_with("b", 1)}, PipelineConfig{}), UsageError);
}

// ---------------------------------------------------------------------------
// Batch properties and sweeps
// ---------------------------------------------------------------------------

TEST(Batch, DeterministicAcrossRunsAndWorkerCounts) {
  const auto fx = make_ablation_fixture();
  auto cfg = fx.base;
  const auto dump = [&](const PipelineConfig& c) {
    const auto results = run_batch(fx.records, fx.kb, fx.index, fx.backends, c);
    return json(results).dump() + json(evaluate(fx.records, results, c)).dump();
  };
  const auto first = dump(cfg);
  EXPECT_EQ(first, dump(cfg));
  auto parallel = cfg;
  parallel.workers = 4;
  const auto par = run_batch(fx.records, fx.kb, fx.index, fx.backends, parallel);
  const auto seq = run_batch(fx.records, fx.kb, fx.index, fx.backends, cfg);
  EXPECT_EQ(json(par).dump(), json(seq).dump());
}

TEST(Batch, PostFilterNeverExceedsPreFilter) {
  const auto fx = make_ablation_fixture();
  for (double t : {0.0, 0.1, 0.5}) {
    auto cfg = fx.base;
    cfg.critic_threshold = t;
    for (const auto& r : run_batch(fx.records, fx.kb, fx.index, fx.backends, cfg))
      EXPECT_LE(r.provenance.passages_after_filter, r.provenance.passages_before_filter);
  }
}

TEST(Sweep, ThresholdAxisIsMonotone) {
  const auto fx = make_ablation_fixture();
  const auto rows = sweep(fx.records, fx.kb, fx.index, fx.backends, fx.base, SweepAxis::threshold, {0, 0.1, 0.5, 1.0});
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 1; i < rows.size(); ++i)
    EXPECT_LE(rows[i].report.mean_passages_post_filter, rows[i - 1].report.mean_passages_post_filter);
  EXPECT_EQ(rows.back().report.mean_passages_post_filter, 0.0);
}

TEST(Sweep, KAxisGrowsCandidatePool) {
  const auto fx = make_ablation_fixture();
  const auto rows = sweep(fx.records, fx.kb, fx.index, fx.backends, fx.base, SweepAxis::k, {5, 20});
  EXPECT_LE(rows[0].report.mean_passages_pre_filter, rows[1].report.mean_passages_pre_filter);
  EXPECT_THROW(sweep(fx.records, fx.kb, fx.index, fx.backends, fx.base, SweepAxis::k, {2.5}), UsageError);
  EXPECT_THROW(sweep(fx.records, fx.kb, fx.index, fx.backends, fx.base, SweepAxis::k, {}), UsageError);
}

TEST(Sweep, SingleValueEqualsPlainEvaluation) {
  const auto fx = make_ablation_fixture();
  const auto rows = sweep(fx.records, fx.kb, fx.index, fx.backends, fx.base, SweepAxis::threshold, {0.1});
  const auto plain = evaluate(fx.records, run_batch(fx.records, fx.kb, fx.index, fx.backends, fx.base), fx.base);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(json(rows[0].report).dump(), json(plain).dump());
}

TEST(Sweep, Csv) {
  const auto fx = make_ablation_fixture();
  const auto rows = sweep(fx.records, fx.kb, fx.index, fx.backends, fx.base, SweepAxis::threshold, {0.1, 1});
  const auto csv = sweep_csv(SweepAxis::threshold, rows);
  std::istringstream in(csv);
  std::string header, row1;
  std::getline(in, header);
  std::getline(in, row1);
  EXPECT_EQ(header,
            "threshold,accuracy_all,correct,total,mean_passages_pre_filter,mean_passages_post_filter,failures,"
            "accuracy_single_hop,accuracy_two_hop");
  EXPECT_EQ(row1.substr(0, 4), "0.1,");
}

TEST(Ablation, EachMechanismMatters) {
  const auto fx = make_ablation_fixture();
  auto unfiltered = fx.base;
  unfiltered.enable_critic = false;
  unfiltered.enable_fine_retrieval = false;
  auto critic = fx.base;
  critic.enable_fine_retrieval = false;
  const double a0 = accuracy(fx, unfiltered), a1 = accuracy(fx, critic), a2 = accuracy(fx, fx.base);
  EXPECT_DOUBLE_EQ(a0, 0.25);
  EXPECT_DOUBLE_EQ(a1, 0.5);
  EXPECT_DOUBLE_EQ(a2, 1.0);
}
