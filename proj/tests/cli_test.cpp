#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"

using namespace reag;
namespace fs = std::filesystem;

namespace {

const fs::path kSample = REAG_SAMPLE_DIR;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("reag_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Run cli(const std::vector<std::string>& args, const std::string& stdin_text = "") {
  const auto in = scratch() / "stdin", out = scratch() / "stdout", err = scratch() / "stderr";
  std::ofstream(in) << stdin_text;
  std::string cmd = quote(REAG_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " <" + quote(in.string()) + " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text_file(out);
  r.err = read_text_file(err);
  return r;
}

std::vector<std::string> sample_args(const std::string& sub) {
  return {sub, "-c", (kSample / "reag.toml").string(), "--kb", (kSample / "kb.jsonl").string(), "--qa",
          (kSample / "qa.jsonl").string()};
}

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({"eval", "--kb", "x"}).code, 1);
  auto args = sample_args("eval");
  args.insert(args.end(), {"-t", "1.5"});
  const auto r = cli(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("critic_threshold"), std::string::npos);
  EXPECT_EQ(cli({"eval", "-c", "/nonexistent.toml", "--kb", "a", "--qa", "b"}).code, 1);
}

TEST(Cli, HelpExitsZero) { EXPECT_EQ(cli({"--help"}).code, 0); }

TEST(Cli, DataErrorsExitTwo) {
  EXPECT_EQ(cli({"eval", "--kb", "/nonexistent.jsonl", "--qa", "/nonexistent.jsonl"}).code, 2);
  const auto bad = scratch() / "bad_kb.jsonl";
  std::ofstream(bad) << "{\"doc_id\":\"a\",\"passages\":[{\"passage_id\":\"p\",\"text\":\"x\"}]}\n{oops\n";
  const auto r = cli({"index", "build", "--kb", bad.string(), "-o", (scratch() / "i.bin").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(":2:"), std::string::npos) << r.err;
}

TEST(Cli, BackendErrorsExitThree) {
  const auto cfg = scratch() / "http.toml";
  // Port 9 on loopback is the discard service; nothing listens there in a sandbox.
  std::ofstream(cfg) << "[embedder]\nkind = \"http\"\nendpoint = \"http://127.0.0.1:9\"\ntimeout_ms = 500\n";
  const auto r = cli({"index", "build", "-c", cfg.string(), "--kb", (kSample / "kb.jsonl").string(), "-o",
                      (scratch() / "i.bin").string()});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, EvalIsByteIdenticalAcrossRuns) {
  auto args = sample_args("eval");
  const auto report1 = scratch() / "r1.json", report2 = scratch() / "r2.json";
  const auto res1 = scratch() / "r1.jsonl", res2 = scratch() / "r2.jsonl";
  auto a1 = args, a2 = args;
  a1.insert(a1.end(), {"-o", report1.string(), "--results", res1.string()});
  a2.insert(a2.end(), {"-o", report2.string(), "--results", res2.string()});
  ASSERT_EQ(cli(a1).code, 0);
  ASSERT_EQ(cli(a2).code, 0);
  EXPECT_EQ(read_text_file(report1), read_text_file(report2));
  EXPECT_EQ(read_text_file(res1), read_text_file(res2));
  const auto rep = json::parse(read_text_file(report1));
  EXPECT_EQ(rep["records"], 10);
  EXPECT_EQ(rep["splits"]["all"]["correct"], 8);
}

TEST(Cli, AblationSwitchesChangeAccuracy) {
  auto args = sample_args("eval");
  args.push_back("--no-fine");
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out)["splits"]["all"]["correct"], 5);
}

TEST(Cli, OracleEval) {
  auto args = sample_args("eval");
  args.push_back("--oracle");
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["splits"]["all"]["correct"], 8);
}

TEST(Cli, Answer) {
  auto args = sample_args("answer");
  args.insert(args.end(), {"--id", "q04"});
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["reward"]["task"], 1);
  EXPECT_EQ(j["provenance"]["crop_ref"], "images/q04_crop.jpg");
  args.back() = "nope";
  EXPECT_EQ(cli(args).code, 2);
}

TEST(Cli, Sweep) {
  auto args = sample_args("sweep");
  args.insert(args.end(), {"--axis", "threshold", "--values", "0,0.1,0.5,1"});
  const auto r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("threshold,accuracy_all,", 0), 0u);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 5);
  args.back() = "0,x";
  EXPECT_EQ(cli(args).code, 1);
}

TEST(Cli, IndexBuildAndSearch) {
  const auto idx = scratch() / "sample.bin";
  const auto cfg = (kSample / "reag.toml").string();
  auto b = cli({"index", "build", "-c", cfg, "--kb", (kSample / "kb.jsonl").string(), "-o", idx.string()});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(json::parse(b.out)["documents"], 12);
  auto s = cli({"index", "search", "-c", cfg, "--index", idx.string(), "--image", "images/eiffel_tower.jpg", "-k", "1",
                "--tag", "image"});
  ASSERT_EQ(s.code, 0) << s.err;
  const auto hits = json::parse(s.out);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0]["doc_id"], "eiffel_tower");
  EXPECT_EQ(cli({"index", "search", "-c", cfg, "--index", idx.string()}).code, 1);
}

TEST(Cli, RetrieveAndFilter) {
  const auto cfg = (kSample / "reag.toml").string();
  auto r = cli({"retrieve", "-c", cfg, "--kb", (kSample / "kb.jsonl").string(), "-q", "What does this bird eat?", "-i",
                "images/q06.jpg"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["subject"], "bird");
  const auto passages = scratch() / "passages.json";
  std::ofstream(passages) << j["noisy"]["passages"].dump();
  auto f = cli({"filter", "-c", cfg, "-q", "What does this bird eat?", "-i", "images/q06.jpg", "--passages",
                passages.string()});
  ASSERT_EQ(f.code, 0) << f.err;
  const auto fj = json::parse(f.out);
  EXPECT_EQ(fj["verdicts"].size(), j["noisy"]["passages"].size());
  bool saw_gold = false;
  for (const auto& p : fj["relevant"]) saw_gold |= p["passage_id"] == "atlantic_puffin_p0";
  EXPECT_TRUE(saw_gold);
}

TEST(Cli, ScoreSingleAndJsonl) {
  auto r = cli({"score", "--output", "<think>t</think><answer>The Eiffel Tower!</answer>", "--gt", "eiffel tower"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(r.out);
  EXPECT_EQ(j["task"], 1);
  EXPECT_DOUBLE_EQ(j["total"].get<double>(), 1.2);

  r = cli({"score", "--output", "-", "--gt", "[[10, 20]]", "--kind", "numerical"}, "<answer>15</answer>");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["matcher"], "scalar_in_interval");

  const std::string lines =
      R"({"id":"a","output":"<think>x</think><answer>Paris</answer>","ground_truth":"paris","task":{"dataset":"evqa","kind":"single"}})"
      "\n"
      R"({"id":"b","output":"Rome","ground_truth":["paris"],"task":{"dataset":"evqa","kind":"single"}})"
      "\n";
  r = cli({"score", "--input", "-"}, lines);
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_EQ(json::parse(l1)["id"], "a");
  EXPECT_DOUBLE_EQ(json::parse(l1)["total"].get<double>(), 1.2);
  EXPECT_DOUBLE_EQ(json::parse(l2)["total"].get<double>(), 0.0);

  EXPECT_EQ(cli({"score"}).code, 1);
  EXPECT_EQ(cli({"score", "--input", "-"}, "{\"output\":\"x\"}\n").code, 2);
}

TEST(Cli, PromptsRenderMatchesGolden) {
  const auto r = cli({"prompts", "render", "critic-user", "-q", "Who designed this dock?", "-p",
                      "The Royal Albert Dock was designed by Jesse Hartley and Philip Hardwick."});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, test_support::read_golden("critic_user.rendered.txt"));
  EXPECT_EQ(cli({"prompts", "render", "generator-user", "--template"}).out,
            test_support::read_golden("generator_user.template.txt"));
  EXPECT_EQ(cli({"prompts", "render", "bogus"}).code, 1);
}

TEST(Cli, GrpoDemo) {
  const auto r = cli({"grpo-demo", "--iterations", "20", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("iteration,mean_task_reward,mean_format_reward,objective\n", 0), 0u);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 21);
  EXPECT_EQ(r.out, cli({"grpo-demo", "--iterations", "20", "--seed", "3"}).out);
  EXPECT_EQ(cli({"grpo-demo", "--group", "1"}).code, 1);
}
