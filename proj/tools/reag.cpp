// Command-line front end. Exit codes: 0 ok, 1 usage, 2 data, 3 backend.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "reag/config.hpp"
#include "reag/reag.hpp"

namespace {

using namespace reag;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitBackend = 3;

struct CommonOptions {
  std::string config_path;
  std::optional<int> top_k;
  std::optional<double> threshold;
  std::optional<int> workers;
  bool no_critic = false;
  bool no_fine = false;
  std::optional<std::string> modality;
};

AppConfig load_config(const CommonOptions& o) {
  AppConfig app = o.config_path.empty() ? parse_app_config("") : load_app_config(o.config_path);
  if (o.top_k) app.pipeline.top_k = *o.top_k;
  if (o.threshold) app.pipeline.critic_threshold = *o.threshold;
  if (o.workers) app.pipeline.workers = *o.workers;
  if (o.no_critic) app.pipeline.enable_critic = false;
  if (o.no_fine) app.pipeline.enable_fine_retrieval = false;
  if (o.modality) app.pipeline.retrieval_modality = parse_modality(*o.modality);
  validated(app.pipeline);
  return app;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "Config file (TOML-style)");
  cmd->add_option("-k,--top-k", o.top_k, "Documents kept after merge");
  cmd->add_option("-t,--threshold", o.threshold, "Critic yes-probability threshold (strict)");
  cmd->add_option("-w,--workers", o.workers, "Records processed concurrently");
  cmd->add_option("--modality", o.modality, "image_to_text or image_to_image");
  cmd->add_flag("--no-critic", o.no_critic, "Skip critic filtering");
  cmd->add_flag("--no-fine", o.no_fine, "Skip fine-grained retrieval");
}

VectorIndex index_for(const std::string& index_path, const KnowledgeBase& kb, const Backends& b) {
  return index_path.empty() ? build_index(kb, *b.embedder) : VectorIndex::load(index_path);
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
}

std::vector<double> parse_values(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("cannot parse sweep value '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("no sweep values given");
  return out;
}

const QARecord& find_record(const std::vector<QARecord>& records, const std::string& id) {
  for (const auto& r : records)
    if (r.id == id) return r;
  throw DataError("no record with id '" + id + "'");
}

std::string read_stdin_or_arg(const std::string& value) {
  if (value != "-") return value;
  std::ostringstream ss;
  ss << std::cin.rdbuf();
  return ss.str();
}

int run(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented knowledge-based VQA pipeline"};
  app.require_subcommand(1);

  // index build | search
  auto* index_cmd = app.add_subcommand("index", "Build or query a vector index");
  index_cmd->require_subcommand(1);
  CommonOptions ib_opts;
  std::string ib_kb, ib_out;
  auto* ib = index_cmd->add_subcommand("build", "Embed a KB and write an index");
  add_common(ib, ib_opts);
  ib->add_option("--kb", ib_kb, "KB JSONL")->required();
  ib->add_option("-o,--out", ib_out, "Index file (a .json sidecar is written next to it)")->required();

  CommonOptions is_opts;
  std::string is_index, is_image, is_text, is_tag;
  auto* is = index_cmd->add_subcommand("search", "Top-k search against a saved index");
  add_common(is, is_opts);
  is->add_option("--index", is_index, "Index file")->required();
  auto* img_opt = is->add_option("--image", is_image, "Query image reference");
  auto* txt_opt = is->add_option("--text", is_text, "Query text");
  img_opt->excludes(txt_opt);
  is->add_option("--tag", is_tag, "Restrict to modality tag (metadata|image)");

  // retrieve
  CommonOptions rt_opts;
  std::string rt_kb, rt_index, rt_question, rt_image, rt_crop;
  auto* rt = app.add_subcommand("retrieve", "Coarse + fine retrieval and merge for one query");
  add_common(rt, rt_opts);
  rt->add_option("--kb", rt_kb, "KB JSONL")->required();
  rt->add_option("--index", rt_index, "Saved index (built in memory when omitted)");
  rt->add_option("-q,--question", rt_question, "Question")->required();
  rt->add_option("-i,--image", rt_image, "Query image reference")->required();
  rt->add_option("--crop", rt_crop, "Pre-computed subject crop");

  // filter
  CommonOptions ft_opts;
  std::string ft_question, ft_image, ft_passages;
  auto* ft = app.add_subcommand("filter", "Critic-filter a passage list");
  add_common(ft, ft_opts);
  ft->add_option("-q,--question", ft_question, "Question")->required();
  ft->add_option("-i,--image", ft_image, "Query image reference")->required();
  ft->add_option("--passages", ft_passages, "JSON array of passages, or JSONL")->required();

  // answer
  CommonOptions an_opts;
  std::string an_kb, an_qa, an_id, an_index;
  bool an_oracle = false;
  auto* an = app.add_subcommand("answer", "Run the full pipeline on one QA record");
  add_common(an, an_opts);
  an->add_option("--kb", an_kb, "KB JSONL")->required();
  an->add_option("--qa", an_qa, "QA JSONL")->required();
  an->add_option("--id", an_id, "Record id")->required();
  an->add_option("--index", an_index, "Saved index");
  an->add_flag("--oracle", an_oracle, "Use the record's oracle document instead of retrieval");

  // score
  std::string sc_output, sc_gt, sc_input, sc_dataset = "infoseek", sc_kind = "entity";
  double sc_gamma = PipelineConfig{}.gamma, sc_delta = PipelineConfig{}.delta;
  auto* sc = app.add_subcommand("score", "Score raw model outputs against ground truth");
  auto* sc_in_opt = sc->add_option("-i,--input", sc_input,
                                   "JSONL of {output, ground_truth, task}; writes one breakdown per line ('-' reads stdin)");
  auto* sc_out_opt = sc->add_option("--output", sc_output, "Single raw model output ('-' reads stdin)");
  auto* sc_gt_opt =
      sc->add_option("--gt", sc_gt, "Ground truth JSON (value, array of alternatives, or {alternatives:[...]})");
  sc_out_opt->excludes(sc_in_opt)->needs(sc_gt_opt);
  sc_gt_opt->excludes(sc_in_opt)->needs(sc_out_opt);
  sc->add_option("--dataset", sc_dataset, "infoseek or evqa");
  sc->add_option("--kind", sc_kind, "entity|time|numerical|single|multi");
  sc->add_option("--gamma", sc_gamma, "Task-reward weight");
  sc->add_option("--delta", sc_delta, "Format-reward weight");

  // eval
  CommonOptions ev_opts;
  std::string ev_kb, ev_qa, ev_index, ev_report, ev_results;
  bool ev_oracle = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a QA set and write a report");
  add_common(ev, ev_opts);
  ev->add_option("--kb", ev_kb, "KB JSONL")->required();
  ev->add_option("--qa", ev_qa, "QA JSONL")->required();
  ev->add_option("--index", ev_index, "Saved index");
  ev->add_option("-o,--report", ev_report, "Report JSON path (stdout when omitted)");
  ev->add_option("--results", ev_results, "Per-record JSONL path");
  ev->add_flag("--oracle", ev_oracle, "Oracle-document setting");

  // sweep
  CommonOptions sw_opts;
  std::string sw_kb, sw_qa, sw_index, sw_axis, sw_values, sw_out;
  bool sw_oracle = false;
  auto* sw = app.add_subcommand("sweep", "Evaluate across values of k or the critic threshold");
  add_common(sw, sw_opts);
  sw->add_option("--kb", sw_kb, "KB JSONL")->required();
  sw->add_option("--qa", sw_qa, "QA JSONL")->required();
  sw->add_option("--index", sw_index, "Saved index");
  sw->add_option("--axis", sw_axis, "k or threshold")->required();
  sw->add_option("--values", sw_values, "Comma-separated values")->required();
  sw->add_option("-o,--out", sw_out, "CSV path (stdout when omitted)");
  sw->add_flag("--oracle", sw_oracle, "Oracle-document setting");

  // grpo-demo
  int gd_iterations = 300, gd_group = PipelineConfig{}.group_size;
  std::uint64_t gd_seed = 1;
  double gd_lr = TrainOptions{}.learning_rate, gd_gamma = PipelineConfig{}.gamma, gd_delta = PipelineConfig{}.delta;
  double gd_eps = PipelineConfig{}.clip_epsilon;
  int gd_len = 5;
  std::string gd_out;
  auto* gd = app.add_subcommand("grpo-demo", "Train the toy policy on the copy-token task; prints a CSV reward curve");
  gd->add_option("--iterations", gd_iterations, "Training iterations");
  gd->add_option("--group", gd_group, "Completions per group");
  gd->add_option("--seed", gd_seed, "RNG seed");
  gd->add_option("--lr", gd_lr, "Learning rate");
  gd->add_option("--gamma", gd_gamma, "Task-reward weight");
  gd->add_option("--delta", gd_delta, "Format-reward weight");
  gd->add_option("--epsilon", gd_eps, "Clip range");
  gd->add_option("--length", gd_len, "Completion length");
  gd->add_option("-o,--out", gd_out, "CSV path (stdout when omitted)");

  // prompts render
  auto* pr_cmd = app.add_subcommand("prompts", "Inspect prompt templates");
  pr_cmd->require_subcommand(1);
  std::string pr_which, pr_question;
  std::vector<std::string> pr_passages;
  std::string pr_answer;
  bool pr_irrelevant = false, pr_template = false;
  auto* pr = pr_cmd->add_subcommand("render", "Render a prompt");
  pr->add_option("which", pr_which, "critic-system|critic-user|generator-system|generator-user|trace-user")
      ->required()
      ->check(CLI::IsMember({"critic-system", "critic-user", "generator-system", "generator-user", "trace-user"}));
  pr->add_option("-q,--question", pr_question, "Question");
  pr->add_option("-p,--passage", pr_passages, "Passage (repeatable)");
  pr->add_option("--answer", pr_answer, "Answer (trace-user)");
  pr->add_flag("--irrelevant", pr_irrelevant, "Mark the passage irrelevant (trace-user)");
  pr->add_flag("--template", pr_template, "Print the unrendered template");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (ib->parsed()) {
    const auto cfg = load_config(ib_opts);
    const auto b = make_backends(cfg);
    const auto kb = ingest_kb(std::filesystem::path(ib_kb));
    const auto index = build_index(kb, *b.embedder);
    index.save(ib_out);
    std::cout << json{{"documents", kb.size()}, {"passages", kb.passage_count()}, {"rows", index.size()},
                      {"dim", index.dim()}}
                     .dump()
              << '\n';
  } else if (is->parsed()) {
    const auto cfg = load_config(is_opts);
    const auto b = make_backends(cfg);
    if (is_image.empty() == is_text.empty()) throw UsageError("give exactly one of --image or --text");
    const auto index = VectorIndex::load(is_index);
    const auto v = b.embedder->embed(is_image.empty() ? Resource::text(is_text) : Resource::image(is_image));
    std::optional<ModalityTag> tag;
    if (!is_tag.empty()) tag = parse_modality_tag(is_tag);
    std::cout << json(index.search(v, cfg.pipeline.top_k, tag)).dump(1) << '\n';
  } else if (rt->parsed()) {
    const auto cfg = load_config(rt_opts);
    const auto b = make_backends(cfg);
    const auto kb = ingest_kb(std::filesystem::path(rt_kb));
    const auto index = index_for(rt_index, kb, b);
    Query q{rt_question, rt_image, rt_crop.empty() ? std::nullopt : std::optional<std::string>(rt_crop)};
    validate(q);
    const auto out = retrieve(q, kb, index, b, cfg.pipeline);
    json j{{"coarse_hits", out.coarse}, {"fine_hits", out.fine.hits}, {"noisy", out.noisy}};
    j["subject"] = out.fine.subject ? json(*out.fine.subject) : json(nullptr);
    j["crop_ref"] = out.fine.crop_ref ? json(*out.fine.crop_ref) : json(nullptr);
    std::cout << j.dump(1) << '\n';
  } else if (ft->parsed()) {
    const auto cfg = load_config(ft_opts);
    const auto b = make_backends(cfg);
    Query q{ft_question, ft_image, std::nullopt};
    validate(q);
    std::vector<Passage> passages;
    const auto text = read_text_file(ft_passages);
    try {
      const auto j = json::parse(text);
      passages = j.get<std::vector<Passage>>();
    } catch (const json::exception&) {
      std::istringstream in(text);
      for_each_jsonl(in, ft_passages, [&](const json& j, std::size_t) { passages.push_back(j.get<Passage>()); });
    }
    const auto res = filter_passages(q, passages, *b.critic, cfg.pipeline.critic_threshold, cfg.pipeline.critic_in_flight);
    std::cout << json{{"verdicts", res.verdicts}, {"relevant", res.relevant}, {"failures", res.failures}}.dump(1)
              << '\n';
    if (res.failures > 0 && res.failures == passages.size()) return kExitBackend;
  } else if (an->parsed()) {
    const auto cfg = load_config(an_opts);
    const auto b = make_backends(cfg);
    const auto kb = ingest_kb(std::filesystem::path(an_kb));
    const auto records = ingest_qa(std::filesystem::path(an_qa));
    const auto& rec = find_record(records, an_id);
    const auto res = an_oracle ? run_oracle(rec, kb, b, cfg.pipeline)
                               : run_pipeline(rec, kb, index_for(an_index, kb, b), b, cfg.pipeline);
    std::cout << json(res).dump(1) << '\n';
  } else if (sc->parsed() && !sc_input.empty()) {
    std::ifstream file;
    if (sc_input != "-") {
      file = open_input(sc_input);
    }
    std::istream& in = sc_input == "-" ? std::cin : file;
    for_each_jsonl(in, sc_input == "-" ? "<stdin>" : sc_input, [&](const json& j, std::size_t) {
      const auto gt = j.at("ground_truth").get<GroundTruth>();
      validate(gt);
      const auto task = j.at("task").get<QuestionTask>();
      validate(task);
      json row = score_output(j.at("output").get<std::string>(), gt, task, sc_gamma, sc_delta);
      if (j.contains("id")) row["id"] = j.at("id");
      std::cout << row.dump() << '\n';
    });
  } else if (sc->parsed()) {
    if (sc_output.empty() && sc_gt.empty()) throw UsageError("score needs --input, or --output with --gt");
    json gtj;
    try {
      gtj = json::parse(sc_gt);
    } catch (const json::exception&) {
      gtj = sc_gt;  // bare string
    }
    const auto gt = gtj.get<GroundTruth>();
    validate(gt);
    QuestionTask task{parse_dataset(sc_dataset), parse_task_kind(sc_kind)};
    validate(task);
    std::cout << json(score_output(read_stdin_or_arg(sc_output), gt, task, sc_gamma, sc_delta)).dump(1) << '\n';
  } else if (ev->parsed()) {
    const auto cfg = load_config(ev_opts);
    const auto b = make_backends(cfg);
    const auto kb = ingest_kb(std::filesystem::path(ev_kb));
    const auto records = ingest_qa(std::filesystem::path(ev_qa));
    const auto index = index_for(ev_index, kb, b);
    const auto results =
        run_batch(records, kb, index, b, cfg.pipeline, ev_oracle ? PipelineMode::oracle : PipelineMode::retrieval);
    if (!ev_results.empty()) {
      std::string lines;
      for (const auto& r : results) lines += json(r).dump() + '\n';
      write_output(ev_results, lines);
    }
    const auto report = evaluate(records, results, cfg.pipeline);
    write_output(ev_report, json(report).dump(1) + '\n');
  } else if (sw->parsed()) {
    const auto cfg = load_config(sw_opts);
    const auto b = make_backends(cfg);
    const auto kb = ingest_kb(std::filesystem::path(sw_kb));
    const auto records = ingest_qa(std::filesystem::path(sw_qa));
    const auto index = index_for(sw_index, kb, b);
    const auto axis = parse_sweep_axis(sw_axis);
    const auto rows = sweep(records, kb, index, b, cfg.pipeline, axis, parse_values(sw_values),
                            sw_oracle ? PipelineMode::oracle : PipelineMode::retrieval);
    write_output(sw_out, sweep_csv(axis, rows));
  } else if (gd->parsed()) {
    if (gd_iterations <= 0 || gd_len <= 0) throw UsageError("iterations and length must be > 0");
    PipelineConfig cfg;
    cfg.group_size = gd_group;
    cfg.gamma = gd_gamma;
    cfg.delta = gd_delta;
    cfg.clip_epsilon = gd_eps;
    validated(cfg);
    CopyTokenTask task;
    ToyPolicy policy(task.vocab_size(), gd_len, task.num_prompts());
    std::ostringstream csv;
    csv << "iteration,mean_task_reward,mean_format_reward,objective\n";
    train_toy(policy, task, cfg, TrainOptions{gd_iterations, gd_lr, gd_seed}, [&](const IterationStats& s) {
      csv << s.iteration << ',' << format_csv_number(s.mean_task_reward) << ','
          << format_csv_number(s.mean_format_reward) << ',' << format_csv_number(s.objective) << '\n';
    });
    write_output(gd_out, csv.str());
  } else if (pr->parsed()) {
    std::string out;
    if (pr_which == "critic-system") {
      out = std::string(prompts::kCriticSystem);
    } else if (pr_which == "critic-user") {
      if (pr_template) out = std::string(prompts::kCriticUser);
      else {
        if (pr_passages.size() != 1) throw UsageError("critic-user needs exactly one --passage");
        out = prompts::critic_user(pr_question, pr_passages.front());
      }
    } else if (pr_which == "generator-system") {
      out = std::string(prompts::kGeneratorSystem);
    } else if (pr_which == "generator-user") {
      out = pr_template ? prompts::generator_user_template() : prompts::generator_user(pr_question, pr_passages);
    } else {
      if (pr_template) out = std::string(prompts::kTraceUser);
      else {
        if (pr_passages.size() != 1) throw UsageError("trace-user needs exactly one --passage");
        out = prompts::trace_user(pr_question, !pr_irrelevant, pr_passages.front(), pr_answer);
      }
    }
    std::cout << out;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const reag::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case reag::ErrorKind::usage: return kExitUsage;
      case reag::ErrorKind::data: return kExitData;
      case reag::ErrorKind::backend: return kExitBackend;
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitData;
}
