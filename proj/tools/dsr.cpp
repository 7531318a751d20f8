// Command-line entry point for the text-to-SQL pipeline and its stages.
#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <map>
#include <optional>
#include <string>

#include "dsr/common.hpp"
#include "dsr/driver.hpp"

namespace {

struct Flags {
  std::string config;
  std::string dataset, db_root, out;
  std::string mode, replay, record, scripted, base_url, model;
  std::optional<std::size_t> k, theta_max, max_iters, workers, row_cap;
  std::optional<double> temperature, gen_temperature, timeout;
  std::optional<std::uint64_t> seed;
  bool no_skr = false, no_ass = false, no_saa = false, dc_baseline = false, lenient_replay = false;
};

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kInfraError = 3, kPartial = 4 };

void add_common(CLI::App* cmd, Flags& f, bool compare_mode) {
  cmd->add_option("--config", f.config, "Config file (flags override it)");
  cmd->add_option("--dataset", f.dataset, "Dataset file (JSON array or JSON lines)");
  cmd->add_option("--db-root", f.db_root, "Directory holding <db_id>.sqlite files");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--workers", f.workers, "Questions processed concurrently");
  cmd->add_option("--timeout", f.timeout, "Per-statement timeout in seconds");
  cmd->add_option("--row-cap", f.row_cap, "Rows fetched per statement");
  if (compare_mode) {
    cmd->add_option("--mode", f.mode, "Comparator: strict or lenient");
    return;
  }
  cmd->add_option("--mode", f.mode, "LLM mode: live, record, replay or scripted");
  cmd->add_option("--replay", f.replay, "Replay a recorded transcript");
  cmd->add_option("--record", f.record, "Record completions to this transcript");
  cmd->add_option("--scripted", f.scripted, "Answer from a scripted rules file");
  cmd->add_option("--base-url", f.base_url, "Chat-completions endpoint base URL (live mode)");
  cmd->add_option("--model", f.model, "Model name sent to the endpoint");
  cmd->add_flag("--lenient-replay", f.lenient_replay, "Answer replay misses with empty text");
  cmd->add_option("--k", f.k, "Selection samples per round");
  cmd->add_option("--theta-max", f.theta_max, "Schema token budget");
  cmd->add_option("--temperature", f.temperature, "Selection sampling temperature");
  cmd->add_option("--gen-temperature", f.gen_temperature, "Generation temperature");
  cmd->add_option("--max-iters", f.max_iters, "Generation iteration cap");
  cmd->add_option("--seed", f.seed, "Seed for value sampling");
  cmd->add_flag("--no-skr", f.no_skr, "Skip schema and knowledge refinement");
  cmd->add_flag("--no-ass", f.no_ass, "Skip adaptive schema selection");
  cmd->add_flag("--no-saa", f.no_saa, "Skip schema-aware alignment");
  cmd->add_flag("--dc-baseline", f.dc_baseline, "Use divide-and-conquer generation instead of evolution");
}

dsr::RunConfig build_config(const Flags& f, bool compare_mode) {
  dsr::RunConfig c;
  if (!f.config.empty()) dsr::apply_config_file(c, f.config);
  if (!f.dataset.empty()) c.dataset_path = f.dataset;
  if (!f.db_root.empty()) c.db_root = f.db_root;
  if (!f.out.empty()) c.out_dir = f.out;
  if (f.workers) c.workers = *f.workers;
  if (f.timeout) c.evolve.limits.timeout = std::chrono::milliseconds(static_cast<long long>(*f.timeout * 1000));
  if (f.row_cap) c.evolve.limits.row_cap = *f.row_cap;
  if (compare_mode) {
    if (!f.mode.empty()) c.compare_mode = dsr::compare_mode_from_string(f.mode);
    return c;
  }
  if (!f.scripted.empty()) {
    c.llm.mode = dsr::LlmMode::kScripted;
    c.llm.rules_path = f.scripted;
  }
  if (!f.replay.empty()) {
    c.llm.mode = dsr::LlmMode::kReplay;
    c.llm.transcript_path = f.replay;
  }
  if (!f.record.empty()) {
    c.llm.mode = dsr::LlmMode::kRecord;
    c.llm.transcript_path = f.record;
  }
  if (!f.mode.empty()) {
    if (f.mode == "live") c.llm.mode = dsr::LlmMode::kLive;
    else if (f.mode == "record") c.llm.mode = dsr::LlmMode::kRecord;
    else if (f.mode == "replay") c.llm.mode = dsr::LlmMode::kReplay;
    else if (f.mode == "scripted") c.llm.mode = dsr::LlmMode::kScripted;
    else throw dsr::Error(dsr::ErrorCode::kConfig, "unknown --mode " + f.mode);
  }
  if (!f.base_url.empty()) c.llm.endpoint.base_url = f.base_url;
  if (!f.model.empty()) c.llm.endpoint.model = f.model;
  if (f.lenient_replay) c.llm.strict_replay = false;
  if (f.k) c.selection.k = *f.k;
  if (f.theta_max) c.selection.theta_max = *f.theta_max;
  if (f.temperature) c.selection.temperature = *f.temperature;
  if (f.gen_temperature) c.evolve.temperature = *f.gen_temperature;
  if (f.max_iters) c.evolve.max_iterations = *f.max_iters;
  if (f.seed) c.seed = *f.seed;
  c.no_refine = c.no_refine || f.no_skr;
  c.no_select = c.no_select || f.no_ass;
  c.no_align = c.no_align || f.no_saa;
  c.dc_baseline = c.dc_baseline || f.dc_baseline;
  return c;
}

int exit_code_for(dsr::ErrorCode code) {
  switch (code) {
    case dsr::ErrorCode::kConfig:
    case dsr::ErrorCode::kFormat:
    case dsr::ErrorCode::kMissingArtifact:
      return kConfigError;
    case dsr::ErrorCode::kConnection:
    case dsr::ErrorCode::kNetwork:
    case dsr::ErrorCode::kBackend:
      return kInfraError;
    default:
      return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-to-SQL pipeline with schema refinement and execution-guided generation"};
  app.require_subcommand(1);
  Flags flags;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"refine", "Refine each database's schema and knowledge"},
      {"select", "Select the question-relevant tables"},
      {"align", "Probe the selected tables and summarize the findings"},
      {"generate", "Generate SQL for every question"},
      {"evaluate", "Score generated SQL against the gold queries"},
      {"stats", "Print selection, accuracy and path reports"},
      {"run", "Run every stage end to end"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    subs[name] = app.add_subcommand(name, help);
    add_common(subs[name], flags, name == "evaluate" || name == "stats");
  }
  std::string eval_mode;
  subs["run"]->add_option("--eval-mode", eval_mode, "Comparator for the final report: strict or lenient");

  CLI11_PARSE(app, argc, argv);

  try {
    std::string command;
    for (const auto& [name, sub] : subs)
      if (sub->parsed()) command = name;
    bool compare_mode = command == "evaluate" || command == "stats";
    auto config = build_config(flags, compare_mode);
    if (!eval_mode.empty()) config.compare_mode = dsr::compare_mode_from_string(eval_mode);
    dsr::Pipeline pipeline(config);

    std::size_t failures = 0;
    if (command == "refine") {
      failures = pipeline.stage_refine();
    } else if (command == "select") {
      failures = pipeline.stage_select();
    } else if (command == "align") {
      failures = pipeline.stage_align();
    } else if (command == "generate") {
      failures = pipeline.stage_generate();
    } else if (command == "evaluate") {
      fmt::print("{}", dsr::report_text(pipeline.stage_evaluate()));
    } else if (command == "stats") {
      fmt::print("{}", pipeline.stats());
    } else {
      auto manifest = pipeline.run();
      failures = manifest.failures();
      if (manifest.report) fmt::print("{}", dsr::report_text(*manifest.report));
      fmt::print("LLM calls: {}\n", manifest.llm_calls);
    }
    if (failures > 0) {
      fmt::print(stderr, "{} item(s) failed\n", failures);
      return kPartial;
    }
    return kOk;
  } catch (const dsr::Error& e) {
    fmt::print(stderr, "error ({}): {}\n", dsr::to_string(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kFailure;
  }
}
