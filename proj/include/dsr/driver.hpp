#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsr/align.hpp"
#include "dsr/evaluate.hpp"
#include "dsr/evolve.hpp"
#include "dsr/llm.hpp"
#include "dsr/refine.hpp"
#include "dsr/select.hpp"

namespace dsr {

struct RunConfig {
  std::string dataset_path;
  std::string db_root;
  std::string out_dir = "out";
  LlmConfig llm;
  RefineConfig refine;
  SelectionConfig selection;
  AlignConfig align;
  EvolveConfig evolve;
  CompareMode compare_mode = CompareMode::kStrict;
  std::uint64_t seed = 42;
  std::size_t workers = 1;

  // Ablations; each replaces one stage with its pass-through or baseline.
  bool no_refine = false;   // S' = S
  bool no_select = false;   // S_sub = S'
  bool no_align = false;    // empty alignment summary
  bool dc_baseline = false; // divide-and-conquer instead of evolution

  // Throws CONFIG when a required field is missing or out of range.
  void validate() const;
};

// Applies a config document to `config`. The document is a subset of TOML:
// [section] headers, `key = value` lines, # comments, quoted strings,
// integers, floats and booleans. Unknown keys are CONFIG errors.
void apply_config_text(RunConfig& config, std::string_view text);
void apply_config_file(RunConfig& config, const std::string& path);

nlohmann::json config_snapshot(const RunConfig& config);

// <root>/<db_id>/<db_id>.sqlite, then <root>/<db_id>.sqlite.
std::optional<std::filesystem::path> find_database(const std::string& root, const std::string& db_id);

// Artifact paths under the output directory.
struct ArtifactLayout {
  std::filesystem::path root;

  std::filesystem::path refined(const std::string& db_id) const;
  std::filesystem::path selection(const std::string& question_id) const;
  std::filesystem::path selection_log() const;
  std::filesystem::path probe_cache(const std::string& question_id) const;
  std::filesystem::path alignment(const std::string& question_id) const;
  std::filesystem::path alignment_summary(const std::string& question_id) const;
  std::filesystem::path trajectory(const std::string& question_id) const;
  std::filesystem::path final_sql(const std::string& question_id) const;
  std::filesystem::path manifest() const;
  std::filesystem::path report_json() const;
  std::filesystem::path report_text() const;
};

struct QuestionRecord {
  std::string question_id;
  std::string db_id;
  std::string status = "OK";  // OK or FAILED
  std::optional<std::string> error;
  std::map<std::string, std::string> artifacts;  // stage -> relative path
  std::map<std::string, double> timings_ms;
};

struct RunManifest {
  nlohmann::json config;
  std::vector<QuestionRecord> questions;  // dataset order
  std::size_t llm_calls = 0;
  std::optional<EvalReport> report;

  std::size_t failures() const;
};

nlohmann::json manifest_to_json(const RunManifest& manifest, bool include_timings = true);

// Shared state of one invocation: dataset, databases, LLM client and the
// per-db refinement cache.
class Pipeline {
 public:
  explicit Pipeline(RunConfig config, std::shared_ptr<LlmClient> llm = nullptr);

  const RunConfig& config() const { return config_; }
  const std::vector<DatasetItem>& dataset() const { return dataset_; }
  const ArtifactLayout& layout() const { return layout_; }
  // Created on first use so evaluation needs no LLM configuration.
  LlmClient& llm();

  std::shared_ptr<ExecBackend> backend(const std::string& db_id);

  // Loads or computes the refined schema for db_id, keyed by the catalog
  // hash of the database as ingested.
  const std::pair<RefinedSchema, RefinedKnowledge>& refined(const std::string& db_id);
  // Reads a prior refine artifact; MISSING_ARTIFACT names `refine` otherwise.
  const std::pair<RefinedSchema, RefinedKnowledge>& refined_artifact(const std::string& db_id);

  SelectionTrace run_select(const DatasetItem& item, const RefinedSchema& refined,
                            const RefinedKnowledge& knowledge);
  AlignmentSummary run_align(const DatasetItem& item, const RefinedSchema& refined,
                             const SelectionTrace& selection);
  Trajectory run_generate(const DatasetItem& item, const RefinedSchema& refined,
                          const RefinedKnowledge& knowledge, const SelectionTrace& selection,
                          const std::string& alignment);

  // Stage commands over the whole dataset. Per-question failures are
  // reported on stderr and counted; the return value is that count.
  std::size_t stage_refine();
  std::size_t stage_select();
  std::size_t stage_align();
  std::size_t stage_generate();
  EvalReport stage_evaluate();
  // Table-style report built from existing artifacts.
  std::string stats();

  RunManifest run();

 private:
  std::string knowledge_for(const DatasetItem& item, const RefinedKnowledge& knowledge) const;
  SelectionTrace load_selection(const DatasetItem& item) const;
  std::string load_alignment(const DatasetItem& item) const;
  std::optional<SelectionReport> selection_summary();
  std::map<std::string, Prediction> load_predictions() const;
  // Rebuilds selection.jsonl from the per-question files in dataset order.
  void write_selection_log() const;
  // Runs fn per question on the worker pool; returns the error per question.
  std::vector<std::optional<std::string>> for_each_question(
      const std::function<void(const DatasetItem&, QuestionRecord&)>& fn,
      std::vector<QuestionRecord>* records = nullptr);

  RunConfig config_;
  ArtifactLayout layout_;
  std::vector<DatasetItem> dataset_;
  std::shared_ptr<LlmClient> llm_;
  std::mutex llm_mutex_;
  std::mutex backend_mutex_;
  std::mutex refine_mutex_;
  std::map<std::string, std::shared_ptr<ExecBackend>> backends_;
  std::map<std::string, std::unique_ptr<std::pair<RefinedSchema, RefinedKnowledge>>> refined_;
};

RunManifest run_pipeline(const RunConfig& config);

}  // namespace dsr
