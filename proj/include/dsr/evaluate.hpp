#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsr/evolve.hpp"
#include "dsr/exec.hpp"
#include "dsr/select.hpp"

namespace dsr {

struct DatasetItem {
  std::string question_id;
  std::string db_id;
  std::string question;
  std::optional<std::string> evidence;
  std::optional<std::string> gold_sql;
};

// JSON array or JSON lines. Accepts `SQL`, `gold_sql` or `query` for the
// gold query; numeric question ids are stringified.
std::vector<DatasetItem> load_dataset(const std::string& path);
std::vector<DatasetItem> dataset_from_json(const nlohmann::json& items);

// Absolute tolerance scaled by the larger magnitude.
inline constexpr double kRealTolerance = 1e-6;
bool values_equal(const Value& a, const Value& b);

// Column count and row multiset must agree, columns in order. With
// ordered=true rows must also agree in sequence. Error results never match.
bool compare_strict(const ExecutionResult& pred, const ExecutionResult& gold, bool ordered = false);

// Some injective mapping of gold columns onto pred columns reproduces the
// gold rows from pred.
bool compare_lenient(const ExecutionResult& pred, const ExecutionResult& gold, bool ordered = false);

enum class CompareMode { kStrict, kLenient };
std::string_view to_string(CompareMode mode);
CompareMode compare_mode_from_string(std::string_view s);

struct Prediction {
  std::string sql;
  std::optional<PathType> path_type;
  std::optional<Termination> termination;
};

struct ItemOutcome {
  std::string question_id;
  std::string db_id;
  // OK, NO_GOLD, GOLD_ERROR, INFRA_ERROR or NO_PREDICTION.
  std::string status = "OK";
  bool evaluable = false;
  bool matched = false;
  std::optional<PathType> path_type;
  std::optional<Termination> termination;
  std::optional<std::string> detail;
};

struct PathTally {
  std::size_t matched = 0;
  std::size_t total = 0;
};

struct SelectionReport {
  std::size_t questions = 0;
  double precision = 0.0;
  double recall = 0.0;
  double avg_llm_calls = 0.0;
  double avg_tokens = 0.0;
};

struct EvalReport {
  CompareMode mode = CompareMode::kStrict;
  std::vector<ItemOutcome> items;  // ordered by question_id
  std::size_t matched = 0;
  std::size_t evaluable = 0;
  std::map<PathType, PathTally> per_path;
  std::optional<SelectionReport> selection;

  double ex() const { return evaluable == 0 ? 0.0 : 100.0 * double(matched) / double(evaluable); }
};

using BackendResolver = std::function<std::shared_ptr<ExecBackend>(const std::string& db_id)>;

EvalReport evaluate_run(const std::vector<DatasetItem>& dataset,
                        const std::map<std::string, Prediction>& predictions,
                        const BackendResolver& backends, CompareMode mode,
                        const ExecLimits& limits = {}, std::size_t concurrency = 4);

// Macro-averaged selection metrics over questions that have a gold set.
SelectionReport selection_report(const std::map<std::string, SelectionTrace>& selections,
                                 const std::map<std::string, std::set<std::string>>& gold_tables);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_text(const EvalReport& report);

}  // namespace dsr
