#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsr/exec.hpp"
#include "dsr/llm.hpp"

namespace dsr {

struct GenerationContext {
  std::string question;
  std::string schema_text;  // rendered S_sub
  std::string knowledge;
  std::string alignment;
};

enum class Action { kExtend, kRevise, kExplore, kFinalize };
std::string_view to_string(Action action);
std::optional<Action> action_from_string(std::string_view s);

enum class Termination { kFinalized, kIterationCap, kError };
std::string_view to_string(Termination termination);

enum class PathType { kStraightforward, kRefinement, kExploratory };
std::string_view to_string(PathType path);
PathType path_type_from_string(std::string_view s);

struct GenerationStep {
  std::size_t t = 0;  // 1-based
  std::string sql;
  ExecutionResult result;
  std::optional<Action> action_in;  // absent for the initial query
  bool probe = false;               // produced by EXPLORE
};

struct Trajectory {
  std::vector<GenerationStep> steps;
  // Every action chosen, in order; a FINALIZE can only be last.
  std::vector<Action> actions;
  std::string final_sql;
  Termination termination = Termination::kError;
  PathType path_type = PathType::kStraightforward;
  bool action_coerced = false;  // FINALIZE forced after unparsable replies
  bool final_executes = false;
  std::size_t correction_executions = 0;
  std::vector<std::string> notes;
};

struct EvolveConfig {
  std::size_t max_iterations = 10;
  std::size_t correction_rounds = 5;
  double temperature = kDefaultTemperature;
  std::size_t extraction_attempts = 3;
  std::size_t action_attempts = 3;
  std::size_t prompt_rows = 20;
  std::size_t prompt_cols = 10;
  ExecLimits limits;
};

// Extracted SQL, or nullopt after the configured number of attempts.
std::optional<std::string> gen_initial_query(const GenerationContext& ctx, LlmClient& llm,
                                             const EvolveConfig& config = {});

struct ActionDecision {
  Action action = Action::kFinalize;
  std::string rationale;
  bool coerced = false;
};

// `<action>NAME</action>` or a line starting with the action name. Case is
// ignored.
std::optional<ActionDecision> parse_action(std::string_view reply);

ActionDecision select_action(const GenerationContext& ctx, const std::vector<GenerationStep>& history,
                             LlmClient& llm, const EvolveConfig& config = {});

// EXPLORE replies must be read-only SELECTs; others are retried.
std::optional<std::string> gen_next_query(const GenerationContext& ctx,
                                          const std::vector<GenerationStep>& history, Action action,
                                          LlmClient& llm, const EvolveConfig& config = {});

// Falls back to the last executable step when nothing can be extracted.
std::optional<std::string> gen_final_query(const GenerationContext& ctx,
                                           const std::vector<GenerationStep>& history,
                                           LlmClient& llm, const EvolveConfig& config = {});

struct CorrectionResult {
  std::string sql;
  bool executes = false;
  std::size_t executions = 0;
  ExecutionResult last_result;
};

CorrectionResult correct_query(const std::string& sql, const ExecBackend& exec, LlmClient& llm,
                               std::size_t max_rounds = 5, const ExecLimits& limits = {});

Trajectory evolve(const GenerationContext& ctx, LlmClient& llm, const ExecBackend& exec,
                  const EvolveConfig& config = {});

// Exploratory if any EXPLORE, else refinement if any REVISE, else
// straightforward.
PathType classify_path(const std::vector<Action>& actions);
PathType classify_path(const Trajectory& trajectory);

// One completion that decomposes the question and writes a single query,
// followed by correction. No feedback actions.
Trajectory divide_and_conquer(const GenerationContext& ctx, LlmClient& llm, const ExecBackend& exec,
                              const EvolveConfig& config = {});

// One JSON object per step followed by a summary object.
std::vector<nlohmann::json> trajectory_records(std::string_view question_id, const Trajectory& trajectory);
std::string trajectory_jsonl(std::string_view question_id, const Trajectory& trajectory);

// Summary fields of a persisted trajectory file (the last record).
struct TrajectorySummary {
  std::string question_id;
  Termination termination = Termination::kError;
  PathType path_type = PathType::kStraightforward;
  std::string final_sql;
  std::size_t steps = 0;
};
TrajectorySummary read_trajectory_summary(const std::string& path);

}  // namespace dsr
