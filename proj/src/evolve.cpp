#include "dsr/evolve.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <regex>

#include "dsr/common.hpp"
#include "dsr/sql_text.hpp"
#include "dsr/tokens.hpp"

namespace dsr {

std::string_view to_string(Action action) {
  switch (action) {
    case Action::kExtend: return "EXTEND";
    case Action::kRevise: return "REVISE";
    case Action::kExplore: return "EXPLORE";
    case Action::kFinalize: return "FINALIZE";
  }
  return "?";
}

std::optional<Action> action_from_string(std::string_view s) {
  for (auto a : {Action::kExtend, Action::kRevise, Action::kExplore, Action::kFinalize})
    if (iequals(to_string(a), trim(s))) return a;
  return std::nullopt;
}

std::string_view to_string(Termination termination) {
  switch (termination) {
    case Termination::kFinalized: return "FINALIZED";
    case Termination::kIterationCap: return "ITERATION_CAP";
    case Termination::kError: return "ERROR";
  }
  return "?";
}

namespace {

Termination termination_from_string(std::string_view s) {
  for (auto t : {Termination::kFinalized, Termination::kIterationCap, Termination::kError})
    if (to_string(t) == s) return t;
  throw Error(ErrorCode::kFormat, "unknown termination: " + std::string(s));
}

}  // namespace

std::string_view to_string(PathType path) {
  switch (path) {
    case PathType::kStraightforward: return "STRAIGHTFORWARD";
    case PathType::kRefinement: return "REFINEMENT";
    case PathType::kExploratory: return "EXPLORATORY";
  }
  return "?";
}

PathType path_type_from_string(std::string_view s) {
  for (auto p : {PathType::kStraightforward, PathType::kRefinement, PathType::kExploratory})
    if (to_string(p) == s) return p;
  throw Error(ErrorCode::kFormat, "unknown path type: " + std::string(s));
}

namespace {

constexpr std::string_view kSystemPrompt =
    "You are an expert SQL developer. You answer questions about a database by writing SQL, "
    "executing it, and improving it based on the results.";

std::string context_block(const GenerationContext& ctx) {
  std::string out = "Database schema:\n" + ctx.schema_text + "\n";
  if (!trim(ctx.knowledge).empty()) out += "\nReference knowledge:\n" + ctx.knowledge + "\n";
  if (!trim(ctx.alignment).empty()) out += "\nObservations from exploring the data:\n" + ctx.alignment + "\n";
  out += "\nQuestion: " + ctx.question + "\n";
  return out;
}

std::string history_block(const std::vector<GenerationStep>& history, const EvolveConfig& config) {
  std::string out;
  for (const auto& step : history) {
    out += fmt::format("\nStep {}{}:\nSQL:\n{}\nResult:\n{}\n", step.t,
                       step.action_in ? fmt::format(" ({})", to_string(*step.action_in)) : "",
                       step.sql, to_tsv(step.result, config.prompt_rows, config.prompt_cols));
  }
  return out;
}

CompletionRequest make_request(std::string tag, std::string user, const EvolveConfig& config) {
  CompletionRequest request;
  request.tag = std::move(tag);
  request.temperature = config.temperature;
  request.messages = {{"system", std::string(kSystemPrompt)}, {"user", std::move(user)}};
  return request;
}

// Retries with distinct sample indices so replay and scripting can tell
// attempts apart.
std::optional<std::string> extract_with_retries(LlmClient& llm, const CompletionRequest& request,
                                                std::size_t attempts, bool read_only_required) {
  for (std::size_t i = 0; i < std::max<std::size_t>(1, attempts); ++i) {
    std::string reply;
    try {
      reply = llm.complete(request, i);
    } catch (const Error&) {
      continue;
    }
    auto sql = extract_sql(reply);
    if (!sql || trim(*sql).empty()) continue;
    if (read_only_required && !is_read_only_select(*sql)) continue;
    return sql;
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::string> gen_initial_query(const GenerationContext& ctx, LlmClient& llm,
                                             const EvolveConfig& config) {
  auto request = make_request("evolve.initial",
                              context_block(ctx) +
                                  "\nWrite a first SQL query toward answering the question. It may "
                                  "answer only part of it. Put the query inside <sql></sql> tags.",
                              config);
  return extract_with_retries(llm, request, config.extraction_attempts, false);
}

std::optional<ActionDecision> parse_action(std::string_view reply) {
  static const std::regex tagged(R"(<action>\s*([A-Za-z]+)\s*</action>)", std::regex::icase);
  static const std::regex line(R"(^\s*(?:action\s*:\s*)?\**\s*(extend|revise|explore|finalize)\b\**\s*[:.\-]?\s*(.*)$)",
                               std::regex::icase);
  std::string text(reply);
  std::smatch m;
  if (std::regex_search(text, m, tagged)) {
    if (auto a = action_from_string(m[1].str())) {
      std::string rationale(trim(std::string_view(text).substr(m.position(0) + m.length(0))));
      return ActionDecision{*a, rationale, false};
    }
  }
  for (const auto& l : split(text, '\n')) {
    if (std::regex_match(l, m, line)) {
      if (auto a = action_from_string(m[1].str())) return ActionDecision{*a, std::string(trim(m[2].str())), false};
    }
  }
  return std::nullopt;
}

ActionDecision select_action(const GenerationContext& ctx, const std::vector<GenerationStep>& history,
                             LlmClient& llm, const EvolveConfig& config) {
  if (history.empty()) throw Error(ErrorCode::kConfig, "select_action needs a non-empty history");
  auto request = make_request(
      "evolve.action",
      context_block(ctx) + "\nQueries executed so far:" + history_block(history, config) +
          "\nChoose the next action:\n"
          "EXTEND: the last result is correct but incomplete; build the next part of the answer on it.\n"
          "REVISE: the last query failed or its logic does not match the question; fix it.\n"
          "EXPLORE: the last result is empty or surprising; run a read-only query to inspect the data.\n"
          "FINALIZE: the results so far are enough to write the complete answer.\n"
          "Reply with <action>NAME</action> followed by a one-sentence reason.",
      config);
  for (std::size_t i = 0; i < std::max<std::size_t>(1, config.action_attempts); ++i) {
    try {
      if (auto d = parse_action(llm.complete(request, i))) return *d;
    } catch (const Error&) {
    }
  }
  return ActionDecision{Action::kFinalize, "no parsable action; finalizing", true};
}

std::optional<std::string> gen_next_query(const GenerationContext& ctx,
                                          const std::vector<GenerationStep>& history, Action action,
                                          LlmClient& llm, const EvolveConfig& config) {
  if (action == Action::kFinalize) throw Error(ErrorCode::kConfig, "gen_next_query does not finalize");
  std::string instruction;
  switch (action) {
    case Action::kExtend:
      instruction = "Extend the last query with the next part of the answer.";
      break;
    case Action::kRevise:
      instruction = "Revise the last query to fix its error or its logic.";
      break;
    default:
      instruction = "Write one read-only SELECT that inspects the stored data to explain the last result.";
      break;
  }
  auto request = make_request(fmt::format("evolve.next.{}", to_lower(to_string(action))),
                              context_block(ctx) + "\nQueries executed so far:" +
                                  history_block(history, config) + "\n" + instruction +
                                  " Put the query inside <sql></sql> tags.",
                              config);
  return extract_with_retries(llm, request, config.extraction_attempts, action == Action::kExplore);
}

std::optional<std::string> gen_final_query(const GenerationContext& ctx,
                                           const std::vector<GenerationStep>& history,
                                           LlmClient& llm, const EvolveConfig& config) {
  auto request = make_request("evolve.final",
                              context_block(ctx) + "\nQueries executed so far:" +
                                  history_block(history, config) +
                                  "\nWrite the complete SQL query that answers the question, using "
                                  "what the results above revealed. Put it inside <sql></sql> tags.",
                              config);
  if (auto sql = extract_with_retries(llm, request, 1, false)) return sql;
  for (auto it = history.rbegin(); it != history.rend(); ++it)
    if (it->result.ok()) return it->sql;
  return std::nullopt;
}

CorrectionResult correct_query(const std::string& sql, const ExecBackend& exec, LlmClient& llm,
                               std::size_t max_rounds, const ExecLimits& limits) {
  CorrectionResult out;
  out.sql = sql;
  out.last_result = exec.execute(out.sql, limits);
  out.executions = 1;
  for (std::size_t round = 0; round < max_rounds && !out.last_result.ok(); ++round) {
    CompletionRequest request;
    request.tag = "evolve.correct";
    request.messages = {
        {"system", std::string(kSystemPrompt)},
        {"user", fmt::format("This SQL query fails:\n{}\n\nError: {} ({})\n\nReturn a corrected query "
                             "that keeps the same intent. Put it inside <sql></sql> tags.",
                             out.sql, out.last_result.error->message,
                             to_string(out.last_result.error->kind))}};
    std::optional<std::string> repaired;
    try {
      repaired = extract_sql(llm.complete(request, round));
    } catch (const Error&) {
    }
    if (!repaired || trim(*repaired).empty()) continue;
    out.sql = *repaired;
    out.last_result = exec.execute(out.sql, limits);
    ++out.executions;
  }
  out.executes = out.last_result.ok();
  return out;
}

PathType classify_path(const std::vector<Action>& actions) {
  auto has = [&](Action a) { return std::find(actions.begin(), actions.end(), a) != actions.end(); };
  if (has(Action::kExplore)) return PathType::kExploratory;
  if (has(Action::kRevise)) return PathType::kRefinement;
  return PathType::kStraightforward;
}

PathType classify_path(const Trajectory& trajectory) { return classify_path(trajectory.actions); }

namespace {

void finish(Trajectory& traj, const std::optional<std::string>& final_sql, const ExecBackend& exec,
            LlmClient& llm, const EvolveConfig& config) {
  if (!final_sql) {
    traj.termination = Termination::kError;
    traj.notes.push_back("no final query could be produced");
  } else {
    auto corrected = correct_query(*final_sql, exec, llm, config.correction_rounds, config.limits);
    traj.final_sql = corrected.sql;
    traj.final_executes = corrected.executes;
    traj.correction_executions = corrected.executions;
  }
  traj.path_type = classify_path(traj);
}

}  // namespace

namespace {

Trajectory evolve_loop(const GenerationContext& ctx, LlmClient& llm, const ExecBackend& exec,
                       const EvolveConfig& config, Trajectory& traj) {
  auto sql = gen_initial_query(ctx, llm, config);
  if (!sql) {
    traj.termination = Termination::kError;
    traj.notes.push_back("no SQL could be extracted for the initial query");
    return traj;
  }

  std::optional<Action> action_in;
  for (std::size_t t = 1;; ++t) {
    GenerationStep step;
    step.t = t;
    step.sql = *sql;
    step.action_in = action_in;
    step.probe = action_in == Action::kExplore;
    step.result = exec.execute(step.sql, config.limits);
    traj.steps.push_back(std::move(step));

    auto decision = select_action(ctx, traj.steps, llm, config);
    traj.actions.push_back(decision.action);
    if (decision.action == Action::kFinalize) {
      if (decision.coerced) {
        traj.action_coerced = true;
        traj.notes.push_back(fmt::format("FINALIZE forced at step {} after unparsable action replies", t));
      }
      traj.termination = Termination::kFinalized;
      finish(traj, gen_final_query(ctx, traj.steps, llm, config), exec, llm, config);
      return traj;
    }
    if (t >= config.max_iterations) {
      traj.termination = Termination::kIterationCap;
      traj.notes.push_back(fmt::format("iteration cap {} reached; finalizing", config.max_iterations));
      finish(traj, gen_final_query(ctx, traj.steps, llm, config), exec, llm, config);
      return traj;
    }
    sql = gen_next_query(ctx, traj.steps, decision.action, llm, config);
    if (!sql) {
      traj.notes.push_back(fmt::format("no SQL could be extracted after {} at step {}",
                                       to_string(decision.action), t));
      // The best executable query so far is kept as the answer.
      for (auto it = traj.steps.rbegin(); it != traj.steps.rend(); ++it) {
        if (it->result.ok()) {
          traj.final_sql = it->sql;
          traj.final_executes = true;
          break;
        }
      }
      traj.termination = Termination::kError;
      traj.path_type = classify_path(traj);
      return traj;
    }
    action_in = decision.action;
  }
}

}  // namespace

Trajectory evolve(const GenerationContext& ctx, LlmClient& llm, const ExecBackend& exec,
                  const EvolveConfig& config) {
  if (config.max_iterations < 1) throw Error(ErrorCode::kConfig, "max_iterations must be at least 1");
  Trajectory traj;
  try {
    return evolve_loop(ctx, llm, exec, config, traj);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kConnection && e.code() != ErrorCode::kBackend) throw;
    traj.termination = Termination::kError;
    traj.notes.push_back(std::string("backend unavailable: ") + e.what());
    traj.path_type = classify_path(traj);
    return traj;
  }
}

Trajectory divide_and_conquer(const GenerationContext& ctx, LlmClient& llm, const ExecBackend& exec,
                              const EvolveConfig& config) {
  Trajectory traj;
  auto request = make_request(
      "evolve.divide_and_conquer",
      context_block(ctx) +
          "\nBreak the question into sub-questions, write a SQL query for each, then combine them "
          "into one final query. Put only the final query inside <sql></sql> tags.",
      config);
  auto sql = extract_with_retries(llm, request, 1, false);
  if (!sql) {
    traj.termination = Termination::kError;
    traj.notes.push_back("no SQL could be extracted from the decomposition");
    return traj;
  }
  auto corrected = correct_query(*sql, exec, llm, config.correction_rounds, config.limits);
  GenerationStep step;
  step.t = 1;
  step.sql = *sql;
  step.result = exec.execute(*sql, config.limits);
  traj.steps.push_back(std::move(step));
  traj.final_sql = corrected.sql;
  traj.final_executes = corrected.executes;
  traj.correction_executions = corrected.executions;
  traj.termination = Termination::kFinalized;
  traj.path_type = classify_path(traj);
  return traj;
}

std::vector<nlohmann::json> trajectory_records(std::string_view question_id, const Trajectory& trajectory) {
  std::vector<nlohmann::json> out;
  for (const auto& step : trajectory.steps) {
    auto r = result_to_json(step.result, 20);
    out.push_back({{"question_id", question_id},
                   {"t", step.t},
                   {"action_in", step.action_in ? nlohmann::json(to_string(*step.action_in)) : nlohmann::json()},
                   {"probe", step.probe},
                   {"sql", step.sql},
                   {"columns", r["columns"]},
                   {"rows_truncated", r["rows"]},
                   {"error", r["error"]},
                   // What this step adds to later prompts.
                   {"tokens", estimate_tokens(step.sql) + estimate_tokens(to_tsv(step.result))}});
  }
  std::vector<std::string> actions;
  for (auto a : trajectory.actions) actions.emplace_back(to_string(a));
  out.push_back({{"question_id", question_id},
                 {"summary", true},
                 {"termination", to_string(trajectory.termination)},
                 {"path_type", to_string(trajectory.path_type)},
                 {"final_sql", trajectory.final_sql},
                 {"final_executes", trajectory.final_executes},
                 {"actions", actions},
                 {"steps", trajectory.steps.size()},
                 {"action_coerced", trajectory.action_coerced},
                 {"correction_executions", trajectory.correction_executions},
                 {"notes", trajectory.notes}});
  return out;
}

std::string trajectory_jsonl(std::string_view question_id, const Trajectory& trajectory) {
  std::string out;
  for (const auto& r : trajectory_records(question_id, trajectory)) out += r.dump() + "\n";
  return out;
}

TrajectorySummary read_trajectory_summary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "missing trajectory file: " + path);
  std::optional<nlohmann::json> last;
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) last = nlohmann::json::parse(line);
  if (!last || !last->value("summary", false))
    throw Error(ErrorCode::kFormat, "trajectory file has no summary record: " + path);
  TrajectorySummary s;
  s.question_id = last->value("question_id", "");
  s.termination = termination_from_string(last->at("termination").get<std::string>());
  s.path_type = path_type_from_string(last->at("path_type").get<std::string>());
  s.final_sql = last->value("final_sql", "");
  s.steps = last->value("steps", std::size_t{0});
  return s;
}

}  // namespace dsr
