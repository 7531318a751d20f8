#include "dsr/evaluate.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dsr/common.hpp"
#include "dsr/parallel.hpp"
#include "dsr/sql_text.hpp"

namespace dsr {

namespace {

std::string id_text(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  return j.dump();
}

std::optional<std::string> string_field(const nlohmann::json& j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    if (auto it = j.find(k); it != j.end() && it->is_string()) return it->get<std::string>();
  }
  return std::nullopt;
}

}  // namespace

std::vector<DatasetItem> dataset_from_json(const nlohmann::json& items) {
  std::vector<DatasetItem> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& j = items[i];
    DatasetItem item;
    item.question_id = j.contains("question_id") ? id_text(j["question_id"]) : std::to_string(i);
    item.db_id = j.at("db_id").get<std::string>();
    item.question = j.at("question").get<std::string>();
    item.evidence = string_field(j, {"evidence", "external_knowledge"});
    if (item.evidence && trim(*item.evidence).empty()) item.evidence.reset();
    item.gold_sql = string_field(j, {"SQL", "gold_sql", "query"});
    if (!seen.insert(item.question_id).second)
      throw Error(ErrorCode::kFormat, "duplicate question_id in dataset: " + item.question_id);
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<DatasetItem> load_dataset(const std::string& path) {
  std::string text = read_file(path);
  try {
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') return dataset_from_json(nlohmann::json::parse(text));
    auto items = nlohmann::json::array();
    for (const auto& line : split(text, '\n'))
      if (!trim(line).empty()) items.push_back(nlohmann::json::parse(line));
    return dataset_from_json(items);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, "cannot parse dataset " + path + ": " + e.what());
  }
}

bool values_equal(const Value& a, const Value& b) {
  if (is_null(a) || is_null(b)) return is_null(a) && is_null(b);
  if (is_numeric(a) && is_numeric(b)) {
    if (std::holds_alternative<std::int64_t>(a) && std::holds_alternative<std::int64_t>(b))
      return std::get<std::int64_t>(a) == std::get<std::int64_t>(b);
    double x = as_double(a), y = as_double(b);
    if (x == y) return true;
    if (std::isnan(x) || std::isnan(y)) return std::isnan(x) && std::isnan(y);
    return std::fabs(x - y) <= kRealTolerance * std::max(std::fabs(x), std::fabs(y));
  }
  if (std::holds_alternative<std::string>(a) && std::holds_alternative<std::string>(b))
    return std::get<std::string>(a) == std::get<std::string>(b);
  return false;
}

namespace {

// Total order consistent with values_equal up to tolerance: NULL, numbers,
// then text.
bool value_less(const Value& a, const Value& b) {
  auto rank = [](const Value& v) { return is_null(v) ? 0 : is_numeric(v) ? 1 : 2; };
  if (rank(a) != rank(b)) return rank(a) < rank(b);
  if (is_null(a)) return false;
  if (is_numeric(a)) return as_double(a) < as_double(b) && !values_equal(a, b);
  return std::get<std::string>(a) < std::get<std::string>(b);
}

bool row_less(const Row& a, const Row& b) {
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (value_less(a[i], b[i])) return true;
    if (value_less(b[i], a[i])) return false;
  }
  return a.size() < b.size();
}

bool rows_equal(const Row& a, const Row& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!values_equal(a[i], b[i])) return false;
  return true;
}

bool row_lists_equal(std::vector<Row> a, std::vector<Row> b, bool ordered) {
  if (a.size() != b.size()) return false;
  if (!ordered) {
    std::stable_sort(a.begin(), a.end(), row_less);
    std::stable_sort(b.begin(), b.end(), row_less);
  }
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!rows_equal(a[i], b[i])) return false;
  return true;
}

std::vector<Value> column_values(const std::vector<Row>& rows, std::size_t c) {
  std::vector<Value> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

bool value_lists_equal(std::vector<Value> a, std::vector<Value> b) {
  std::stable_sort(a.begin(), a.end(), value_less);
  std::stable_sort(b.begin(), b.end(), value_less);
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!values_equal(a[i], b[i])) return false;
  return true;
}

std::vector<Row> project(const std::vector<Row>& rows, const std::vector<std::size_t>& columns) {
  std::vector<Row> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    Row p;
    p.reserve(columns.size());
    for (auto c : columns) p.push_back(r[c]);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

bool compare_strict(const ExecutionResult& pred, const ExecutionResult& gold, bool ordered) {
  if (!pred.ok() || !gold.ok()) return false;
  if (pred.columns.size() != gold.columns.size()) return false;
  return row_lists_equal(pred.rows, gold.rows, ordered);
}

bool compare_lenient(const ExecutionResult& pred, const ExecutionResult& gold, bool ordered) {
  if (!pred.ok() || !gold.ok()) return false;
  const std::size_t g = gold.columns.size(), p = pred.columns.size();
  if (g > p || pred.rows.size() != gold.rows.size()) return false;

  // A gold column can only map to a pred column holding the same values.
  std::vector<std::vector<std::size_t>> options(g);
  for (std::size_t i = 0; i < g; ++i) {
    auto gv = column_values(gold.rows, i);
    for (std::size_t j = 0; j < p; ++j)
      if (value_lists_equal(gv, column_values(pred.rows, j))) options[i].push_back(j);
    if (options[i].empty()) return false;
  }

  std::vector<std::size_t> mapping(g);
  std::vector<bool> used(p, false);
  std::function<bool(std::size_t)> search = [&](std::size_t i) {
    if (i == g) return row_lists_equal(project(pred.rows, mapping), gold.rows, ordered);
    for (auto j : options[i]) {
      if (used[j]) continue;
      used[j] = true;
      mapping[i] = j;
      if (search(i + 1)) return true;
      used[j] = false;
    }
    return false;
  };
  return search(0);
}

std::string_view to_string(CompareMode mode) { return mode == CompareMode::kStrict ? "strict" : "lenient"; }

CompareMode compare_mode_from_string(std::string_view s) {
  if (iequals(s, "strict")) return CompareMode::kStrict;
  if (iequals(s, "lenient")) return CompareMode::kLenient;
  throw Error(ErrorCode::kConfig, "unknown comparison mode: " + std::string(s));
}

EvalReport evaluate_run(const std::vector<DatasetItem>& dataset,
                        const std::map<std::string, Prediction>& predictions,
                        const BackendResolver& backends, CompareMode mode, const ExecLimits& limits,
                        std::size_t concurrency) {
  EvalReport report;
  report.mode = mode;
  report.items.resize(dataset.size());
  parallel_for(dataset.size(), concurrency, [&](std::size_t i) {
    const auto& item = dataset[i];
    auto& out = report.items[i];
    out.question_id = item.question_id;
    out.db_id = item.db_id;
    auto pred = predictions.find(item.question_id);
    if (pred != predictions.end()) {
      out.path_type = pred->second.path_type;
      out.termination = pred->second.termination;
    }
    if (!item.gold_sql) {
      out.status = "NO_GOLD";
      return;
    }
    std::shared_ptr<ExecBackend> exec;
    try {
      exec = backends(item.db_id);
    } catch (const Error& e) {
      out.detail = e.what();
    }
    if (!exec) {
      out.status = "INFRA_ERROR";
      if (!out.detail) out.detail = "database not found: " + item.db_id;
      return;
    }
    auto gold = exec->execute(*item.gold_sql, limits);
    if (!gold.ok()) {
      out.status = "GOLD_ERROR";
      out.detail = gold.error->message;
      return;
    }
    out.evaluable = true;
    if (pred == predictions.end() || trim(pred->second.sql).empty()) {
      out.status = "NO_PREDICTION";
      return;
    }
    auto result = exec->execute(pred->second.sql, limits);
    if (!result.ok()) out.detail = result.error->message;
    bool ordered = has_top_level_order_by(pred->second.sql) && has_top_level_order_by(*item.gold_sql);
    out.matched = mode == CompareMode::kStrict ? compare_strict(result, gold, ordered)
                                               : compare_lenient(result, gold, ordered);
  });

  std::sort(report.items.begin(), report.items.end(),
            [](const ItemOutcome& a, const ItemOutcome& b) { return a.question_id < b.question_id; });
  for (const auto& item : report.items) {
    if (!item.evaluable) continue;
    ++report.evaluable;
    report.matched += item.matched;
    if (item.path_type) {
      auto& tally = report.per_path[*item.path_type];
      ++tally.total;
      tally.matched += item.matched;
    }
  }
  return report;
}

SelectionReport selection_report(const std::map<std::string, SelectionTrace>& selections,
                                 const std::map<std::string, std::set<std::string>>& gold_tables) {
  SelectionReport report;
  double precision = 0, recall = 0, calls = 0, tokens = 0;
  for (const auto& [qid, trace] : selections) {
    auto gold = gold_tables.find(qid);
    if (gold == gold_tables.end() || gold->second.empty()) continue;
    auto m = selection_metrics({trace.final_tables.begin(), trace.final_tables.end()}, gold->second);
    ++report.questions;
    precision += m.precision();
    recall += m.recall();
    calls += double(trace.llm_calls);
    tokens += double(trace.tokens_sent);
  }
  if (report.questions > 0) {
    double n = double(report.questions);
    report.precision = precision / n;
    report.recall = recall / n;
    report.avg_llm_calls = calls / n;
    report.avg_tokens = tokens / n;
  }
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  auto items = nlohmann::json::array();
  for (const auto& i : report.items) {
    nlohmann::json j = {{"question_id", i.question_id}, {"db_id", i.db_id},         {"status", i.status},
                        {"evaluable", i.evaluable},     {"matched", i.matched},     {"mode", to_string(report.mode)}};
    j["path_type"] = i.path_type ? nlohmann::json(to_string(*i.path_type)) : nlohmann::json();
    j["termination"] = i.termination ? nlohmann::json(to_string(*i.termination)) : nlohmann::json();
    if (i.detail) j["detail"] = *i.detail;
    items.push_back(std::move(j));
  }
  nlohmann::json per_path = nlohmann::json::object();
  for (const auto& [path, tally] : report.per_path) {
    per_path[std::string(to_string(path))] = {
        {"matched", tally.matched},
        {"total", tally.total},
        {"ex", tally.total ? 100.0 * double(tally.matched) / double(tally.total) : 0.0}};
  }
  nlohmann::json j = {{"mode", to_string(report.mode)},
                      {"matched", report.matched},
                      {"evaluable", report.evaluable},
                      {"ex", report.ex()},
                      {"per_path", per_path},
                      {"items", items}};
  if (report.selection) {
    j["selection"] = {{"questions", report.selection->questions},
                      {"precision", report.selection->precision},
                      {"recall", report.selection->recall},
                      {"avg_llm_calls", report.selection->avg_llm_calls},
                      {"avg_tokens", report.selection->avg_tokens}};
  }
  return j;
}

std::string report_text(const EvalReport& report) {
  std::string out = fmt::format("Execution accuracy ({}): {:.2f}% ({}/{})\n", to_string(report.mode),
                                report.ex(), report.matched, report.evaluable);
  out += fmt::format("\n{:<16} {:>8} {:>8} {:>8}\n", "Path", "Matched", "Total", "EX (%)");
  for (auto path : {PathType::kStraightforward, PathType::kRefinement, PathType::kExploratory}) {
    auto it = report.per_path.find(path);
    PathTally t = it == report.per_path.end() ? PathTally{} : it->second;
    out += fmt::format("{:<16} {:>8} {:>8} {:>8.2f}\n", to_string(path), t.matched, t.total,
                       t.total ? 100.0 * double(t.matched) / double(t.total) : 0.0);
  }
  if (report.selection) {
    const auto& s = *report.selection;
    out += fmt::format("\n{:>10} {:>10} {:>12} {:>15}\n", "Precision", "Recall", "Avg.Tokens", "Avg.LLM-Calls");
    out += fmt::format("{:>10.2f} {:>10.2f} {:>12.1f} {:>15.2f}\n", 100.0 * s.precision, 100.0 * s.recall,
                       s.avg_tokens, s.avg_llm_calls);
  }
  std::size_t excluded = 0;
  for (const auto& i : report.items) excluded += !i.evaluable;
  if (excluded) out += fmt::format("\n{} item(s) excluded (no gold, gold error or missing database)\n", excluded);
  return out;
}

}  // namespace dsr
