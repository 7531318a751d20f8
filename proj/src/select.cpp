#include "dsr/select.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <numeric>
#include <random>

#include "dsr/common.hpp"
#include "dsr/parallel.hpp"
#include "dsr/sql_text.hpp"
#include "dsr/tokens.hpp"

namespace dsr {

void SelectionConfig::validate() const {
  if (k < 1) throw Error(ErrorCode::kConfig, "selection needs k >= 1");
  if (theta_max == 0) throw Error(ErrorCode::kConfig, "theta_max must be positive");
  if (temperature < 0.0) throw Error(ErrorCode::kConfig, "temperature must be non-negative");
}

std::string_view to_string(SelectionBranch branch) {
  switch (branch) {
    case SelectionBranch::kSingleTable: return "SINGLE_TABLE";
    case SelectionBranch::kGlobalMSchema: return "GLOBAL_MSCHEMA";
    case SelectionBranch::kGlobalDdl: return "GLOBAL_DDL";
    case SelectionBranch::kPartitioned: return "PARTITIONED";
    case SelectionBranch::kDisabled: return "DISABLED";
  }
  return "?";
}

SelectionBranch selection_branch_from_string(std::string_view s) {
  for (auto b : {SelectionBranch::kSingleTable, SelectionBranch::kGlobalMSchema,
                 SelectionBranch::kGlobalDdl, SelectionBranch::kPartitioned, SelectionBranch::kDisabled})
    if (to_string(b) == s) return b;
  throw Error(ErrorCode::kFormat, "unknown selection branch: " + std::string(s));
}

namespace {

// S' names plus every consolidated series member.
std::vector<std::string> resolvable_names(const RefinedSchema& refined) {
  auto names = refined.catalog.table_names();
  for (const auto& [canonical, series] : refined.provenance)
    for (const auto& m : series.members)
      if (!iequals(m, canonical)) names.push_back(m);
  return names;
}

std::set<std::string> tables_in_reply(std::string_view reply, const RefinedSchema& refined,
                                      const std::vector<std::string>& known) {
  auto statements = extract_all_sql(reply);
  if (statements.empty()) statements.emplace_back(reply);
  std::set<std::string> out;
  for (const auto& sql : statements)
    for (const auto& name : tables_from_sql(sql, known))
      if (auto canonical = refined.resolve(name)) out.insert(*canonical);
  return out;
}

std::string knowledge_block(std::string_view knowledge) {
  if (trim(knowledge).empty()) return "";
  return "Reference knowledge:\n" + std::string(knowledge) + "\n\n";
}

std::vector<std::string> in_catalog_order(const SchemaCatalog& catalog, const std::set<std::string>& names) {
  std::vector<std::string> out;
  for (const auto& t : catalog.tables)
    if (names.count(t.name)) out.push_back(t.name);
  return out;
}

// Schema text for a table subset: M-Schema when it fits, else DDL, else
// nullopt.
std::optional<std::pair<std::string, RenderFormat>> fitting_render(const SchemaCatalog& catalog,
                                                                   const std::vector<std::string>& tables,
                                                                   std::size_t theta_max) {
  for (auto format : {RenderFormat::kMSchema, RenderFormat::kDdl}) {
    auto text = render(SchemaView(catalog, tables, {}, format));
    if (estimate_tokens(text) <= theta_max) return std::pair{std::move(text), format};
  }
  return std::nullopt;
}

}  // namespace

SampleOutcome sample_tables(std::string_view question, std::string_view knowledge,
                            std::string_view schema_text, const RefinedSchema& refined,
                            LlmClient& llm, const SelectionConfig& config) {
  config.validate();
  CompletionRequest request;
  request.tag = "select.sample";
  request.temperature = config.temperature;
  request.messages = {
      {"system", "You are an expert SQL analyst. You draft queries to find which tables a question needs."},
      {"user", fmt::format("{}Database schema:\n{}\n\nQuestion: {}\n\nDraft one SQL query that could "
                           "answer the question using the schema above. Put the query inside "
                           "<sql></sql> tags.",
                           knowledge_block(knowledge), schema_text, question)}};
  const auto prompt_tokens = estimate_tokens(request_text(request));
  const auto known = resolvable_names(refined);

  SampleOutcome out;
  std::map<std::string, std::size_t> votes;
  std::size_t succeeded = 0;
  for (std::size_t i = 0; i < config.k; ++i) {
    ++out.llm_calls;
    out.tokens_sent += prompt_tokens;
    try {
      auto reply = llm.complete(request, i);
      ++succeeded;
      for (const auto& t : tables_in_reply(reply, refined, known)) ++votes[t];
    } catch (const Error& e) {
      out.warnings.push_back(fmt::format("sample {} failed: {}", i, e.what()));
    }
  }
  if (succeeded == 0)
    throw Error(ErrorCode::kSelectionExhausted,
                fmt::format("all {} selection samples failed", config.k));
  for (const auto& [table, n] : votes) {
    if (config.aggregation == CandidateAggregation::kUnion || 2 * n > succeeded) out.tables.insert(table);
  }
  return out;
}

SampleOutcome partitioned_relevance(std::string_view question, std::string_view knowledge,
                                    const RefinedSchema& refined, const std::string& table,
                                    LlmClient& llm, const SelectionConfig& config) {
  SampleOutcome out;
  auto schema_text = render(SchemaView(refined.catalog, {table}));
  if (estimate_tokens(schema_text) > config.theta_max) {
    schema_text = render(SchemaView(refined.catalog, {table}, {}, RenderFormat::kDdl));
    if (estimate_tokens(schema_text) > config.theta_max) {
      schema_text = truncate_to_tokens(schema_text, config.theta_max);
      out.warnings.push_back("schema of " + table + " truncated to the token budget");
    }
  }
  CompletionRequest request;
  request.tag = "select.partition";
  request.temperature = config.temperature;
  request.messages = {
      {"system", "You are an expert SQL analyst. You judge whether a single table helps answer a question."},
      {"user", fmt::format("{}Table schema:\n{}\n\nQuestion: {}\n\nIf this table is needed to answer "
                           "the question, draft a SQL query over it inside <sql></sql> tags. "
                           "Otherwise reply with the single word: irrelevant.",
                           knowledge_block(knowledge), schema_text, question)}};
  out.llm_calls = 1;
  out.tokens_sent = estimate_tokens(request_text(request));
  try {
    auto reply = llm.complete(request);
    for (const auto& t : tables_in_reply(reply, refined, resolvable_names(refined)))
      if (iequals(t, table)) out.tables.insert(table);
  } catch (const Error& e) {
    out.warnings.push_back(fmt::format("relevance check for {} failed: {}", table, e.what()));
  }
  return out;
}

SelectionResult select_schema(std::string_view question, const RefinedSchema& refined,
                              const RefinedKnowledge& knowledge, LlmClient& llm,
                              const SelectionConfig& config) {
  config.validate();
  const auto& catalog = refined.catalog;
  if (catalog.tables.empty()) throw Error(ErrorCode::kConfig, "refined schema has no tables");

  SelectionTrace trace;
  auto absorb = [&trace](const SampleOutcome& o) {
    trace.llm_calls += o.llm_calls;
    trace.tokens_sent += o.tokens_sent;
    trace.warnings.insert(trace.warnings.end(), o.warnings.begin(), o.warnings.end());
  };
  const auto all_tables = catalog.table_names();

  if (all_tables.size() == 1) {
    trace.branch = SelectionBranch::kSingleTable;
    trace.candidates = trace.final_tables = all_tables;
    return {SchemaView(catalog, all_tables), std::move(trace)};
  }

  std::set<std::string> candidates;
  if (auto fitting = fitting_render(catalog, all_tables, config.theta_max)) {
    trace.branch = fitting->second == RenderFormat::kMSchema ? SelectionBranch::kGlobalMSchema
                                                             : SelectionBranch::kGlobalDdl;
    auto o = sample_tables(question, knowledge.text, fitting->first, refined, llm, config);
    absorb(o);
    candidates = std::move(o.tables);
  } else {
    trace.branch = SelectionBranch::kPartitioned;
    std::vector<std::size_t> order(all_tables.size());
    std::iota(order.begin(), order.end(), 0);
    if (config.partition_order_seed) {
      std::mt19937_64 rng(*config.partition_order_seed);
      std::shuffle(order.begin(), order.end(), rng);
    }
    std::vector<SampleOutcome> outcomes(all_tables.size());
    parallel_for(order.size(), config.concurrency, [&](std::size_t i) {
      const auto& table = all_tables[order[i]];
      outcomes[order[i]] = partitioned_relevance(question, knowledge.text, refined, table, llm, config);
    });
    for (const auto& o : outcomes) {
      absorb(o);
      candidates.insert(o.tables.begin(), o.tables.end());
    }
  }
  trace.candidates = in_catalog_order(catalog, candidates);

  std::vector<std::string> final_tables;
  if (trace.candidates.empty()) {
    // Nothing to refine against; the view must not be empty.
    trace.warnings.push_back("no candidate tables; using the full refined schema");
    final_tables = all_tables;
  } else if (auto fitting = fitting_render(catalog, trace.candidates, config.theta_max)) {
    auto o = sample_tables(question, knowledge.text, fitting->first, refined, llm, config);
    absorb(o);
    std::set<std::string> narrowed;
    for (const auto& t : o.tables)
      if (candidates.count(t)) narrowed.insert(t);
    final_tables = in_catalog_order(catalog, narrowed);
    if (final_tables.empty()) final_tables = trace.candidates;
  } else {
    trace.warnings.push_back("candidate schema exceeds the token budget; second round skipped");
    final_tables = trace.candidates;
  }
  trace.final_tables = final_tables;
  return {SchemaView(catalog, std::move(final_tables)), std::move(trace)};
}

SelectionMetrics selection_metrics(const std::set<std::string>& predicted,
                                   const std::set<std::string>& gold) {
  if (gold.empty()) throw Error(ErrorCode::kInvalidGold, "gold table set is empty");
  std::set<std::string> p, g;
  for (const auto& x : predicted) p.insert(to_lower(x));
  for (const auto& x : gold) g.insert(to_lower(x));
  SelectionMetrics m;
  m.predicted = p.size();
  m.gold = g.size();
  for (const auto& x : p) m.hits += g.count(x);
  return m;
}

nlohmann::json selection_record(std::string_view question_id, const SelectionTrace& trace) {
  return {{"question_id", question_id},
          {"branch", to_string(trace.branch)},
          {"tables", trace.final_tables},
          {"candidates", trace.candidates},
          {"llm_calls", trace.llm_calls},
          {"tokens_sent", trace.tokens_sent},
          {"warnings", trace.warnings}};
}

SelectionTrace selection_trace_from_json(const nlohmann::json& j) {
  SelectionTrace t;
  t.branch = selection_branch_from_string(j.at("branch").get<std::string>());
  t.final_tables = j.at("tables").get<std::vector<std::string>>();
  t.candidates = j.value("candidates", t.final_tables);
  t.llm_calls = j.value("llm_calls", std::size_t{0});
  t.tokens_sent = j.value("tokens_sent", std::size_t{0});
  t.warnings = j.value("warnings", std::vector<std::string>{});
  return t;
}

}  // namespace dsr
