#include "dsr/align.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "dsr/common.hpp"
#include "dsr/parallel.hpp"
#include "dsr/sql_text.hpp"
#include "dsr/tokens.hpp"

namespace dsr {

namespace {

std::string probe_purpose(std::string_view sql) {
  auto upper = to_upper(sql);
  if (upper.find("DISTINCT") != std::string::npos) return "value-distribution";
  if (upper.find(" JOIN ") != std::string::npos) return "join-pattern";
  if (upper.find("COUNT(") != std::string::npos || upper.find("MIN(") != std::string::npos ||
      upper.find("MAX(") != std::string::npos)
    return "cardinality";
  return "sample";
}

bool targets_only(std::string_view sql, const std::vector<std::string>& allowed) {
  auto relations = referenced_relations(sql);
  if (relations.empty()) return false;
  for (const auto& r : relations) {
    bool ok = std::any_of(allowed.begin(), allowed.end(),
                          [&](const std::string& a) { return relation_name_matches(r, a); });
    if (!ok) return false;
  }
  return true;
}

}  // namespace

std::vector<ProbeQuery> generate_probes(std::string_view question, const SchemaView& s_sub,
                                        LlmClient& llm, std::size_t max_probes) {
  if (max_probes < 1) throw Error(ErrorCode::kConfig, "max_probes must be at least 1");
  CompletionRequest request;
  request.tag = "align.probes";
  request.messages = {
      {"system", "You write small read-only SQL queries that inspect a database before answering a question."},
      {"user", fmt::format("Database schema:\n{}\n\nQuestion: {}\n\nWrite up to {} short SELECT "
                           "queries (for example COUNT(*), SELECT DISTINCT, MIN/MAX, or a LIMIT 5 "
                           "sample) that reveal stored value formats, typical ranges and join keys "
                           "relevant to the question. Put each query in its own <sql></sql> tags.",
                           render(s_sub), question, max_probes)}};
  std::string reply;
  try {
    reply = llm.complete(request);
  } catch (const Error&) {
    return {};
  }

  std::vector<ProbeQuery> probes;
  for (const auto& block : extract_all_sql(reply)) {
    for (const auto& sql : split_statements(block)) {
      if (probes.size() >= max_probes) return probes;
      if (!is_read_only_select(sql) || !targets_only(sql, s_sub.tables())) continue;
      probes.push_back(ProbeQuery{sql, probe_purpose(sql)});
    }
  }
  return probes;
}

ProbeCache::ProbeCache(std::string path) : path_(std::move(path)) {
  if (path_.empty()) return;
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      entries_[{j.at("question_id").get<std::string>(), j.at("sql").get<std::string>()}] =
          result_from_json(j);
    } catch (const std::exception&) {
      // A torn final line from an interrupted run is skipped.
    }
  }
}

std::optional<ExecutionResult> ProbeCache::lookup(const std::string& question_id,
                                                  const std::string& sql) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find({question_id, sql});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ProbeCache::store(const std::string& question_id, const std::string& sql,
                       const ExecutionResult& result) {
  std::lock_guard lock(mutex_);
  entries_[{question_id, sql}] = result;
  if (path_.empty()) return;
  auto j = result_to_json(result);
  j["question_id"] = question_id;
  j["sql"] = sql;
  if (auto parent = std::filesystem::path(path_).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  std::ofstream out(path_, std::ios::app);
  out << j.dump() << "\n";
}

std::size_t ProbeCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<ProbeResult> run_probes(const std::vector<ProbeQuery>& probes, const ExecBackend& exec,
                                    const AlignConfig& config, ProbeCache* cache,
                                    const std::string& question_id) {
  std::vector<ProbeResult> out(probes.size());
  ExecLimits limits;
  limits.row_cap = config.probe_row_cap;
  limits.timeout = config.probe_timeout;
  parallel_for(probes.size(), config.concurrency, [&](std::size_t i) {
    out[i].probe = probes[i];
    if (cache) {
      if (auto hit = cache->lookup(question_id, probes[i].sql)) {
        out[i].result = std::move(*hit);
        return;
      }
    }
    if (!is_read_only_select(probes[i].sql)) {
      out[i].result.error = ExecError{ExecErrorKind::kSyntax, "probe is not a read-only SELECT"};
    } else {
      out[i].result = exec.execute(probes[i].sql, limits);
    }
    if (cache) cache->store(question_id, probes[i].sql, out[i].result);
  });
  return out;
}

std::string probe_digest(const std::vector<ProbeResult>& results) {
  // Every query is listed before any result so truncation cuts results first.
  std::string out = "Probing queries:\n";
  for (std::size_t i = 0; i < results.size(); ++i)
    out += fmt::format("[{}] ({}) {}\n", i + 1, results[i].probe.purpose, results[i].probe.sql);
  out += "\nResults:\n";
  for (std::size_t i = 0; i < results.size(); ++i)
    out += fmt::format("[{}]\n{}\n", i + 1, to_tsv(results[i].result, 5, 10));
  return out;
}

AlignmentSummary summarize_alignment(std::string_view question,
                                     const std::vector<ProbeResult>& results, LlmClient& llm,
                                     const AlignConfig& config) {
  AlignmentSummary summary;
  summary.probe_count = results.size();
  if (results.empty()) return summary;

  std::string probes;
  for (std::size_t i = 0; i < results.size(); ++i) {
    probes += fmt::format("Query {}: {}\nResult:\n{}\n", i + 1, results[i].probe.sql,
                          to_tsv(results[i].result, config.probe_row_cap, 10));
  }
  std::string prompt = config.summary_template.value_or(
      "Question: {question}\n\nThe following exploratory queries were run against the database:\n"
      "{probes}\nSummarize what these results show that matters for writing the final SQL: exact "
      "stored spellings and formats of values, enumerations, units, date formats, and how tables "
      "join. Be concise.");
  auto substitute = [&prompt](std::string_view key, std::string_view value) {
    for (auto pos = prompt.find(key); pos != std::string::npos; pos = prompt.find(key, pos + value.size())) {
      prompt.replace(pos, key.size(), value);
    }
  };
  substitute("{question}", question);
  substitute("{probes}", probes);

  CompletionRequest request;
  request.tag = "align.summary";
  request.messages = {{"system", "You summarize database exploration results for a SQL writer."},
                      {"user", prompt}};
  try {
    auto text = std::string(trim(llm.complete(request)));
    if (!text.empty()) {
      summary.text = truncate_to_tokens(text, config.summary_token_cap);
      return summary;
    }
  } catch (const Error&) {
  }
  summary.text = truncate_to_tokens(probe_digest(results), config.summary_token_cap);
  return summary;
}

}  // namespace dsr
