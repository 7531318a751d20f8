#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsr/catalog.hpp"
#include "dsr/exec.hpp"
#include "dsr/llm.hpp"

namespace dsr {

struct AlignConfig {
  std::size_t max_probes = 5;
  std::size_t probe_row_cap = 20;
  std::chrono::milliseconds probe_timeout{10'000};
  std::size_t summary_token_cap = 2000;
  std::size_t concurrency = 4;
  // Optional summarization prompt; {question} and {probes} are substituted.
  std::optional<std::string> summary_template;
};

struct ProbeQuery {
  std::string sql;
  std::string purpose;  // value-distribution, cardinality, join-pattern, sample
};

struct ProbeResult {
  ProbeQuery probe;
  ExecutionResult result;
};

struct AlignmentSummary {
  std::string text;
  std::size_t probe_count = 0;
};

// Read-only probes over the tables of s_sub, capped at max_probes. Probes
// that write or that touch any other table are dropped. LLM failure yields
// no probes.
std::vector<ProbeQuery> generate_probes(std::string_view question, const SchemaView& s_sub,
                                        LlmClient& llm, std::size_t max_probes = 5);

// Persistent probe results keyed by (question_id, sql), stored as JSON lines.
// An empty path keeps the cache in memory only.
class ProbeCache {
 public:
  explicit ProbeCache(std::string path = {});

  std::optional<ExecutionResult> lookup(const std::string& question_id, const std::string& sql) const;
  void store(const std::string& question_id, const std::string& sql, const ExecutionResult& result);
  std::size_t size() const;

 private:
  std::string path_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, ExecutionResult> entries_;
};

// Runs every probe (concurrently, results in probe order). Failures are
// captured per probe. When a cache is given, cached results are reused and
// new ones stored under question_id.
std::vector<ProbeResult> run_probes(const std::vector<ProbeQuery>& probes, const ExecBackend& exec,
                                    const AlignConfig& config = {}, ProbeCache* cache = nullptr,
                                    const std::string& question_id = {});

// Plain-text listing of every probe's SQL followed by its first rows.
std::string probe_digest(const std::vector<ProbeResult>& results);

AlignmentSummary summarize_alignment(std::string_view question,
                                     const std::vector<ProbeResult>& results, LlmClient& llm,
                                     const AlignConfig& config = {});

}  // namespace dsr
