#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsr/catalog.hpp"
#include "dsr/llm.hpp"
#include "dsr/refine.hpp"

namespace dsr {

enum class CandidateAggregation { kUnion, kMajority };

struct SelectionConfig {
  std::size_t k = 3;
  std::size_t theta_max = 96000;
  double temperature = 1.2;
  std::size_t concurrency = 8;
  CandidateAggregation aggregation = CandidateAggregation::kUnion;
  // Permutes the partitioned branch's processing order; tests use it to show
  // the result does not depend on completion order.
  std::optional<std::uint64_t> partition_order_seed;

  void validate() const;
};

// kDisabled marks runs with selection switched off (S_sub = S').
enum class SelectionBranch { kSingleTable, kGlobalMSchema, kGlobalDdl, kPartitioned, kDisabled };
std::string_view to_string(SelectionBranch branch);
SelectionBranch selection_branch_from_string(std::string_view s);

struct SelectionTrace {
  SelectionBranch branch = SelectionBranch::kSingleTable;
  std::vector<std::string> candidates;    // T_c, catalog order
  std::vector<std::string> final_tables;  // T_final, catalog order
  std::size_t llm_calls = 0;
  std::size_t tokens_sent = 0;
  std::vector<std::string> warnings;
};

struct SelectionResult {
  SchemaView view;  // refers to the catalog passed to select_schema
  SelectionTrace trace;
};

// Outcome of one batch of sampling requests.
struct SampleOutcome {
  std::set<std::string> tables;
  std::size_t llm_calls = 0;
  std::size_t tokens_sent = 0;
  std::vector<std::string> warnings;
};

// Drafts k candidate queries against schema_text and aggregates the tables
// they reference. Names are resolved through `refined` so series members
// map to their canonical table. Throws SELECTION_EXHAUSTED when every call
// fails.
SampleOutcome sample_tables(std::string_view question, std::string_view knowledge,
                            std::string_view schema_text, const RefinedSchema& refined,
                            LlmClient& llm, const SelectionConfig& config);

// Asks whether one table can answer the question. A failed call is a
// warning and an empty set.
SampleOutcome partitioned_relevance(std::string_view question, std::string_view knowledge,
                                    const RefinedSchema& refined, const std::string& table,
                                    LlmClient& llm, const SelectionConfig& config);

SelectionResult select_schema(std::string_view question, const RefinedSchema& refined,
                              const RefinedKnowledge& knowledge, LlmClient& llm,
                              const SelectionConfig& config = {});

// Counts kept as integers so aggregate reports can stay exact.
struct SelectionMetrics {
  std::size_t hits = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  double precision() const { return predicted == 0 ? 1.0 : double(hits) / double(predicted); }
  double recall() const { return double(hits) / double(gold); }
};

// Names compare case-insensitively. Throws INVALID_GOLD for an empty gold set.
SelectionMetrics selection_metrics(const std::set<std::string>& predicted,
                                   const std::set<std::string>& gold);

nlohmann::json selection_record(std::string_view question_id, const SelectionTrace& trace);
SelectionTrace selection_trace_from_json(const nlohmann::json& j);

}  // namespace dsr
