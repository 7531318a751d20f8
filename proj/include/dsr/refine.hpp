#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsr/catalog.hpp"
#include "dsr/exec.hpp"
#include "dsr/llm.hpp"

namespace dsr {

struct RefineConfig {
  double jaccard_threshold = 0.9;
  std::size_t prune_sample_rows = 1000;
  // Compared case-insensitively.
  std::vector<std::string> placeholders = {"", "N/A", "null"};
  std::size_t knowledge_budget = 4000;
  std::size_t concurrency = 4;
};

struct RefinedSchema {
  SchemaCatalog catalog;                                       // S'
  std::map<std::string, SeriesMeta> provenance;                // canonical -> series
  std::map<std::string, std::vector<std::string>> pruned_columns;
  std::vector<std::string> dropped;
  std::vector<std::string> warnings;
  std::size_t source_table_count = 0;

  // Maps a series member name to its canonical table; other names map to
  // themselves when present in S'.
  std::optional<std::string> resolve(std::string_view table) const;
};

struct RefinedKnowledge {
  std::string text;
  std::string source_digest;
};

// Trailing `_<digits>` or `_v<digits>` token of the last name segment.
struct SeriesSuffix {
  std::string stem;         // name without the suffix token
  std::string token;        // e.g. 20160801
  std::string placeholder;  // [DATE], [N] or [VERSION]
};
std::optional<SeriesSuffix> split_series_suffix(std::string_view table_name);

double jaccard_similarity(const std::set<std::string>& a, const std::set<std::string>& b);

// Groups tables whose names agree after suffix stripping and whose column
// sets reach the Jaccard threshold against the newest member's layout.
std::vector<SeriesMeta> detect_table_series(const SchemaCatalog& catalog,
                                            double jaccard_threshold = 0.9);

std::string mechanical_series_description(const SeriesMeta& series);

// LLM-written summary of a series; the mechanical description is used when
// the model fails or answers with nothing.
std::string describe_series(const SeriesMeta& series, const SchemaCatalog& source, LlmClient& llm);

// Collapses each series onto its newest member. Descriptions are keyed by
// series pattern.
RefinedSchema consolidate_series(const SchemaCatalog& catalog, const std::vector<SeriesMeta>& series,
                                 const std::map<std::string, std::string>& descriptions);

// Removes columns whose sample is entirely NULL or entirely one placeholder
// literal. Key columns are kept. Returns the pruned catalog and the record.
RefinedSchema prune_uninformative_columns(const SchemaCatalog& catalog, const ExecBackend& exec,
                                          const RefineConfig& config = {});

RefinedKnowledge refine_knowledge(std::string_view knowledge, std::string_view question,
                                  LlmClient& llm, std::size_t budget = 4000);

std::pair<RefinedSchema, RefinedKnowledge> refine_schema(const SchemaCatalog& catalog,
                                                         const ExecBackend& exec, LlmClient& llm,
                                                         const RefineConfig& config = {});

nlohmann::json refined_schema_to_json(const RefinedSchema& refined);
RefinedSchema refined_schema_from_json(const nlohmann::json& j);

}  // namespace dsr
