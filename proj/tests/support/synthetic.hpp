#pragma once

#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "dsr/refine.hpp"
#include "support.hpp"

namespace dsr::testing {

// Catalog of `tables` tables named tbl_000.., each with `columns` TEXT
// columns carrying a description of `description_chars` characters and three
// examples. Wrapped as an unrefined RefinedSchema.
RefinedSchema synthetic_schema(std::size_t tables, std::size_t columns, std::size_t description_chars);

// Schema text between the schema header and the question line of a
// selection prompt.
std::string schema_text_of(const CompletionRequest& request);

// Table named by the `# Table:` or `CREATE TABLE` line of a single-table prompt.
std::string single_table_of(const CompletionRequest& request);

struct PlantedSelection {
  std::set<std::string> relevant;
  // Added to sample 0 of every select.sample batch.
  std::optional<std::string> distractor;
};

// Thread-safe mock: sample requests draft a join over the relevant tables,
// partition requests answer with SQL only for relevant tables. `planted`
// picks the plan from the question text.
std::shared_ptr<FnClient> selection_mock(std::function<PlantedSelection(const std::string& question)> planted);

// "Question: <text>" line of a request.
std::string question_of(const CompletionRequest& request);

}  // namespace dsr::testing
