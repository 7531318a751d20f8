#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsr/exec.hpp"

namespace dsr {

inline constexpr int kCatalogFormatVersion = 1;
inline constexpr std::size_t kMaxExamples = 3;
inline constexpr std::size_t kMaxExampleChars = 50;

struct SchemaCatalog;

struct ForeignKey {
  std::string column;
  std::string ref_table;
  std::string ref_column;
};

struct ColumnInfo {
  std::string name;
  std::string sql_type;
  std::optional<std::string> description;
  std::vector<std::string> examples;
  bool nullable = true;
  bool primary_key = false;
};

// Column layout difference of one series member against the canonical table.
struct ColumnDelta {
  std::string member;
  std::vector<std::string> added;    // present in member, absent in canonical
  std::vector<std::string> removed;  // present in canonical, absent in member
};

struct SeriesMeta {
  std::string pattern;               // e.g. GA_SESSIONS_[DATE]
  std::vector<std::string> members;  // ascending by suffix
  std::string range_min;
  std::string range_max;
  std::vector<ColumnDelta> column_deltas;  // only members that differ
};

struct TableInfo {
  std::string name;
  std::vector<ColumnInfo> columns;
  std::optional<std::string> description;
  std::optional<SeriesMeta> series_meta;
  std::vector<ForeignKey> foreign_keys;

  const ColumnInfo* find_column(std::string_view column) const;
  // Primary-key columns, foreign-key sources, and columns referenced by
  // another table's foreign key are key columns.
  bool is_key_column(std::string_view column, const SchemaCatalog& catalog) const;
};

struct SchemaCatalog {
  std::string db_id;
  std::vector<TableInfo> tables;
  std::optional<std::string> knowledge;
  std::vector<std::string> warnings;

  const TableInfo* find_table(std::string_view name) const;
  std::vector<std::string> table_names() const;
  // Throws Error(kFormat) when a catalog invariant does not hold.
  void validate() const;
};

enum class RenderFormat { kMSchema, kDdl };

// A projection of a catalog onto a table subset and optional per-table
// column subsets. The catalog must outlive the view.
class SchemaView {
 public:
  SchemaView(const SchemaCatalog& catalog, std::vector<std::string> tables,
             std::map<std::string, std::vector<std::string>> column_filter = {},
             RenderFormat format = RenderFormat::kMSchema);

  static SchemaView all(const SchemaCatalog& catalog,
                        RenderFormat format = RenderFormat::kMSchema);

  const SchemaCatalog& catalog() const { return *catalog_; }
  const std::vector<std::string>& tables() const { return tables_; }
  const std::map<std::string, std::vector<std::string>>& column_filter() const {
    return column_filter_;
  }
  RenderFormat format() const { return format_; }
  SchemaView with_format(RenderFormat format) const;

 private:
  const SchemaCatalog* catalog_;
  std::vector<std::string> tables_;
  std::map<std::string, std::vector<std::string>> column_filter_;
  RenderFormat format_;
};

std::string render(const SchemaView& view);

// Header fields recovered from M-Schema text.
struct MSchemaHeader {
  std::string db_id;
  std::vector<std::string> tables;
};
MSchemaHeader parse_mschema_header(std::string_view text);

struct IngestOptions {
  std::size_t sample_rows = 100;
  std::uint64_t seed = 42;
  std::optional<std::string> db_id;  // defaults to the locator's file stem
  // Optional sidecar: {"tables": {"<t>": {"description": s, "columns": {"<c>": s}}},
  // "knowledge": s}
  std::optional<nlohmann::json> descriptions;
};

// Dedupes values, truncates each to 50 code points, and draws up to three
// distinct entries with a generator seeded from (seed, key). Drawn entries
// keep their first-occurrence order.
std::vector<std::string> sample_examples(const std::vector<std::string>& values,
                                         std::uint64_t seed, std::string_view key);

// <dir>/<stem>.desc.json next to the database file.
std::string description_sidecar_path(const std::string& locator);

SchemaCatalog ingest_catalog(const ExecBackend& backend, const IngestOptions& options = {});
SchemaCatalog ingest_catalog(const std::string& locator, const IngestOptions& options = {});

nlohmann::json catalog_to_json(const SchemaCatalog& catalog);
SchemaCatalog catalog_from_json(const nlohmann::json& j);
nlohmann::json series_to_json(const SeriesMeta& series);
SeriesMeta series_from_json(const nlohmann::json& j);

// Stable digest of the catalog's persisted form.
std::string catalog_hash(const SchemaCatalog& catalog);

}  // namespace dsr
