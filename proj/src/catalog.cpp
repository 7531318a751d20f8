#include "dsr/catalog.hpp"

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <unordered_set>

#include "dsr/common.hpp"

namespace dsr {

const ColumnInfo* TableInfo::find_column(std::string_view column) const {
  for (const auto& c : columns)
    if (iequals(c.name, column)) return &c;
  return nullptr;
}

bool TableInfo::is_key_column(std::string_view column, const SchemaCatalog& catalog) const {
  if (const auto* c = find_column(column); c && c->primary_key) return true;
  for (const auto& fk : foreign_keys)
    if (iequals(fk.column, column)) return true;
  for (const auto& other : catalog.tables) {
    for (const auto& fk : other.foreign_keys)
      if (iequals(fk.ref_table, name) && iequals(fk.ref_column, column)) return true;
  }
  return false;
}

const TableInfo* SchemaCatalog::find_table(std::string_view name) const {
  for (const auto& t : tables)
    if (iequals(t.name, name)) return &t;
  return nullptr;
}

std::vector<std::string> SchemaCatalog::table_names() const {
  std::vector<std::string> names;
  names.reserve(tables.size());
  for (const auto& t : tables) names.push_back(t.name);
  return names;
}

void SchemaCatalog::validate() const {
  std::set<std::string> seen_tables;
  for (const auto& t : tables) {
    if (!seen_tables.insert(to_lower(t.name)).second)
      throw Error(ErrorCode::kFormat, "duplicate table name: " + t.name);
    std::set<std::string> seen_columns;
    for (const auto& c : t.columns) {
      if (!seen_columns.insert(to_lower(c.name)).second)
        throw Error(ErrorCode::kFormat, "duplicate column " + c.name + " in " + t.name);
      if (c.examples.size() > kMaxExamples)
        throw Error(ErrorCode::kFormat, "too many examples for " + t.name + "." + c.name);
      std::set<std::string> distinct(c.examples.begin(), c.examples.end());
      if (distinct.size() != c.examples.size())
        throw Error(ErrorCode::kFormat, "duplicate examples for " + t.name + "." + c.name);
      for (const auto& e : c.examples)
        if (utf8_length(e) > kMaxExampleChars)
          throw Error(ErrorCode::kFormat, "example too long for " + t.name + "." + c.name);
    }
  }
  for (const auto& t : tables) {
    for (const auto& fk : t.foreign_keys) {
      const auto* target = find_table(fk.ref_table);
      if (!target || !target->find_column(fk.ref_column))
        throw Error(ErrorCode::kFormat, "foreign key " + t.name + "." + fk.column +
                                            " references missing " + fk.ref_table + "." +
                                            fk.ref_column);
    }
  }
}

SchemaView::SchemaView(const SchemaCatalog& catalog, std::vector<std::string> tables,
                       std::map<std::string, std::vector<std::string>> column_filter,
                       RenderFormat format)
    : catalog_(&catalog),
      tables_(std::move(tables)),
      column_filter_(std::move(column_filter)),
      format_(format) {
  for (const auto& t : tables_) {
    if (!catalog.find_table(t))
      throw Error(ErrorCode::kFormat, "view references unknown table: " + t);
  }
  for (const auto& [t, cols] : column_filter_) {
    const auto* table = catalog.find_table(t);
    if (!table) throw Error(ErrorCode::kFormat, "column filter references unknown table: " + t);
    for (const auto& c : cols)
      if (!table->find_column(c))
        throw Error(ErrorCode::kFormat, "column filter references unknown column: " + t + "." + c);
  }
}

SchemaView SchemaView::all(const SchemaCatalog& catalog, RenderFormat format) {
  return SchemaView(catalog, catalog.table_names(), {}, format);
}

SchemaView SchemaView::with_format(RenderFormat format) const {
  return SchemaView(*catalog_, tables_, column_filter_, format);
}

namespace {

std::vector<const ColumnInfo*> visible_columns(const SchemaView& view, const TableInfo& table) {
  std::vector<const ColumnInfo*> out;
  const std::vector<std::string>* filter = nullptr;
  for (const auto& [t, cols] : view.column_filter())
    if (iequals(t, table.name)) filter = &cols;
  for (const auto& c : table.columns) {
    if (filter &&
        std::none_of(filter->begin(), filter->end(), [&](const auto& f) { return iequals(f, c.name); }))
      continue;
    out.push_back(&c);
  }
  return out;
}

std::string type_text(const ColumnInfo& c) { return c.sql_type.empty() ? "ANY" : c.sql_type; }

void render_mschema_table(const SchemaView& view, const TableInfo& table, std::string& out) {
  out += "# Table: " + table.name + "\n[\n";
  auto cols = visible_columns(view, table);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const auto& c = *cols[i];
    out += "(" + c.name + ": " + type_text(c);
    if (c.description && !c.description->empty()) out += ", " + *c.description;
    if (!c.examples.empty()) out += ", Examples: [" + join(c.examples, ", ") + "]";
    out += ")";
    if (i + 1 < cols.size()) out += ",";
    out += "\n";
  }
  out += "]\n";
  if (table.description && !table.description->empty())
    out += "# Table Description: " + *table.description + "\n";
}

void render_ddl_table(const SchemaView& view, const TableInfo& table, std::string& out) {
  out += "CREATE TABLE " + table.name + " (\n";
  auto cols = visible_columns(view, table);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out += "  " + cols[i]->name + " " + type_text(*cols[i]);
    if (i + 1 < cols.size()) out += ",";
    out += "\n";
  }
  out += ");\n";
}

}  // namespace

std::string render(const SchemaView& view) {
  std::string out;
  const auto& catalog = view.catalog();
  if (view.format() == RenderFormat::kMSchema) out += "[DB_ID] " + catalog.db_id + "\n";
  for (const auto& name : view.tables()) {
    const auto* table = catalog.find_table(name);
    if (view.format() == RenderFormat::kMSchema) {
      render_mschema_table(view, *table, out);
    } else {
      render_ddl_table(view, *table, out);
    }
  }
  return out;
}

MSchemaHeader parse_mschema_header(std::string_view text) {
  MSchemaHeader header;
  for (const auto& raw : split(text, '\n')) {
    std::string_view line = raw;
    if (line.rfind("[DB_ID] ", 0) == 0) {
      header.db_id = std::string(trim(line.substr(8)));
    } else if (line.rfind("# Table: ", 0) == 0) {
      header.tables.emplace_back(trim(line.substr(9)));
    }
  }
  return header;
}

std::vector<std::string> sample_examples(const std::vector<std::string>& values,
                                         std::uint64_t seed, std::string_view key) {
  std::vector<std::string> distinct;
  std::unordered_set<std::string> seen;
  for (const auto& v : values) {
    auto clipped = utf8_truncate(v, kMaxExampleChars);
    if (seen.insert(clipped).second) distinct.push_back(std::move(clipped));
  }
  if (distinct.size() <= kMaxExamples) return distinct;

  std::mt19937_64 rng(fnv1a64(key, seed));
  std::vector<std::size_t> idx(distinct.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Partial Fisher-Yates over the first kMaxExamples slots.
  for (std::size_t i = 0; i < kMaxExamples; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(kMaxExamples);
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(distinct[i]);
  return out;
}

namespace {

std::optional<std::string> sidecar_text(const std::optional<nlohmann::json>& doc,
                                        std::initializer_list<std::string_view> path) {
  if (!doc) return std::nullopt;
  const nlohmann::json* node = &*doc;
  for (auto key : path) {
    if (!node->is_object()) return std::nullopt;
    auto it = node->find(std::string(key));
    if (it == node->end()) {
      // Case-insensitive fallback for table and column keys.
      bool found = false;
      for (auto jt = node->begin(); jt != node->end(); ++jt) {
        if (iequals(jt.key(), key)) {
          node = &jt.value();
          found = true;
          break;
        }
      }
      if (!found) return std::nullopt;
      continue;
    }
    node = &*it;
  }
  if (!node->is_string()) return std::nullopt;
  return node->get<std::string>();
}

std::string quote_ident(std::string_view name) {
  std::string out = "\"";
  for (char c : name) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

SchemaCatalog ingest_catalog(const ExecBackend& backend, const IngestOptions& options) {
  SchemaCatalog catalog;
  catalog.db_id = options.db_id.value_or(std::filesystem::path(backend.locator()).stem().string());
  catalog.knowledge = sidecar_text(options.descriptions, {"knowledge"});

  std::vector<RelationSchema> relations;
  try {
    relations = backend.introspect();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConnection, std::string("introspection failed: ") + e.what());
  }

  for (const auto& rel : relations) {
    TableInfo table;
    table.name = rel.name;
    table.description = sidecar_text(options.descriptions, {"tables", rel.name, "description"});
    for (const auto& col : rel.columns) {
      ColumnInfo info;
      info.name = col.name;
      info.sql_type = col.declared_type;
      info.nullable = !col.not_null;
      info.primary_key = col.primary_key;
      info.description =
          sidecar_text(options.descriptions, {"tables", rel.name, "columns", col.name});
      table.columns.push_back(std::move(info));
    }
    for (const auto& fk : rel.foreign_keys)
      table.foreign_keys.push_back(ForeignKey{fk.column, fk.ref_table, fk.ref_column});

    if (options.sample_rows > 0) {
      ExecLimits limits;
      limits.row_cap = options.sample_rows;
      auto sample = backend.execute(
          "SELECT * FROM " + quote_ident(rel.name) + " LIMIT " + std::to_string(options.sample_rows),
          limits);
      if (!sample.ok()) {
        catalog.warnings.push_back("skipped unreadable table " + rel.name + ": " +
                                   sample.error->message);
        continue;
      }
      for (std::size_t c = 0; c < table.columns.size() && c < sample.columns.size(); ++c) {
        std::vector<std::string> values;
        for (const auto& row : sample.rows)
          if (!is_null(row[c])) values.push_back(value_to_text(row[c]));
        table.columns[c].examples =
            sample_examples(values, options.seed, rel.name + "." + table.columns[c].name);
      }
    }
    catalog.tables.push_back(std::move(table));
  }

  // Drop foreign keys whose target did not make it into the catalog.
  for (auto& t : catalog.tables) {
    std::vector<ForeignKey> kept;
    for (auto& fk : t.foreign_keys) {
      const auto* target = catalog.find_table(fk.ref_table);
      if (target && target->find_column(fk.ref_column)) {
        kept.push_back(fk);
      } else {
        catalog.warnings.push_back("dropped foreign key " + t.name + "." + fk.column + " -> " +
                                   fk.ref_table + "." + fk.ref_column);
      }
    }
    t.foreign_keys = std::move(kept);
  }
  catalog.validate();
  return catalog;
}

std::string description_sidecar_path(const std::string& locator) {
  return std::filesystem::path(locator).replace_extension(".desc.json").string();
}

SchemaCatalog ingest_catalog(const std::string& locator, const IngestOptions& options) {
  auto backend = open_backend(locator);
  IngestOptions opts = options;
  if (!opts.descriptions) {
    auto sidecar = description_sidecar_path(locator);
    if (std::filesystem::exists(sidecar)) opts.descriptions = nlohmann::json::parse(read_file(sidecar));
  }
  return ingest_catalog(*backend, opts);
}

nlohmann::json series_to_json(const SeriesMeta& s) {
  nlohmann::json deltas = nlohmann::json::array();
  for (const auto& d : s.column_deltas)
    deltas.push_back({{"member", d.member}, {"added", d.added}, {"removed", d.removed}});
  return {{"pattern", s.pattern},
          {"members", s.members},
          {"range", {{"min", s.range_min}, {"max", s.range_max}}},
          {"column_deltas", deltas}};
}

SeriesMeta series_from_json(const nlohmann::json& j) {
  SeriesMeta s;
  s.pattern = j.at("pattern").get<std::string>();
  s.members = j.at("members").get<std::vector<std::string>>();
  s.range_min = j.at("range").at("min").get<std::string>();
  s.range_max = j.at("range").at("max").get<std::string>();
  for (const auto& d : j.value("column_deltas", nlohmann::json::array())) {
    s.column_deltas.push_back(ColumnDelta{d.at("member").get<std::string>(),
                                          d.value("added", std::vector<std::string>{}),
                                          d.value("removed", std::vector<std::string>{})});
  }
  return s;
}

namespace {

nlohmann::json optional_text(const std::optional<std::string>& s) {
  return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
}

std::optional<std::string> read_optional_text(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

nlohmann::json catalog_to_json(const SchemaCatalog& catalog) {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& t : catalog.tables) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : t.columns) {
      cols.push_back({{"name", c.name},
                      {"type", c.sql_type},
                      {"description", optional_text(c.description)},
                      {"examples", c.examples},
                      {"nullable", c.nullable},
                      {"primary_key", c.primary_key}});
    }
    nlohmann::json keys = nlohmann::json::array();
    for (const auto& fk : t.foreign_keys)
      keys.push_back({{"column", fk.column}, {"ref_table", fk.ref_table}, {"ref_column", fk.ref_column}});
    nlohmann::json jt = {{"name", t.name},
                         {"description", optional_text(t.description)},
                         {"columns", cols},
                         {"foreign_keys", keys}};
    if (t.series_meta) jt["series"] = series_to_json(*t.series_meta);
    tables.push_back(std::move(jt));
  }
  return {{"format_version", kCatalogFormatVersion},
          {"db_id", catalog.db_id},
          {"knowledge", optional_text(catalog.knowledge)},
          {"warnings", catalog.warnings},
          {"tables", tables}};
}

SchemaCatalog catalog_from_json(const nlohmann::json& j) {
  int version = j.value("format_version", 0);
  if (version != kCatalogFormatVersion)
    throw Error(ErrorCode::kFormat, "unsupported catalog format_version " + std::to_string(version));
  SchemaCatalog catalog;
  catalog.db_id = j.at("db_id").get<std::string>();
  catalog.knowledge = read_optional_text(j, "knowledge");
  catalog.warnings = j.value("warnings", std::vector<std::string>{});
  for (const auto& jt : j.at("tables")) {
    TableInfo t;
    t.name = jt.at("name").get<std::string>();
    t.description = read_optional_text(jt, "description");
    for (const auto& jc : jt.at("columns")) {
      ColumnInfo c;
      c.name = jc.at("name").get<std::string>();
      c.sql_type = jc.value("type", "");
      c.description = read_optional_text(jc, "description");
      c.examples = jc.value("examples", std::vector<std::string>{});
      c.nullable = jc.value("nullable", true);
      c.primary_key = jc.value("primary_key", false);
      t.columns.push_back(std::move(c));
    }
    for (const auto& jk : jt.value("foreign_keys", nlohmann::json::array()))
      t.foreign_keys.push_back(ForeignKey{jk.at("column").get<std::string>(),
                                          jk.at("ref_table").get<std::string>(),
                                          jk.at("ref_column").get<std::string>()});
    if (auto it = jt.find("series"); it != jt.end() && !it->is_null())
      t.series_meta = series_from_json(*it);
    catalog.tables.push_back(std::move(t));
  }
  catalog.validate();
  return catalog;
}

std::string catalog_hash(const SchemaCatalog& catalog) {
  return sha256_hex(catalog_to_json(catalog).dump());
}

}  // namespace dsr
