#include "dsr/refine.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <regex>

#include "dsr/common.hpp"
#include "dsr/parallel.hpp"
#include "dsr/tokens.hpp"

namespace dsr {

std::optional<std::string> RefinedSchema::resolve(std::string_view table) const {
  if (const auto* t = catalog.find_table(table)) return t->name;
  for (const auto& [canonical, series] : provenance) {
    for (const auto& m : series.members)
      if (iequals(m, table)) return canonical;
  }
  return std::nullopt;
}

std::optional<SeriesSuffix> split_series_suffix(std::string_view table_name) {
  static const std::regex digits(R"(^(.*[^_])_([0-9]{1,8})$)");
  static const std::regex version(R"(^(.*[^_])_[vV]([0-9]+)$)");
  auto dot = table_name.rfind('.');
  std::string prefix(dot == std::string_view::npos ? "" : table_name.substr(0, dot + 1));
  std::string last(dot == std::string_view::npos ? table_name : table_name.substr(dot + 1));
  std::smatch m;
  if (std::regex_match(last, m, digits)) {
    auto token = m[2].str();
    bool date_like = token.size() == 8 || token.size() == 6;
    return SeriesSuffix{prefix + m[1].str(), token, date_like ? "[DATE]" : "[N]"};
  }
  if (std::regex_match(last, m, version)) {
    return SeriesSuffix{prefix + m[1].str(), last.substr(m[1].length() + 1), "[VERSION]"};
  }
  return std::nullopt;
}

double jaccard_similarity(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

namespace {

std::set<std::string> column_set(const TableInfo& t) {
  std::set<std::string> out;
  for (const auto& c : t.columns) out.insert(to_lower(c.name));
  return out;
}

// Numeric order of suffix tokens, ignoring a leading 'v'.
bool suffix_less(const std::string& a, const std::string& b) {
  auto digits = [](const std::string& s) {
    std::string d = (!s.empty() && (s[0] == 'v' || s[0] == 'V')) ? s.substr(1) : s;
    auto nz = d.find_first_not_of('0');
    return nz == std::string::npos ? std::string("0") : d.substr(nz);
  };
  auto da = digits(a), db = digits(b);
  if (da.size() != db.size()) return da.size() < db.size();
  if (da != db) return da < db;
  return a < b;
}

struct Candidate {
  const TableInfo* table;
  SeriesSuffix suffix;
};

}  // namespace

std::vector<SeriesMeta> detect_table_series(const SchemaCatalog& catalog, double jaccard_threshold) {
  std::map<std::pair<std::string, std::string>, std::vector<Candidate>> buckets;
  for (const auto& t : catalog.tables) {
    if (auto s = split_series_suffix(t.name))
      buckets[{to_lower(s->stem), s->placeholder}].push_back(Candidate{&t, *s});
  }

  std::vector<SeriesMeta> out;
  for (auto& [key, members] : buckets) {
    if (members.size() < 2) continue;
    std::sort(members.begin(), members.end(), [](const Candidate& a, const Candidate& b) {
      return suffix_less(b.suffix.token, a.suffix.token);  // newest first
    });
    struct Group {
      std::set<std::string> layout;
      std::vector<const Candidate*> members;
    };
    std::vector<Group> groups;
    for (const auto& c : members) {
      auto cols = column_set(*c.table);
      auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
        return jaccard_similarity(cols, g.layout) >= jaccard_threshold;
      });
      if (it == groups.end()) {
        groups.push_back(Group{cols, {&c}});
      } else {
        it->members.push_back(&c);
      }
    }
    for (const auto& g : groups) {
      if (g.members.size() < 2) continue;
      const TableInfo& canonical = *g.members.front()->table;
      SeriesMeta meta;
      meta.pattern = g.members.front()->suffix.stem + "_" + g.members.front()->suffix.placeholder;
      for (auto it = g.members.rbegin(); it != g.members.rend(); ++it) {
        const TableInfo& member = *(*it)->table;
        meta.members.push_back(member.name);
        ColumnDelta delta{member.name, {}, {}};
        for (const auto& c : member.columns)
          if (!canonical.find_column(c.name)) delta.added.push_back(c.name);
        for (const auto& c : canonical.columns)
          if (!member.find_column(c.name)) delta.removed.push_back(c.name);
        if (!delta.added.empty() || !delta.removed.empty()) meta.column_deltas.push_back(std::move(delta));
      }
      meta.range_min = g.members.back()->suffix.token;
      meta.range_max = g.members.front()->suffix.token;
      out.push_back(std::move(meta));
    }
  }
  std::sort(out.begin(), out.end(),
            [](const SeriesMeta& a, const SeriesMeta& b) { return a.members.front() < b.members.front(); });
  return out;
}

std::string mechanical_series_description(const SeriesMeta& series) {
  std::string out = fmt::format("{}, suffix range {}–{}", series.pattern, series.range_min,
                                series.range_max);
  if (series.column_deltas.empty()) return out + ", identical layouts";

  // Members sharing the same delta are reported together.
  std::map<std::pair<std::vector<std::string>, std::vector<std::string>>, std::vector<std::string>> by_delta;
  for (const auto& d : series.column_deltas) by_delta[{d.added, d.removed}].push_back(d.member);
  std::vector<std::string> parts;
  for (const auto& [delta, members] : by_delta) {
    std::vector<std::string> changes;
    for (const auto& a : delta.first) changes.push_back("+" + a);
    for (const auto& r : delta.second) changes.push_back("-" + r);
    std::string who = members.size() == 1
                          ? members.front()
                          : fmt::format("{}–{} ({} tables)", members.front(), members.back(),
                                        members.size());
    parts.push_back(fmt::format("{} in {}", join(changes, " "), who));
  }
  return out + ", column deltas relative to the canonical layout: " + join(parts, "; ");
}

std::string describe_series(const SeriesMeta& series, const SchemaCatalog& source, LlmClient& llm) {
  std::string prompt = fmt::format(
      "Database: {}\nThe following {} tables share the same structure and differ only by a name "
      "suffix.\nNaming pattern: {}\nSuffix range: {} to {}\nTables: ",
      source.db_id, series.members.size(), series.pattern, series.range_min, series.range_max);
  constexpr std::size_t kListed = 12;
  for (std::size_t i = 0; i < series.members.size(); ++i) {
    if (series.members.size() > kListed && i == kListed / 2) {
      prompt += fmt::format("... ({} more) ..., ", series.members.size() - kListed);
      i = series.members.size() - kListed / 2;
    }
    prompt += series.members[i] + (i + 1 < series.members.size() ? ", " : "\n");
  }
  if (const auto* canonical = source.find_table(series.members.back())) {
    prompt += "Columns of the newest table:\n";
    for (const auto& c : canonical->columns)
      prompt += "- " + c.name + " (" + c.sql_type + ")" + (c.description ? ": " + *c.description : "") + "\n";
  }
  if (!series.column_deltas.empty()) {
    prompt += "Column differences against the newest table:\n";
    for (const auto& d : series.column_deltas) {
      prompt += "- " + d.member + ": added [" + join(d.added, ", ") + "], missing [" +
                join(d.removed, ", ") + "]\n";
    }
  }
  prompt +=
      "Write a concise table description that states the naming convention, the suffix range, "
      "what the tables contain, and any schema differences between members.";

  CompletionRequest request;
  request.tag = "refine.describe_series";
  request.messages = {{"system", "You document relational database schemas."}, {"user", prompt}};
  try {
    auto text = std::string(trim(llm.complete(request)));
    if (!text.empty()) return text;
  } catch (const Error&) {
  }
  return mechanical_series_description(series);
}

RefinedSchema consolidate_series(const SchemaCatalog& catalog, const std::vector<SeriesMeta>& series,
                                 const std::map<std::string, std::string>& descriptions) {
  RefinedSchema refined;
  refined.source_table_count = catalog.tables.size();
  std::map<std::string, const SeriesMeta*> member_of;  // lowercase member -> series
  for (const auto& s : series)
    for (const auto& m : s.members) member_of[to_lower(m)] = &s;

  refined.catalog.db_id = catalog.db_id;
  refined.catalog.knowledge = catalog.knowledge;
  refined.catalog.warnings = catalog.warnings;
  for (const auto& t : catalog.tables) {
    // Series recorded by an earlier refinement stay in the provenance.
    if (t.series_meta) refined.provenance[t.name] = *t.series_meta;
    auto it = member_of.find(to_lower(t.name));
    if (it == member_of.end()) {
      refined.catalog.tables.push_back(t);
      continue;
    }
    const SeriesMeta& s = *it->second;
    if (!iequals(s.members.back(), t.name)) continue;

    // The description may not cost more than the member tables it replaces.
    std::size_t removed_tokens = 0;
    for (std::size_t i = 0; i + 1 < s.members.size(); ++i) {
      auto text = render(SchemaView(catalog, {s.members[i]}));
      removed_tokens += estimate_tokens(text);
    }
    std::string desc = descriptions.count(s.pattern) ? descriptions.at(s.pattern)
                                                     : mechanical_series_description(s);
    desc = truncate_to_tokens(desc, removed_tokens > 16 ? removed_tokens - 16 : 0);

    TableInfo canonical = t;
    if (!desc.empty()) {
      canonical.description =
          t.description && !t.description->empty() ? *t.description + "\n" + desc : desc;
    }
    canonical.series_meta = s;
    refined.provenance[canonical.name] = s;
    refined.catalog.tables.push_back(std::move(canonical));
  }

  // Foreign keys into dropped members now point at the canonical table.
  for (auto& t : refined.catalog.tables) {
    std::vector<ForeignKey> kept;
    for (auto fk : t.foreign_keys) {
      auto it = member_of.find(to_lower(fk.ref_table));
      if (it != member_of.end()) fk.ref_table = it->second->members.back();
      const auto* target = refined.catalog.find_table(fk.ref_table);
      if (target && target->find_column(fk.ref_column)) kept.push_back(fk);
    }
    t.foreign_keys = std::move(kept);
  }
  return refined;
}

namespace {

std::string quote_ident(std::string_view name) {
  std::string out = "\"";
  for (char c : name) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

struct PruneOutcome {
  std::vector<std::string> pruned;
  std::optional<std::string> warning;
};

}  // namespace

RefinedSchema prune_uninformative_columns(const SchemaCatalog& catalog, const ExecBackend& exec,
                                          const RefineConfig& config) {
  std::vector<PruneOutcome> outcomes(catalog.tables.size());
  std::vector<std::string> placeholders;
  for (const auto& p : config.placeholders) placeholders.push_back(to_lower(p));

  parallel_for(catalog.tables.size(), config.concurrency, [&](std::size_t ti) {
    const auto& table = catalog.tables[ti];
    std::vector<std::string> probe_columns;
    for (const auto& c : table.columns)
      if (!table.is_key_column(c.name, catalog)) probe_columns.push_back(c.name);
    if (probe_columns.empty()) return;

    std::vector<std::string> quoted;
    for (const auto& c : probe_columns) quoted.push_back(quote_ident(c));
    ExecLimits limits;
    limits.row_cap = std::max<std::size_t>(1, config.prune_sample_rows);
    auto sample = exec.execute(fmt::format("SELECT {} FROM {} LIMIT {}", join(quoted, ", "),
                                           quote_ident(table.name), limits.row_cap),
                               limits);
    if (!sample.ok()) {
      outcomes[ti].warning = "pruning skipped for " + table.name + ": " + sample.error->message;
      return;
    }
    if (sample.rows.empty()) return;
    for (std::size_t c = 0; c < probe_columns.size(); ++c) {
      bool all_null = true;
      std::optional<std::string> repeated;
      bool single_placeholder = true;
      for (const auto& row : sample.rows) {
        const auto& v = row[c];
        if (is_null(v)) {
          single_placeholder = false;
          continue;
        }
        all_null = false;
        auto text = to_lower(value_to_text(v));
        if (!std::holds_alternative<std::string>(v) ||
            std::find(placeholders.begin(), placeholders.end(), text) == placeholders.end() ||
            (repeated && *repeated != text)) {
          single_placeholder = false;
        }
        repeated = text;
        if (!single_placeholder) break;
      }
      if (all_null || single_placeholder) outcomes[ti].pruned.push_back(probe_columns[c]);
    }
    // A table keeps its columns when every one of them would go.
    if (outcomes[ti].pruned.size() == table.columns.size()) outcomes[ti].pruned.clear();
  });

  RefinedSchema refined;
  refined.source_table_count = catalog.tables.size();
  refined.catalog = catalog;
  for (std::size_t ti = 0; ti < catalog.tables.size(); ++ti) {
    auto& table = refined.catalog.tables[ti];
    if (outcomes[ti].warning) refined.warnings.push_back(*outcomes[ti].warning);
    if (outcomes[ti].pruned.empty()) continue;
    const auto& gone = outcomes[ti].pruned;
    std::erase_if(table.columns, [&](const ColumnInfo& c) {
      return std::any_of(gone.begin(), gone.end(), [&](const auto& g) { return iequals(g, c.name); });
    });
    refined.pruned_columns[table.name] = gone;
  }
  return refined;
}

RefinedKnowledge refine_knowledge(std::string_view knowledge, std::string_view question,
                                  LlmClient& llm, std::size_t budget) {
  RefinedKnowledge out;
  out.source_digest = sha256_hex(knowledge);
  if (trim(knowledge).empty()) return out;

  const std::size_t original_tokens = estimate_tokens(knowledge);
  CompletionRequest request;
  request.tag = "refine.knowledge";
  std::string prompt = "Condense the following reference material for answering database questions. "
                       "Keep only facts useful for writing SQL, such as units, enumerations, "
                       "value formats and temporal ranges.\n";
  if (!question.empty()) prompt += "Question: " + std::string(question) + "\n";
  prompt += "Material:\n" + std::string(knowledge);
  request.messages = {{"system", "You extract query-relevant facts from documentation."}, {"user", prompt}};

  try {
    auto text = std::string(trim(llm.complete(request)));
    auto tokens = estimate_tokens(text);
    if (!text.empty() && tokens <= original_tokens && tokens <= std::max(budget, original_tokens)) {
      out.text = truncate_to_tokens(text, budget);
      return out;
    }
  } catch (const Error&) {
  }
  out.text = truncate_to_tokens(knowledge, std::min(budget, original_tokens));
  return out;
}

std::pair<RefinedSchema, RefinedKnowledge> refine_schema(const SchemaCatalog& catalog,
                                                         const ExecBackend& exec, LlmClient& llm,
                                                         const RefineConfig& config) {
  auto series = detect_table_series(catalog, config.jaccard_threshold);
  std::map<std::string, std::string> descriptions;
  for (const auto& s : series) descriptions[s.pattern] = describe_series(s, catalog, llm);
  auto consolidated = consolidate_series(catalog, series, descriptions);
  auto pruned = prune_uninformative_columns(consolidated.catalog, exec, config);

  RefinedSchema refined;
  refined.catalog = std::move(pruned.catalog);
  refined.provenance = std::move(consolidated.provenance);
  refined.pruned_columns = std::move(pruned.pruned_columns);
  refined.dropped = consolidated.dropped;
  refined.warnings = consolidated.warnings;
  refined.warnings.insert(refined.warnings.end(), pruned.warnings.begin(), pruned.warnings.end());
  refined.source_table_count = catalog.tables.size();

  RefinedKnowledge knowledge;
  if (catalog.knowledge) {
    knowledge = refine_knowledge(*catalog.knowledge, "", llm, config.knowledge_budget);
  } else {
    knowledge.source_digest = sha256_hex("");
  }
  refined.catalog.knowledge = knowledge.text.empty() ? std::nullopt : std::optional(knowledge.text);
  return {std::move(refined), std::move(knowledge)};
}

nlohmann::json refined_schema_to_json(const RefinedSchema& refined) {
  auto j = catalog_to_json(refined.catalog);
  nlohmann::json provenance = nlohmann::json::object();
  for (const auto& [canonical, s] : refined.provenance) provenance[canonical] = series_to_json(s);
  j["provenance"] = {{"series", provenance},
                     {"pruned_columns", refined.pruned_columns},
                     {"dropped", refined.dropped},
                     {"warnings", refined.warnings},
                     {"source_table_count", refined.source_table_count}};
  return j;
}

RefinedSchema refined_schema_from_json(const nlohmann::json& j) {
  RefinedSchema refined;
  refined.catalog = catalog_from_json(j);
  if (auto it = j.find("provenance"); it != j.end()) {
    auto series = it->value("series", nlohmann::json::object());
    for (const auto& [canonical, s] : series.items())
      refined.provenance[canonical] = series_from_json(s);
    refined.pruned_columns =
        it->value("pruned_columns", std::map<std::string, std::vector<std::string>>{});
    refined.dropped = it->value("dropped", std::vector<std::string>{});
    refined.warnings = it->value("warnings", std::vector<std::string>{});
    refined.source_table_count = it->value("source_table_count", refined.catalog.tables.size());
  }
  return refined;
}

}  // namespace dsr
