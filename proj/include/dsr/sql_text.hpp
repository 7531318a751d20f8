#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace dsr {

// Lexical SQL utilities. Everything here is total: malformed input degrades
// to whatever is still lexically recoverable.

enum class SqlTokenKind { kWord, kQuotedIdent, kString, kNumber, kPunct };

struct SqlToken {
  SqlTokenKind kind;
  std::string text;  // quoted identifiers are stored unquoted
};

// Comments and whitespace are dropped. Unterminated strings run to the end.
std::vector<SqlToken> tokenize_sql(std::string_view sql);

// Raw (possibly qualified) relation names in FROM/JOIN positions, with CTE
// names and derived tables excluded. Order of first appearance.
std::vector<std::string> referenced_relations(std::string_view sql);

// True when two dotted names agree on their common trailing segments
// (case-insensitive), e.g. "orders" ~ "db.sch.orders".
bool relation_name_matches(std::string_view a, std::string_view b);

// Known table names referenced in FROM/JOIN positions, spelled as in `known`.
std::set<std::string> tables_from_sql(std::string_view sql, const std::vector<std::string>& known);

// Splits on ';' outside strings, quoted identifiers and comments. Empty
// statements are dropped; each statement is trimmed.
std::vector<std::string> split_statements(std::string_view sql);

// Single SELECT (or WITH ... SELECT) statement with no data-modifying keyword.
bool is_read_only_select(std::string_view sql);

// ORDER BY outside any parentheses.
bool has_top_level_order_by(std::string_view sql);

// Extraction order: last <sql>...</sql> region, then the last fenced code
// block, then the last line that starts like a statement. Trailing
// semicolons are stripped.
std::optional<std::string> extract_sql(std::string_view completion);

// Every statement found using the same region precedence as extract_sql.
std::vector<std::string> extract_all_sql(std::string_view completion);

}  // namespace dsr
