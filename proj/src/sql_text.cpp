#include "dsr/sql_text.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <unordered_set>

#include "dsr/common.hpp"

namespace dsr {

namespace {

bool is_word_start(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalpha(u) || c == '_' || u >= 0x80;
}

bool is_word_char(char c) {
  auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || c == '_' || c == '$' || u >= 0x80;
}

bool is_word(const SqlToken& t, std::string_view keyword) {
  return t.kind == SqlTokenKind::kWord && iequals(t.text, keyword);
}

bool is_punct(const SqlToken& t, char c) {
  return t.kind == SqlTokenKind::kPunct && t.text.size() == 1 && t.text[0] == c;
}

bool is_name_token(const SqlToken& t) {
  return t.kind == SqlTokenKind::kWord || t.kind == SqlTokenKind::kQuotedIdent;
}

// Words that end a FROM list at the current nesting depth.
const std::unordered_set<std::string>& from_terminators() {
  static const std::unordered_set<std::string> words = {
      "where", "group", "order",  "having", "limit",  "union",     "except",
      "intersect", "window", "qualify", "offset", "fetch",
      "select", "returning", "values", "set", "into"};
  return words;
}

// Words that may sit between FROM/JOIN and the relation name.
const std::unordered_set<std::string>& from_modifiers() {
  static const std::unordered_set<std::string> words = {"lateral", "only"};
  return words;
}

// Words that can never be a relation name in FROM position.
const std::unordered_set<std::string>& non_relation_words() {
  static const std::unordered_set<std::string> words = {
      "select", "where", "join",  "left", "right", "inner", "outer", "full", "cross",
      "natural", "on",   "using", "group", "order", "limit", "union", "as",   "table",
      "unnest", "values"};
  return words;
}

}  // namespace

std::vector<SqlToken> tokenize_sql(std::string_view sql) {
  std::vector<SqlToken> tokens;
  std::size_t i = 0;
  const std::size_t n = sql.size();
  while (i < n) {
    char c = sql[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
      while (i < n && sql[i] != '\n') ++i;
    } else if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
      auto end = sql.find("*/", i + 2);
      i = end == std::string_view::npos ? n : end + 2;
    } else if (c == '\'') {
      std::string text;
      ++i;
      while (i < n) {
        if (sql[i] == '\'') {
          if (i + 1 < n && sql[i + 1] == '\'') {
            text.push_back('\'');
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        text.push_back(sql[i++]);
      }
      tokens.push_back({SqlTokenKind::kString, std::move(text)});
    } else if (c == '"' || c == '`' || c == '[') {
      char close = c == '[' ? ']' : c;
      std::string text;
      ++i;
      while (i < n) {
        if (sql[i] == close) {
          if (close != ']' && i + 1 < n && sql[i + 1] == close) {
            text.push_back(close);
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        text.push_back(sql[i++]);
      }
      tokens.push_back({SqlTokenKind::kQuotedIdent, std::move(text)});
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t start = i;
      while (i < n && (std::isalnum(static_cast<unsigned char>(sql[i])) || sql[i] == '.')) ++i;
      tokens.push_back({SqlTokenKind::kNumber, std::string(sql.substr(start, i - start))});
    } else if (is_word_start(c)) {
      std::size_t start = i;
      while (i < n && is_word_char(sql[i])) ++i;
      tokens.push_back({SqlTokenKind::kWord, std::string(sql.substr(start, i - start))});
    } else {
      tokens.push_back({SqlTokenKind::kPunct, std::string(1, c)});
      ++i;
    }
  }
  return tokens;
}

std::vector<std::string> referenced_relations(std::string_view sql) {
  const auto tokens = tokenize_sql(sql);
  const std::size_t n = tokens.size();

  // CTE names: [WITH | RECURSIVE | ,] name [(cols)] AS (
  std::unordered_set<std::string> cte_names;
  for (std::size_t i = 0; i + 2 < n; ++i) {
    if (!(is_word(tokens[i], "with") || is_word(tokens[i], "recursive") || is_punct(tokens[i], ',')))
      continue;
    if (!is_name_token(tokens[i + 1])) continue;
    std::size_t j = i + 2;
    if (j < n && is_punct(tokens[j], '(')) {
      int depth = 0;
      for (; j < n; ++j) {
        if (is_punct(tokens[j], '(')) ++depth;
        if (is_punct(tokens[j], ')') && --depth == 0) {
          ++j;
          break;
        }
      }
    }
    if (j + 1 < n && is_word(tokens[j], "as") && is_punct(tokens[j + 1], '('))
      cte_names.insert(to_lower(tokens[i + 1].text));
  }

  std::vector<std::string> out;
  std::vector<bool> in_from(1, false);
  std::vector<bool> expect(1, false);
  std::size_t depth = 0;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = tokens[i];
    if (is_punct(t, '(')) {
      expect[depth] = false;  // derived table or function call
      ++depth;
      if (in_from.size() <= depth) {
        in_from.resize(depth + 1, false);
        expect.resize(depth + 1, false);
      }
      in_from[depth] = false;
      expect[depth] = false;
      continue;
    }
    if (is_punct(t, ')')) {
      if (depth > 0) --depth;
      continue;
    }
    if (is_punct(t, ',')) {
      if (in_from[depth]) expect[depth] = true;
      continue;
    }
    if (is_word(t, "from") || is_word(t, "join")) {
      in_from[depth] = true;
      expect[depth] = true;
      continue;
    }
    if (t.kind == SqlTokenKind::kWord) {
      auto lower = to_lower(t.text);
      if (expect[depth] && from_modifiers().count(lower)) continue;
      // A join condition runs until the next JOIN, comma or clause keyword.
      if (lower == "on" || lower == "using") {
        expect[depth] = false;
        continue;
      }
      if (from_terminators().count(lower)) {
        in_from[depth] = false;
        expect[depth] = false;
        continue;
      }
    }
    if (!expect[depth]) continue;
    expect[depth] = false;
    if (!is_name_token(t)) continue;
    if (t.kind == SqlTokenKind::kWord && non_relation_words().count(to_lower(t.text))) continue;

    // Qualified name: part (. part)*
    std::string name = t.text;
    std::size_t j = i + 1;
    while (j + 1 < n && is_punct(tokens[j], '.') && is_name_token(tokens[j + 1])) {
      name += "." + tokens[j + 1].text;
      j += 2;
    }
    i = j - 1;
    // name( ... ) is a table function.
    if (j < n && is_punct(tokens[j], '(')) continue;
    if (name.find('.') == std::string::npos && cte_names.count(to_lower(name))) continue;
    if (std::none_of(out.begin(), out.end(), [&](const auto& o) { return iequals(o, name); }))
      out.push_back(name);
  }
  return out;
}

bool relation_name_matches(std::string_view a, std::string_view b) {
  auto sa = split(a, '.');
  auto sb = split(b, '.');
  std::size_t common = std::min(sa.size(), sb.size());
  if (common == 0) return false;
  for (std::size_t k = 1; k <= common; ++k) {
    if (!iequals(sa[sa.size() - k], sb[sb.size() - k])) return false;
  }
  return true;
}

std::set<std::string> tables_from_sql(std::string_view sql, const std::vector<std::string>& known) {
  std::set<std::string> out;
  for (const auto& ref : referenced_relations(sql)) {
    for (const auto& k : known)
      if (relation_name_matches(ref, k)) out.insert(k);
  }
  return out;
}

std::vector<std::string> split_statements(std::string_view sql) {
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  const std::size_t n = sql.size();
  auto flush = [&](std::size_t end) {
    auto piece = trim(sql.substr(start, end - start));
    // Drop pieces holding only comments.
    if (!piece.empty() && !tokenize_sql(piece).empty()) out.emplace_back(piece);
  };
  while (i < n) {
    char c = sql[i];
    if (c == '-' && i + 1 < n && sql[i + 1] == '-') {
      while (i < n && sql[i] != '\n') ++i;
    } else if (c == '/' && i + 1 < n && sql[i + 1] == '*') {
      auto end = sql.find("*/", i + 2);
      i = end == std::string_view::npos ? n : end + 2;
    } else if (c == '\'' || c == '"' || c == '`') {
      ++i;
      while (i < n && sql[i] != c) ++i;
      if (i < n) ++i;
    } else if (c == ';') {
      flush(i);
      start = ++i;
    } else {
      ++i;
    }
  }
  flush(n);
  return out;
}

bool is_read_only_select(std::string_view sql) {
  auto statements = split_statements(sql);
  if (statements.size() != 1) return false;
  auto tokens = tokenize_sql(statements.front());
  if (tokens.empty()) return false;
  if (!is_word(tokens.front(), "select") && !is_word(tokens.front(), "with")) return false;
  static const std::unordered_set<std::string> forbidden = {
      "insert", "update", "delete", "drop", "create", "alter", "attach", "detach",
      "pragma", "vacuum", "reindex", "truncate", "grant", "revoke", "merge", "upsert"};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& t = tokens[i];
    if (t.kind != SqlTokenKind::kWord) continue;
    auto lower = to_lower(t.text);
    if (forbidden.count(lower)) return false;
    // REPLACE INTO is a write; replace(...) is a string function.
    if (lower == "replace" && i + 1 < tokens.size() && is_word(tokens[i + 1], "into")) return false;
  }
  return true;
}

bool has_top_level_order_by(std::string_view sql) {
  auto tokens = tokenize_sql(sql);
  int depth = 0;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    if (is_punct(tokens[i], '(')) ++depth;
    if (is_punct(tokens[i], ')')) depth = std::max(0, depth - 1);
    if (depth == 0 && is_word(tokens[i], "order") && is_word(tokens[i + 1], "by")) return true;
  }
  return false;
}

namespace {

std::string clean_statement(std::string_view s) {
  auto t = trim(s);
  while (!t.empty() && t.back() == ';') t = trim(t.substr(0, t.size() - 1));
  return std::string(t);
}

std::vector<std::string> tag_regions(std::string_view text) {
  static const std::regex re(R"(<sql>([\s\S]*?)</sql>)", std::regex::icase);
  std::vector<std::string> out;
  std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    auto body = clean_statement((*it)[1].str());
    if (!body.empty()) out.push_back(body);
  }
  return out;
}

std::vector<std::string> fenced_regions(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    auto open = text.find("```", pos);
    if (open == std::string_view::npos) break;
    auto body_start = text.find('\n', open + 3);
    if (body_start == std::string_view::npos) break;
    auto close = text.find("```", body_start + 1);
    if (close == std::string_view::npos) break;
    auto body = clean_statement(text.substr(body_start + 1, close - body_start - 1));
    if (!body.empty()) out.push_back(body);
    pos = close + 3;
  }
  return out;
}

std::vector<std::string> statement_lines(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& line : split(text, '\n')) {
    auto t = trim(line);
    if (istarts_with(t, "select ") || istarts_with(t, "with ") || iequals(t, "select")) {
      auto body = clean_statement(t);
      if (!body.empty()) out.push_back(body);
    }
  }
  return out;
}

}  // namespace

std::optional<std::string> extract_sql(std::string_view completion) {
  for (auto* finder : {&tag_regions, &fenced_regions, &statement_lines}) {
    auto regions = finder(completion);
    if (!regions.empty()) return regions.back();
  }
  return std::nullopt;
}

std::vector<std::string> extract_all_sql(std::string_view completion) {
  for (auto* finder : {&tag_regions, &fenced_regions, &statement_lines}) {
    auto regions = finder(completion);
    if (regions.empty()) continue;
    std::vector<std::string> out;
    for (const auto& r : regions)
      for (auto& s : split_statements(r)) out.push_back(std::move(s));
    return out;
  }
  return {};
}

}  // namespace dsr
