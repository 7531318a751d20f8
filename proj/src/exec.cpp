#include "dsr/exec.hpp"

#include <sqlite3.h>

#include <algorithm>
#include <charconv>
#include <filesystem>

#include "dsr/common.hpp"

namespace dsr {

namespace {

struct DbCloser {
  void operator()(sqlite3* db) const { sqlite3_close_v2(db); }
};
struct StmtFinalizer {
  void operator()(sqlite3_stmt* stmt) const { sqlite3_finalize(stmt); }
};
using DbHandle = std::unique_ptr<sqlite3, DbCloser>;
using StmtHandle = std::unique_ptr<sqlite3_stmt, StmtFinalizer>;

DbHandle open_db(const std::string& path, bool writable, bool create = false) {
  sqlite3* raw = nullptr;
  int flags = writable ? SQLITE_OPEN_READWRITE : SQLITE_OPEN_READONLY;
  if (create) flags |= SQLITE_OPEN_CREATE;
  int rc = sqlite3_open_v2(path.c_str(), &raw, flags, nullptr);
  DbHandle db(raw);
  if (rc != SQLITE_OK) {
    std::string msg = raw ? sqlite3_errmsg(raw) : "out of memory";
    throw Error(ErrorCode::kConnection, "cannot open database " + path + ": " + msg);
  }
  return db;
}

Value column_value(sqlite3_stmt* stmt, int i) {
  switch (sqlite3_column_type(stmt, i)) {
    case SQLITE_NULL: return std::monostate{};
    case SQLITE_INTEGER: return static_cast<std::int64_t>(sqlite3_column_int64(stmt, i));
    case SQLITE_FLOAT: return sqlite3_column_double(stmt, i);
    default: {
      const auto* text = reinterpret_cast<const char*>(sqlite3_column_text(stmt, i));
      int n = sqlite3_column_bytes(stmt, i);
      return std::string(text ? text : "", static_cast<std::size_t>(n));
    }
  }
}

bool is_syntax_message(std::string_view msg) {
  return msg.find("syntax error") != std::string_view::npos ||
         msg.find("incomplete input") != std::string_view::npos ||
         msg.find("unrecognized token") != std::string_view::npos;
}

int progress_callback(void* arg) {
  auto* deadline = static_cast<std::chrono::steady_clock::time_point*>(arg);
  return std::chrono::steady_clock::now() > *deadline ? 1 : 0;
}

// Runs sql to completion and returns all rows; throws on any failure.
std::vector<Row> query_all(sqlite3* db, const std::string& sql,
                           std::vector<std::string>* columns = nullptr) {
  sqlite3_stmt* raw = nullptr;
  if (sqlite3_prepare_v2(db, sql.c_str(), -1, &raw, nullptr) != SQLITE_OK)
    throw Error(ErrorCode::kBackend, sqlite3_errmsg(db));
  StmtHandle stmt(raw);
  int ncols = sqlite3_column_count(raw);
  if (columns) {
    for (int i = 0; i < ncols; ++i) columns->emplace_back(sqlite3_column_name(raw, i));
  }
  std::vector<Row> rows;
  int rc;
  while ((rc = sqlite3_step(raw)) == SQLITE_ROW) {
    Row row;
    row.reserve(static_cast<std::size_t>(ncols));
    for (int i = 0; i < ncols; ++i) row.push_back(column_value(raw, i));
    rows.push_back(std::move(row));
  }
  if (rc != SQLITE_DONE) throw Error(ErrorCode::kBackend, sqlite3_errmsg(db));
  return rows;
}

std::string quote_ident(std::string_view name) {
  std::string out = "\"";
  for (char c : name) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string quote_literal(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out.push_back('\'');
    out.push_back(c);
  }
  out.push_back('\'');
  return out;
}

std::string encode_for_hash(const Value& v) {
  if (is_null(v)) return "n;";
  if (auto* i = std::get_if<std::int64_t>(&v)) return "i" + std::to_string(*i) + ";";
  if (auto* d = std::get_if<double>(&v)) return "r" + value_to_text(*d) + ";";
  const auto& s = std::get<std::string>(v);
  return "t" + std::to_string(s.size()) + ":" + s + ";";
}

}  // namespace

bool is_numeric(const Value& v) {
  return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<double>(v);
}

double as_double(const Value& v) {
  if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (auto* d = std::get_if<double>(&v)) return *d;
  return 0.0;
}

std::string value_to_text(const Value& v) {
  if (is_null(v)) return "NULL";
  if (auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (auto* d = std::get_if<double>(&v)) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), *d);
    std::string out(buf, end);
    if (out.find_first_of(".eEn") == std::string::npos) out += ".0";
    return out;
  }
  return std::get<std::string>(v);
}

std::string_view to_string(ExecErrorKind kind) {
  switch (kind) {
    case ExecErrorKind::kSyntax: return "SYNTAX";
    case ExecErrorKind::kRuntime: return "RUNTIME";
    case ExecErrorKind::kTimeout: return "TIMEOUT";
  }
  return "RUNTIME";
}

ExecErrorKind exec_error_kind_from_string(std::string_view s) {
  if (s == "SYNTAX") return ExecErrorKind::kSyntax;
  if (s == "TIMEOUT") return ExecErrorKind::kTimeout;
  return ExecErrorKind::kRuntime;
}

bool ExecutionResult::same_content(const ExecutionResult& other) const {
  if (columns != other.columns || rows != other.rows || truncated != other.truncated) return false;
  if (error.has_value() != other.error.has_value()) return false;
  if (error && (error->kind != other.error->kind || error->message != other.error->message))
    return false;
  return true;
}

std::string to_tsv(const ExecutionResult& result, std::size_t max_rows, std::size_t max_cols) {
  if (result.error) {
    return "ERROR (" + std::string(to_string(result.error->kind)) + "): " + result.error->message +
           "\n";
  }
  std::size_t ncols = std::min(result.columns.size(), max_cols);
  std::string out;
  for (std::size_t c = 0; c < ncols; ++c) {
    if (c) out.push_back('\t');
    out += result.columns[c];
  }
  out.push_back('\n');
  std::size_t nrows = std::min(result.rows.size(), max_rows);
  for (std::size_t r = 0; r < nrows; ++r) {
    for (std::size_t c = 0; c < ncols && c < result.rows[r].size(); ++c) {
      if (c) out.push_back('\t');
      out += value_to_text(result.rows[r][c]);
    }
    out.push_back('\n');
  }
  bool cut_rows = result.rows.size() > nrows || result.truncated;
  bool cut_cols = result.columns.size() > ncols;
  if (cut_rows || cut_cols) {
    out += "... [truncated: showing " + std::to_string(nrows) + " of " +
           std::to_string(result.rows.size()) + (result.truncated ? "+" : "") + " rows, " +
           std::to_string(ncols) + " of " + std::to_string(result.columns.size()) +
           " columns]\n";
  }
  if (result.rows.empty()) out += "(0 rows)\n";
  return out;
}

nlohmann::json value_to_json(const Value& v) {
  if (is_null(v)) return nullptr;
  if (auto* i = std::get_if<std::int64_t>(&v)) return *i;
  if (auto* d = std::get_if<double>(&v)) return *d;
  return std::get<std::string>(v);
}

Value value_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::monostate{};
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  return j.dump();
}

nlohmann::json rows_to_json(const std::vector<Row>& rows, std::size_t max_rows,
                            std::size_t max_cols) {
  auto out = nlohmann::json::array();
  for (std::size_t r = 0; r < rows.size() && r < max_rows; ++r) {
    auto row = nlohmann::json::array();
    for (std::size_t c = 0; c < rows[r].size() && c < max_cols; ++c)
      row.push_back(value_to_json(rows[r][c]));
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<Row> rows_from_json(const nlohmann::json& j) {
  std::vector<Row> rows;
  for (const auto& jr : j) {
    Row row;
    for (const auto& jv : jr) row.push_back(value_from_json(jv));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json result_to_json(const ExecutionResult& result, std::size_t max_rows) {
  nlohmann::json error = nullptr;
  if (result.error) error = {{"kind", to_string(result.error->kind)}, {"message", result.error->message}};
  return {{"columns", result.columns},
          {"rows", rows_to_json(result.rows, max_rows)},
          {"truncated", result.truncated || result.rows.size() > max_rows},
          {"error", error}};
}

ExecutionResult result_from_json(const nlohmann::json& j) {
  ExecutionResult r;
  r.columns = j.value("columns", std::vector<std::string>{});
  if (auto it = j.find("rows"); it != j.end()) r.rows = rows_from_json(*it);
  r.truncated = j.value("truncated", false);
  if (auto it = j.find("error"); it != j.end() && !it->is_null()) {
    r.error = ExecError{exec_error_kind_from_string(it->at("kind").get<std::string>()),
                        it->value("message", "")};
  }
  return r;
}

SqliteBackend::SqliteBackend(std::string path, SqliteOptions options)
    : path_(std::move(path)), options_(options) {
  if (!std::filesystem::exists(path_))
    throw Error(ErrorCode::kConnection, "database not found: " + path_);
  open_db(path_, options_.allow_writes);
}

ExecutionResult SqliteBackend::execute(std::string_view sql, const ExecLimits& limits) const {
  ExecutionResult result;
  const auto start = std::chrono::steady_clock::now();
  auto finish = [&](std::optional<ExecError> err) {
    result.elapsed =
        std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start);
    if (err) {
      result.error = std::move(err);
      result.columns.clear();
      result.rows.clear();
      result.truncated = false;
    }
    return result;
  };

  DbHandle db;
  try {
    db = open_db(path_, options_.allow_writes);
  } catch (const Error& e) {
    return finish(ExecError{ExecErrorKind::kRuntime, e.what()});
  }

  auto deadline = start + limits.timeout;
  sqlite3_progress_handler(db.get(), 1000, &progress_callback, &deadline);

  std::string text(sql);
  sqlite3_stmt* raw = nullptr;
  const char* tail = nullptr;
  int rc = sqlite3_prepare_v2(db.get(), text.c_str(), static_cast<int>(text.size()), &raw, &tail);
  StmtHandle stmt(raw);
  if (rc != SQLITE_OK) {
    std::string msg = sqlite3_errmsg(db.get());
    if (rc == SQLITE_INTERRUPT) return finish(ExecError{ExecErrorKind::kTimeout, "statement timed out"});
    return finish(ExecError{is_syntax_message(msg) ? ExecErrorKind::kSyntax : ExecErrorKind::kRuntime, msg});
  }
  if (!raw) return finish(ExecError{ExecErrorKind::kSyntax, "empty statement"});
  if (tail) {
    std::string_view rest(tail);
    while (!rest.empty() && (rest.front() == ';' || std::isspace(static_cast<unsigned char>(rest.front()))))
      rest.remove_prefix(1);
    if (!rest.empty())
      return finish(ExecError{ExecErrorKind::kSyntax, "only a single statement is allowed"});
  }
  if (!options_.allow_writes && !sqlite3_stmt_readonly(raw))
    return finish(ExecError{ExecErrorKind::kSyntax, "write statements are rejected in read-only mode"});

  int ncols = sqlite3_column_count(raw);
  for (int i = 0; i < ncols; ++i) result.columns.emplace_back(sqlite3_column_name(raw, i));
  while ((rc = sqlite3_step(raw)) == SQLITE_ROW) {
    if (result.rows.size() >= limits.row_cap) {
      result.truncated = true;
      break;
    }
    Row row;
    row.reserve(static_cast<std::size_t>(ncols));
    for (int i = 0; i < ncols; ++i) row.push_back(column_value(raw, i));
    result.rows.push_back(std::move(row));
  }
  if (rc == SQLITE_INTERRUPT) return finish(ExecError{ExecErrorKind::kTimeout, "statement timed out"});
  if (rc != SQLITE_ROW && rc != SQLITE_DONE)
    return finish(ExecError{ExecErrorKind::kRuntime, sqlite3_errmsg(db.get())});
  return finish(std::nullopt);
}

std::vector<RelationSchema> SqliteBackend::introspect() const {
  auto db = open_db(path_, false);
  std::vector<RelationSchema> out;
  auto tables = query_all(db.get(),
                          "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE "
                          "'sqlite_%' ORDER BY rowid");
  for (const auto& t : tables) {
    RelationSchema rel;
    rel.name = std::get<std::string>(t[0]);
    for (const auto& c : query_all(db.get(), "PRAGMA table_info(" + quote_literal(rel.name) + ")")) {
      ColumnSchema col;
      col.name = value_to_text(c[1]);
      col.declared_type = is_null(c[2]) ? "" : value_to_text(c[2]);
      col.not_null = std::get<std::int64_t>(c[3]) != 0;
      col.primary_key = std::get<std::int64_t>(c[5]) != 0;
      rel.columns.push_back(std::move(col));
    }
    for (const auto& f : query_all(db.get(), "PRAGMA foreign_key_list(" + quote_literal(rel.name) + ")")) {
      ForeignKeySchema fk;
      fk.ref_table = value_to_text(f[2]);
      fk.column = value_to_text(f[3]);
      fk.ref_column = is_null(f[4]) ? "" : value_to_text(f[4]);
      rel.foreign_keys.push_back(std::move(fk));
    }
    out.push_back(std::move(rel));
  }
  // Foreign keys that omit the target column refer to the target's primary key.
  for (auto& rel : out) {
    for (auto& fk : rel.foreign_keys) {
      if (!fk.ref_column.empty()) continue;
      for (const auto& other : out) {
        if (!iequals(other.name, fk.ref_table)) continue;
        for (const auto& c : other.columns)
          if (c.primary_key) fk.ref_column = c.name;
      }
    }
  }
  return out;
}

std::string SqliteBackend::content_hash() const {
  auto db = open_db(path_, false);
  auto tables = query_all(db.get(),
                          "SELECT name, COALESCE(sql, '') FROM sqlite_master WHERE type='table' "
                          "AND name NOT LIKE 'sqlite_%' ORDER BY name");
  std::string material;
  for (const auto& t : tables) {
    const auto& name = std::get<std::string>(t[0]);
    material += "table:" + name + "\n" + value_to_text(t[1]) + "\n";
    std::vector<std::string> encoded;
    for (const auto& row : query_all(db.get(), "SELECT * FROM " + quote_ident(name))) {
      std::string line;
      for (const auto& v : row) line += encode_for_hash(v);
      encoded.push_back(std::move(line));
    }
    std::sort(encoded.begin(), encoded.end());
    for (const auto& line : encoded) material += line + "\n";
  }
  return sha256_hex(material);
}

void SqliteBackend::run_script(const std::string& path, std::string_view sql) {
  auto db = open_db(path, true, true);
  std::string text(sql);
  char* err = nullptr;
  if (sqlite3_exec(db.get(), text.c_str(), nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw Error(ErrorCode::kBackend, "script failed on " + path + ": " + msg);
  }
}

std::unique_ptr<ExecBackend> open_backend(const std::string& locator, SqliteOptions options) {
  return std::make_unique<SqliteBackend>(locator, options);
}

}  // namespace dsr
