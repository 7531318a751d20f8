#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace dsr {

// Typed scalar as returned by the backend.
using Value = std::variant<std::monostate, std::int64_t, double, std::string>;
using Row = std::vector<Value>;

inline bool is_null(const Value& v) { return std::holds_alternative<std::monostate>(v); }
bool is_numeric(const Value& v);
double as_double(const Value& v);

// Prompt-facing text: NULL for nulls, shortest round-trip form for reals.
std::string value_to_text(const Value& v);

enum class ExecErrorKind { kSyntax, kRuntime, kTimeout };
std::string_view to_string(ExecErrorKind kind);
ExecErrorKind exec_error_kind_from_string(std::string_view s);

struct ExecError {
  ExecErrorKind kind = ExecErrorKind::kRuntime;
  std::string message;
};

struct ExecLimits {
  std::chrono::milliseconds timeout{30'000};
  std::size_t row_cap = 1'000;
};

struct ExecutionResult {
  std::vector<std::string> columns;
  std::vector<Row> rows;
  bool truncated = false;
  std::chrono::microseconds elapsed{0};
  std::optional<ExecError> error;

  bool ok() const { return !error.has_value(); }
  // Equality on content only; elapsed is ignored.
  bool same_content(const ExecutionResult& other) const;
};

// Header row plus one tab-separated line per row. Rows beyond max_rows and
// columns beyond max_cols are cut and a truncation marker line is appended.
std::string to_tsv(const ExecutionResult& result, std::size_t max_rows = 20,
                   std::size_t max_cols = 10);

nlohmann::json value_to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);
nlohmann::json rows_to_json(const std::vector<Row>& rows, std::size_t max_rows = SIZE_MAX,
                            std::size_t max_cols = SIZE_MAX);
std::vector<Row> rows_from_json(const nlohmann::json& j);

// {columns, rows, truncated, error: null | {kind, message}}. Rows past
// max_rows are dropped and flagged as truncated.
nlohmann::json result_to_json(const ExecutionResult& result, std::size_t max_rows = SIZE_MAX);
ExecutionResult result_from_json(const nlohmann::json& j);

struct ColumnSchema {
  std::string name;
  std::string declared_type;
  bool not_null = false;
  bool primary_key = false;
};

struct ForeignKeySchema {
  std::string column;
  std::string ref_table;
  std::string ref_column;
};

struct RelationSchema {
  std::string name;
  std::vector<ColumnSchema> columns;
  std::vector<ForeignKeySchema> foreign_keys;
};

// Execution boundary. Implementations must allow concurrent execute() calls.
class ExecBackend {
 public:
  virtual ~ExecBackend() = default;

  virtual ExecutionResult execute(std::string_view sql, const ExecLimits& limits) const = 0;
  // Deterministic digest over every base table's definition and contents.
  virtual std::string content_hash() const = 0;
  // Base tables in definition order.
  virtual std::vector<RelationSchema> introspect() const = 0;
  virtual std::string locator() const = 0;
};

struct SqliteOptions {
  // Write statements are rejected unless set.
  bool allow_writes = false;
};

// Embedded single-file backend. Every execute() opens its own session.
class SqliteBackend final : public ExecBackend {
 public:
  explicit SqliteBackend(std::string path, SqliteOptions options = {});

  ExecutionResult execute(std::string_view sql, const ExecLimits& limits) const override;
  std::string content_hash() const override;
  std::vector<RelationSchema> introspect() const override;
  std::string locator() const override { return path_; }

  // Runs a script of statements with writes enabled; used to build fixtures.
  static void run_script(const std::string& path, std::string_view sql);

 private:
  std::string path_;
  SqliteOptions options_;
};

std::unique_ptr<ExecBackend> open_backend(const std::string& locator, SqliteOptions options = {});

}  // namespace dsr
