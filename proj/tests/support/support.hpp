#pragma once

#include <filesystem>
#include <atomic>
#include <functional>
#include <string>
#include <vector>

#include "dsr/exec.hpp"
#include "dsr/llm.hpp"

namespace dsr::testing {

std::filesystem::path fixture_path(const std::string& relative);
std::filesystem::path golden_path(const std::string& relative);

// Fresh directory removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Builds <dir>/trading.sqlite from the bundled script and copies its
// description sidecar next to it. Returns the database path.
std::filesystem::path build_trading_db(const std::filesystem::path& dir);

// Builds a database from an inline script.
std::filesystem::path build_db(const std::filesystem::path& dir, const std::string& name,
                               const std::string& script);

// Client whose answers come from a callback.
class FnClient final : public LlmClient {
 public:
  using Fn = std::function<std::string(const CompletionRequest&, std::size_t)>;
  explicit FnClient(Fn fn) : fn_(std::move(fn)) {}

 protected:
  std::string do_complete(const CompletionRequest& request, std::size_t sample_index) override {
    return fn_(request, sample_index);
  }

 private:
  Fn fn_;
};

// Backend answering from a callback and counting executions.
class FnBackend final : public ExecBackend {
 public:
  using Fn = std::function<ExecutionResult(std::string_view sql)>;
  explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}

  ExecutionResult execute(std::string_view sql, const ExecLimits&) const override {
    ++executions_;
    return fn_(sql);
  }
  std::string content_hash() const override { return "fn"; }
  std::vector<RelationSchema> introspect() const override { return {}; }
  std::string locator() const override { return "fn"; }
  std::size_t executions() const { return executions_.load(); }

 private:
  Fn fn_;
  mutable std::atomic<std::size_t> executions_{0};
};

ExecutionResult make_result(std::vector<std::string> columns, std::vector<Row> rows);
ExecutionResult make_error(const std::string& message);

// Runs the command line tool with the given arguments; returns its exit code.
int run_cli(const std::string& args, std::string* output = nullptr);

}  // namespace dsr::testing
