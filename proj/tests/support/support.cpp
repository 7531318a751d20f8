#include "support.hpp"

#include <fmt/format.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <sys/wait.h>
#include <unistd.h>

#include "dsr/common.hpp"

namespace dsr::testing {

std::filesystem::path fixture_path(const std::string& relative) {
  return std::filesystem::path(DSR_FIXTURE_DIR) / relative;
}

std::filesystem::path golden_path(const std::string& relative) {
  return std::filesystem::path(DSR_GOLDEN_DIR) / relative;
}

TempDir::TempDir() {
  auto pattern = (std::filesystem::temp_directory_path() / "dsr-test-XXXXXX").string();
  if (mkdtemp(pattern.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
  path_ = pattern;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::filesystem::path build_db(const std::filesystem::path& dir, const std::string& name,
                               const std::string& script) {
  std::filesystem::create_directories(dir);
  auto path = dir / (name + ".sqlite");
  std::filesystem::remove(path);
  SqliteBackend::run_script(path.string(), script);
  return path;
}

std::filesystem::path build_trading_db(const std::filesystem::path& dir) {
  auto path = build_db(dir, "trading", read_file(fixture_path("trading/trading.sql").string()));
  std::filesystem::copy_file(fixture_path("trading/trading.desc.json"), dir / "trading.desc.json",
                             std::filesystem::copy_options::overwrite_existing);
  return path;
}

ExecutionResult make_result(std::vector<std::string> columns, std::vector<Row> rows) {
  ExecutionResult r;
  r.columns = std::move(columns);
  r.rows = std::move(rows);
  return r;
}

ExecutionResult make_error(const std::string& message) {
  ExecutionResult r;
  r.error = ExecError{ExecErrorKind::kRuntime, message};
  return r;
}

int run_cli(const std::string& args, std::string* output) {
  auto command = fmt::format("'{}' {} 2>&1", DSR_CLI_PATH, args);
  FILE* pipe = popen(command.c_str(), "r");
  if (pipe == nullptr) throw std::runtime_error("popen failed");
  std::array<char, 4096> buffer{};
  std::string text;
  while (auto n = fread(buffer.data(), 1, buffer.size(), pipe)) text.append(buffer.data(), n);
  int status = pclose(pipe);
  if (output) *output = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace dsr::testing
