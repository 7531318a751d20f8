#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dsr {

enum class ErrorCode {
  kConfig,
  kConnection,
  kBackend,
  kReplayMiss,
  kRuleMiss,
  kNetwork,
  kSelectionExhausted,
  kInvalidGold,
  kMissingArtifact,
  kFormat,
};

std::string_view to_string(ErrorCode code);

// Exception type for failures that abort an operation. Per-item failures
// inside batch operations are recorded as data instead.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool istarts_with(std::string_view s, std::string_view prefix);
std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Number of Unicode code points in a UTF-8 string (continuation bytes skipped).
std::size_t utf8_length(std::string_view s);
// Prefix holding at most max_chars code points; never splits a sequence.
std::string utf8_truncate(std::string_view s, std::size_t max_chars);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

// 64-bit FNV-1a, stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace dsr
