#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>

namespace dsr {

class TokenEstimator {
 public:
  virtual ~TokenEstimator() = default;
  virtual std::size_t count(std::string_view text) const = 0;
};

// ceil(ascii_bytes / 4) + one token per non-ASCII code point.
// Monotone: appending text never lowers the count.
class HeuristicTokenEstimator final : public TokenEstimator {
 public:
  static constexpr std::size_t kAsciiCharsPerToken = 4;
  std::size_t count(std::string_view text) const override;
};

const TokenEstimator& default_token_estimator();

inline std::size_t estimate_tokens(std::string_view text) {
  return default_token_estimator().count(text);
}

// Longest prefix (on a code point boundary) whose estimate fits the budget.
std::string truncate_to_tokens(std::string_view text, std::size_t budget,
                               const TokenEstimator& estimator = default_token_estimator());

}  // namespace dsr
