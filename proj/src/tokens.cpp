#include "dsr/tokens.hpp"

namespace dsr {

std::size_t HeuristicTokenEstimator::count(std::string_view text) const {
  std::size_t ascii = 0;
  std::size_t wide = 0;
  for (unsigned char c : text) {
    if (c < 0x80) {
      ++ascii;
    } else if ((c & 0xC0) != 0x80) {
      ++wide;
    }
  }
  return (ascii + kAsciiCharsPerToken - 1) / kAsciiCharsPerToken + wide;
}

const TokenEstimator& default_token_estimator() {
  static const HeuristicTokenEstimator estimator;
  return estimator;
}

std::string truncate_to_tokens(std::string_view text, std::size_t budget,
                               const TokenEstimator& estimator) {
  if (estimator.count(text) <= budget) return std::string(text);
  // Monotone estimate, so binary search the largest fitting prefix.
  std::size_t lo = 0;
  std::size_t hi = text.size();
  while (lo < hi) {
    std::size_t mid = lo + (hi - lo + 1) / 2;
    if (estimator.count(text.substr(0, mid)) <= budget) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  // Back off to a code point boundary.
  while (lo > 0 && lo < text.size() &&
         (static_cast<unsigned char>(text[lo]) & 0xC0) == 0x80)
    --lo;
  return std::string(text.substr(0, lo));
}

}  // namespace dsr
