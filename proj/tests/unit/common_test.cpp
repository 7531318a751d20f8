#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <random>
#include <string>

#include "dsr/common.hpp"
#include "dsr/tokens.hpp"
#include "support.hpp"

namespace dsr {
namespace {

TEST(Strings, TrimSplitJoin) {
  EXPECT_EQ(trim("  a b \n"), "a b");
  EXPECT_EQ(trim(""), "");
  EXPECT_EQ(split("a,,b", ','), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_EQ(join({"x", "y", "z"}, ", "), "x, y, z");
  EXPECT_TRUE(iequals("SeLeCt", "select"));
  EXPECT_TRUE(istarts_with("WITH x AS", "with"));
  EXPECT_FALSE(istarts_with("WI", "with"));
}

TEST(Utf8, LengthAndTruncateRespectCodePoints) {
  std::string s = "Zürich 東京";
  EXPECT_EQ(utf8_length(s), 9u);
  EXPECT_EQ(utf8_truncate(s, 2), "Zü");
  EXPECT_EQ(utf8_truncate(s, 8), "Zürich 東");
  EXPECT_EQ(utf8_truncate(s, 100), s);
}

TEST(Hashing, Sha256KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Hashing, Fnv1aKnownVector) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Tokens, HeuristicCounts) {
  EXPECT_EQ(estimate_tokens(""), 0u);
  EXPECT_EQ(estimate_tokens("abcd"), 1u);
  EXPECT_EQ(estimate_tokens("abcde"), 2u);
  EXPECT_EQ(estimate_tokens("東京"), 2u);
  EXPECT_EQ(estimate_tokens("ab東"), 2u);
}

TEST(Tokens, FourThousandAsciiCharsInCalibratedRange) {
  auto n = estimate_tokens(std::string(4000, 'x'));
  EXPECT_GE(n, 800u);
  EXPECT_LE(n, 2000u);
}

TEST(Tokens, MonotoneUnderAppend) {
  std::mt19937 rng(7);
  const std::vector<std::string> pieces = {"a", "SELECT ", "ü", "東", " ", "\n", "12345"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    std::size_t last = 0;
    for (int i = 0; i < 30; ++i) {
      s += pieces[rng() % pieces.size()];
      auto n = estimate_tokens(s);
      ASSERT_GE(n, last);
      last = n;
    }
  }
}

TEST(Tokens, TruncateFitsBudgetAndKeepsLongestPrefix) {
  std::mt19937 rng(11);
  const std::vector<std::string> pieces = {"ab", "c", "ü", "東京", " ", "xyz1"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    for (int i = 0; i < 40; ++i) s += pieces[rng() % pieces.size()];
    std::size_t budget = rng() % 30;
    auto cut = truncate_to_tokens(s, budget);
    ASSERT_LE(estimate_tokens(cut), budget);
    ASSERT_EQ(s.compare(0, cut.size(), cut), 0);
    ASSERT_EQ(utf8_length(cut) + utf8_length(s.substr(cut.size())), utf8_length(s));
    if (cut.size() < s.size()) {
      // One more code point would not fit.
      auto next = utf8_truncate(s, utf8_length(cut) + 1);
      ASSERT_GT(estimate_tokens(next), budget);
    }
  }
}

// Reference counts come from a GPT-style BPE tokenizer and are frozen in the
// fixture. The heuristic only feeds budget thresholds, so it has to land
// within 25% of the reference over the corpus.
TEST(Tokens, CalibratedAgainstReferenceCorpus) {
  auto corpus = nlohmann::json::parse(read_file(testing::fixture_path("token_calibration.json").string()));
  ASSERT_EQ(corpus.size(), 20u);
  std::size_t reference = 0;
  std::size_t estimate = 0;
  for (const auto& item : corpus) {
    reference += item.at("reference").get<std::size_t>();
    estimate += estimate_tokens(item.at("text").get<std::string>());
  }
  double ratio = double(estimate) / double(reference);
  EXPECT_GE(ratio, 0.75);
  EXPECT_LE(ratio, 1.25);
}

}  // namespace
}  // namespace dsr
