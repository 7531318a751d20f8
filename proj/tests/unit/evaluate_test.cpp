#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "dsr/common.hpp"
#include "dsr/evaluate.hpp"
#include "support.hpp"

namespace dsr {
namespace {

using testing::make_result;

// Multiset equality by greedy matching; the generated values never sit
// within tolerance of each other unless equal.
bool oracle_rows_equal(const std::vector<Row>& a, const std::vector<Row>& b, bool ordered) {
  if (a.size() != b.size()) return false;
  auto row_eq = [](const Row& x, const Row& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!values_equal(x[i], y[i])) return false;
    return true;
  };
  if (ordered) {
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!row_eq(a[i], b[i])) return false;
    return true;
  }
  std::vector<bool> used(b.size(), false);
  for (const auto& r : a) {
    bool found = false;
    for (std::size_t j = 0; j < b.size() && !found; ++j)
      if (!used[j] && row_eq(r, b[j])) used[j] = found = true;
    if (!found) return false;
  }
  return true;
}

// Tries every injective assignment of gold columns to pred columns.
bool oracle_lenient(const ExecutionResult& pred, const ExecutionResult& gold) {
  if (!pred.ok() || !gold.ok()) return false;
  std::size_t g = gold.columns.size(), p = pred.columns.size();
  if (g > p) return false;
  std::vector<std::size_t> idx(p);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end());
  do {
    std::vector<Row> projected;
    for (const auto& r : pred.rows) {
      Row out;
      for (std::size_t i = 0; i < g; ++i) out.push_back(r[idx[i]]);
      projected.push_back(out);
    }
    if (oracle_rows_equal(projected, gold.rows, false)) return true;
  } while (std::next_permutation(idx.begin(), idx.end()));
  return false;
}

Value random_value(std::mt19937& rng) {
  switch (rng() % 4) {
    case 0: return std::monostate{};
    case 1: return std::int64_t(rng() % 3);
    case 2: return double(rng() % 3) + 0.5;
    default: return std::string(1, char('a' + rng() % 3));
  }
}

ExecutionResult random_result(std::mt19937& rng, std::size_t cols, std::size_t rows) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < cols; ++c) names.push_back("c" + std::to_string(c));
  std::vector<Row> data;
  for (std::size_t r = 0; r < rows; ++r) {
    Row row;
    for (std::size_t c = 0; c < cols; ++c) row.push_back(random_value(rng));
    data.push_back(row);
  }
  return make_result(names, data);
}

// A pred that should match gold leniently: permuted, widened, shuffled.
ExecutionResult derived_pred(std::mt19937& rng, const ExecutionResult& gold) {
  std::size_t extra = rng() % 3;
  std::size_t width = gold.columns.size() + extra;
  std::vector<std::size_t> place(width);
  std::iota(place.begin(), place.end(), 0);
  std::shuffle(place.begin(), place.end(), rng);
  std::vector<Row> rows;
  for (const auto& r : gold.rows) {
    Row out(width);
    for (std::size_t i = 0; i < width; ++i) out[place[i]] = i < r.size() ? r[i] : random_value(rng);
    rows.push_back(out);
  }
  std::shuffle(rows.begin(), rows.end(), rng);
  std::vector<std::string> names(width, "x");
  return make_result(names, rows);
}

TEST(ValuesEqual, TypeAndTolerance) {
  EXPECT_TRUE(values_equal(std::int64_t{3}, 3.0));
  EXPECT_TRUE(values_equal(1.0, 1.0 + 1e-9));
  EXPECT_FALSE(values_equal(1.0, 1.001));
  EXPECT_TRUE(values_equal(1e12, 1e12 + 100.0));
  EXPECT_TRUE(values_equal(std::monostate{}, std::monostate{}));
  EXPECT_FALSE(values_equal(std::monostate{}, std::int64_t{0}));
  EXPECT_FALSE(values_equal(std::string("3"), std::int64_t{3}));
  EXPECT_TRUE(values_equal(std::string("abc"), std::string("abc")));
  EXPECT_FALSE(values_equal(std::string("abc"), std::string("ABC")));
}

TEST(Compare, HandExamples) {
  auto gold = make_result({"name", "n"}, {{std::string("a"), std::int64_t{1}}, {std::string("b"), std::int64_t{2}}});
  auto swapped_rows = make_result({"name", "n"}, {{std::string("b"), std::int64_t{2}}, {std::string("a"), std::int64_t{1}}});
  auto swapped_cols = make_result({"n", "name"}, {{std::int64_t{1}, std::string("a")}, {std::int64_t{2}, std::string("b")}});
  auto wider = make_result({"id", "n", "name"}, {{std::int64_t{7}, std::int64_t{1}, std::string("a")},
                                                 {std::int64_t{8}, std::int64_t{2}, std::string("b")}});
  EXPECT_TRUE(compare_strict(swapped_rows, gold));
  EXPECT_FALSE(compare_strict(swapped_rows, gold, true));
  EXPECT_FALSE(compare_strict(swapped_cols, gold));
  EXPECT_TRUE(compare_lenient(swapped_cols, gold));
  EXPECT_TRUE(compare_lenient(wider, gold));
  EXPECT_FALSE(compare_lenient(gold, wider));
  EXPECT_FALSE(compare_strict(testing::make_error("x"), gold));
  EXPECT_FALSE(compare_lenient(gold, testing::make_error("x")));
  auto dup = make_result({"v"}, {{std::int64_t{1}}, {std::int64_t{1}}});
  auto single = make_result({"v"}, {{std::int64_t{1}}});
  EXPECT_FALSE(compare_strict(dup, single));
  // Per-column value sets agree but the rows do not pair up.
  auto crossed = make_result({"a", "b"}, {{std::int64_t{1}, std::int64_t{2}}, {std::int64_t{2}, std::int64_t{1}}});
  auto straight = make_result({"a", "b"}, {{std::int64_t{1}, std::int64_t{1}}, {std::int64_t{2}, std::int64_t{2}}});
  EXPECT_FALSE(compare_lenient(crossed, straight));
  EXPECT_TRUE(compare_strict(make_result({"a"}, {}), make_result({"b"}, {})));
}

TEST(Compare, LenientAgreesWithPermutationOracle) {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 400; ++trial) {
    auto gold = random_result(rng, 1 + rng() % 3, rng() % 5);
    auto pred = trial % 2 ? derived_pred(rng, gold) : random_result(rng, 1 + rng() % 4, gold.rows.size());
    bool expected = oracle_lenient(pred, gold);
    ASSERT_EQ(compare_lenient(pred, gold), expected) << trial;
    if (trial % 2) ASSERT_TRUE(expected);
  }
}

TEST(Compare, StrictAgreesWithOracleAndImpliesLenient) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    auto gold = random_result(rng, 1 + rng() % 3, rng() % 5);
    ExecutionResult pred;
    if (trial % 3 == 0) {
      pred = gold;
      std::shuffle(pred.rows.begin(), pred.rows.end(), rng);
    } else {
      pred = random_result(rng, gold.columns.size(), gold.rows.size());
    }
    bool strict = compare_strict(pred, gold);
    ASSERT_EQ(strict, oracle_rows_equal(pred.rows, gold.rows, false)) << trial;
    if (strict) ASSERT_TRUE(compare_lenient(pred, gold)) << trial;
    ASSERT_EQ(compare_strict(pred, gold, true), oracle_rows_equal(pred.rows, gold.rows, true)) << trial;
  }
}

TEST(Dataset, FormatsKeysAndDuplicates) {
  testing::TempDir dir;
  auto array = (dir / "a.json").string();
  write_file(array, R"([{"question_id": 3, "db_id": "d", "question": "q?", "evidence": "e", "SQL": "SELECT 1"},
                        {"question_id": "x", "db_id": "d", "question": "r?", "query": "SELECT 2"}])");
  auto items = load_dataset(array);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].question_id, "3");
  EXPECT_EQ(items[0].evidence, "e");
  EXPECT_EQ(items[0].gold_sql, "SELECT 1");
  EXPECT_EQ(items[1].gold_sql, "SELECT 2");
  EXPECT_FALSE(items[1].evidence);

  auto lines = (dir / "b.jsonl").string();
  write_file(lines, "{\"question_id\": 1, \"db_id\": \"d\", \"question\": \"a\", \"gold_sql\": \"SELECT 1\"}\n\n"
                    "{\"question_id\": 2, \"db_id\": \"d\", \"question\": \"b\"}\n");
  auto jl = load_dataset(lines);
  ASSERT_EQ(jl.size(), 2u);
  EXPECT_FALSE(jl[1].gold_sql);

  auto dup = (dir / "c.json").string();
  write_file(dup, R"([{"question_id": 1, "db_id": "d", "question": "a"}, {"question_id": "1", "db_id": "d", "question": "b"}])");
  EXPECT_THROW(load_dataset(dup), Error);
  write_file(dup, "{not json");
  EXPECT_THROW(load_dataset(dup), Error);
}

TEST(EvaluateRun, StatusesAndTallies) {
  testing::TempDir dir;
  auto db = std::make_shared<SqliteBackend>(testing::build_trading_db(dir.path()).string());
  std::vector<DatasetItem> dataset = {
      {"1", "trading", "q", std::nullopt, std::string("SELECT COUNT(*) FROM traders")},
      {"2", "trading", "q", std::nullopt, std::string("SELECT COUNT(*) FROM strategies")},
      {"3", "trading", "q", std::nullopt, std::nullopt},
      {"4", "trading", "q", std::nullopt, std::string("SELECT nope FROM traders")},
      {"5", "elsewhere", "q", std::nullopt, std::string("SELECT 1")},
      {"6", "trading", "q", std::nullopt, std::string("SELECT 1")},
      {"7", "trading", "q", std::nullopt, std::string("SELECT 1")}};
  std::map<std::string, Prediction> preds = {
      {"1", {"SELECT COUNT(trader_id) FROM traders", PathType::kStraightforward, Termination::kFinalized}},
      {"2", {"SELECT 0", PathType::kExploratory, Termination::kIterationCap}},
      {"4", {"SELECT 1", std::nullopt, std::nullopt}},
      {"7", {"SELEC 1", PathType::kRefinement, Termination::kFinalized}}};
  auto resolver = [&](const std::string& id) -> std::shared_ptr<ExecBackend> {
    return id == "trading" ? db : nullptr;
  };
  auto report = evaluate_run(dataset, preds, resolver, CompareMode::kStrict);
  ASSERT_EQ(report.items.size(), 7u);
  std::vector<std::string> statuses;
  for (const auto& i : report.items) statuses.push_back(i.status);
  EXPECT_EQ(statuses, (std::vector<std::string>{"OK", "OK", "NO_GOLD", "GOLD_ERROR", "INFRA_ERROR",
                                                "NO_PREDICTION", "OK"}));
  EXPECT_EQ(report.evaluable, 4u);
  EXPECT_EQ(report.matched, 1u);
  EXPECT_DOUBLE_EQ(report.ex(), 25.0);
  EXPECT_EQ(report.per_path[PathType::kStraightforward].matched, 1u);
  EXPECT_EQ(report.per_path[PathType::kExploratory].total, 1u);
  EXPECT_TRUE(report.items[6].detail);

  auto j = report_to_json(report);
  EXPECT_EQ(j["matched"], 1);
  EXPECT_EQ(j["items"].size(), 7u);
  EXPECT_EQ(j["items"][0]["path_type"], "STRAIGHTFORWARD");
  auto text = report_text(report);
  EXPECT_NE(text.find("25.00% (1/4)"), std::string::npos);
  EXPECT_NE(text.find("3 item(s) excluded"), std::string::npos);
}

TEST(EvaluateRun, OrderByOnBothSidesIsOrdered) {
  testing::TempDir dir;
  auto db = std::make_shared<SqliteBackend>(testing::build_trading_db(dir.path()).string());
  std::vector<DatasetItem> dataset = {
      {"1", "trading", "q", std::nullopt, std::string("SELECT name FROM strategies ORDER BY name")}};
  auto resolver = [&](const std::string&) -> std::shared_ptr<ExecBackend> { return db; };
  auto desc = evaluate_run(dataset, {{"1", {"SELECT name FROM strategies ORDER BY name DESC"}}}, resolver,
                           CompareMode::kStrict);
  EXPECT_EQ(desc.matched, 0u);
  auto unordered = evaluate_run(dataset, {{"1", {"SELECT name FROM strategies"}}}, resolver, CompareMode::kStrict);
  EXPECT_EQ(unordered.matched, 1u);
}

TEST(SelectionReport, MacroAverages) {
  SelectionTrace a, b, c;
  a.final_tables = {"x", "y"};
  a.llm_calls = 4;
  a.tokens_sent = 100;
  b.final_tables = {"x"};
  b.llm_calls = 2;
  b.tokens_sent = 300;
  c.final_tables = {"z"};
  auto r = selection_report({{"1", a}, {"2", b}, {"3", c}}, {{"1", {"x"}}, {"2", {"x", "y"}}});
  EXPECT_EQ(r.questions, 2u);
  EXPECT_DOUBLE_EQ(r.precision, 0.75);
  EXPECT_DOUBLE_EQ(r.recall, 0.75);
  EXPECT_DOUBLE_EQ(r.avg_llm_calls, 3.0);
  EXPECT_DOUBLE_EQ(r.avg_tokens, 200.0);
}

TEST(CompareMode, Parsing) {
  EXPECT_EQ(compare_mode_from_string("Lenient"), CompareMode::kLenient);
  EXPECT_THROW(compare_mode_from_string("fuzzy"), Error);
}

}  // namespace
}  // namespace dsr
