#include <gtest/gtest.h>

#include <fmt/format.h>

#include <map>
#include <random>
#include <set>

#include "dsr/catalog.hpp"
#include "dsr/common.hpp"
#include "dsr/refine.hpp"
#include "dsr/tokens.hpp"
#include "support.hpp"

namespace dsr {
namespace {

TableInfo table(const std::string& name, const std::vector<std::string>& columns) {
  TableInfo t;
  t.name = name;
  for (const auto& c : columns) t.columns.push_back(ColumnInfo{c, "TEXT", std::nullopt, {}, true, false});
  return t;
}

std::string date_suffix(int day_offset) {
  // Consecutive calendar days starting 2016-08-01, good enough for ordering.
  static const int days[] = {31, 30, 31, 30, 31, 31, 28, 31, 30, 31, 30, 31, 31};
  int y = 2016, m = 8, d = 1, mi = 0;
  for (int i = 0; i < day_offset; ++i) {
    if (++d > days[mi]) {
      d = 1;
      mi = (mi + 1) % 13;
      if (++m > 12) {
        m = 1;
        ++y;
      }
    }
  }
  return fmt::format("{:04}{:02}{:02}", y, m, d);
}

SchemaCatalog ga_sessions(int members, int client_id_from) {
  SchemaCatalog c;
  c.db_id = "GA360";
  std::vector<std::string> base = {"visitorId", "visitNumber", "visitId", "visitStartTime", "date",
                                   "totals", "trafficSource", "device", "geoNetwork", "customDimensions",
                                   "hits", "fullVisitorId", "channelGrouping", "socialEngagementType"};
  for (int i = 0; i < members; ++i) {
    auto cols = base;
    if (i >= client_id_from) cols.push_back("clientId");
    c.tables.push_back(table("GA360.GOOGLE_ANALYTICS_SAMPLE.GA_SESSIONS_" + date_suffix(i), cols));
  }
  return c;
}

TEST(Suffix, Grammar) {
  auto d = split_series_suffix("GA_SESSIONS_20160801");
  ASSERT_TRUE(d);
  EXPECT_EQ(d->stem, "GA_SESSIONS");
  EXPECT_EQ(d->token, "20160801");
  EXPECT_EQ(d->placeholder, "[DATE]");
  auto n = split_series_suffix("LOG_17");
  ASSERT_TRUE(n);
  EXPECT_EQ(n->placeholder, "[N]");
  auto v = split_series_suffix("model_v12");
  ASSERT_TRUE(v);
  EXPECT_EQ(v->stem, "model");
  EXPECT_EQ(v->token, "v12");
  EXPECT_EQ(v->placeholder, "[VERSION]");
  auto q = split_series_suffix("db.sch.events_201701");
  ASSERT_TRUE(q);
  EXPECT_EQ(q->stem, "db.sch.events");
  EXPECT_EQ(q->placeholder, "[DATE]");
  EXPECT_FALSE(split_series_suffix("users"));
  EXPECT_FALSE(split_series_suffix("x_123456789"));
  EXPECT_FALSE(split_series_suffix("_2016"));
  EXPECT_FALSE(split_series_suffix("db_2016.users"));
}

TEST(Jaccard, Values) {
  EXPECT_DOUBLE_EQ(jaccard_similarity({}, {}), 1.0);
  EXPECT_DOUBLE_EQ(jaccard_similarity({"a", "b"}, {"b", "c"}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(jaccard_similarity({"a"}, {"a"}), 1.0);
}

TEST(Series, GaSessionsWithClientIdAddition) {
  auto catalog = ga_sessions(366, 300);
  auto series = detect_table_series(catalog);
  ASSERT_EQ(series.size(), 1u);
  const auto& s = series[0];
  EXPECT_EQ(s.pattern, "GA360.GOOGLE_ANALYTICS_SAMPLE.GA_SESSIONS_[DATE]");
  EXPECT_EQ(s.members.size(), 366u);
  EXPECT_EQ(s.range_min, "20160801");
  EXPECT_EQ(s.range_max, "20170801");
  // Canonical layout is the newest member, which has clientId; older members lack it.
  ASSERT_EQ(s.column_deltas.size(), 300u);
  for (const auto& d : s.column_deltas) {
    EXPECT_TRUE(d.added.empty());
    EXPECT_EQ(d.removed, (std::vector<std::string>{"clientId"}));
  }
  auto description = mechanical_series_description(s);
  EXPECT_NE(description.find("clientId"), std::string::npos);
  EXPECT_NE(description.find("20160801"), std::string::npos);
  EXPECT_NE(description.find("20170801"), std::string::npos);
}

TEST(Series, UnrelatedTablesFormNoSeries) {
  SchemaCatalog c;
  c.tables = {table("users", {"id", "name"}), table("orders", {"id", "uid"}), table("products", {"id", "sku"})};
  EXPECT_TRUE(detect_table_series(c).empty());
}

TEST(Series, DissimilarLayoutsSplit) {
  SchemaCatalog c;
  c.tables = {table("evt_1", {"a", "b", "c"}), table("evt_2", {"a", "b", "c"}), table("evt_3", {"x", "y"}),
              table("evt_4", {"x", "y"})};
  auto series = detect_table_series(c);
  ASSERT_EQ(series.size(), 2u);
  EXPECT_EQ(series[0].members, (std::vector<std::string>{"evt_1", "evt_2"}));
  EXPECT_EQ(series[1].members, (std::vector<std::string>{"evt_3", "evt_4"}));
}

// Oracle: exact grouping by (stem, suffix kind, column set), built from the
// generator's own bookkeeping rather than from the code under test.
TEST(Series, MatchesExactKeyOracleOnRandomCatalogs) {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    SchemaCatalog c;
    std::map<std::tuple<std::string, int, int>, std::set<std::string>> oracle;
    int stems = 1 + rng() % 4;
    int column_pool = 0;
    for (int s = 0; s < stems; ++s) {
      std::string stem = fmt::format("S{}_LOG", s);
      int kind = rng() % 3;  // 0 date, 1 number, 2 version
      int layouts = 1 + rng() % 2;
      int count = 1 + rng() % 8;
      std::set<int> used;
      for (int m = 0; m < count; ++m) {
        int id = 1 + rng() % 60;
        if (!used.insert(id).second) continue;
        int layout = rng() % layouts;
        std::string name = kind == 0   ? fmt::format("{}_{}", stem, 20200000 + id)
                           : kind == 1 ? fmt::format("{}_{}", stem, id)
                                       : fmt::format("{}_v{}", stem, id);
        std::vector<std::string> cols;
        for (int k = 0; k < 5; ++k) cols.push_back(fmt::format("c{}", column_pool + layout * 10 + k));
        c.tables.push_back(table(name, cols));
        oracle[{stem, kind, layout}].insert(name);
      }
      column_pool += 100;
    }
    for (int u = 0; u < 3; ++u) c.tables.push_back(table(fmt::format("plain{}", u), {"id"}));
    std::shuffle(c.tables.begin(), c.tables.end(), rng);

    std::set<std::set<std::string>> expected;
    for (const auto& [key, members] : oracle)
      if (members.size() >= 2) expected.insert(members);
    std::set<std::set<std::string>> got;
    for (const auto& s : detect_table_series(c)) {
      std::set<std::string> members(s.members.begin(), s.members.end());
      EXPECT_EQ(members.size(), s.members.size());
      got.insert(members);
    }
    ASSERT_EQ(got, expected) << "trial " << trial;
  }
}

TEST(Series, MembersAscendingAndDisjoint) {
  SchemaCatalog c;
  for (int i : {10, 2, 33, 7}) c.tables.push_back(table(fmt::format("LOG_{}", i), {"a", "b"}));
  auto series = detect_table_series(c);
  ASSERT_EQ(series.size(), 1u);
  EXPECT_EQ(series[0].members, (std::vector<std::string>{"LOG_2", "LOG_7", "LOG_10", "LOG_33"}));
  EXPECT_EQ(series[0].range_min, "2");
  EXPECT_EQ(series[0].range_max, "33");
}

TEST(Describe, MechanicalFallbackForIdenticalPair) {
  SeriesMeta s{"LOG_[N]", {"LOG_1", "LOG_2"}, "1", "2", {}};
  EXPECT_EQ(mechanical_series_description(s), "LOG_[N], suffix range 1–2, identical layouts");
  testing::FnClient failing([](const CompletionRequest&, std::size_t) -> std::string {
    throw Error(ErrorCode::kNetwork, "down");
  });
  SchemaCatalog c;
  c.tables = {table("LOG_1", {"a"}), table("LOG_2", {"a"})};
  EXPECT_EQ(describe_series(s, c, failing), "LOG_[N], suffix range 1–2, identical layouts");
  testing::FnClient empty([](const CompletionRequest&, std::size_t) { return std::string("   "); });
  EXPECT_EQ(describe_series(s, c, empty), mechanical_series_description(s));
}

TEST(Describe, PromptCarriesDeltaAndModelTextIsUsed) {
  auto catalog = ga_sessions(5, 3);
  auto series = detect_table_series(catalog);
  ASSERT_EQ(series.size(), 1u);
  std::string prompt;
  testing::FnClient llm([&](const CompletionRequest& r, std::size_t) {
    prompt = request_text(r);
    EXPECT_EQ(r.tag, "refine.describe_series");
    return std::string("Daily session tables GA_SESSIONS_YYYYMMDD; recent ones add clientId.");
  });
  auto text = describe_series(series[0], catalog, llm);
  EXPECT_NE(prompt.find("clientId"), std::string::npos);
  EXPECT_NE(prompt.find("20160801"), std::string::npos);
  EXPECT_NE(text.find("clientId"), std::string::npos);
}

TEST(Consolidate, KeepsNewestMemberAndProvenance) {
  auto catalog = ga_sessions(10, 5);
  catalog.tables.push_back(table("other", {"id"}));
  auto series = detect_table_series(catalog);
  auto refined = consolidate_series(catalog, series, {{series[0].pattern, "daily session tables"}});
  ASSERT_EQ(refined.catalog.tables.size(), 2u);
  const auto& canonical = refined.catalog.tables[0];
  EXPECT_EQ(canonical.name, series[0].members.back());
  EXPECT_NE(canonical.find_column("clientId"), nullptr);
  EXPECT_EQ(canonical.description, "daily session tables");
  ASSERT_TRUE(canonical.series_meta);
  EXPECT_EQ(refined.provenance.at(canonical.name).members.size(), 10u);
  EXPECT_EQ(refined.resolve(series[0].members.front()), canonical.name);
  EXPECT_EQ(refined.resolve("other"), "other");
  EXPECT_FALSE(refined.resolve("ghost"));
}

TEST(Consolidate, DescriptionNeverCostsMoreThanRemovedMembers) {
  auto catalog = ga_sessions(2, 5);
  auto series = detect_table_series(catalog);
  std::string huge(100000, 'w');
  auto refined = consolidate_series(catalog, series, {{series[0].pattern, huge}});
  auto removed = estimate_tokens(render(SchemaView(catalog, {series[0].members.front()})));
  ASSERT_TRUE(refined.catalog.tables[0].description);
  EXPECT_LE(estimate_tokens(*refined.catalog.tables[0].description), removed);
  EXPECT_LE(estimate_tokens(render(SchemaView::all(refined.catalog))), estimate_tokens(render(SchemaView::all(catalog))));
}

TEST(Consolidate, ForeignKeysRetargetToCanonical) {
  SchemaCatalog c;
  c.tables = {table("px_1", {"id", "v"}), table("px_2", {"id", "v"}), table("ref", {"pid"})};
  c.tables[2].foreign_keys.push_back({"pid", "px_1", "id"});
  auto refined = consolidate_series(c, detect_table_series(c), {});
  const auto* ref = refined.catalog.find_table("ref");
  ASSERT_NE(ref, nullptr);
  ASSERT_EQ(ref->foreign_keys.size(), 1u);
  EXPECT_EQ(ref->foreign_keys[0].ref_table, "px_2");
  EXPECT_NO_THROW(refined.catalog.validate());
}

class PruneTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::string script =
        "CREATE TABLE p (id INTEGER PRIMARY KEY, parent INTEGER REFERENCES q(qid), all_null TEXT, "
        "one_value TEXT, na TEXT, blank TEXT, mixed_ph TEXT, num_zero INTEGER, ph_and_null TEXT);\n"
        "CREATE TABLE q (qid INTEGER PRIMARY KEY, dead_key INTEGER REFERENCES p(id), tag TEXT);\n";
    for (int i = 1; i <= 1000; ++i) {
      script += fmt::format("INSERT INTO p VALUES ({}, NULL, NULL, {}, 'N/A', '', {}, 0, {});\n", i,
                            i == 500 ? "'x'" : "NULL", i % 2 ? "'N/A'" : "'null'",
                            i % 2 ? "'n/a'" : "NULL");
    }
    script += "INSERT INTO q VALUES (1, NULL, 'a'), (2, NULL, 'b');\n";
    path_ = testing::build_db(dir_.path(), "p", script).string();
    catalog_ = ingest_catalog(path_);
  }
  testing::TempDir dir_;
  std::string path_;
  SchemaCatalog catalog_;
};

TEST_F(PruneTest, RuleBoundariesAndKeyExemption) {
  SqliteBackend db(path_);
  auto refined = prune_uninformative_columns(catalog_, db);
  ASSERT_TRUE(refined.pruned_columns.count("p"));
  auto pruned = refined.pruned_columns.at("p");
  std::set<std::string> got(pruned.begin(), pruned.end());
  EXPECT_EQ(got, (std::set<std::string>{"all_null", "na", "blank"}));
  const auto* p = refined.catalog.find_table("p");
  EXPECT_NE(p->find_column("one_value"), nullptr);   // one non-null in 1000
  EXPECT_NE(p->find_column("parent"), nullptr);      // all-NULL foreign key
  EXPECT_NE(p->find_column("num_zero"), nullptr);    // numbers are not placeholders
  EXPECT_NE(p->find_column("mixed_ph"), nullptr);    // two different literals
  EXPECT_NE(p->find_column("ph_and_null"), nullptr);
  EXPECT_NE(refined.catalog.find_table("q")->find_column("dead_key"), nullptr);
  EXPECT_FALSE(refined.pruned_columns.count("q"));
}

TEST_F(PruneTest, SampleLimitIsRespected) {
  SqliteBackend db(path_);
  RefineConfig config;
  config.prune_sample_rows = 100;  // the single 'x' sits at row 500
  auto refined = prune_uninformative_columns(catalog_, db, config);
  auto pruned = refined.pruned_columns.at("p");
  EXPECT_NE(std::find(pruned.begin(), pruned.end(), "one_value"), pruned.end());
}

TEST_F(PruneTest, SamplingFailureLeavesTableAndWarns) {
  auto catalog = catalog_;
  catalog.tables.push_back(table("ghost", {"a", "b"}));
  SqliteBackend db(path_);
  auto refined = prune_uninformative_columns(catalog, db);
  EXPECT_EQ(refined.catalog.find_table("ghost")->columns.size(), 2u);
  ASSERT_FALSE(refined.warnings.empty());
  EXPECT_NE(refined.warnings[0].find("ghost"), std::string::npos);
}

TEST(Knowledge, EmptyPassesThrough) {
  testing::FnClient llm([](const CompletionRequest&, std::size_t) { return std::string("x"); });
  auto k = refine_knowledge("", "", llm);
  EXPECT_TRUE(k.text.empty());
  EXPECT_EQ(llm.call_count(), 0u);
}

TEST(Knowledge, LargeDocumentReplacedByDigest) {
  std::string doc;
  while (estimate_tokens(doc) < 50000) doc += "Revenue is reported in thousands of euros per fiscal quarter. ";
  std::string digest;
  while (estimate_tokens(digest) < 1000) digest += "Revenue unit: kEUR. ";
  testing::FnClient llm([&](const CompletionRequest& r, std::size_t) {
    EXPECT_EQ(r.tag, "refine.knowledge");
    return digest;
  });
  auto k = refine_knowledge(doc, "q", llm);
  EXPECT_EQ(k.text, std::string(trim(digest)));
  EXPECT_EQ(k.source_digest, sha256_hex(doc));
}

TEST(Knowledge, EchoUnderBudgetIsIdentity) {
  std::string doc = "Prices are in USD.";
  testing::FnClient echo([&](const CompletionRequest&, std::size_t) { return doc; });
  EXPECT_EQ(refine_knowledge(doc, "", echo).text, doc);
}

TEST(Knowledge, FailureOrGrowthTruncatesOriginal) {
  std::string doc(40000, 'k');
  testing::FnClient failing([](const CompletionRequest&, std::size_t) -> std::string {
    throw Error(ErrorCode::kNetwork, "down");
  });
  auto k = refine_knowledge(doc, "", failing, 100);
  EXPECT_EQ(k.text, std::string(400, 'k'));
  testing::FnClient verbose([&](const CompletionRequest&, std::size_t) { return doc + doc; });
  auto v = refine_knowledge(doc, "", verbose, 100);
  EXPECT_LE(estimate_tokens(v.text), estimate_tokens(doc));
}

TEST(RefineSchema, FixpointWithoutSeriesOrNullColumns) {
  testing::TempDir dir;
  auto path = testing::build_db(dir.path(), "plain", R"(
    CREATE TABLE users (id INTEGER PRIMARY KEY, name TEXT);
    INSERT INTO users VALUES (1, 'a'), (2, 'b');
  )");
  auto catalog = ingest_catalog(path.string());
  SqliteBackend db(path.string());
  testing::FnClient llm([](const CompletionRequest&, std::size_t) { return std::string("unused"); });
  auto [refined, knowledge] = refine_schema(catalog, db, llm);
  EXPECT_EQ(render(SchemaView::all(refined.catalog)), render(SchemaView::all(catalog)));
  EXPECT_EQ(llm.call_count(), 0u);
}

TEST(RefineSchema, LargeSyntheticCatalogFallsUnderBudget) {
  testing::TempDir dir;
  std::string script;
  auto ddl_for = [](const std::string& name, int cols) {
    std::string s = "CREATE TABLE " + name + " (id INTEGER PRIMARY KEY";
    for (int c = 0; c < cols; ++c) s += fmt::format(", metric_column_number_{:03} TEXT", c);
    s += ");\nINSERT INTO " + name + " VALUES (1";
    for (int c = 0; c < cols; ++c) s += fmt::format(", 'value_{}'", c);
    return s + ");\n";
  };
  for (int m = 0; m < 190; ++m) script += ddl_for(fmt::format("events_{}", 20200101 + m), 60);
  for (int u = 0; u < 10; ++u) script += ddl_for(fmt::format("dim_{}", char('a' + u)), 5);
  auto path = testing::build_db(dir.path(), "wide", script);
  auto catalog = ingest_catalog(path.string());
  ASSERT_EQ(catalog.tables.size(), 200u);
  SqliteBackend db(path.string());
  testing::FnClient llm([](const CompletionRequest&, std::size_t) { return std::string("Daily event tables."); });
  auto [refined, knowledge] = refine_schema(catalog, db, llm);
  auto before = estimate_tokens(render(SchemaView::all(catalog)));
  auto after = estimate_tokens(render(SchemaView::all(refined.catalog)));
  EXPECT_GT(before, 128000u);
  EXPECT_LT(after, 128000u);
  EXPECT_EQ(refined.catalog.tables.size(), 11u);

  // Every name in S' exists in S, and provenance accounts for every table.
  std::size_t members = 0;
  for (const auto& [canonical, s] : refined.provenance) members += s.members.size();
  std::size_t singletons = 0;
  for (const auto& t : refined.catalog.tables) {
    ASSERT_NE(catalog.find_table(t.name), nullptr);
    if (!refined.provenance.count(t.name)) ++singletons;
  }
  EXPECT_EQ(singletons + members + refined.dropped.size(), catalog.tables.size());

  // Refining again keeps the same table set.
  auto [again, k2] = refine_schema(refined.catalog, db, llm);
  EXPECT_EQ(again.catalog.table_names(), refined.catalog.table_names());
}

TEST(RefinedJson, RoundTrip) {
  auto catalog = ga_sessions(4, 2);
  auto refined = consolidate_series(catalog, detect_table_series(catalog), {});
  refined.pruned_columns["x"] = {"y"};
  auto back = refined_schema_from_json(refined_schema_to_json(refined));
  EXPECT_EQ(refined_schema_to_json(back), refined_schema_to_json(refined));
  EXPECT_EQ(back.provenance.begin()->second.members.size(), 4u);
}

}  // namespace
}  // namespace dsr
