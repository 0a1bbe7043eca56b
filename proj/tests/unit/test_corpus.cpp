#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "adapt/corpus.hpp"

namespace fs = std::filesystem;
using namespace adapt;

namespace {

const fs::path kData = ADAPT_TEST_DATA;

fs::path tmp_file(const std::string& name, const std::string& content) {
  fs::path p = fs::temp_directory_path() / ("adapt_corpus_" + std::to_string(::getpid())) / name;
  fs::create_directories(p.parent_path());
  util::write_file_atomic(p, content);
  return p;
}

LabelPool small_pool() { return LabelPool({"theft", "fraud"}, {{264, "Article 264 text"}, {266, ""}}); }

}  // namespace

TEST(Term, JsonRoundTrip) {
  for (TermValue t : {TermValue{MonthsTerm{0}}, TermValue{MonthsTerm{37}}, TermValue{LifeImprisonment{}},
                      TermValue{DeathPenalty{}}, TermValue{NoCustody{}}})
    EXPECT_EQ(term_from_json(term_to_json(t)), t);
}

TEST(Term, RejectsMalformed) {
  EXPECT_THROW(term_from_json(json::parse(R"({"months":-1})")), ValidationError);
  EXPECT_THROW(term_from_json(json::parse(R"({"months":1.5})")), ValidationError);
  EXPECT_THROW(term_from_json(json::parse(R"({"months":3,"special":"life"})")), ValidationError);
  EXPECT_THROW(term_from_json(json::parse(R"({"special":"exile"})")), ValidationError);
  EXPECT_THROW(term_from_json(json::parse(R"({})")), ValidationError);
  EXPECT_THROW(term_from_json(json::parse("[]")), ValidationError);
}

TEST(Scheme, DefaultBoundaries) {
  auto s = IntervalScheme::default_scheme();
  // (months, expected index) at every edge of every interval
  const std::vector<std::pair<std::int64_t, int>> edges = {
      {0, 0},  {1, 1},  {6, 1},   {7, 2},   {9, 2},   {10, 3},  {12, 3},  {13, 4}, {24, 4},
      {25, 5}, {36, 5}, {37, 6},  {60, 6},  {61, 7},  {84, 7},  {85, 8},  {120, 8}, {121, 9}, {100000, 9}};
  for (auto [m, idx] : edges) EXPECT_EQ(bucket_term(MonthsTerm{m}, s), idx) << m << " months";
  EXPECT_EQ(bucket_term(LifeImprisonment{}, s), 10);
  EXPECT_EQ(bucket_term(DeathPenalty{}, s), 10);
  EXPECT_EQ(bucket_term(NoCustody{}, s), 0);
  EXPECT_EQ(s.label(4), "over 1 year up to 2 years");
}

TEST(Scheme, MonthsPartitionProperty) {
  auto s = IntervalScheme::default_scheme();
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5000; ++i) {
    std::int64_t m = static_cast<std::int64_t>(rng() % 2000);
    int hits = 0;
    for (const auto& t : s.intervals()) hits += t.months && t.months->contains(m);
    ASSERT_EQ(hits, 1) << m;
  }
}

TEST(Scheme, JsonRoundTripAndValidation) {
  auto s = IntervalScheme::default_scheme();
  auto back = IntervalScheme::from_json(s.to_json());
  EXPECT_EQ(back.to_json(), s.to_json());

  json j = s.to_json();
  j["intervals"].erase(j["intervals"].begin() + 3);
  EXPECT_THROW(IntervalScheme::from_json(j), ValidationError);

  json gap = s.to_json();
  gap["intervals"][2]["max_months_inclusive"] = 8;  // (6,8] then (9,12]
  EXPECT_THROW(IntervalScheme::from_json(gap), ValidationError);

  json dup = s.to_json();
  dup["intervals"][1]["index"] = 0;
  EXPECT_THROW(IntervalScheme::from_json(dup), ValidationError);
}

TEST(Pool, LoadsFixture) {
  auto pool = LabelPool::load(kData / "label_pool.json");
  EXPECT_EQ(pool.charges().size(), 10u);
  EXPECT_TRUE(pool.has_charge("theft"));
  EXPECT_TRUE(pool.has_article(264));
  EXPECT_FALSE(pool.has_article(999));
  EXPECT_FALSE(pool.missing_article_text());
}

TEST(Pool, RejectsDuplicates) {
  EXPECT_THROW(LabelPool({"theft", "theft"}, {{1, "x"}}), ValidationError);
  EXPECT_THROW(LabelPool::from_json(json::parse(R"({"charges":["a"],"articles":[{"number":1},{"number":1}]})")),
               ValidationError);
  EXPECT_TRUE(small_pool().missing_article_text());
}

TEST(Dataset, LoadsFixture) {
  auto pool = LabelPool::load(kData / "label_pool.json");
  auto cases = load_dataset(kData / "cases.jsonl", pool);
  ASSERT_EQ(cases.size(), 10u);
  const auto* ma = cases[8].find_defendant("Ma Lin");
  ASSERT_NE(ma, nullptr);
  EXPECT_EQ(ma->charges, (std::set<std::string>{"extortion", "theft"}));
  EXPECT_EQ(bucket_term(ma->term, IntervalScheme::default_scheme()), 4);
}

TEST(Dataset, WriteLoadRoundTrip) {
  auto pool = LabelPool::load(kData / "label_pool.json");
  auto cases = load_dataset(kData / "cases.jsonl", pool);
  fs::path out = fs::temp_directory_path() / ("adapt_corpus_rt_" + std::to_string(::getpid())) / "cases.jsonl";
  write_dataset(out, cases);
  EXPECT_EQ(load_dataset(out, pool), cases);
  fs::remove_all(out.parent_path());
}

TEST(Dataset, UnknownLabelNamesLine) {
  auto p = tmp_file("unknown.jsonl",
                    R"({"case_id":"a","fact":"f","defendants":[{"name":"X","charges":["theft"],"articles":[264],"term":{"months":3}}]})"
                    "\n"
                    R"({"case_id":"b","fact":"f","defendants":[{"name":"Y","charges":["arson"],"articles":[264],"term":{"months":3}}]})"
                    "\n");
  try {
    load_dataset(p, small_pool());
    FAIL() << "expected UnknownLabelError";
  } catch (const UnknownLabelError& e) {
    EXPECT_EQ(e.label(), "arson");
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(Dataset, SchemaErrorsCarryLineNumber) {
  const std::vector<std::string> bad = {
      R"({"case_id":"a","fact":"  ","defendants":[{"name":"X","charges":["theft"],"articles":[264],"term":{"months":3}}]})",
      R"({"case_id":"a","fact":"f","defendants":[]})",
      R"({"case_id":"a","fact":"f","defendants":[{"name":"X","charges":[],"articles":[264],"term":{"months":3}}]})",
      R"({"case_id":"a","fact":"f","defendants":[{"name":"X","charges":["theft"],"articles":[264],"term":{"months":3}},{"name":"X","charges":["theft"],"articles":[264],"term":{"months":3}}]})",
      R"({"case_id":"a","defendants":[]})",
      "{not json",
  };
  for (const auto& line : bad) {
    auto p = tmp_file("bad.jsonl", "\n" + line + "\n");
    try {
      load_dataset(p, small_pool());
      ADD_FAILURE() << "accepted: " << line;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), 2u) << line;
    }
  }
}

TEST(Dataset, DuplicateCaseId) {
  std::string rec =
      R"({"case_id":"a","fact":"f","defendants":[{"name":"X","charges":["theft"],"articles":[264],"term":{"special":"none"}}]})";
  auto p = tmp_file("dup.jsonl", rec + "\n" + rec + "\n");
  EXPECT_THROW(load_dataset(p, small_pool()), ParseError);
}

TEST(Stats, CountsFixture) {
  auto pool = LabelPool::load(kData / "label_pool.json");
  auto cases = load_dataset(kData / "cases.jsonl", pool);
  auto s = dataset_stats(cases, pool);
  EXPECT_EQ(s.case_count, 10u);
  EXPECT_EQ(s.defendant_count, 12u);
  EXPECT_EQ(s.distinct_charges, 10u);
  EXPECT_EQ(s.distinct_articles, 10u);
  EXPECT_DOUBLE_EQ(s.avg_defendants_per_case, 1.2);
}

TEST(Stats, FactLengthInCodePoints) {
  EXPECT_EQ(utf8_length("abc"), 3u);
  EXPECT_EQ(utf8_length("被告人张某"), 5u);
}

TEST(Rng, BelowAndShuffleDeterministic) {
  util::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.below(7), b.below(7));
  std::vector<int> v(50), w;
  std::iota(v.begin(), v.end(), 0);
  w = v;
  util::Rng(9).shuffle(v);
  util::Rng(9).shuffle(w);
  EXPECT_EQ(v, w);
  std::sort(v.begin(), v.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(v[i], i);
}
