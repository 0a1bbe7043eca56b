#include <gtest/gtest.h>

#include <filesystem>

#include "adapt/scripted_backend.hpp"
#include "adapt/synthesizer.hpp"

namespace fs = std::filesystem;
using namespace adapt;

namespace {

const fs::path kData = ADAPT_TEST_DATA;

struct Fixture {
  LabelPool pool = LabelPool::load(kData / "label_pool.json");
  std::vector<Case> cases = load_dataset(kData / "synth_cases.jsonl", pool);
  std::shared_ptr<ScriptedBackend> teacher = ScriptedBackend::from_directory(kData / "scripted" / "teacher");

  const Case& by_id(const std::string& id) {
    for (const auto& c : cases)
      if (c.case_id == id) return c;
    throw std::runtime_error(id);
  }
};

const char* kGoodAsk =
    "[Subject]\nAn adult.\n[Criminal behaviors and consequences]\nTook goods.\n[Object]\nProperty.\n[Subjective "
    "aspect]\nIntent.";

Case one_case() {
  return Case{"X1", "Zhang took a phone from a shop.", {{"Zhang", {"theft"}, {264}, MonthsTerm{8}}}};
}

Synthesizer scripted(std::function<ChatResponse(const ChatRequest&)> fn, const LabelPool& pool, SynthConfig cfg = {}) {
  return Synthesizer(Gateway(std::make_shared<CallbackBackend>(std::move(fn)), nullptr), pool, std::move(cfg));
}

}  // namespace

TEST(Leaks, NumbersMatchWholeDigitRuns) {
  EXPECT_TRUE(contains_number("Article 264 applies", 264));
  EXPECT_FALSE(contains_number("Article 2640 applies", 264));
  EXPECT_FALSE(contains_number("12645", 264));
  EXPECT_TRUE(contains_number("264", 264));
  auto hits = find_leaks("This is THEFT under 264.", {"theft"}, {264, 266});
  EXPECT_EQ(hits, (std::vector<std::string>{"theft", "264"}));
}

TEST(Sample, JsonRoundTrip) {
  TrajectorySample s{TaskKind::sentencing, "C1", "Li", "instr", "tgt", {"teacher", {{"term_interval", 4}}, 1}};
  EXPECT_EQ(sample_from_json(to_json(s)), s);
  for (auto t : kAllTasks) EXPECT_EQ(task_from_string(to_string(t)), t);
  EXPECT_THROW(task_from_string("nope"), ValidationError);
  json bad = to_json(s);
  bad["target"] = "";
  EXPECT_THROW(sample_from_json(bad), ValidationError);
}

TEST(Synth, FixtureProducesEveryTask) {
  Fixture f;
  Synthesizer syn(Gateway(f.teacher, nullptr), f.pool);
  auto out = syn.synthesize(f.cases);
  EXPECT_TRUE(out.skips.empty()) << (out.skips.empty() ? "" : out.skips.front().message);
  auto counts = task_counts(out.samples);
  EXPECT_EQ(counts[TaskKind::ask], 6u);
  EXPECT_EQ(counts[TaskKind::discriminate], 6u);
  EXPECT_EQ(counts[TaskKind::sentencing], 6u);
  EXPECT_EQ(counts[TaskKind::predict_all], 6u);
  EXPECT_EQ(counts[TaskKind::article], 7u);
  EXPECT_TRUE(scan_leakage(out.samples, f.cases).empty());
}

TEST(Synth, RefusalIsRepromptedOnce) {
  Fixture f;
  Synthesizer syn(Gateway(f.teacher, nullptr), f.pool);
  const Case& c = f.by_id("C02");
  auto s = syn.synth_ask(c, c.defendants[0]);
  EXPECT_EQ(s.provenance.reprompts, 1);
  EXPECT_EQ(s.provenance.teacher_model, "teacher");
  auto calls = f.teacher->calls();
  ASSERT_EQ(calls.size(), 2u);
  EXPECT_EQ(calls[1].message_count, 2u);  // no assistant turn after a refusal
  EXPECT_NE(calls[1].prompt.find("Your previous answer could not be used"), std::string::npos);
}

TEST(Synth, WrongRangeIsRepromptedThenAccepted) {
  Fixture f;
  Synthesizer syn(Gateway(f.teacher, nullptr), f.pool);
  const Case& c = f.by_id("C03");
  auto s = syn.synth_sentencing(c, *c.find_defendant("Wang Qiang"));
  EXPECT_EQ(s.provenance.reprompts, 1);
  EXPECT_EQ(read_sentencing(*find_final_answer(s.target).term, IntervalScheme::default_scheme()).interval, 6);
  EXPECT_EQ(f.teacher->calls().back().message_count, 3u);
}

TEST(Synth, ParaphrasedArticleIsRepromptedThenAccepted) {
  Fixture f;
  Synthesizer syn(Gateway(f.teacher, nullptr), f.pool);
  const Case& c = f.by_id("C01");
  auto s = syn.synth_article(c, c.defendants[0], 264);
  EXPECT_EQ(s.provenance.reprompts, 1);
  EXPECT_NE(util::collapse_whitespace(s.target).find(util::collapse_whitespace(f.pool.article_text(264))),
            std::string::npos);
  EXPECT_THROW(syn.synth_article(c, c.defendants[0], 266), ValidationError);
}

TEST(Synth, DiscriminateDeduplicatesCandidates) {
  Fixture f;
  Synthesizer syn(Gateway(f.teacher, nullptr), f.pool);
  const Case& c = f.by_id("C01");
  std::string ask = syn.synth_ask(c, c.defendants[0]).target;
  auto s = syn.synth_discriminate(c, c.defendants[0], &ask);
  auto rec = parse_discrimination(s.target, 10);
  auto names = rec.charges();
  EXPECT_EQ(std::count(names.begin(), names.end(), "theft"), 1);
  EXPECT_NE(s.instruction.find(ask), std::string::npos);
  EXPECT_THROW(syn.synth_discriminate(c, c.defendants[0], nullptr), ValidationError);
}

TEST(Synth, PersistentRefusalBecomesSkip) {
  LabelPool pool({"theft"}, {{264, "Whoever steals."}});
  int calls = 0;
  auto syn = scripted([&](const ChatRequest&) { ++calls; return ChatResponse::refusal("no"); }, pool);
  auto out = syn.synthesize_defendant(one_case(), one_case().defendants[0]);
  EXPECT_TRUE(out.samples.empty());
  // ask, sentencing, article: two calls each with the default budget of one reprompt
  EXPECT_EQ(calls, 6);
  std::map<TaskKind, SkipReason> why;
  for (const auto& s : out.skips) why[s.task] = s.reason;
  EXPECT_EQ(why[TaskKind::ask], SkipReason::refusal);
  EXPECT_EQ(why[TaskKind::discriminate], SkipReason::prerequisite);
  EXPECT_EQ(why[TaskKind::predict_all], SkipReason::prerequisite);
}

TEST(Synth, LeakingAskIsRejected) {
  LabelPool pool({"theft"}, {{264, "Whoever steals."}});
  std::string leaky = std::string(kGoodAsk) + "\nThis is theft under Article 264.";
  auto syn = scripted([&](const ChatRequest&) { return ChatResponse::text(leaky); }, pool);
  try {
    syn.synth_ask(one_case(), one_case().defendants[0]);
    FAIL();
  } catch (const SynthesisError& e) {
    EXPECT_EQ(e.reason(), SkipReason::leakage);
  }
}

TEST(Synth, DegradedAskIsRejected) {
  LabelPool pool({"theft"}, {{264, "Whoever steals."}});
  auto syn = scripted([](const ChatRequest&) { return ChatResponse::text("[Subject]\nAn adult."); }, pool);
  try {
    syn.synth_ask(one_case(), one_case().defendants[0]);
    FAIL();
  } catch (const SynthesisError& e) {
    EXPECT_EQ(e.reason(), SkipReason::parse);
  }
}

TEST(Synth, InconsistentGoldChargeIsRejected) {
  LabelPool pool({"theft", "fraud"}, {{264, "Whoever steals."}});
  auto syn = scripted(
      [](const ChatRequest&) {
        return ChatResponse::text("[Candidates]\n1. fraud\n2. theft\n[Assessment: fraud]\nVerdict: consistent\n"
                                  "[Assessment: theft]\nVerdict: inconsistent\n[Differences]\nx");
      },
      pool);
  std::string ask = kGoodAsk;
  try {
    syn.synth_discriminate(one_case(), one_case().defendants[0], &ask);
    FAIL();
  } catch (const SynthesisError& e) {
    EXPECT_EQ(e.reason(), SkipReason::consistency);
  }
}

TEST(Synth, MissingArticleText) {
  LabelPool pool({"theft"}, {{264, ""}});
  auto syn = scripted([](const ChatRequest&) { return ChatResponse::text("x"); }, pool);
  try {
    syn.synth_article(one_case(), one_case().defendants[0], 264);
    FAIL();
  } catch (const SynthesisError& e) {
    EXPECT_EQ(e.reason(), SkipReason::missing_article_text);
  }
}

TEST(Synth, StrictSentencingInstructionOmitsFact) {
  LabelPool pool({"theft"}, {{264, "Whoever steals."}});
  auto answer = [](const ChatRequest&) { return ChatResponse::text("Factors...\n[Sentencing range]\nover 6 months up to 9 months"); };
  SynthConfig strict;
  strict.fact_free_sentencing = true;
  auto a = scripted(answer, pool).synth_sentencing(one_case(), one_case().defendants[0]);
  auto b = scripted(answer, pool, strict).synth_sentencing(one_case(), one_case().defendants[0]);
  EXPECT_NE(a.instruction.find("took a phone"), std::string::npos);
  EXPECT_EQ(b.instruction.find("took a phone"), std::string::npos);
  EXPECT_EQ(a.target, b.target);
}

TEST(PredictAll, TargetChainsAskDiscAndFinalAnswer) {
  LabelPool pool({"theft"}, {{264, "Whoever steals."}});
  auto syn = scripted([](const ChatRequest&) { return ChatResponse::text("x"); }, pool);
  std::string ask = "ASK", disc = "DISC";
  auto s = syn.assemble_predict_all(one_case(), one_case().defendants[0], &ask, &disc);
  EXPECT_EQ(s.target, "ASK\n\nDISC\n\n[Charges]\ntheft\n[Articles]\n264\n[Term]\nover 6 months up to 9 months");
  EXPECT_TRUE(s.provenance.teacher_model.empty());
  EXPECT_THROW(syn.assemble_predict_all(one_case(), one_case().defendants[0], &ask, nullptr), ValidationError);
}

TEST(Mixture, EqualCountsAndSeedOnlyChangesOrder) {
  std::vector<TrajectorySample> samples;
  std::map<TaskKind, int> per = {{TaskKind::ask, 5}, {TaskKind::discriminate, 3}, {TaskKind::sentencing, 4},
                                 {TaskKind::article, 7}, {TaskKind::predict_all, 3}};
  for (auto [t, n] : per)
    for (int i = 0; i < n; ++i)
      samples.push_back({t, "C" + std::to_string(i), "D", "i" + std::to_string(i), "t", {}});
  auto a = build_mixture(samples, 1), b = build_mixture(samples, 2), a2 = build_mixture(samples, 1);
  for (auto [t, n] : a.counts()) EXPECT_EQ(n, 3u) << to_string(t);
  EXPECT_EQ(a.samples, a2.samples);
  auto key = [](const TrajectorySample& s) { return util::dump_compact(to_json(s)); };
  std::multiset<std::string> ka, kb;
  for (const auto& s : a.samples) ka.insert(key(s));
  for (const auto& s : b.samples) kb.insert(key(s));
  EXPECT_EQ(ka, kb);
}

TEST(Mixture, EmitLoadRoundTrip) {
  std::vector<TrajectorySample> samples;
  for (auto t : kAllTasks) samples.push_back({t, "C", "D", "instruction", "target", {"m", json::object(), 0}});
  auto m = build_mixture(samples, 3);
  fs::path p = fs::temp_directory_path() / ("adapt_mix_" + std::to_string(::getpid()) + ".jsonl");
  emit_jsonl(m, p);
  EXPECT_EQ(load_mixture(p), m.samples);
  fs::remove(p);
}

TEST(Mixture, ScanFindsLeak) {
  Case c = one_case();
  TrajectorySample s{TaskKind::ask, "X1", "Zhang", "Is this theft?", "t", {}};
  std::vector<TrajectorySample> v = {s};
  std::vector<Case> cs = {c};
  auto hits = scan_leakage(v, cs);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].label, "theft");
}
