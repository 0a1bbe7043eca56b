#include <gtest/gtest.h>

#include <filesystem>

#include "adapt/templates.hpp"

namespace fs = std::filesystem;
using namespace adapt;

TEST(Template, RendersPlaceholders) {
  PromptTemplate t("t", "Hello {{name}}, {{name}} again.");
  EXPECT_EQ(t.render({{"name", "Li"}}), "Hello Li, Li again.");
  EXPECT_THROW(t.render({}), TemplateError);
  EXPECT_EQ(t.placeholders(), (std::set<std::string>{"name"}));
}

TEST(Template, ConditionalBlocks) {
  PromptTemplate t("t", "a\n{{#x}}line {{x}}\n{{/x}}b");
  EXPECT_EQ(t.render({{"x", "1"}}), "a\nline 1\nb");
  EXPECT_EQ(t.render({{"x", ""}}), "a\nb");
  EXPECT_EQ(t.render({}), "a\nb");
}

TEST(Template, NestedBlocks) {
  PromptTemplate t("t", "{{#a}}A{{#b}}B{{/b}}{{/a}}.");
  EXPECT_EQ(t.render({{"a", "1"}, {"b", "1"}}), "AB.");
  EXPECT_EQ(t.render({{"a", "1"}}), "A.");
  EXPECT_EQ(t.render({{"b", "1"}}), ".");
}

TEST(Template, RejectsUnbalanced) {
  EXPECT_THROW(PromptTemplate("t", "{{#a}}x"), TemplateError);
  EXPECT_THROW(PromptTemplate("t", "x{{/a}}"), TemplateError);
  EXPECT_THROW(PromptTemplate("t", "{{a"), TemplateError);
}

TEST(TemplateSet, DefaultsCoverEveryName) {
  auto s = TemplateSet::defaults();
  for (const auto& n : TemplateSet::names()) EXPECT_NO_THROW(s.get(n)) << n;
  EXPECT_THROW(s.get("nope"), TemplateError);
  EXPECT_EQ(s.versions().size(), TemplateSet::names().size());
}

TEST(TemplateSet, ShippedFilesMatchBuiltins) {
  auto d = TemplateSet::defaults();
  for (const auto& n : TemplateSet::names()) {
    fs::path p = fs::path(ADAPT_TEMPLATE_DIR) / (n + ".txt");
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(util::read_file(p), d.get(n).text()) << n;
  }
}

TEST(TemplateSet, DirectoryOverridesSingleFile) {
  fs::path dir = fs::temp_directory_path() / ("adapt_tpl_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  util::write_file_atomic(dir / "direct.txt", "Judge {{defendant}}.");
  auto s = TemplateSet::load_directory(dir);
  EXPECT_EQ(s.get("direct").render({{"defendant", "X"}}), "Judge X.");
  EXPECT_EQ(s.get("ask").text(), TemplateSet::defaults().get("ask").text());
  EXPECT_NE(s.versions()["direct"], TemplateSet::defaults().versions()["direct"]);
  fs::remove_all(dir);
  EXPECT_THROW(TemplateSet::load_directory(dir), ConfigError);
}

TEST(TemplateSet, StepPromptsNameTheDefendant) {
  auto s = TemplateSet::defaults();
  TemplateVars v = {{"defendant", "Zhang Wei"}, {"fact", "F"}, {"k", "5"}, {"ask", "A"}, {"discrimination", "D"},
                    {"candidates", "C"}, {"candidate_articles", ""}, {"propose_articles", ""}};
  for (const char* n : {"ask", "discriminate", "discriminate_wo_ask"}) {
    std::string out;
    try {
      out = s.get(n).render(v);
    } catch (const TemplateError& e) {
      FAIL() << n << ": " << e.what();
    }
    EXPECT_NE(out.find("Zhang Wei"), std::string::npos) << n;
    EXPECT_EQ(out.find("{{"), std::string::npos) << n;
  }
  auto disc = s.get("discriminate").render(v);
  EXPECT_EQ(disc.find("Candidate articles"), std::string::npos);
  v["propose_articles"] = "1";
  EXPECT_NE(s.get("discriminate").render(v).find("[Candidate articles]"), std::string::npos);
}
