#include <doctest.h>

#include <random>

#include "test_util.h"
#include "unitmll/cli.h"
#include "unitmll/promptgen.h"

using namespace unitmll;
using testutil::KindOf;

namespace {

std::string Golden(const std::string& name) {
  return testutil::ReadFile(testutil::DataDir() / "golden" / name);
}

struct Fixture {
  std::vector<UtteranceRecord> records = LoadManifest(testutil::DataDir() / "golden" / "manifest.jsonl");
  SequenceMap seqs;
  Fixture() {
    for (const auto& t : LoadTokenFile(testutil::DataDir() / "golden" / "tokens.jsonl")) {
      seqs[t.id] = TokenSequence{t.dedup, true, t.id};
    }
  }
};

using Slots = std::vector<std::optional<std::string>>;

}  // namespace

TEST_CASE("render sequence") {
  CHECK(RenderSequence({{21, 12, 1, 9, 83}, true, "u"}) == "[21 12 1 9 83]");
  CHECK(RenderSequence({{}, true, "u"}) == "[]");
  CHECK(RenderSequence({{0}, true, "u"}) == "[0]");
  CHECK(KindOf([] { RenderSequence({{1, 1}, false, "u"}); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("rendered sequences parse back") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 300; ++i) {
    std::vector<std::int32_t> v(rng() % 20);
    for (auto& x : v) x = static_cast<std::int32_t>(rng() % 500);
    CHECK(ParseRenderedTokens(RenderTokens(v)) == v);
  }
  for (const char* bad : {"", "[", "[1  2]", "[01]", "[1 ]", " [1]", "[a]", "[-1]"}) {
    CHECK(KindOf([&] { ParseRenderedTokens(bad); }) == ErrorKind::kParse);
  }
}

TEST_CASE("builtin templates are the seven table patterns") {
  const auto& t = BuiltinTemplates();
  REQUIRE(t.size() == 7);
  for (int id = 1; id <= 7; ++id) CHECK(FindTemplate(t, id).id == id);
  CHECK(KindOf([&] { FindTemplate(t, 8); }) == ErrorKind::kNotFound);
  CHECK(kDefaultTemplateId == 3);
  CHECK(kDefaultContextSize == 1);
}

TEST_CASE("golden: all seven templates") {
  Slots past{"[2 4 9]", "[11 4 2]"};
  Slots future{"[7 2 6]", "[3 6 7]"};
  for (int id = 1; id <= 7; ++id) {
    CAPTURE(id);
    CHECK(RenderPrompt(FindTemplate(BuiltinTemplates(), id), past, future) ==
          Golden("template_" + std::to_string(id) + ".txt"));
  }
}

TEST_CASE("render prompt: single contexts and N/A fill") {
  const auto& t = BuiltinTemplates();
  CHECK(RenderPrompt(FindTemplate(t, 3), Slots{"[2 4 9]"}, Slots{"[7 2 6]"}) ==
        "<prefix>[[2 4 9]]</prefix>, <suffix>[[7 2 6]]</suffix>");
  CHECK(RenderPrompt(FindTemplate(t, 1), Slots{"[1]"}, Slots{"[2]"}) == "Past: [[1]], Future: [[2]]");
  CHECK(RenderPrompt(FindTemplate(t, 3), Slots{std::nullopt}, Slots{"[7]"}) ==
        Golden("na_fill_template_3.txt"));
}

TEST_CASE("golden: P1 neighbours") {
  Fixture f;
  const auto& t3 = FindTemplate(BuiltinTemplates(), 3);
  CHECK(BuildP1(f.records, f.seqs, "a2", t3, 0).prompt_text == Golden("p1_c0_a2.txt"));
  CHECK(BuildP1(f.records, f.seqs, "a2", t3, 1).prompt_text == Golden("p1_c1_a2.txt"));
  CHECK(BuildP1(f.records, f.seqs, "a1", t3, 2).prompt_text == Golden("p1_c2_a1.txt"));
  CHECK(BuildP1(f.records, f.seqs, "a3", t3, 2).prompt_text == Golden("p1_c2_a3.txt"));
  CHECK(BuildP1(f.records, f.seqs, "b1", t3, 1).prompt_text == Golden("p1_c1_b1.txt"));

  auto p = BuildP1(f.records, f.seqs, "a1", t3, 2);
  CHECK(p.target_text == Golden("target_a1.txt"));
  CHECK(p.context_size == 2);
  CHECK(p.template_id == 3);
  CHECK(p.mode == ContextMode::kNeighbors);
  CHECK(p.utterance_id == "a1");
}

TEST_CASE("golden: P2 is constant per chapter") {
  Fixture f;
  const auto& t3 = FindTemplate(BuiltinTemplates(), 3);
  for (const char* id : {"a1", "a2", "a3"}) {
    auto p = BuildP2(f.records, f.seqs, id, t3);
    CHECK(p.prompt_text == Golden("p2_chapter_a.txt"));
    CHECK(p.mode == ContextMode::kChapterFirst);
  }
  CHECK(BuildP2(f.records, f.seqs, "b1", t3).prompt_text == Golden("p2_chapter_b.txt"));
  CHECK(BuildPrompt(f.records, f.seqs, "a2", t3, ContextMode::kChapterFirst, 5).prompt_text ==
        Golden("p2_chapter_a.txt"));
}

TEST_CASE("P1: missing sequences and unknown targets") {
  Fixture f;
  const auto& t3 = FindTemplate(BuiltinTemplates(), 3);
  f.seqs.erase("a2");
  CHECK(KindOf([&] { BuildP1(f.records, f.seqs, "a2", t3, 1); }) == ErrorKind::kNotFound);
  CHECK(KindOf([&] { BuildP1(f.records, f.seqs, "a1", t3, 1); }) == ErrorKind::kNotFound);
  CHECK(KindOf([&] { BuildP1(f.records, f.seqs, "zz", t3, 1); }) == ErrorKind::kNotFound);
}

TEST_CASE("P1 uses exactly the neighbour slots") {
  Fixture f;
  const auto& t1 = FindTemplate(BuiltinTemplates(), 1);
  for (std::size_t c = 0; c <= 4; ++c) {
    auto p = BuildP1(f.records, f.seqs, "a2", t1, c);
    auto n = Neighbors(f.records, "a2", c);
    Slots past, future;
    for (auto it = n.past.rbegin(); it != n.past.rend(); ++it) {
      past.push_back(*it ? std::optional(RenderSequence(f.seqs.at(**it))) : std::nullopt);
    }
    for (const auto& id : n.future) {
      future.push_back(id ? std::optional(RenderSequence(f.seqs.at(*id))) : std::nullopt);
    }
    CHECK(p.prompt_text == RenderPrompt(t1, past, future));
  }
}

TEST_CASE("template file parsing") {
  auto t = ParseTemplates(R"([{"id": 9, "past_open": "A", "past_close": "B", "future_open": "C", "future_close": "D"}])");
  REQUIRE(t.size() == 1);
  CHECK(RenderPrompt(t[0], Slots{"[1]"}, Slots{}) == "A[[1]]B, C[]D");
  CHECK(KindOf([] {
          ParseTemplates(R"([{"id": 1, "past_open": "", "past_close": "", "future_open": "", "future_close": ""},
                             {"id": 1, "past_open": "", "past_close": "", "future_open": "", "future_close": ""}])");
        }) == ErrorKind::kValidation);
  CHECK(KindOf([] { ParseTemplates("{"); }) == ErrorKind::kParse);
  CHECK(ParseContextMode("p1") == ContextMode::kNeighbors);
  CHECK(ParseContextMode("p2") == ContextMode::kChapterFirst);
  CHECK(KindOf([] { ParseContextMode("p3"); }) == ErrorKind::kInvalidArgument);
}
