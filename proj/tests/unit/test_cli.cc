#include <doctest.h>

#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "test_util.h"
#include "unitmll/analytics.h"
#include "unitmll/cli.h"
#include "unitmll/ngram_backend.h"
#include "unitmll/promptgen.h"
#include "unitmll/scoring.h"

using namespace unitmll;
using nlohmann::json;
using testutil::KindOf;
using testutil::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run Cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.insert(args.begin(), "--log-level=off");
  int code = RunCli(args, out, err);
  return {code, out.str(), err.str()};
}

// Four speakers, one chapter each, six utterances of 3-d frames drawn around
// a speaker mean.
struct Corpus {
  TempDir dir;
  std::filesystem::path manifest = dir / "manifest.jsonl";

  Corpus() {
    std::mt19937_64 rng(17);
    std::normal_distribution<float> g;
    std::vector<UtteranceRecord> records;
    std::filesystem::create_directories(dir / "feats");
    for (int s = 0; s < 4; ++s) {
      float mean[3] = {g(rng) * 4, g(rng) * 4, g(rng) * 4};
      for (int u = 0; u < 6; ++u) {
        std::string id = "s" + std::to_string(s) + "-" + std::to_string(u);
        std::size_t frames = 5 + rng() % 15;
        FeatureMatrix m(frames, 3);
        for (std::size_t t = 0; t < frames; ++t)
          for (std::size_t d = 0; d < 3; ++d) m(t, d) = mean[d] + g(rng) * 0.3f;
        SaveFeatures(dir / "feats" / (id + ".fmat"), m);
        records.push_back({id, "ch" + std::to_string(s), "spk" + std::to_string(s),
                           static_cast<std::uint64_t>(u), "feats/" + id + ".fmat", std::nullopt});
      }
    }
    SaveManifest(manifest, records);
  }
};

json ErrorOf(const Run& r) { return json::parse(r.err); }

}  // namespace

TEST_CASE("size lists") {
  CHECK(ParseSizeList("0..3") == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(ParseSizeList("0,2,4") == std::vector<std::size_t>{0, 2, 4});
  CHECK(ParseSizeList("5") == std::vector<std::size_t>{5});
  for (const char* bad : {"", "3..1", "a", "1,,2", "1..", "-1"}) {
    CAPTURE(bad);
    CHECK(KindOf([&] { ParseSizeList(bad); }).has_value());
  }
}

TEST_CASE("run config") {
  auto c = ParseRunConfig(R"({"manifest": "m.jsonl", "template": 5, "context": "p2", "seed": 9})");
  CHECK(c.manifest == std::filesystem::path("m.jsonl"));
  CHECK(c.template_id == 5);
  CHECK(c.context == "p2");
  CHECK(c.seed == 9u);
  CHECK_FALSE(c.backend.has_value());
  CHECK(KindOf([] { ParseRunConfig(R"({"nope": 1})"); }) == ErrorKind::kValidation);
  CHECK(KindOf([] { ParseRunConfig(R"({"seed": "x"})"); }).has_value());
  CHECK(KindOf([] { ParseRunConfig("[1]"); }).has_value());
}

TEST_CASE("end to end: kmeans, quantize, prompts, score") {
  Corpus corpus;
  const auto& d = corpus.dir;
  std::string glob = (d / "feats" / "*.fmat").string();

  auto km = Cli({"--seed", "3", "kmeans", "--features", glob, "-K", "4", "--sample-fraction", "1",
                 "--out", (d / "cb.fmat").string()});
  REQUIRE(km.code == 0);
  auto kj = json::parse(km.out);
  CHECK(kj["num_clusters"] == 4);
  CHECK(kj["n_sampled"] == 24);
  auto km2 = Cli({"--seed", "3", "kmeans", "--features", glob, "-K", "4", "--sample-fraction", "1",
                  "--out", (d / "cb2.fmat").string()});
  CHECK(testutil::ReadFile(d / "cb.fmat") == testutil::ReadFile(d / "cb2.fmat"));

  auto q = Cli({"quantize", "--manifest", corpus.manifest.string(), "--codebook", (d / "cb.fmat").string(),
                "--out", (d / "tokens.jsonl").string()});
  REQUIRE(q.code == 0);
  auto tokens = LoadTokenFile(d / "tokens.jsonl");
  REQUIRE(tokens.size() == 24);
  for (const auto& t : tokens) {
    CHECK(t.dedup == Dedup({t.raw, false, t.id}).tokens);
    CHECK_FALSE(t.raw.empty());
  }

  auto p = Cli({"prompts", "--manifest", corpus.manifest.string(), "--tokens", (d / "tokens.jsonl").string(),
                "-c", "2", "--template", "1", "--out", (d / "prompts.jsonl").string()});
  REQUIRE(p.code == 0);
  std::istringstream lines(testutil::ReadFile(d / "prompts.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    auto j = json::parse(line);
    CHECK(j["template"] == 1);
    CHECK(j["context_size"] == 2);
    CHECK(j["prompt"].get<std::string>().rfind("Past: [", 0) == 0);
    ++n;
  }
  CHECK(n == 24);

  auto nt = Cli({"ngram-train", "--tokens", (d / "tokens.jsonl").string(), "--order", "3",
                 "--adaptation", "0.3", "--out", (d / "ngram.json").string()});
  REQUIRE(nt.code == 0);

  auto s = Cli({"score", "--manifest", corpus.manifest.string(), "--tokens", (d / "tokens.jsonl").string(),
                "--backend", "ngram:" + (d / "ngram.json").string(), "--out-dir", (d / "run").string(),
                "--ablate-lengths", "5,10,max", "--context-sizes", "0..6", "--cache",
                (d / "cache.jsonl").string()});
  REQUIRE(s.code == 0);
  auto summary = json::parse(testutil::ReadFile(d / "run" / "summary.json"));
  CHECK(summary["n_utterances"] == 24);
  CHECK(summary["template"] == 3);
  CHECK(summary["context"] == "p1");
  CHECK(summary["seed"] == 0);
  CHECK(summary.contains("generated_at"));

  // Same MLL through the library.
  auto records = LoadManifest(corpus.manifest);
  SequenceMap seqs;
  for (const auto& t : tokens) seqs[t.id] = TokenSequence{t.dedup, true, t.id};
  auto model = NgramModel::Load(d / "ngram.json");
  std::vector<RenderedPrompt> prompts;
  std::vector<TokenSequence> targets;
  for (const auto& r : records) {
    prompts.push_back(BuildP1(records, seqs, r.utterance_id, FindTemplate(BuiltinTemplates(), 3), 1));
    targets.push_back(seqs.at(r.utterance_id));
  }
  double mll = CorpusMll(ScoreAll(model, prompts, targets));
  CHECK(summary["corpus_mll"].get<double>() == doctest::Approx(mll).epsilon(1e-12));

  auto ablation = testutil::ReadFile(d / "run" / "ablation.csv");
  CHECK(std::count(ablation.begin(), ablation.end(), '\n') == 4);
  CHECK(ablation.rfind("char_limit,mll\n5,", 0) == 0);
  auto sweep = testutil::ReadFile(d / "run" / "context_sweep.csv");
  CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 8);
  CHECK(LoadScoreFile(d / "run" / "scores.jsonl").size() == 24);

  // A second run is served from the cache and reproduces the scores.
  auto s2 = Cli({"score", "--manifest", corpus.manifest.string(), "--tokens", (d / "tokens.jsonl").string(),
                 "--backend", "ngram:" + (d / "ngram.json").string(), "--out-dir", (d / "run2").string(),
                 "--cache", (d / "cache.jsonl").string()});
  REQUIRE(s2.code == 0);
  CHECK(testutil::ReadFile(d / "run" / "scores.jsonl") == testutil::ReadFile(d / "run2" / "scores.jsonl"));

  // Correlating a run with itself.
  auto c = Cli({"correlate", "--a", (d / "run" / "scores.jsonl").string(), "--b",
                (d / "run2" / "scores.jsonl").string(), "--out-dir", (d / "corr").string()});
  REQUIRE(c.code == 0);
  CHECK(json::parse(c.out)["pearson"].get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::filesystem::exists(d / "corr" / "correlation.csv"));

  // Layers from two score files.
  auto l = Cli({"layers", "--model-id", "toy", "--layer", "1=" + (d / "run" / "scores.jsonl").string(),
                "--layer", "2=" + (d / "run2" / "scores.jsonl").string()});
  REQUIRE(l.code == 0);
  auto lj = json::parse(l.out);
  CHECK(lj["mean_mll"].get<double>() == doctest::Approx(mll).epsilon(1e-12));

  // Speaker verification on pooled frames and on centroids.
  auto v = Cli({"sv", "--manifest", corpus.manifest.string(), "--pca-dim", "2", "--utts-per-speaker", "5",
                "--out-dir", (d / "sv").string()});
  REQUIRE(v.code == 0);
  auto vj = json::parse(v.out);
  CHECK(vj["n_target"] == 4 * 3);
  CHECK(vj["n_impostor"] == 4 * 3 * 3);
  CHECK(vj["n_verification_utterances"] == 16);
  CHECK(vj["eer"].get<double>() <= 0.1);
  auto sv_csv = testutil::ReadFile(d / "sv" / "sv.csv");
  CHECK(sv_csv.rfind("claimed_speaker,utterance_id,score,is_target\n", 0) == 0);
  auto vc = Cli({"sv", "--manifest", corpus.manifest.string(), "--embedding", "centroid", "--tokens",
                 (d / "tokens.jsonl").string(), "--codebook", (d / "cb.fmat").string(), "--pca-dim", "0",
                 "--utts-per-speaker", "5"});
  CHECK(vc.code == 0);
}

TEST_CASE("score: config file fills unset flags, flags win") {
  Corpus corpus;
  const auto& d = corpus.dir;
  auto glob = (d / "feats" / "*.fmat").string();
  REQUIRE(Cli({"kmeans", "--features", glob, "-K", "3", "--sample-fraction", "1", "--out",
               (d / "cb.fmat").string()}).code == 0);
  REQUIRE(Cli({"quantize", "--manifest", corpus.manifest.string(), "--codebook", (d / "cb.fmat").string(),
               "--out", (d / "tokens.jsonl").string()}).code == 0);
  json cfg{{"manifest", corpus.manifest.string()},
           {"tokens", (d / "tokens.jsonl").string()},
           {"backend", "uniform:11"},
           {"template", 5},
           {"context", "p2"},
           {"out_dir", (d / "from_cfg").string()}};
  testutil::WriteFile(d / "cfg.json", cfg.dump());
  auto r = Cli({"--config", (d / "cfg.json").string(), "score", "--template", "2"});
  REQUIRE(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(j["template"] == 2);
  CHECK(j["context"] == "p2");
  CHECK(std::filesystem::exists(d / "from_cfg" / "summary.json"));

  auto norm = Cli({"--config", (d / "cfg.json").string(), "--norm", "char", "score"});
  REQUIRE(norm.code == 0);
  CHECK(json::parse(norm.out)["norm"] == "char");
  // Uniform over 11 symbols: per-character MLL is exactly log(1/11).
  CHECK(json::parse(norm.out)["corpus_mll"].get<double>() == doctest::Approx(std::log(1.0 / 11.0)).epsilon(1e-12));
}

TEST_CASE("rank from an MLL table") {
  TempDir d;
  testutil::WriteFile(d / "wer.csv", "model_id,metric\nhubert,14.78\nwavlm,3.44\nxeus,3.34\n");
  testutil::WriteFile(d / "mll.csv", "model_id,mll\nhubert,-1.780\nwavlm,-1.770\nxeus,-1.750\n");
  auto r = Cli({"rank", "--mll-table", (d / "mll.csv").string(), "--metrics", (d / "wer.csv").string(),
                "--out-dir", (d / "out").string()});
  REQUIRE(r.code == 0);
  auto j = json::parse(r.out);
  CHECK(j["agreement"] == true);
  CHECK(j["mll_order"] == json{"xeus", "wavlm", "hubert"});
  CHECK(std::filesystem::exists(d / "out" / "rank.csv"));

  testutil::WriteFile(d / "s.json", R"({"corpus_mll": -1.0})");
  auto dup = Cli({"rank", "--mll-table", (d / "mll.csv").string(), "--summary", "xeus=" + (d / "s.json").string(),
                  "--metrics", (d / "wer.csv").string()});
  CHECK(dup.code == 1);
  CHECK(ErrorOf(dup)["error"] == "validation_error");
}

TEST_CASE("errors are reported as JSON") {
  TempDir d;
  auto missing = Cli({"quantize", "--manifest", (d / "none.jsonl").string(), "--codebook", "x", "--out", "y"});
  CHECK(missing.code == 1);
  auto e = ErrorOf(missing);
  CHECK(e.contains("error"));
  CHECK(e["message"].get<std::string>().find("none.jsonl") != std::string::npos);

  auto usage = Cli({"kmeans"});
  CHECK(usage.code != 0);
  CHECK(ErrorOf(usage)["error"] == "usage");

  auto unknown = Cli({"frobnicate"});
  CHECK(unknown.code != 0);

  auto bad_norm = Cli({"--norm", "bytes", "selftest"});
  CHECK(bad_norm.code == 1);
  CHECK(ErrorOf(bad_norm)["error"] == "invalid_argument");

  auto help = Cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("score") != std::string::npos);
}

TEST_CASE("selftest") {
  auto r = Cli({"selftest"});
  CHECK(r.code == 0);
  CHECK(json::parse(r.out)["ok"] == true);
}
