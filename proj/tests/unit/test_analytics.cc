#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oracles.h"
#include "test_util.h"
#include "unitmll/analytics.h"
#include "unitmll/ngram_backend.h"

using namespace unitmll;
using testutil::KindOf;

namespace {

ScoreRecord Rec(std::string id, double sum, std::size_t t) { return {std::move(id), sum, t, t, 2 * t + 1}; }

MetricTable Table4Wer() {
  std::istringstream in("model_id,metric\nhubert,14.78\nwavlm,3.44\nxeus,3.34\n");
  return ParseMetricTable(in);
}

}  // namespace

TEST_CASE("pearson: affine maps give plus or minus one") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(2 + rng() % 50), y(x.size()), z(x.size());
    double a = 0.1 + std::abs(g(rng)) * 5, b = g(rng) * 10;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = g(rng);
      y[i] = a * x[i] + b;
      z[i] = -a * x[i] + b;
    }
    CHECK(std::abs(Pearson(x, y) - 1.0) <= 1e-12);
    CHECK(std::abs(Pearson(x, z) + 1.0) <= 1e-12);
  }
}

TEST_CASE("pearson: matches the oracle on random pairs") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> x(3 + rng() % 40), y(x.size());
    double rho = g(rng) * 0.5;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = g(rng) - 1.8;
      y[i] = rho * x[i] + g(rng) * 0.1 - 1.7;
    }
    CHECK(std::abs(Pearson(x, y) - static_cast<double>(oracle::Pearson(x, y))) <= 1e-12);
  }
}

TEST_CASE("pearson: degenerate input") {
  std::vector<double> one{1.0}, two{1.0, 2.0}, flat{3.0, 3.0}, three{1.0, 2.0, 3.0};
  CHECK(KindOf([&] { Pearson(one, one); }) == ErrorKind::kInsufficientData);
  CHECK(KindOf([&] { Pearson(two, flat); }) == ErrorKind::kUndefined);
  CHECK(KindOf([&] { Pearson(two, three); }) == ErrorKind::kDimensionMismatch);
  std::vector<double> bad{1.0, NAN};
  CHECK(KindOf([&] { Pearson(two, bad); }) == ErrorKind::kNonFinite);
}

TEST_CASE("pair scores keep the order of the first set") {
  std::vector<ScoreRecord> a{Rec("u3", -6, 3), Rec("u1", -2, 1), Rec("u2", -4, 2)};
  std::vector<ScoreRecord> b{Rec("u1", -3, 1), Rec("u3", -3, 3), Rec("u9", -1, 1)};
  auto p = PairScores(a, b);
  CHECK(p.labels == std::vector<std::string>{"u3", "u1"});
  CHECK(p.x == std::vector<double>{-2.0, -2.0});
  CHECK(p.y == std::vector<double>{-1.0, -3.0});
  std::ostringstream out;
  WritePairsCsv(out, p);
  CHECK(out.str() == "utterance_id,mll_a,mll_b\nu3,-2,-1\nu1,-2,-3\n");
}

TEST_CASE("layer report") {
  std::map<int, std::vector<ScoreRecord>> layers;
  layers[1] = {Rec("a", -2, 1), Rec("b", -4, 3)};  // -6 / 4
  layers[2] = {Rec("a", -1, 1), Rec("b", -1, 3)};  // -2 / 4
  auto r = MakeLayerReport("m", layers);
  CHECK(r.layer_mll.at(1) == -1.5);
  CHECK(r.layer_mll.at(2) == -0.5);
  CHECK(r.mean_mll == -1.0);
  std::ostringstream out;
  WriteLayerCsv(out, r);
  CHECK(out.str() == "layer,mll\n1,-1.5\n2,-0.5\n");
  auto j = ToJson(r);
  CHECK(j.at("layers").at("2") == -0.5);

  layers[4] = {Rec("a", -1, 1)};
  CHECK(KindOf([&] { MakeLayerReport("m", layers); }) == ErrorKind::kValidation);
  std::map<int, std::vector<ScoreRecord>> from_two{{2, {Rec("a", -1, 1)}}};
  CHECK(KindOf([&] { MakeLayerReport("m", from_two); }) == ErrorKind::kValidation);
  CHECK(KindOf([] { MakeLayerReport("m", {}); }) == ErrorKind::kInsufficientData);
  std::map<int, std::vector<ScoreRecord>> empty_layer{{0, {}}};
  CHECK(KindOf([&] { MakeLayerReport("m", empty_layer); }) == ErrorKind::kInsufficientData);
}

TEST_CASE("rank models on the published WER table") {
  std::map<std::string, double> mll{{"hubert", -1.780}, {"wavlm", -1.770}, {"xeus", -1.750}};
  auto r = RankModels(mll, Table4Wer());
  REQUIRE(r.agreement.has_value());
  CHECK(*r.agreement);
  CHECK_FALSE(r.has_ties);
  CHECK(r.metric_order == std::vector<std::string>{"xeus", "wavlm", "hubert"});
  CHECK(r.mll_order == r.metric_order);
  REQUIRE(r.pearson.has_value());
  CHECK(*r.pearson < 0.0);

  std::ostringstream out;
  WriteRankCsv(out, r);
  CHECK(out.str() ==
        "model_id,metric,mll,rank_metric,rank_mll\n"
        "hubert,14.78,-1.78,3,3\nwavlm,3.44,-1.77,2,2\nxeus,3.34,-1.75,1,1\n");
  auto j = ToJson(r);
  CHECK(j.at("agreement") == true);
}

TEST_CASE("rank models: disagreement, ties and direction") {
  auto wer = Table4Wer();
  std::map<std::string, double> swapped{{"hubert", -1.750}, {"wavlm", -1.770}, {"xeus", -1.780}};
  auto r = RankModels(swapped, wer);
  CHECK(r.agreement == std::optional<bool>(false));

  std::map<std::string, double> tied{{"hubert", -1.780}, {"wavlm", -1.750}, {"xeus", -1.750}};
  auto t = RankModels(tied, wer);
  CHECK(t.has_ties);
  CHECK_FALSE(t.agreement.has_value());
  CHECK(ToJson(t).at("agreement").is_null());

  // Higher-is-better metric reverses the expected order.
  std::map<std::string, double> mll{{"hubert", -1.780}, {"wavlm", -1.770}, {"xeus", -1.750}};
  CHECK(RankModels(mll, wer, false).agreement == std::optional<bool>(false));

  // Models missing from either side are dropped.
  std::map<std::string, double> one{{"hubert", -1.0}, {"other", -2.0}};
  CHECK(KindOf([&] { RankModels(one, wer); }) == ErrorKind::kInsufficientData);
}

TEST_CASE("context sweep: uniform backend is flat") {
  std::vector<UtteranceRecord> records;
  SequenceMap seqs;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 6; ++i) {
    std::string id = "c-" + std::to_string(i);
    records.push_back({id, "c", "s", static_cast<std::uint64_t>(i), std::nullopt, std::nullopt});
    std::vector<std::int32_t> v(1 + rng() % 5);
    for (auto& x : v) x = static_cast<std::int32_t>(rng() % 10);
    seqs[id] = Dedup({v, false, id});
  }
  UniformBackend uniform(11);
  SweepInputs in;
  in.records = &records;
  in.sequences = &seqs;
  in.prompt_template = &FindTemplate(BuiltinTemplates(), 3);
  in.backend = &uniform;
  for (const auto& r : records) in.targets.push_back(r.utterance_id);
  std::vector<std::size_t> sizes{0, 1, 2};
  auto rows = ContextSweep(in, sizes);
  REQUIRE(rows.size() == 3);
  for (const auto& row : rows) CHECK(row.mll == rows[0].mll);
  std::ostringstream out;
  WriteSweepCsv(out, rows);
  CHECK(out.str().rfind("context_size,mll\n0,", 0) == 0);

  in.targets.clear();
  CHECK(KindOf([&] { ContextSweep(in, sizes); }) == ErrorKind::kInsufficientData);
  in.backend = nullptr;
  CHECK(KindOf([&] { ContextSweep(in, sizes); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("format double round-trips") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 1000; ++i) {
    double v = u(rng);
    CHECK(std::stod(FormatDouble(v)) == v);
  }
  CHECK(FormatDouble(-1.5) == "-1.5");
}
