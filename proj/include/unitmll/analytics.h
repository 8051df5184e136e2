#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "unitmll/corpus.h"
#include "unitmll/promptgen.h"
#include "unitmll/scoring.h"

namespace unitmll {

struct PairedSeries {
  std::vector<std::string> labels;
  std::vector<double> x;
  std::vector<double> y;
};

// Product-moment correlation. Throws kInsufficientData below two points and
// kUndefined when either side has zero variance.
double Pearson(std::span<const double> x, std::span<const double> y);
double Pearson(const PairedSeries& series);

// Per-utterance MLLs of utterances present in both score sets, in the order
// of `a`.
PairedSeries PairScores(std::span<const ScoreRecord> a, std::span<const ScoreRecord> b,
                        Normalization mode = Normalization::kPerDiscreteToken);

struct LayerReport {
  std::string model_id;
  std::map<int, double> layer_mll;
  double mean_mll = 0.0;
};

// Corpus MLL per layer and their unweighted mean. Layers must be contiguous
// from 0 or from 1.
LayerReport MakeLayerReport(const std::string& model_id,
                            const std::map<int, std::vector<ScoreRecord>>& per_layer,
                            Normalization mode = Normalization::kPerDiscreteToken);

struct RankRow {
  std::string model_id;
  double metric = 0.0;
  double mll = 0.0;
  std::size_t rank_metric = 0;  // 1 = best metric
  std::size_t rank_mll = 0;     // 1 = highest MLL
};

struct RankReport {
  std::vector<RankRow> rows;             // sorted by model id
  std::vector<std::string> metric_order;  // best metric first
  std::vector<std::string> mll_order;     // highest MLL first
  bool has_ties = false;
  // Set only without ties: does MLL order the models as the metric does?
  std::optional<bool> agreement;
  // Model-level correlation, informational; absent under zero variance.
  std::optional<double> pearson;
};

RankReport RankModels(const std::map<std::string, double>& mll_by_model,
                      const MetricTable& metrics, bool metric_lower_is_better = true);

struct SweepRow {
  std::size_t context_size = 0;
  double mll = 0.0;
};

struct SweepInputs {
  const std::vector<UtteranceRecord>* records = nullptr;
  const SequenceMap* sequences = nullptr;
  const PromptTemplate* prompt_template = nullptr;
  const ScorerBackend* backend = nullptr;
  std::vector<std::string> targets;
  Normalization mode = Normalization::kPerDiscreteToken;
  std::size_t jobs = 1;
  ScoreCache* cache = nullptr;
};

// Corpus MLL of the targets under P1 prompts of each context size.
std::vector<SweepRow> ContextSweep(const SweepInputs& inputs, std::span<const std::size_t> sizes);

void WriteLayerCsv(std::ostream& out, const LayerReport& report);
void WriteSweepCsv(std::ostream& out, std::span<const SweepRow> rows);
void WriteRankCsv(std::ostream& out, const RankReport& report);
void WriteAblationCsv(std::ostream& out, std::span<const AblationRow> rows);
void WritePairsCsv(std::ostream& out, const PairedSeries& series);

nlohmann::json ToJson(const LayerReport& report);
nlohmann::json ToJson(const RankReport& report);

// Shortest decimal that parses back to the same double.
std::string FormatDouble(double v);

}  // namespace unitmll
