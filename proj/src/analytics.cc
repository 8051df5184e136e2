#include "unitmll/analytics.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "unitmll/error.h"

namespace unitmll {

std::string FormatDouble(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double Pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "paired series differ in length");
  }
  const std::size_t n = x.size();
  if (n < 2) throw Error(ErrorKind::kInsufficientData, "correlation needs at least two pairs");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw Error(ErrorKind::kNonFinite, "non-finite value in paired series");
    }
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error(ErrorKind::kUndefined, "correlation undefined for a constant series");
  }
  double r = sxy / (std::sqrt(sxx) * std::sqrt(syy));
  return std::clamp(r, -1.0, 1.0);
}

double Pearson(const PairedSeries& series) { return Pearson(series.x, series.y); }

PairedSeries PairScores(std::span<const ScoreRecord> a, std::span<const ScoreRecord> b,
                        Normalization mode) {
  std::unordered_map<std::string, const ScoreRecord*> by_id;
  for (const auto& r : b) by_id[r.utterance_id] = &r;
  PairedSeries out;
  for (const auto& r : a) {
    auto it = by_id.find(r.utterance_id);
    if (it == by_id.end()) continue;
    out.labels.push_back(r.utterance_id);
    out.x.push_back(PerUtteranceMll(r, mode));
    out.y.push_back(PerUtteranceMll(*it->second, mode));
  }
  return out;
}

LayerReport MakeLayerReport(const std::string& model_id,
                            const std::map<int, std::vector<ScoreRecord>>& per_layer,
                            Normalization mode) {
  if (per_layer.empty()) throw Error(ErrorKind::kInsufficientData, "no layers to report");
  int first = per_layer.begin()->first;
  if (first != 0 && first != 1) {
    throw Error(ErrorKind::kValidation, "layer indices must start at 0 or 1");
  }
  int expected = first;
  LayerReport report;
  report.model_id = model_id;
  double total = 0.0;
  for (const auto& [layer, records] : per_layer) {
    if (layer != expected++) {
      throw Error(ErrorKind::kValidation, "layer indices are not contiguous (missing layer " +
                                              std::to_string(expected - 1) + ")");
    }
    if (records.empty()) {
      throw Error(ErrorKind::kInsufficientData, "layer " + std::to_string(layer) + " is empty");
    }
    double mll = CorpusMll(records, mode);
    report.layer_mll[layer] = mll;
    total += mll;
  }
  report.mean_mll = total / static_cast<double>(per_layer.size());
  return report;
}

RankReport RankModels(const std::map<std::string, double>& mll_by_model,
                      const MetricTable& metrics, bool metric_lower_is_better) {
  RankReport report;
  for (const auto& [id, mll] : mll_by_model) {
    auto it = metrics.find(id);
    if (it == metrics.end()) continue;
    report.rows.push_back({id, it->second, mll, 0, 0});
  }
  if (report.rows.size() < 2) {
    throw Error(ErrorKind::kInsufficientData, "ranking needs at least two models with both values");
  }

  auto rank_by = [&](auto better) {
    std::vector<std::size_t> idx(report.rows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // Rows are already in model-id order, so a stable sort breaks ties
    // lexicographically.
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return better(report.rows[a], report.rows[b]);
    });
    return idx;
  };
  auto metric_idx = rank_by([&](const RankRow& a, const RankRow& b) {
    return metric_lower_is_better ? a.metric < b.metric : a.metric > b.metric;
  });
  auto mll_idx = rank_by([](const RankRow& a, const RankRow& b) { return a.mll > b.mll; });
  for (std::size_t r = 0; r < metric_idx.size(); ++r) {
    report.rows[metric_idx[r]].rank_metric = r + 1;
    report.metric_order.push_back(report.rows[metric_idx[r]].model_id);
    report.rows[mll_idx[r]].rank_mll = r + 1;
    report.mll_order.push_back(report.rows[mll_idx[r]].model_id);
  }

  std::set<double> metric_values, mll_values;
  for (const auto& row : report.rows) {
    metric_values.insert(row.metric);
    mll_values.insert(row.mll);
  }
  report.has_ties =
      metric_values.size() != report.rows.size() || mll_values.size() != report.rows.size();
  if (!report.has_ties) report.agreement = report.metric_order == report.mll_order;

  std::vector<double> xs, ys;
  for (const auto& row : report.rows) {
    xs.push_back(row.metric);
    ys.push_back(row.mll);
  }
  try {
    report.pearson = Pearson(xs, ys);
  } catch (const Error&) {
    report.pearson.reset();
  }
  return report;
}

std::vector<SweepRow> ContextSweep(const SweepInputs& in, std::span<const std::size_t> sizes) {
  if (!in.records || !in.sequences || !in.prompt_template || !in.backend) {
    throw Error(ErrorKind::kInvalidArgument, "context sweep inputs are incomplete");
  }
  if (in.targets.empty()) throw Error(ErrorKind::kInsufficientData, "context sweep has no targets");
  std::vector<SweepRow> rows;
  for (std::size_t c : sizes) {
    std::vector<RenderedPrompt> prompts;
    std::vector<TokenSequence> seqs;
    for (const auto& id : in.targets) {
      prompts.push_back(BuildP1(*in.records, *in.sequences, id, *in.prompt_template, c));
      seqs.push_back(in.sequences->at(id));
    }
    ScoringOptions opts;
    opts.jobs = in.jobs;
    opts.cache = in.cache;
    auto records = ScoreAll(*in.backend, prompts, seqs, opts);
    rows.push_back({c, CorpusMll(records, in.mode)});
  }
  return rows;
}

void WriteLayerCsv(std::ostream& out, const LayerReport& report) {
  out << "layer,mll\n";
  for (const auto& [layer, mll] : report.layer_mll) out << layer << ',' << FormatDouble(mll) << '\n';
}

void WriteSweepCsv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "context_size,mll\n";
  for (const auto& r : rows) out << r.context_size << ',' << FormatDouble(r.mll) << '\n';
}

void WriteRankCsv(std::ostream& out, const RankReport& report) {
  out << "model_id,metric,mll,rank_metric,rank_mll\n";
  for (const auto& r : report.rows) {
    out << r.model_id << ',' << FormatDouble(r.metric) << ',' << FormatDouble(r.mll) << ','
        << r.rank_metric << ',' << r.rank_mll << '\n';
  }
}

void WriteAblationCsv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "char_limit,mll\n";
  for (const auto& r : rows) out << ToString(r.limit) << ',' << FormatDouble(r.mll) << '\n';
}

void WritePairsCsv(std::ostream& out, const PairedSeries& series) {
  out << "utterance_id,mll_a,mll_b\n";
  for (std::size_t i = 0; i < series.labels.size(); ++i) {
    out << series.labels[i] << ',' << FormatDouble(series.x[i]) << ','
        << FormatDouble(series.y[i]) << '\n';
  }
}

nlohmann::json ToJson(const LayerReport& report) {
  nlohmann::json layers = nlohmann::json::object();
  for (const auto& [layer, mll] : report.layer_mll) layers[std::to_string(layer)] = mll;
  return {{"model_id", report.model_id}, {"layers", layers}, {"mean_mll", report.mean_mll}};
}

nlohmann::json ToJson(const RankReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"model_id", r.model_id},
                    {"metric", r.metric},
                    {"mll", r.mll},
                    {"rank_metric", r.rank_metric},
                    {"rank_mll", r.rank_mll}});
  }
  nlohmann::json j = {{"rows", rows},
                      {"metric_order", report.metric_order},
                      {"mll_order", report.mll_order},
                      {"has_ties", report.has_ties}};
  j["agreement"] = report.agreement ? nlohmann::json(*report.agreement) : nlohmann::json();
  j["pearson"] = report.pearson ? nlohmann::json(*report.pearson) : nlohmann::json();
  return j;
}

}  // namespace unitmll
