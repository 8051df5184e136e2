#include "unitmll/quantizer.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "parallel.h"
#include "unitmll/error.h"

namespace unitmll {

namespace {

constexpr std::size_t kChunkFrames = 4096;

double SquaredDistance(std::span<const float> x, std::span<const double> c) {
  double acc = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    double diff = static_cast<double>(x[d]) - c[d];
    acc += diff * diff;
  }
  return acc;
}

struct Assignment {
  std::vector<std::int32_t> labels;
  std::vector<double> sq_dist;
  double inertia = 0.0;
};

Assignment AssignAll(const std::vector<double>& centroids, std::size_t k, std::size_t dim,
                     const FeatureMatrix& frames, std::size_t jobs) {
  const std::size_t n = frames.rows();
  Assignment out;
  out.labels.resize(n);
  out.sq_dist.resize(n);
  const std::size_t num_chunks = (n + kChunkFrames - 1) / kChunkFrames;
  std::vector<double> partial(num_chunks, 0.0);
  internal::ForEachChunk(n, kChunkFrames, jobs, [&](std::size_t c, std::size_t b, std::size_t e) {
    double sum = 0.0;
    for (std::size_t t = b; t < e; ++t) {
      auto x = frames.row(t);
      double best = std::numeric_limits<double>::infinity();
      std::int32_t best_k = 0;
      for (std::size_t j = 0; j < k; ++j) {
        double d = SquaredDistance(x, {centroids.data() + j * dim, dim});
        if (d < best) {
          best = d;
          best_k = static_cast<std::int32_t>(j);
        }
      }
      out.labels[t] = best_k;
      out.sq_dist[t] = best;
      sum += best;
    }
    partial[c] = sum;
  });
  for (double p : partial) out.inertia += p;
  return out;
}

void CheckFinite(const FeatureMatrix& m) {
  for (float v : m.values()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kNonFinite, "non-finite training frame");
  }
}

std::vector<double> KMeansPlusPlus(const FeatureMatrix& frames, std::size_t k,
                                   std::mt19937_64& rng, std::size_t jobs) {
  const std::size_t n = frames.rows();
  const std::size_t dim = frames.cols();
  std::vector<double> centroids(k * dim);
  auto set_centroid = [&](std::size_t j, std::size_t frame) {
    auto x = frames.row(frame);
    std::copy(x.begin(), x.end(), centroids.begin() + static_cast<std::ptrdiff_t>(j * dim));
  };

  set_centroid(0, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t j = 1; j < k; ++j) {
    std::span<const double> last(centroids.data() + (j - 1) * dim, dim);
    internal::ForEachChunk(n, kChunkFrames, jobs, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t t = b; t < e; ++t) {
        min_d2[t] = std::min(min_d2[t], SquaredDistance(frames.row(t), last));
      }
    });
    double total = 0.0;
    for (double d : min_d2) total += d;

    std::size_t pick = 0;
    if (total > 0.0) {
      double r = unit(rng) * total;
      double acc = 0.0;
      // Rounding can leave r >= acc; pick then stays on the last candidate.
      for (std::size_t t = 0; t < n; ++t) {
        if (min_d2[t] <= 0.0) continue;
        acc += min_d2[t];
        pick = t;
        if (r < acc) break;
      }
    } else {
      // Every frame coincides with a chosen centroid.
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    set_centroid(j, pick);
  }
  return centroids;
}

}  // namespace

double Inertia(const Codebook& codebook, const FeatureMatrix& frames) {
  if (frames.cols() != codebook.dim) {
    throw Error(ErrorKind::kDimensionMismatch, "frame dimension differs from codebook");
  }
  return AssignAll(codebook.centroids, codebook.num_clusters, codebook.dim, frames, 1).inertia;
}

Codebook KMeansTrain(const FeatureMatrix& frames, const KMeansOptions& options) {
  const std::size_t n = frames.rows();
  const std::size_t dim = frames.cols();
  const std::size_t k = options.num_clusters;
  if (k == 0) throw Error(ErrorKind::kInvalidArgument, "K must be positive");
  if (options.max_iters == 0) throw Error(ErrorKind::kInvalidArgument, "max_iters must be positive");
  if (!(options.tol >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "tol must be non-negative");
  if (n < k) {
    throw Error(ErrorKind::kInsufficientData, "k-means needs at least K=" + std::to_string(k) +
                                                  " frames, got " + std::to_string(n));
  }
  CheckFinite(frames);

  std::mt19937_64 rng(options.seed);
  Codebook cb;
  cb.num_clusters = k;
  cb.dim = dim;
  cb.seed = options.seed;
  cb.centroids = KMeansPlusPlus(frames, k, rng, options.jobs);

  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    Assignment a = AssignAll(cb.centroids, k, dim, frames, options.jobs);
    cb.inertia_trace.push_back(a.inertia);

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t t = 0; t < n; ++t) {
      auto x = frames.row(t);
      double* s = sums.data() + static_cast<std::size_t>(a.labels[t]) * dim;
      for (std::size_t d = 0; d < dim; ++d) s[d] += x[d];
      ++counts[static_cast<std::size_t>(a.labels[t])];
    }

    std::vector<double> updated(k * dim);
    std::vector<std::size_t> empty;
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) {
        empty.push_back(j);
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d) {
        updated[j * dim + d] = sums[j * dim + d] / static_cast<double>(counts[j]);
      }
    }
    if (!empty.empty()) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return a.sq_dist[x] > a.sq_dist[y]; });
      for (std::size_t i = 0; i < empty.size(); ++i) {
        auto x = frames.row(order[i]);
        std::copy(x.begin(), x.end(),
                  updated.begin() + static_cast<std::ptrdiff_t>(empty[i] * dim));
      }
      spdlog::debug("k-means iteration {}: reseeded {} empty clusters", iter, empty.size());
    }

    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      double d2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        double diff = updated[j * dim + d] - cb.centroids[j * dim + d];
        d2 += diff * diff;
      }
      shift = std::max(shift, std::sqrt(d2));
    }
    cb.centroids = std::move(updated);
    ++cb.iterations_run;
    spdlog::debug("k-means iteration {}: inertia {:.6g}, shift {:.3g}", iter, a.inertia, shift);
    if (shift < options.tol) break;
  }

  cb.final_inertia = AssignAll(cb.centroids, k, dim, frames, options.jobs).inertia;
  cb.inertia_trace.push_back(cb.final_inertia);
  return cb;
}

TokenSequence Assign(const Codebook& codebook, const FeatureMatrix& features, std::size_t jobs) {
  if (features.cols() != codebook.dim) {
    throw Error(ErrorKind::kDimensionMismatch,
                "feature dimension " + std::to_string(features.cols()) +
                    " differs from codebook dimension " + std::to_string(codebook.dim));
  }
  TokenSequence seq;
  seq.dedup = false;
  if (features.empty()) return seq;
  seq.tokens = AssignAll(codebook.centroids, codebook.num_clusters, codebook.dim, features, jobs)
                   .labels;
  return seq;
}

TokenSequence Dedup(const TokenSequence& seq) {
  TokenSequence out;
  out.dedup = true;
  out.source_utterance = seq.source_utterance;
  out.tokens.reserve(seq.tokens.size());
  for (std::int32_t t : seq.tokens) {
    if (out.tokens.empty() || out.tokens.back() != t) out.tokens.push_back(t);
  }
  return out;
}

FeatureMatrix ConcatFrames(std::span<const FeatureMatrix> parts) {
  if (parts.empty()) throw Error(ErrorKind::kInsufficientData, "no feature matrices to pool");
  const std::size_t dim = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != dim) {
      throw Error(ErrorKind::kDimensionMismatch, "feature matrices disagree on D");
    }
    rows += p.rows();
  }
  std::vector<float> values;
  values.reserve(rows * dim);
  for (const auto& p : parts) values.insert(values.end(), p.values().begin(), p.values().end());
  return FeatureMatrix(rows, dim, std::move(values), parts.front().frame_rate_hz());
}

std::vector<std::size_t> SampleUtterances(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "sample fraction must lie in (0, 1]");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (n == 0) return idx;
  auto m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  m = std::clamp<std::size_t>(m, 1, n);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

FeatureMatrix CentroidMatrix(const Codebook& codebook) {
  std::vector<float> values(codebook.centroids.begin(), codebook.centroids.end());
  return FeatureMatrix(codebook.num_clusters, codebook.dim, std::move(values), 1.0f);
}

std::filesystem::path CodebookSidecarPath(const std::filesystem::path& path) {
  auto sidecar = path;
  sidecar.replace_extension(".json");
  return sidecar;
}

void SaveCodebook(const std::filesystem::path& path, const Codebook& codebook) {
  SaveFeatures(path, CentroidMatrix(codebook));
  nlohmann::json meta = {{"K", codebook.num_clusters},
                         {"D", codebook.dim},
                         {"seed", codebook.seed},
                         {"iterations_run", codebook.iterations_run},
                         {"final_inertia", codebook.final_inertia}};
  std::ofstream out(CodebookSidecarPath(path));
  if (!out) throw Error(ErrorKind::kIo, "cannot write codebook sidecar");
  out << meta.dump(2) << '\n';
}

Codebook LoadCodebook(const std::filesystem::path& path) {
  FeatureMatrix m = LoadFeatures(path);
  std::ifstream in(CodebookSidecarPath(path));
  if (!in) throw Error(ErrorKind::kIo, "missing codebook sidecar for " + path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("codebook sidecar: ") + e.what());
  }
  Codebook cb;
  try {
    cb.num_clusters = meta.at("K").get<std::size_t>();
    cb.dim = meta.at("D").get<std::size_t>();
    cb.seed = meta.at("seed").get<std::uint64_t>();
    cb.iterations_run = meta.at("iterations_run").get<std::size_t>();
    cb.final_inertia = meta.at("final_inertia").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("codebook sidecar: ") + e.what());
  }
  if (cb.num_clusters != m.rows() || cb.dim != m.cols() || cb.num_clusters == 0) {
    throw Error(ErrorKind::kValidation, "codebook sidecar disagrees with centroid matrix shape");
  }
  cb.centroids.assign(m.values().begin(), m.values().end());
  return cb;
}

}  // namespace unitmll
