#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unitmll/corpus.h"

namespace unitmll {

inline constexpr std::size_t kDefaultNumClusters = 500;

struct KMeansOptions {
  std::size_t num_clusters = kDefaultNumClusters;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  // Stop once the largest Euclidean centroid displacement drops below this.
  double tol = 1e-4;
  // 0 = hardware concurrency. Results do not depend on the value.
  std::size_t jobs = 0;
};

// K x D centroid set. Centroids are kept in double; the on-disk form is an
// FMAT (float32) matrix plus a JSON sidecar, so a reloaded codebook is the
// float32 rounding of the trained one.
struct Codebook {
  std::size_t num_clusters = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // row-major K x D
  std::uint64_t seed = 0;
  std::size_t iterations_run = 0;
  double final_inertia = 0.0;
  // Inertia at every assignment step, the last entry being final_inertia.
  std::vector<double> inertia_trace;

  std::span<const double> centroid(std::size_t k) const {
    return {centroids.data() + k * dim, dim};
  }
};

struct TokenSequence {
  std::vector<std::int32_t> tokens;
  bool dedup = false;
  std::string source_utterance;

  bool operator==(const TokenSequence&) const = default;
};

// k-means++ seeding followed by Lloyd iterations. Throws kInsufficientData
// when frames.rows() < K. Empty clusters are reseeded to the frame farthest
// from its current centroid, so K stays fixed.
Codebook KMeansTrain(const FeatureMatrix& frames, const KMeansOptions& options);

// Nearest centroid per frame, lowest index on ties.
TokenSequence Assign(const Codebook& codebook, const FeatureMatrix& features,
                     std::size_t jobs = 1);

// Keeps the first element of every run of equal tokens.
TokenSequence Dedup(const TokenSequence& seq);

double Inertia(const Codebook& codebook, const FeatureMatrix& frames);

// Stacks matrices that share D into one frame pool.
FeatureMatrix ConcatFrames(std::span<const FeatureMatrix> parts);

// Seeded uniform sample of ceil(fraction * n) utterance indices (at least one
// when n > 0), returned in ascending order.
std::vector<std::size_t> SampleUtterances(std::size_t n, double fraction, std::uint64_t seed);

FeatureMatrix CentroidMatrix(const Codebook& codebook);

// Writes <path> (FMAT) and <path with .json extension> (sidecar).
void SaveCodebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook LoadCodebook(const std::filesystem::path& path);
std::filesystem::path CodebookSidecarPath(const std::filesystem::path& path);

}  // namespace unitmll
