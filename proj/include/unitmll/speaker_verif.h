#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "unitmll/corpus.h"
#include "unitmll/quantizer.h"

namespace unitmll {

inline constexpr std::size_t kDefaultPcaDim = 128;
inline constexpr std::size_t kDefaultUtterancesPerSpeaker = 10;

// Temporal mean of a T x E frame matrix; T must be at least 1.
Eigen::VectorXd PoolFrames(const FeatureMatrix& frames);
Eigen::VectorXd PoolFrames(const Eigen::MatrixXd& frames);

struct PcaModel {
  Eigen::VectorXd mean;                 // E
  Eigen::MatrixXd components;           // q x E, orthonormal rows
  Eigen::VectorXd explained_variance;   // q, descending

  std::size_t dim() const { return static_cast<std::size_t>(components.rows()); }
  Eigen::VectorXd Transform(const Eigen::VectorXd& v) const;
};

// PCA of the rows of `data` (N x E) via SVD of the centred matrix. Each
// component is signed so that its largest-magnitude coordinate is positive.
// Requires N >= 2 and q <= min(N - 1, E).
PcaModel PcaFit(const Eigen::MatrixXd& data, std::size_t q);

// Throws kInvalidArgument for a zero vector.
Eigen::VectorXd L2Normalize(const Eigen::VectorXd& v);

using SpeakerEmbeddings = std::map<std::string, std::vector<std::pair<std::string, Eigen::VectorXd>>>;

// Per-speaker roles after seeded selection.
struct SpeakerSplit {
  std::string prompt_utterance;
  std::string enrollment_utterance;
  std::vector<std::string> verification_utterances;  // excludes the enrollment one
};

// Picks utterances_per_speaker utterances per speaker by a seeded hash of
// their ids; the first becomes the prompt, the second the enrollment
// utterance. Applying it to an already-selected set reproduces the same
// roles.
std::map<std::string, SpeakerSplit> SelectSpeakerUtterances(
    const std::map<std::string, std::vector<std::string>>& ids_by_speaker,
    std::size_t utterances_per_speaker, std::uint64_t seed);

struct Trial {
  std::string claimed_speaker;
  std::string utterance_id;
  Eigen::VectorXd vector;  // unit norm
  bool is_target = false;
};

struct TrialSet {
  std::map<std::string, Eigen::VectorXd> enrollment;  // speaker -> unit vector
  std::map<std::string, SpeakerSplit> splits;
  std::vector<Trial> trials;
  // Verification utterances per speaker counting the enrollment one
  // (utterances_per_speaker - 1 each).
  std::size_t n_verification_utterances = 0;
  std::size_t n_target = 0;
  std::size_t n_impostor = 0;
};

// Target trials pair each speaker's enrollment vector with that speaker's
// non-enrollment verification utterances; impostor trials pair it with every
// other speaker's non-enrollment verification utterances.
TrialSet BuildTrials(const SpeakerEmbeddings& embeddings, std::size_t utterances_per_speaker,
                     std::uint64_t seed);

struct ScoredTrial {
  std::string claimed_speaker;
  std::string utterance_id;
  double score = 0.0;
  bool is_target = false;
};

// Cosine similarity of each trial against its claimed speaker.
std::vector<ScoredTrial> ScoreTrials(const TrialSet& trials);

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Sweeps thresholds over the sorted unique scores (accept when
// score >= threshold) and linearly interpolates the point where the false
// accept and false reject rates cross.
EerResult ComputeEer(std::span<const std::pair<double, bool>> scores);
EerResult ComputeEer(std::span<const ScoredTrial> trials);

Eigen::VectorXd CentroidPool(const TokenSequence& seq, const Codebook& codebook);
Eigen::VectorXd CentroidPoolBaseline(const TokenSequence& seq, const Codebook& codebook,
                                     const PcaModel& pca);
Eigen::VectorXd MfccPoolBaseline(const FeatureMatrix& mfcc);

struct SvOptions {
  std::size_t pca_dim = kDefaultPcaDim;  // 0 skips PCA (MFCC baseline)
  std::size_t utterances_per_speaker = kDefaultUtterancesPerSpeaker;
  std::uint64_t seed = 0;
};

struct SvReport {
  TrialSet trials;
  std::vector<ScoredTrial> scored;
  EerResult eer;
};

// Selection, joint PCA over all selected pooled embeddings, l2
// normalisation, cosine trials and EER.
SvReport RunSpeakerVerification(const SpeakerEmbeddings& pooled, const SvOptions& options);

}  // namespace unitmll
