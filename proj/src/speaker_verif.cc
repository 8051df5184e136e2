#include "unitmll/speaker_verif.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unitmll/error.h"

namespace unitmll {

namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t SeededHash(std::uint64_t seed, const std::string& id) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return SplitMix64(h ^ SplitMix64(seed));
}

}  // namespace

Eigen::VectorXd PoolFrames(const Eigen::MatrixXd& frames) {
  if (frames.rows() == 0) throw Error(ErrorKind::kInsufficientData, "cannot pool zero frames");
  return frames.colwise().mean().transpose();
}

Eigen::VectorXd PoolFrames(const FeatureMatrix& frames) {
  if (frames.rows() == 0) throw Error(ErrorKind::kInsufficientData, "cannot pool zero frames");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(frames.cols()));
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    auto row = frames.row(t);
    for (std::size_t d = 0; d < row.size(); ++d) sum[static_cast<Eigen::Index>(d)] += row[d];
  }
  return sum / static_cast<double>(frames.rows());
}

Eigen::VectorXd PcaModel::Transform(const Eigen::VectorXd& v) const {
  if (v.size() != mean.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "PCA input dimension mismatch");
  }
  return components * (v - mean);
}

PcaModel PcaFit(const Eigen::MatrixXd& data, std::size_t q) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto e = static_cast<std::size_t>(data.cols());
  if (n < 2) throw Error(ErrorKind::kInsufficientData, "PCA needs at least two samples");
  if (q == 0 || q > std::min(n - 1, e)) {
    throw Error(ErrorKind::kInvalidArgument,
                "PCA dimension " + std::to_string(q) + " exceeds min(N-1, E) = " +
                    std::to_string(std::min(n - 1, e)));
  }
  if (!data.allFinite()) throw Error(ErrorKind::kNonFinite, "PCA input has non-finite values");

  PcaModel model;
  model.mean = data.colwise().mean().transpose();
  Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);

  const auto qi = static_cast<Eigen::Index>(q);
  model.components = svd.matrixV().leftCols(qi).transpose();
  model.explained_variance =
      svd.singularValues().head(qi).array().square() / static_cast<double>(n - 1);

  for (Eigen::Index k = 0; k < qi; ++k) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index j = 0; j < model.components.cols(); ++j) {
      double mag = std::abs(model.components(k, j));
      if (mag > best) {
        best = mag;
        arg = j;
      }
    }
    if (model.components(k, arg) < 0.0) model.components.row(k) *= -1.0;
  }
  return model;
}

Eigen::VectorXd L2Normalize(const Eigen::VectorXd& v) {
  double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorKind::kInvalidArgument, "cannot normalise a zero or non-finite vector");
  }
  return v / norm;
}

std::map<std::string, SpeakerSplit> SelectSpeakerUtterances(
    const std::map<std::string, std::vector<std::string>>& ids_by_speaker,
    std::size_t utterances_per_speaker, std::uint64_t seed) {
  if (ids_by_speaker.size() < 2) {
    throw Error(ErrorKind::kInsufficientData, "speaker verification needs at least two speakers");
  }
  if (utterances_per_speaker < 3) {
    throw Error(ErrorKind::kInvalidArgument,
                "each speaker needs a prompt, an enrollment and a verification utterance");
  }
  std::map<std::string, SpeakerSplit> out;
  for (const auto& [speaker, ids] : ids_by_speaker) {
    if (ids.size() < utterances_per_speaker) {
      throw Error(ErrorKind::kInsufficientData,
                  "speaker '" + speaker + "' has " + std::to_string(ids.size()) +
                      " utterances, needs " + std::to_string(utterances_per_speaker));
    }
    std::vector<std::pair<std::uint64_t, std::string>> ranked;
    for (const auto& id : ids) ranked.emplace_back(SeededHash(seed, id), id);
    std::sort(ranked.begin(), ranked.end());
    if (std::adjacent_find(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
          return a.second == b.second;
        }) != ranked.end()) {
      throw Error(ErrorKind::kValidation, "duplicate utterance id for speaker '" + speaker + "'");
    }
    SpeakerSplit split;
    split.prompt_utterance = ranked[0].second;
    split.enrollment_utterance = ranked[1].second;
    for (std::size_t i = 2; i < utterances_per_speaker; ++i) {
      split.verification_utterances.push_back(ranked[i].second);
    }
    out.emplace(speaker, std::move(split));
  }
  return out;
}

TrialSet BuildTrials(const SpeakerEmbeddings& embeddings, std::size_t utterances_per_speaker,
                     std::uint64_t seed) {
  std::map<std::string, std::vector<std::string>> ids;
  std::map<std::string, const Eigen::VectorXd*> vectors;
  for (const auto& [speaker, utts] : embeddings) {
    for (const auto& [id, vec] : utts) {
      ids[speaker].push_back(id);
      if (!vectors.emplace(id, &vec).second) {
        throw Error(ErrorKind::kValidation, "utterance '" + id + "' appears more than once");
      }
    }
  }

  TrialSet set;
  set.splits = SelectSpeakerUtterances(ids, utterances_per_speaker, seed);
  for (const auto& [speaker, split] : set.splits) {
    set.enrollment[speaker] = L2Normalize(*vectors.at(split.enrollment_utterance));
    set.n_verification_utterances += split.verification_utterances.size() + 1;
  }
  for (const auto& [claimed, enrollment] : set.enrollment) {
    (void)enrollment;
    for (const auto& [owner, split] : set.splits) {
      for (const auto& id : split.verification_utterances) {
        Trial t{claimed, id, L2Normalize(*vectors.at(id)), owner == claimed};
        (t.is_target ? set.n_target : set.n_impostor)++;
        set.trials.push_back(std::move(t));
      }
    }
  }
  return set;
}

std::vector<ScoredTrial> ScoreTrials(const TrialSet& trials) {
  std::vector<ScoredTrial> out;
  out.reserve(trials.trials.size());
  for (const auto& t : trials.trials) {
    const auto& enroll = trials.enrollment.at(t.claimed_speaker);
    if (enroll.size() != t.vector.size()) {
      throw Error(ErrorKind::kDimensionMismatch, "trial and enrollment dimensions differ");
    }
    double score = std::clamp(enroll.dot(t.vector), -1.0, 1.0);
    out.push_back({t.claimed_speaker, t.utterance_id, score, t.is_target});
  }
  return out;
}

EerResult ComputeEer(std::span<const std::pair<double, bool>> scores) {
  std::vector<double> targets, impostors;
  for (const auto& [s, is_target] : scores) {
    if (!std::isfinite(s)) throw Error(ErrorKind::kNonFinite, "non-finite trial score");
    (is_target ? targets : impostors).push_back(s);
  }
  if (targets.empty() || impostors.empty()) {
    throw Error(ErrorKind::kInsufficientData, "EER needs both target and impostor trials");
  }
  std::sort(targets.begin(), targets.end());
  std::sort(impostors.begin(), impostors.end());
  std::vector<double> thresholds;
  thresholds.reserve(scores.size() + 1);
  for (const auto& p : scores) thresholds.push_back(p.first);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const double nt = static_cast<double>(targets.size());
  const double ni = static_cast<double>(impostors.size());
  auto rates = [&](double th) {
    // Accept when score >= th.
    auto rejected = std::lower_bound(targets.begin(), targets.end(), th) - targets.begin();
    auto accepted = impostors.end() - std::lower_bound(impostors.begin(), impostors.end(), th);
    return std::pair{static_cast<double>(accepted) / ni, static_cast<double>(rejected) / nt};
  };

  auto [far_prev, frr_prev] = rates(thresholds.front());
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    auto [far, frr] = rates(thresholds[i]);
    double d_prev = far_prev - frr_prev;
    double d = far - frr;
    if (d_prev == 0.0) return {far_prev, thresholds[i - 1]};
    if (d <= 0.0) {
      double t = d_prev / (d_prev - d);
      double eer = far_prev + t * (far - far_prev);
      double th = std::isinf(thresholds[i])
                      ? thresholds[i - 1]
                      : thresholds[i - 1] + t * (thresholds[i] - thresholds[i - 1]);
      if (d == 0.0) return {far, std::isinf(thresholds[i]) ? thresholds[i - 1] : thresholds[i]};
      return {eer, th};
    }
    far_prev = far;
    frr_prev = frr;
  }
  // Unreachable: the final +inf threshold always gives far - frr = -1.
  return {far_prev, thresholds.back()};
}

EerResult ComputeEer(std::span<const ScoredTrial> trials) {
  std::vector<std::pair<double, bool>> pairs;
  pairs.reserve(trials.size());
  for (const auto& t : trials) pairs.emplace_back(t.score, t.is_target);
  return ComputeEer(pairs);
}

Eigen::VectorXd CentroidPool(const TokenSequence& seq, const Codebook& codebook) {
  if (seq.tokens.empty()) throw Error(ErrorKind::kInsufficientData, "cannot pool an empty sequence");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(codebook.dim));
  for (std::int32_t tok : seq.tokens) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= codebook.num_clusters) {
      throw Error(ErrorKind::kInvalidArgument, "token " + std::to_string(tok) + " outside codebook");
    }
    auto c = codebook.centroid(static_cast<std::size_t>(tok));
    for (std::size_t d = 0; d < c.size(); ++d) sum[static_cast<Eigen::Index>(d)] += c[d];
  }
  return sum / static_cast<double>(seq.tokens.size());
}

Eigen::VectorXd CentroidPoolBaseline(const TokenSequence& seq, const Codebook& codebook,
                                     const PcaModel& pca) {
  return L2Normalize(pca.Transform(CentroidPool(seq, codebook)));
}

Eigen::VectorXd MfccPoolBaseline(const FeatureMatrix& mfcc) { return PoolFrames(mfcc); }

SvReport RunSpeakerVerification(const SpeakerEmbeddings& pooled, const SvOptions& options) {
  std::map<std::string, std::vector<std::string>> ids;
  std::map<std::string, const Eigen::VectorXd*> vectors;
  for (const auto& [speaker, utts] : pooled) {
    for (const auto& [id, vec] : utts) {
      ids[speaker].push_back(id);
      vectors[id] = &vec;
    }
  }
  auto splits = SelectSpeakerUtterances(ids, options.utterances_per_speaker, options.seed);

  // Only the selected utterances go forward (and into the PCA fit).
  SpeakerEmbeddings selected;
  for (const auto& [speaker, split] : splits) {
    auto& dst = selected[speaker];
    dst.emplace_back(split.prompt_utterance, *vectors.at(split.prompt_utterance));
    dst.emplace_back(split.enrollment_utterance, *vectors.at(split.enrollment_utterance));
    for (const auto& id : split.verification_utterances) dst.emplace_back(id, *vectors.at(id));
  }

  if (options.pca_dim > 0) {
    std::size_t n = 0;
    Eigen::Index dim = selected.begin()->second.front().second.size();
    for (const auto& [speaker, utts] : selected) n += utts.size();
    Eigen::MatrixXd data(static_cast<Eigen::Index>(n), dim);
    Eigen::Index row = 0;
    for (const auto& [speaker, utts] : selected) {
      for (const auto& [id, vec] : utts) {
        if (vec.size() != dim) {
          throw Error(ErrorKind::kDimensionMismatch, "embedding dimensions differ across utterances");
        }
        data.row(row++) = vec.transpose();
      }
    }
    PcaModel pca = PcaFit(data, options.pca_dim);
    for (auto& [speaker, utts] : selected) {
      for (auto& [id, vec] : utts) vec = L2Normalize(pca.Transform(vec));
    }
  }

  SvReport report;
  report.trials = BuildTrials(selected, options.utterances_per_speaker, options.seed);
  report.scored = ScoreTrials(report.trials);
  report.eer = ComputeEer(report.scored);
  return report;
}

}  // namespace unitmll
