#pragma once

// Reference implementations used only by tests. Each one is written
// independently of the library code it checks: simple, slow, and in long
// double where precision matters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

inline std::vector<std::int32_t> Dedup(const std::vector<std::int32_t>& in) {
  std::vector<std::int32_t> out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (i == 0 || in[i] != in[i - 1]) out.push_back(in[i]);
  }
  return out;
}

// Lowest-index nearest centroid by a full scan. `centroids` is row-major K x D.
inline std::int32_t Nearest(const std::vector<double>& centroids, std::size_t dim,
                            const float* frame) {
  std::size_t k_count = centroids.size() / dim;
  std::int32_t best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < k_count; ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      double diff = static_cast<double>(frame[j]) - centroids[k * dim + j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::int32_t>(k);
    }
  }
  return best;
}

// Minimum within-cluster sum of squares over every split of the points into
// two non-empty groups.
inline long double BestTwoPartition(const std::vector<std::vector<double>>& pts) {
  const std::size_t n = pts.size();
  const std::size_t d = pts.front().size();
  long double best = std::numeric_limits<long double>::infinity();
  for (std::uint64_t mask = 1; mask + 1 < (1ull << n); ++mask) {
    long double sse = 0.0L;
    for (int side = 0; side < 2; ++side) {
      std::vector<long double> mean(d, 0.0L);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1u) != static_cast<unsigned>(side)) continue;
        ++count;
        for (std::size_t j = 0; j < d; ++j) mean[j] += pts[i][j];
      }
      for (auto& m : mean) m /= static_cast<long double>(count);
      for (std::size_t i = 0; i < n; ++i) {
        if (((mask >> i) & 1u) != static_cast<unsigned>(side)) continue;
        for (std::size_t j = 0; j < d; ++j) sse += (pts[i][j] - mean[j]) * (pts[i][j] - mean[j]);
      }
    }
    best = std::min(best, sse);
  }
  return best;
}

// Additively smoothed character n-gram probability, computed by rescanning
// the training texts for every query.
class NgramChainRule {
 public:
  NgramChainRule(std::vector<std::string> texts, std::size_t order, double alpha,
                 const std::string& base_alphabet)
      : texts_(std::move(texts)), order_(order), alpha_(alpha) {
    std::set<char> a(base_alphabet.begin(), base_alphabet.end());
    for (const auto& t : texts_) a.insert(t.begin(), t.end());
    alphabet_size_ = a.size();
  }

  long double Prob(const std::string& history, char c) const {
    const std::size_t w = order_ - 1;
    std::string padded = std::string(w, '\0') + history;
    std::string ctx = padded.substr(padded.size() - w);
    long double hits = 0.0L, total = 0.0L;
    for (const auto& t : texts_) {
      std::string p = std::string(w, '\0') + t;
      for (std::size_t i = w; i < p.size(); ++i) {
        if (p.compare(i - w, w, ctx) != 0) continue;
        total += 1.0L;
        if (p[i] == c) hits += 1.0L;
      }
    }
    return (hits + alpha_) / (total + alpha_ * static_cast<long double>(alphabet_size_));
  }

  long double LogProb(const std::string& prompt, const std::string& target) const {
    long double sum = 0.0L;
    std::string history = prompt;
    for (char c : target) {
      sum += std::log(Prob(history, c));
      history.push_back(c);
    }
    return sum;
  }

 private:
  std::vector<std::string> texts_;
  std::size_t order_;
  double alpha_;
  std::size_t alphabet_size_ = 0;
};

// Textbook single-pass product-moment formula in long double.
inline long double Pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    long double a = x[i], b = y[i];
    sx += a;
    sy += b;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

// Cyclic Jacobi rotations on a symmetric matrix. Returns eigenvalues in
// descending order with matching eigenvectors (as rows).
inline void JacobiEigen(std::vector<std::vector<long double>> a,
                        std::vector<long double>& values,
                        std::vector<std::vector<long double>>& vectors) {
  const std::size_t n = a.size();
  std::vector<std::vector<long double>> v(n, std::vector<long double>(n, 0.0L));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0L;
  for (int sweep = 0; sweep < 100; ++sweep) {
    long double off = 0.0L;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-36L) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0L) continue;
        long double theta = (a[q][q] - a[p][p]) / (2.0L * a[p][q]);
        long double t = (theta >= 0 ? 1.0L : -1.0L) /
                        (std::fabs(theta) + std::sqrt(theta * theta + 1.0L));
        long double c = 1.0L / std::sqrt(t * t + 1.0L), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          long double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          long double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          long double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return a[i][i] > a[j][j]; });
  values.clear();
  vectors.clear();
  for (auto i : order) {
    values.push_back(a[i][i]);
    std::vector<long double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    vectors.push_back(col);
  }
}

struct EerPoint {
  double eer;
  double threshold;
};

// Accept when score >= threshold. Every threshold's rates are recounted over
// all trials.
inline EerPoint BruteForceEer(const std::vector<std::pair<double, bool>>& trials) {
  std::set<double> uniq;
  for (const auto& t : trials) uniq.insert(t.first);
  std::vector<double> th(uniq.begin(), uniq.end());
  th.push_back(std::numeric_limits<double>::infinity());
  std::vector<double> far(th.size()), frr(th.size());
  for (std::size_t i = 0; i < th.size(); ++i) {
    double fa = 0, fr = 0, nt = 0, ni = 0;
    for (const auto& [s, target] : trials) {
      if (target) {
        ++nt;
        if (s < th[i]) ++fr;
      } else {
        ++ni;
        if (s >= th[i]) ++fa;
      }
    }
    far[i] = fa / ni;
    frr[i] = fr / nt;
  }
  for (std::size_t j = 1; j < th.size(); ++j) {
    double d0 = far[j - 1] - frr[j - 1], d1 = far[j] - frr[j];
    if (d1 > 0) continue;
    if (d1 == 0) return {far[j], std::isinf(th[j]) ? th[j - 1] : th[j]};
    double t = d0 / (d0 - d1);
    double thr = std::isinf(th[j]) ? th[j - 1] : th[j - 1] + t * (th[j] - th[j - 1]);
    return {far[j - 1] + t * (far[j] - far[j - 1]), thr};
  }
  return {far.back(), th.back()};
}

}  // namespace oracle
