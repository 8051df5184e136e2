#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "unitmll/scoring.h"

namespace unitmll {

// Characters every model can score, whatever it was trained on.
inline constexpr std::string_view kBaseAlphabet = " ,0123456789[]";

struct NgramOptions {
  std::size_t order = 5;
  double alpha = 0.1;
  // Weight of a per-request cache model built from the prompt and the target
  // prefix scored so far. 0 gives a plain n-gram model whose scores only see
  // the last order-1 characters.
  double adaptation = 0.0;
};

// Character n-gram model with additive smoothing:
//   P(c | h) = (count(h, c) + alpha) / (count(h) + alpha * |alphabet|)
// where h is the previous order-1 characters, left-padded with a start
// sentinel outside the alphabet. Characters are bytes.
class NgramModel final : public ScorerBackend {
 public:
  static NgramModel Train(std::span<const std::string> texts, const NgramOptions& options);

  std::size_t order() const { return order_; }
  double alpha() const { return alpha_; }
  double adaptation() const { return adaptation_; }
  const std::string& alphabet() const { return alphabet_; }
  bool InAlphabet(char c) const { return index_[static_cast<unsigned char>(c)] >= 0; }

  // P(c | last order-1 characters of history).
  double Probability(std::string_view history, char c) const;
  // Log-likelihood of target given prompt, one entry per target character.
  std::vector<TokenScore> Score(std::string_view prompt, std::string_view target) const override;

  std::string name() const override { return "ngram"; }
  std::string version() const override { return version_; }

  NgramModel WithAdaptation(double adaptation) const;

  nlohmann::json ToJson() const;
  static NgramModel FromJson(const nlohmann::json& j);
  void Save(const std::filesystem::path& path) const;
  static NgramModel Load(const std::filesystem::path& path);

  static constexpr char kStartSentinel = '\0';

 private:
  struct Row {
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;
  };
  using Table = std::unordered_map<std::string, Row>;

  NgramModel() { index_.fill(-1); }
  void SetAlphabet(std::string alphabet);
  void Finalize();
  std::string ContextOf(std::string_view history) const;
  double Smoothed(const Table& table, const std::string& context, int symbol) const;
  void CountInto(Table& table, std::string_view text, std::string_view history) const;

  std::size_t order_ = 1;
  double alpha_ = 0.1;
  double adaptation_ = 0.0;
  std::string alphabet_;
  std::array<int, 256> index_{};
  Table counts_;
  std::string version_;
};

// Every character of the target gets log(1/alphabet_size). Used as a
// prompt-blind reference backend.
class UniformBackend final : public ScorerBackend {
 public:
  explicit UniformBackend(std::size_t alphabet_size);

  std::vector<TokenScore> Score(std::string_view prompt, std::string_view target) const override;
  std::string name() const override { return "uniform"; }
  std::string version() const override { return std::to_string(alphabet_size_); }

 private:
  std::size_t alphabet_size_;
};

}  // namespace unitmll
