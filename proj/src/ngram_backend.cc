#include "unitmll/ngram_backend.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "unitmll/error.h"

namespace unitmll {

namespace {

std::uint64_t Fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void ValidateOptions(std::size_t order, double alpha, double adaptation) {
  if (order == 0) throw Error(ErrorKind::kInvalidArgument, "n-gram order must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw Error(ErrorKind::kInvalidArgument, "smoothing alpha must be positive");
  }
  if (!(adaptation >= 0.0 && adaptation < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "adaptation weight must lie in [0, 1)");
  }
}

}  // namespace

void NgramModel::SetAlphabet(std::string alphabet) {
  std::sort(alphabet.begin(), alphabet.end());
  alphabet.erase(std::unique(alphabet.begin(), alphabet.end()), alphabet.end());
  if (alphabet.empty()) throw Error(ErrorKind::kInsufficientData, "empty n-gram alphabet");
  if (alphabet.find(kStartSentinel) != std::string::npos) {
    throw Error(ErrorKind::kInvalidArgument, "NUL bytes are reserved for the start sentinel");
  }
  alphabet_ = std::move(alphabet);
  index_.fill(-1);
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    index_[static_cast<unsigned char>(alphabet_[i])] = static_cast<int>(i);
  }
}

void NgramModel::Finalize() {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "n%zu-a%.17g-l%.17g-", order_, alpha_, adaptation_);
  auto j = ToJson();
  std::snprintf(buf + std::char_traits<char>::length(buf), 17, "%016llx",
                static_cast<unsigned long long>(Fnv1a(j.dump())));
  version_ = buf;
}

std::string NgramModel::ContextOf(std::string_view history) const {
  const std::size_t width = order_ - 1;
  if (history.size() >= width) return std::string(history.substr(history.size() - width));
  std::string ctx(width - history.size(), kStartSentinel);
  ctx.append(history);
  return ctx;
}

void NgramModel::CountInto(Table& table, std::string_view text, std::string_view history) const {
  std::string ctx = ContextOf(history);
  for (char c : text) {
    int idx = index_[static_cast<unsigned char>(c)];
    if (idx >= 0) {
      Row& row = table[ctx];
      if (row.counts.empty()) row.counts.assign(alphabet_.size(), 0);
      ++row.counts[static_cast<std::size_t>(idx)];
      ++row.total;
    }
    if (!ctx.empty()) {
      ctx.erase(ctx.begin());
      ctx.push_back(c);
    }
  }
}

double NgramModel::Smoothed(const Table& table, const std::string& context, int symbol) const {
  double count = 0.0, total = 0.0;
  if (auto it = table.find(context); it != table.end()) {
    count = static_cast<double>(it->second.counts[static_cast<std::size_t>(symbol)]);
    total = static_cast<double>(it->second.total);
  }
  return (count + alpha_) / (total + alpha_ * static_cast<double>(alphabet_.size()));
}

NgramModel NgramModel::Train(std::span<const std::string> texts, const NgramOptions& options) {
  ValidateOptions(options.order, options.alpha, options.adaptation);
  NgramModel m;
  m.order_ = options.order;
  m.alpha_ = options.alpha;
  m.adaptation_ = options.adaptation;

  std::string alphabet(kBaseAlphabet);
  for (const auto& t : texts) alphabet += t;
  m.SetAlphabet(std::move(alphabet));
  for (const auto& t : texts) m.CountInto(m.counts_, t, {});
  m.Finalize();
  return m;
}

double NgramModel::Probability(std::string_view history, char c) const {
  int idx = index_[static_cast<unsigned char>(c)];
  if (idx < 0) return 0.0;
  return Smoothed(counts_, ContextOf(history), idx);
}

std::vector<TokenScore> NgramModel::Score(std::string_view prompt, std::string_view target) const {
  Table cache;
  if (adaptation_ > 0.0) CountInto(cache, prompt, {});

  std::vector<TokenScore> out;
  out.reserve(target.size());
  std::string ctx = ContextOf(prompt);
  for (char c : target) {
    int idx = index_[static_cast<unsigned char>(c)];
    if (idx < 0) {
      throw Error(ErrorKind::kInvalidArgument,
                  std::string("target character '") + c + "' is outside the model alphabet");
    }
    double p = Smoothed(counts_, ctx, idx);
    if (adaptation_ > 0.0) {
      p = (1.0 - adaptation_) * p + adaptation_ * Smoothed(cache, ctx, idx);
      Row& row = cache[ctx];
      if (row.counts.empty()) row.counts.assign(alphabet_.size(), 0);
      ++row.counts[static_cast<std::size_t>(idx)];
      ++row.total;
    }
    out.push_back({std::string(1, c), std::log(p)});
    if (!ctx.empty()) {
      ctx.erase(ctx.begin());
      ctx.push_back(c);
    }
  }
  return out;
}

NgramModel NgramModel::WithAdaptation(double adaptation) const {
  ValidateOptions(order_, alpha_, adaptation);
  NgramModel m = *this;
  m.adaptation_ = adaptation;
  m.Finalize();
  return m;
}

nlohmann::json NgramModel::ToJson() const {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [ctx, row] : counts_) {
    nlohmann::json inner = nlohmann::json::object();
    for (std::size_t i = 0; i < row.counts.size(); ++i) {
      if (row.counts[i] != 0) inner[std::string(1, alphabet_[i])] = row.counts[i];
    }
    counts[ctx] = std::move(inner);
  }
  return {{"n", order_},
          {"alpha", alpha_},
          {"adaptation", adaptation_},
          {"alphabet", alphabet_},
          {"counts", std::move(counts)}};
}

NgramModel NgramModel::FromJson(const nlohmann::json& j) {
  NgramModel m;
  try {
    m.order_ = j.at("n").get<std::size_t>();
    m.alpha_ = j.at("alpha").get<double>();
    m.adaptation_ = j.value("adaptation", 0.0);
    ValidateOptions(m.order_, m.alpha_, m.adaptation_);
    m.SetAlphabet(j.at("alphabet").get<std::string>());
    for (const auto& [ctx, inner] : j.at("counts").items()) {
      if (ctx.size() != m.order_ - 1) {
        throw Error(ErrorKind::kValidation, "n-gram context of wrong length");
      }
      Row row;
      row.counts.assign(m.alphabet_.size(), 0);
      for (const auto& [ch, count] : inner.items()) {
        if (ch.size() != 1 || !m.InAlphabet(ch[0])) {
          throw Error(ErrorKind::kValidation, "n-gram count for a symbol outside the alphabet");
        }
        auto c = count.get<std::uint64_t>();
        row.counts[static_cast<std::size_t>(m.index_[static_cast<unsigned char>(ch[0])])] = c;
        row.total += c;
      }
      m.counts_.emplace(ctx, std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("n-gram model: ") + e.what());
  }
  m.Finalize();
  return m;
}

void NgramModel::Save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write n-gram model " + path.string());
  out << ToJson().dump() << '\n';
}

NgramModel NgramModel::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open n-gram model " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("n-gram model: ") + e.what());
  }
  return FromJson(j);
}

UniformBackend::UniformBackend(std::size_t alphabet_size) : alphabet_size_(alphabet_size) {
  if (alphabet_size == 0) throw Error(ErrorKind::kInvalidArgument, "alphabet size must be >= 1");
}

std::vector<TokenScore> UniformBackend::Score(std::string_view, std::string_view target) const {
  const double lp = -std::log(static_cast<double>(alphabet_size_));
  std::vector<TokenScore> out;
  out.reserve(target.size());
  for (char c : target) out.push_back({std::string(1, c), lp});
  return out;
}

}  // namespace unitmll
