#include "unitmll/scoring.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>

#include <nlohmann/json.hpp>

#include "parallel.h"
#include "unitmll/error.h"

namespace unitmll {

namespace {

using nlohmann::json;

std::mutex& CacheMutex() {
  static std::mutex mu;
  return mu;
}

std::size_t Denominator(const ScoreRecord& r, Normalization mode) {
  switch (mode) {
    case Normalization::kPerDiscreteToken: return r.n_discrete_tokens;
    case Normalization::kPerModelToken: return r.n_model_tokens;
    case Normalization::kPerChar: return r.n_chars;
  }
  return 0;
}

}  // namespace

void CheckTokenScores(std::string_view target, std::span<const TokenScore> scores) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    if (s.token_text.empty()) {
      throw Error(ErrorKind::kContract, "token " + std::to_string(i) + " is empty");
    }
    if (!std::isfinite(s.logprob)) {
      throw Error(ErrorKind::kContract, "token " + std::to_string(i) + " has non-finite logprob");
    }
    if (s.logprob > 0.0) {
      throw Error(ErrorKind::kContract, "token " + std::to_string(i) + " has positive logprob");
    }
    if (target.compare(pos, s.token_text.size(), s.token_text) != 0) {
      throw Error(ErrorKind::kContract, "token " + std::to_string(i) + " ('" + s.token_text +
                                            "') does not match the target at offset " +
                                            std::to_string(pos));
    }
    pos += s.token_text.size();
  }
  if (pos != target.size()) {
    throw Error(ErrorKind::kContract, "tokens cover " + std::to_string(pos) + " of " +
                                          std::to_string(target.size()) + " target characters");
  }
}

std::string_view ToString(Normalization mode) {
  switch (mode) {
    case Normalization::kPerDiscreteToken: return "discrete";
    case Normalization::kPerModelToken: return "model-token";
    case Normalization::kPerChar: return "char";
  }
  return "discrete";
}

Normalization ParseNormalization(std::string_view text) {
  if (text == "discrete") return Normalization::kPerDiscreteToken;
  if (text == "model-token") return Normalization::kPerModelToken;
  if (text == "char") return Normalization::kPerChar;
  throw Error(ErrorKind::kInvalidArgument,
              "normalization must be discrete, model-token or char; got '" + std::string(text) +
                  "'");
}

ScoreRecord ScoreTarget(const ScorerBackend& backend, const std::string& utterance_id,
                        std::string_view prompt, std::string_view target,
                        std::size_t n_discrete_tokens) {
  if (n_discrete_tokens == 0) {
    throw Error(ErrorKind::kInvalidArgument,
                "utterance '" + utterance_id + "' has an empty target sequence");
  }
  auto scores = backend.Score(prompt, target);
  try {
    CheckTokenScores(target, scores);
  } catch (const Error& e) {
    throw Error(e.kind(), backend.name() + " on utterance '" + utterance_id + "': " + e.what());
  }
  ScoreRecord rec;
  rec.utterance_id = utterance_id;
  for (const auto& s : scores) rec.sum_logprob += s.logprob;
  rec.n_model_tokens = scores.size();
  rec.n_discrete_tokens = n_discrete_tokens;
  rec.n_chars = target.size();
  return rec;
}

ScoreRecord ScoreUtterance(const ScorerBackend& backend, const RenderedPrompt& rendered,
                           const TokenSequence& seq) {
  if (RenderSequence(seq) != rendered.target_text) {
    throw Error(ErrorKind::kInvalidArgument,
                "target text of '" + rendered.utterance_id + "' is not the rendered sequence");
  }
  return ScoreTarget(backend, rendered.utterance_id, rendered.prompt_text, rendered.target_text,
                     seq.tokens.size());
}

double CorpusMll(std::span<const ScoreRecord> records, Normalization mode) {
  if (records.empty()) throw Error(ErrorKind::kInsufficientData, "corpus MLL of no records");
  std::vector<double> sums;
  sums.reserve(records.size());
  std::size_t denom = 0;
  for (const auto& r : records) {
    sums.push_back(r.sum_logprob);
    denom += Denominator(r, mode);
  }
  if (denom == 0) throw Error(ErrorKind::kInvalidArgument, "MLL denominator is zero");
  // Summing in sorted order makes the result independent of record order.
  std::sort(sums.begin(), sums.end());
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(denom);
}

double PerUtteranceMll(const ScoreRecord& record, Normalization mode) {
  return CorpusMll({&record, 1}, mode);
}

std::string ToString(const CharLimit& limit) {
  return limit ? std::to_string(*limit) : "max";
}

CharLimit ParseCharLimit(std::string_view text) {
  if (text == "max") return std::nullopt;
  std::size_t value = 0;
  try {
    std::size_t used = 0;
    value = std::stoul(std::string(text), &used);
    if (used != text.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw Error(ErrorKind::kInvalidArgument, "bad character limit '" + std::string(text) + "'");
  }
  if (value == 0) throw Error(ErrorKind::kInvalidArgument, "character limit must be positive");
  return value;
}

std::string TruncateRendered(std::string_view rendered, std::size_t limit) {
  if (limit >= rendered.size()) return std::string(rendered);
  // A token is complete once its terminator (space or ']') is inside the cut.
  std::string_view head = rendered.substr(0, limit);
  std::size_t last_space = head.rfind(' ');
  if (last_space == std::string_view::npos) {
    throw Error(ErrorKind::kInvalidArgument,
                "character limit " + std::to_string(limit) +
                    " is shorter than the first token rendering");
  }
  std::string out(head.substr(0, last_space));
  out += ']';
  return out;
}

std::string ScoreKey::Canonical() const {
  json j = {{"backend", backend},
            {"backend_version", backend_version},
            {"template", template_id},
            {"context", ToString(mode)},
            {"context_size", context_size},
            {"utterance_id", utterance_id},
            {"char_limit", ToString(char_limit)}};
  return j.dump();
}

std::string ScoreLine(const ScoreKey& key, const ScoreRecord& record) {
  json j = {{"backend", key.backend},
            {"backend_version", key.backend_version},
            {"template", key.template_id},
            {"context", ToString(key.mode)},
            {"context_size", key.context_size},
            {"char_limit", ToString(key.char_limit)},
            {"utterance_id", record.utterance_id},
            {"sum_logprob", record.sum_logprob},
            {"n_model_tokens", record.n_model_tokens},
            {"n_discrete_tokens", record.n_discrete_tokens},
            {"n_chars", record.n_chars}};
  return j.dump();
}

std::pair<ScoreKey, ScoreRecord> ParseScoreLine(std::string_view line) {
  try {
    auto j = json::parse(line);
    ScoreKey key;
    key.backend = j.at("backend").get<std::string>();
    key.backend_version = j.at("backend_version").get<std::string>();
    key.template_id = j.at("template").get<int>();
    key.mode = ParseContextMode(j.at("context").get<std::string>());
    key.context_size = j.at("context_size").get<std::size_t>();
    key.char_limit = ParseCharLimit(j.at("char_limit").get<std::string>());
    ScoreRecord rec;
    rec.utterance_id = j.at("utterance_id").get<std::string>();
    key.utterance_id = rec.utterance_id;
    rec.sum_logprob = j.at("sum_logprob").get<double>();
    rec.n_model_tokens = j.at("n_model_tokens").get<std::size_t>();
    rec.n_discrete_tokens = j.at("n_discrete_tokens").get<std::size_t>();
    rec.n_chars = j.at("n_chars").get<std::size_t>();
    if (rec.sum_logprob > 0.0 || !std::isfinite(rec.sum_logprob)) {
      throw Error(ErrorKind::kValidation, "score record with invalid sum_logprob");
    }
    return {key, rec};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("score record: ") + e.what());
  }
}

std::vector<std::pair<ScoreKey, ScoreRecord>> LoadScoreFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open score file " + path.string());
  std::vector<std::pair<ScoreKey, ScoreRecord>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(ParseScoreLine(line));
    } catch (const Error& e) {
      throw Error(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ScoreCache::ScoreCache(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  for (auto& [key, rec] : LoadScoreFile(path_)) entries_[key.Canonical()] = rec;
}

std::optional<ScoreRecord> ScoreCache::Find(const ScoreKey& key) const {
  std::lock_guard lock(CacheMutex());
  auto it = entries_.find(key.Canonical());
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::Insert(const ScoreKey& key, const ScoreRecord& record) {
  std::lock_guard lock(CacheMutex());
  if (entries_.emplace(key.Canonical(), record).second) pending_.emplace_back(key, record);
}

void ScoreCache::Flush() {
  std::lock_guard lock(CacheMutex());
  if (path_.empty() || pending_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error(ErrorKind::kIo, "cannot append to score cache " + path_.string());
  for (const auto& [key, rec] : pending_) out << ScoreLine(key, rec) << '\n';
  pending_.clear();
}

std::vector<ScoreRecord> ScoreAll(const ScorerBackend& backend,
                                  std::span<const RenderedPrompt> prompts,
                                  std::span<const TokenSequence> sequences,
                                  const ScoringOptions& options) {
  if (prompts.size() != sequences.size()) {
    throw Error(ErrorKind::kDimensionMismatch, "prompt and sequence counts differ");
  }
  const std::string backend_name = backend.name();
  const std::string backend_version = backend.version();
  auto key_for = [&](const RenderedPrompt& p) {
    return ScoreKey{backend_name, backend_version, p.template_id, p.mode,
                    p.context_size, p.utterance_id, options.char_limit};
  };

  std::vector<ScoreRecord> out(prompts.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (options.cache) {
      if (auto hit = options.cache->Find(key_for(prompts[i]))) {
        out[i] = *hit;
        continue;
      }
    }
    todo.push_back(i);
  }

  internal::ForEachChunk(todo.size(), 1, options.jobs, [&](std::size_t, std::size_t b, std::size_t) {
    const std::size_t i = todo[b];
    const auto& p = prompts[i];
    if (!options.char_limit) {
      out[i] = ScoreUtterance(backend, p, sequences[i]);
      return;
    }
    if (RenderSequence(sequences[i]) != p.target_text) {
      throw Error(ErrorKind::kInvalidArgument,
                  "target text of '" + p.utterance_id + "' is not the rendered sequence");
    }
    std::string target = TruncateRendered(p.target_text, *options.char_limit);
    std::size_t kept = ParseRenderedTokens(target).size();
    out[i] = ScoreTarget(backend, p.utterance_id, p.prompt_text, target, kept);
  });

  if (options.cache) {
    for (std::size_t i : todo) options.cache->Insert(key_for(prompts[i]), out[i]);
  }
  return out;
}

std::vector<AblationRow> AblateLength(const ScorerBackend& backend,
                                      std::span<const RenderedPrompt> prompts,
                                      std::span<const TokenSequence> sequences,
                                      std::span<const CharLimit> limits, Normalization mode,
                                      std::size_t jobs, ScoreCache* cache) {
  for (std::size_t i = 1; i < limits.size(); ++i) {
    bool ordered = limits[i] ? (limits[i - 1] && *limits[i - 1] < *limits[i]) : limits[i - 1].has_value();
    if (!ordered) {
      throw Error(ErrorKind::kInvalidArgument, "character limits must be strictly ascending");
    }
  }
  std::vector<AblationRow> rows;
  for (const auto& limit : limits) {
    ScoringOptions opts{jobs, limit, cache};
    auto records = ScoreAll(backend, prompts, sequences, opts);
    rows.push_back({limit, CorpusMll(records, mode)});
  }
  return rows;
}

}  // namespace unitmll
