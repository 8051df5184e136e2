#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unitmll/promptgen.h"
#include "unitmll/quantizer.h"

namespace unitmll {

struct TokenScore {
  std::string token_text;
  double logprob = 0.0;
};

// Anything that assigns per-token log-probabilities to a target string given
// a prompt. Returned tokens must tile the target exactly; only target tokens
// are scored, the prompt is conditioning. Implementations must be safe to
// call from several threads at once.
class ScorerBackend {
 public:
  virtual ~ScorerBackend() = default;
  virtual std::string name() const = 0;
  virtual std::string version() const = 0;
  virtual std::vector<TokenScore> Score(std::string_view prompt,
                                        std::string_view target) const = 0;
};

// Throws kContract unless the token texts are non-empty, concatenate to
// target, and every logprob is finite and <= 0.
void CheckTokenScores(std::string_view target, std::span<const TokenScore> scores);

struct ScoreRecord {
  std::string utterance_id;
  double sum_logprob = 0.0;
  std::size_t n_model_tokens = 0;
  std::size_t n_discrete_tokens = 0;
  std::size_t n_chars = 0;

  bool operator==(const ScoreRecord&) const = default;
};

enum class Normalization {
  kPerDiscreteToken,  // divide by the deduplicated unit count T'
  kPerModelToken,
  kPerChar,
};

std::string_view ToString(Normalization mode);
// Accepts the CLI spellings: discrete, model-token, char.
Normalization ParseNormalization(std::string_view text);

ScoreRecord ScoreTarget(const ScorerBackend& backend, const std::string& utterance_id,
                        std::string_view prompt, std::string_view target,
                        std::size_t n_discrete_tokens);

// Scores rendered.target_text, which must be the rendering of seq.
ScoreRecord ScoreUtterance(const ScorerBackend& backend, const RenderedPrompt& rendered,
                           const TokenSequence& seq);

// Pooled MLL: sum of log-probabilities over sum of denominators. Invariant to
// the order of records, bit for bit.
double CorpusMll(std::span<const ScoreRecord> records,
                 Normalization mode = Normalization::kPerDiscreteToken);
double PerUtteranceMll(const ScoreRecord& record,
                       Normalization mode = Normalization::kPerDiscreteToken);

// nullopt stands for "max" (no truncation).
using CharLimit = std::optional<std::size_t>;

std::string ToString(const CharLimit& limit);
CharLimit ParseCharLimit(std::string_view text);

// Keeps the first `limit` characters of a rendered sequence, drops a token
// whose terminating space or bracket falls beyond the cut, and re-closes the
// bracket. The result is never longer than `limit`. Throws kInvalidArgument
// if not even the first token fits.
std::string TruncateRendered(std::string_view rendered, std::size_t limit);

// Identifies one score in the on-disk cache.
struct ScoreKey {
  std::string backend;
  std::string backend_version;
  int template_id = 0;
  ContextMode mode = ContextMode::kNeighbors;
  std::size_t context_size = 0;
  std::string utterance_id;
  CharLimit char_limit;

  std::string Canonical() const;
};

// JSONL file of ScoreRecords plus their keys. Lookups and inserts are
// thread-safe; Append writes new entries in insertion order.
class ScoreCache {
 public:
  ScoreCache() = default;
  explicit ScoreCache(std::filesystem::path path);

  std::optional<ScoreRecord> Find(const ScoreKey& key) const;
  void Insert(const ScoreKey& key, const ScoreRecord& record);
  std::size_t size() const { return entries_.size(); }
  // Writes entries not yet on disk.
  void Flush();

 private:
  std::filesystem::path path_;
  std::map<std::string, ScoreRecord> entries_;
  std::vector<std::pair<ScoreKey, ScoreRecord>> pending_;
};

std::string ScoreLine(const ScoreKey& key, const ScoreRecord& record);
std::pair<ScoreKey, ScoreRecord> ParseScoreLine(std::string_view line);
// Reads a score JSONL file (cache or run output) in file order.
std::vector<std::pair<ScoreKey, ScoreRecord>> LoadScoreFile(const std::filesystem::path& path);

struct ScoringOptions {
  std::size_t jobs = 1;
  CharLimit char_limit;
  ScoreCache* cache = nullptr;
};

// Scores every prompt (truncating targets per options.char_limit). Results
// come back in input order regardless of completion order.
std::vector<ScoreRecord> ScoreAll(const ScorerBackend& backend,
                                  std::span<const RenderedPrompt> prompts,
                                  std::span<const TokenSequence> sequences,
                                  const ScoringOptions& options = {});

struct AblationRow {
  CharLimit limit;
  double mll = 0.0;
};

// Corpus MLL for each character limit; limits must be ascending with "max"
// last.
std::vector<AblationRow> AblateLength(const ScorerBackend& backend,
                                      std::span<const RenderedPrompt> prompts,
                                      std::span<const TokenSequence> sequences,
                                      std::span<const CharLimit> limits,
                                      Normalization mode = Normalization::kPerDiscreteToken,
                                      std::size_t jobs = 1, ScoreCache* cache = nullptr);

}  // namespace unitmll
