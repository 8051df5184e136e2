#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "unitmll/corpus.h"
#include "unitmll/quantizer.h"

namespace unitmll {

inline constexpr int kDefaultTemplateId = 3;
inline constexpr std::size_t kDefaultContextSize = 1;
inline constexpr std::string_view kMissingContext = "N/A";

// Delimiters around the past and future context blocks. A prompt renders as
//   past_open [X-] past_close joiner future_open [X+] future_close
struct PromptTemplate {
  int id = 0;
  std::string past_open;
  std::string past_close;
  std::string future_open;
  std::string future_close;
  std::string joiner = ", ";
};

std::vector<PromptTemplate> ParseTemplates(std::string_view json_text);
std::vector<PromptTemplate> LoadTemplates(const std::filesystem::path& path);
// The seven patterns from data/templates.json, compiled in at build time.
const std::vector<PromptTemplate>& BuiltinTemplates();
const PromptTemplate& FindTemplate(const std::vector<PromptTemplate>& templates, int id);

enum class ContextMode {
  kNeighbors,     // "p1": c utterances on either side within the chapter
  kChapterFirst,  // "p2": the chapter's first utterance, reused for the chapter
};

std::string_view ToString(ContextMode mode);
ContextMode ParseContextMode(std::string_view text);

struct RenderedPrompt {
  std::string prompt_text;
  std::string target_text;
  std::string utterance_id;
  int template_id = 0;
  std::size_t context_size = 0;
  ContextMode mode = ContextMode::kNeighbors;
};

// "[21 12 1 9 83]"; requires a deduplicated sequence.
std::string RenderSequence(const TokenSequence& seq);
std::string RenderTokens(std::span<const std::int32_t> tokens);
// Inverse of RenderTokens; throws kParse on anything RenderTokens cannot emit.
std::vector<std::int32_t> ParseRenderedTokens(std::string_view text);

// past and future hold already-rendered sequences in reading order (oldest
// first); absent slots print as N/A.
std::string RenderPrompt(const PromptTemplate& tmpl,
                         std::span<const std::optional<std::string>> past,
                         std::span<const std::optional<std::string>> future);

using SequenceMap = std::unordered_map<std::string, TokenSequence>;

RenderedPrompt BuildP1(const std::vector<UtteranceRecord>& records,
                       const SequenceMap& sequences, const std::string& target_id,
                       const PromptTemplate& tmpl, std::size_t context_size);

RenderedPrompt BuildP2(const std::vector<UtteranceRecord>& records,
                       const SequenceMap& sequences, const std::string& target_id,
                       const PromptTemplate& tmpl);

RenderedPrompt BuildPrompt(const std::vector<UtteranceRecord>& records,
                           const SequenceMap& sequences, const std::string& target_id,
                           const PromptTemplate& tmpl, ContextMode mode,
                           std::size_t context_size);

}  // namespace unitmll
