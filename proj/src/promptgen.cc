#include "unitmll/promptgen.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "templates_json.h"
#include "unitmll/error.h"

namespace unitmll {

namespace {

std::string RenderBlock(std::span<const std::optional<std::string>> items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ", ";
    out += items[i] ? *items[i] : std::string(kMissingContext);
  }
  out += "]";
  return out;
}

const TokenSequence& SequenceFor(const SequenceMap& sequences, const std::string& id) {
  auto it = sequences.find(id);
  if (it == sequences.end()) {
    throw Error(ErrorKind::kNotFound, "no token sequence for utterance '" + id + "'");
  }
  return it->second;
}

std::optional<std::string> RenderedOrAbsent(const SequenceMap& sequences,
                                            const std::optional<std::string>& id) {
  if (!id) return std::nullopt;
  return RenderSequence(SequenceFor(sequences, *id));
}

}  // namespace

std::vector<PromptTemplate> ParseTemplates(std::string_view json_text) {
  std::vector<PromptTemplate> out;
  std::set<int> ids;
  try {
    auto doc = nlohmann::json::parse(json_text);
    if (!doc.is_array()) throw Error(ErrorKind::kParse, "template file must be a JSON array");
    for (const auto& item : doc) {
      PromptTemplate t;
      t.id = item.at("id").get<int>();
      t.past_open = item.at("past_open").get<std::string>();
      t.past_close = item.at("past_close").get<std::string>();
      t.future_open = item.at("future_open").get<std::string>();
      t.future_close = item.at("future_close").get<std::string>();
      if (item.contains("joiner")) t.joiner = item.at("joiner").get<std::string>();
      if (!ids.insert(t.id).second) {
        throw Error(ErrorKind::kValidation, "duplicate template id " + std::to_string(t.id));
      }
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("template file: ") + e.what());
  }
  return out;
}

std::vector<PromptTemplate> LoadTemplates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open template file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseTemplates(buf.str());
}

const std::vector<PromptTemplate>& BuiltinTemplates() {
  static const std::vector<PromptTemplate> templates =
      ParseTemplates(internal::kBuiltinTemplatesJson);
  return templates;
}

const PromptTemplate& FindTemplate(const std::vector<PromptTemplate>& templates, int id) {
  auto it = std::find_if(templates.begin(), templates.end(),
                         [id](const auto& t) { return t.id == id; });
  if (it == templates.end()) {
    throw Error(ErrorKind::kNotFound, "no prompt template with id " + std::to_string(id));
  }
  return *it;
}

std::string_view ToString(ContextMode mode) {
  return mode == ContextMode::kNeighbors ? "p1" : "p2";
}

ContextMode ParseContextMode(std::string_view text) {
  if (text == "p1") return ContextMode::kNeighbors;
  if (text == "p2") return ContextMode::kChapterFirst;
  throw Error(ErrorKind::kInvalidArgument,
              "context mode must be p1 or p2, got '" + std::string(text) + "'");
}

std::string RenderTokens(std::span<const std::int32_t> tokens) {
  std::string out = "[";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += std::to_string(tokens[i]);
  }
  out += ']';
  return out;
}

std::string RenderSequence(const TokenSequence& seq) {
  if (!seq.dedup) {
    throw Error(ErrorKind::kInvalidArgument,
                "only deduplicated sequences are rendered (utterance '" +
                    seq.source_utterance + "')");
  }
  return RenderTokens(seq.tokens);
}

std::vector<std::int32_t> ParseRenderedTokens(std::string_view text) {
  if (text.size() < 2 || text.front() != '[' || text.back() != ']') {
    throw Error(ErrorKind::kParse, "rendered sequence must be bracketed");
  }
  std::string_view body = text.substr(1, text.size() - 2);
  std::vector<std::int32_t> tokens;
  if (body.empty()) return tokens;
  std::size_t pos = 0;
  while (true) {
    std::size_t end = body.find(' ', pos);
    std::string_view num = body.substr(pos, end == std::string_view::npos ? body.size() - pos
                                                                          : end - pos);
    std::int32_t value = 0;
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), value);
    if (num.empty() || ec != std::errc() || ptr != num.data() + num.size() || value < 0 ||
        (num.size() > 1 && num.front() == '0')) {
      throw Error(ErrorKind::kParse, "malformed token '" + std::string(num) + "'");
    }
    tokens.push_back(value);
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return tokens;
}

std::string RenderPrompt(const PromptTemplate& tmpl,
                         std::span<const std::optional<std::string>> past,
                         std::span<const std::optional<std::string>> future) {
  return tmpl.past_open + RenderBlock(past) + tmpl.past_close + tmpl.joiner +
         tmpl.future_open + RenderBlock(future) + tmpl.future_close;
}

RenderedPrompt BuildP1(const std::vector<UtteranceRecord>& records,
                       const SequenceMap& sequences, const std::string& target_id,
                       const PromptTemplate& tmpl, std::size_t context_size) {
  const auto& target = SequenceFor(sequences, target_id);
  NeighborContext ctx = Neighbors(records, target_id, context_size);

  // Neighbors lists the nearest utterance first; the past block reads oldest
  // first so the slot adjacent to the target is the last one printed.
  std::vector<std::optional<std::string>> past, future;
  for (auto it = ctx.past.rbegin(); it != ctx.past.rend(); ++it) {
    past.push_back(RenderedOrAbsent(sequences, *it));
  }
  for (const auto& id : ctx.future) future.push_back(RenderedOrAbsent(sequences, id));

  RenderedPrompt out;
  out.prompt_text = RenderPrompt(tmpl, past, future);
  out.target_text = RenderSequence(target);
  out.utterance_id = target_id;
  out.template_id = tmpl.id;
  out.context_size = context_size;
  out.mode = ContextMode::kNeighbors;
  return out;
}

RenderedPrompt BuildP2(const std::vector<UtteranceRecord>& records,
                       const SequenceMap& sequences, const std::string& target_id,
                       const PromptTemplate& tmpl) {
  const auto& target = SequenceFor(sequences, target_id);
  auto rec = std::find_if(records.begin(), records.end(),
                          [&](const auto& r) { return r.utterance_id == target_id; });
  if (rec == records.end()) {
    throw Error(ErrorKind::kNotFound, "unknown utterance id '" + target_id + "'");
  }
  auto members = ChapterMembers(records, rec->chapter_id);

  std::optional<std::string> first = RenderSequence(SequenceFor(sequences, members.front()));
  std::optional<std::string> none;

  RenderedPrompt out;
  out.prompt_text = RenderPrompt(tmpl, {&first, 1}, {&none, 1});
  out.target_text = RenderSequence(target);
  out.utterance_id = target_id;
  out.template_id = tmpl.id;
  out.context_size = 1;
  out.mode = ContextMode::kChapterFirst;
  return out;
}

RenderedPrompt BuildPrompt(const std::vector<UtteranceRecord>& records,
                           const SequenceMap& sequences, const std::string& target_id,
                           const PromptTemplate& tmpl, ContextMode mode,
                           std::size_t context_size) {
  if (mode == ContextMode::kChapterFirst) return BuildP2(records, sequences, target_id, tmpl);
  return BuildP1(records, sequences, target_id, tmpl, context_size);
}

}  // namespace unitmll
