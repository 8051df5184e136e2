#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "unitmll/quantizer.h"

namespace unitmll {

// Values a --config JSON file may supply. Command-line flags win.
struct RunConfig {
  std::optional<std::filesystem::path> manifest;
  std::optional<std::filesystem::path> codebook;
  std::optional<std::filesystem::path> tokens;
  std::optional<std::filesystem::path> templates;
  std::optional<int> template_id;
  std::optional<std::string> context;  // p1 | p2
  std::optional<std::size_t> context_size;
  std::optional<std::string> backend;  // ngram:<model.json> | http:<url>
  std::optional<std::string> model_id;
  std::optional<std::size_t> max_in_flight;
  std::optional<std::string> norm;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::filesystem::path> cache;
  std::optional<std::filesystem::path> out_dir;
};

RunConfig ParseRunConfig(const std::string& json_text);
RunConfig LoadRunConfig(const std::filesystem::path& path);

// One line of `quantize` output: {"id": ..., "raw": [...], "dedup": [...]}.
struct TokenRecord {
  std::string id;
  std::vector<std::int32_t> raw;
  std::vector<std::int32_t> dedup;
};

std::string TokenLine(const TokenRecord& record);
std::vector<TokenRecord> LoadTokenFile(const std::filesystem::path& path);

// "0..6" or "0,2,4".
std::vector<std::size_t> ParseSizeList(const std::string& text);

// Runs the unitmll command line. Returns the exit code; failures are
// reported on `err` as a single JSON object.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace unitmll
