#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace unitmll {

struct UtteranceRecord {
  std::string utterance_id;
  std::string chapter_id;
  std::string speaker_id;
  std::uint64_t order_in_chapter = 0;
  std::optional<std::filesystem::path> feature_path;
  std::optional<std::string> transcript;
};

// Manifest: one JSON object per line with keys id, chapter, speaker, order and
// optional features / text. Blank lines are skipped but still counted, so
// error messages refer to physical line numbers. Relative feature paths are
// returned as written; ResolveFeaturePath joins them against a base directory.
std::vector<UtteranceRecord> ParseManifest(std::istream& in);
std::vector<UtteranceRecord> LoadManifest(const std::filesystem::path& path);
void SaveManifest(const std::filesystem::path& path,
                  const std::vector<UtteranceRecord>& records);

std::filesystem::path ResolveFeaturePath(const UtteranceRecord& record,
                                         const std::filesystem::path& base_dir);

// Row-major float32 frame matrix, the in-memory form of an FMAT file.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols, float frame_rate_hz = 50.0f);
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<float> values,
                float frame_rate_hz = 50.0f);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  float frame_rate_hz() const { return frame_rate_hz_; }
  bool empty() const { return rows_ == 0; }

  std::span<const float> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }
  std::span<float> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  float operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  float& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }

  const std::vector<float>& values() const { return values_; }

  bool operator==(const FeatureMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 1;
  std::vector<float> values_;
  float frame_rate_hz_ = 50.0f;
};

// FMAT layout: "FMAT", u32 version (=1), u64 T, u64 D, f32 frame rate, then
// T*D float32 values row-major. Everything little-endian.
inline constexpr std::uint32_t kFmatVersion = 1;
inline constexpr std::size_t kFmatHeaderBytes = 4 + 4 + 8 + 8 + 4;

std::vector<std::uint8_t> EncodeFeatures(const FeatureMatrix& m);
FeatureMatrix DecodeFeatures(std::span<const std::uint8_t> bytes);

void SaveFeatures(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix LoadFeatures(const std::filesystem::path& path);

// Context ids around a target; index 0 is the nearest neighbour in each
// direction. Absent slots fall outside the target's chapter.
struct NeighborContext {
  std::vector<std::optional<std::string>> past;
  std::vector<std::optional<std::string>> future;
};

NeighborContext Neighbors(const std::vector<UtteranceRecord>& records,
                          const std::string& target_id, std::size_t context_size);

// Utterance ids of a chapter in order_in_chapter order.
std::vector<std::string> ChapterMembers(const std::vector<UtteranceRecord>& records,
                                        const std::string& chapter_id);

// External metric per model (e.g. WER in percent). CSV header: model_id,metric.
using MetricTable = std::map<std::string, double>;

MetricTable ParseMetricTable(std::istream& in, std::string_view value_column = "metric");
MetricTable LoadMetricTable(const std::filesystem::path& path,
                            std::string_view value_column = "metric");

}  // namespace unitmll
