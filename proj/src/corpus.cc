#include "unitmll/corpus.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_map>
#include <utility>

#include <nlohmann/json.hpp>

#include "unitmll/error.h"

namespace unitmll {

namespace {

using nlohmann::json;

std::string LineError(std::size_t line_no, const std::string& what) {
  return "line " + std::to_string(line_no) + ": " + what;
}

std::string RequireString(const json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw Error(ErrorKind::kParse,
                LineError(line_no, std::string("missing or non-string key '") + key + "'"));
  }
  return it->get<std::string>();
}

std::optional<std::string> OptionalString(const json& obj, const char* key,
                                          std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) {
    throw Error(ErrorKind::kParse,
                LineError(line_no, std::string("key '") + key + "' must be a string"));
  }
  return it->get<std::string>();
}

bool IsBlank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string Trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

void PutU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void PutU64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t GetU32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t GetU64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<UtteranceRecord> ParseManifest(std::istream& in) {
  std::vector<UtteranceRecord> records;
  std::unordered_map<std::string, std::size_t> id_line;
  std::set<std::pair<std::string, std::uint64_t>> chapter_orders;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (IsBlank(line)) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::kParse, LineError(line_no, e.what()));
    }
    if (!obj.is_object()) {
      throw Error(ErrorKind::kParse, LineError(line_no, "expected a JSON object"));
    }

    UtteranceRecord rec;
    rec.utterance_id = RequireString(obj, "id", line_no);
    rec.chapter_id = RequireString(obj, "chapter", line_no);
    rec.speaker_id = RequireString(obj, "speaker", line_no);
    auto order = obj.find("order");
    if (order == obj.end() || !order->is_number_integer() ||
        (order->is_number_integer() && !order->is_number_unsigned() &&
         order->get<std::int64_t>() < 0)) {
      throw Error(ErrorKind::kParse,
                  LineError(line_no, "key 'order' must be a non-negative integer"));
    }
    rec.order_in_chapter = order->get<std::uint64_t>();
    if (auto f = OptionalString(obj, "features", line_no)) rec.feature_path = *f;
    rec.transcript = OptionalString(obj, "text", line_no);

    if (rec.utterance_id.empty()) {
      throw Error(ErrorKind::kValidation, LineError(line_no, "empty utterance id"));
    }
    auto [it, inserted] = id_line.emplace(rec.utterance_id, line_no);
    if (!inserted) {
      throw Error(ErrorKind::kValidation,
                  LineError(line_no, "duplicate utterance id '" + rec.utterance_id +
                                         "' (first seen on line " +
                                         std::to_string(it->second) + ")"));
    }
    if (!chapter_orders.emplace(rec.chapter_id, rec.order_in_chapter).second) {
      throw Error(ErrorKind::kValidation,
                  LineError(line_no, "duplicate order " +
                                         std::to_string(rec.order_in_chapter) +
                                         " in chapter '" + rec.chapter_id + "'"));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<UtteranceRecord> LoadManifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open manifest " + path.string());
  return ParseManifest(in);
}

void SaveManifest(const std::filesystem::path& path,
                  const std::vector<UtteranceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write manifest " + path.string());
  for (const auto& r : records) {
    json obj = {{"id", r.utterance_id},
                {"chapter", r.chapter_id},
                {"speaker", r.speaker_id},
                {"order", r.order_in_chapter}};
    if (r.feature_path) obj["features"] = r.feature_path->generic_string();
    if (r.transcript) obj["text"] = *r.transcript;
    out << obj.dump() << '\n';
  }
}

std::filesystem::path ResolveFeaturePath(const UtteranceRecord& record,
                                         const std::filesystem::path& base_dir) {
  if (!record.feature_path) {
    throw Error(ErrorKind::kNotFound,
                "utterance '" + record.utterance_id + "' has no feature path");
  }
  if (record.feature_path->is_absolute()) return *record.feature_path;
  return base_dir / *record.feature_path;
}

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, float frame_rate_hz)
    : FeatureMatrix(rows, cols, std::vector<float>(rows * cols, 0.0f), frame_rate_hz) {}

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<float> values,
                             float frame_rate_hz)
    : rows_(rows), cols_(cols), values_(std::move(values)), frame_rate_hz_(frame_rate_hz) {
  if (cols_ == 0) throw Error(ErrorKind::kValidation, "feature dimension must be >= 1");
  if (values_.size() != rows_ * cols_) {
    throw Error(ErrorKind::kDimensionMismatch, "value count does not match rows*cols");
  }
  if (!(frame_rate_hz_ > 0.0f) || !std::isfinite(frame_rate_hz_)) {
    throw Error(ErrorKind::kValidation, "frame rate must be positive");
  }
}

std::vector<std::uint8_t> EncodeFeatures(const FeatureMatrix& m) {
  for (float v : m.values()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::kNonFinite, "matrix holds non-finite value");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kFmatHeaderBytes + m.values().size() * 4);
  out.insert(out.end(), {'F', 'M', 'A', 'T'});
  PutU32(out, kFmatVersion);
  PutU64(out, m.rows());
  PutU64(out, m.cols());
  PutU32(out, std::bit_cast<std::uint32_t>(m.frame_rate_hz()));
  for (float v : m.values()) PutU32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FeatureMatrix DecodeFeatures(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FMAT", 4) != 0) {
    throw Error(ErrorKind::kBadMagic, "missing FMAT magic");
  }
  if (bytes.size() < kFmatHeaderBytes) {
    throw Error(ErrorKind::kTruncated, "FMAT header truncated");
  }
  const std::uint8_t* p = bytes.data();
  std::uint32_t version = GetU32(p + 4);
  if (version != kFmatVersion) {
    throw Error(ErrorKind::kUnsupportedVersion,
                "unsupported FMAT version " + std::to_string(version));
  }
  std::uint64_t rows = GetU64(p + 8);
  std::uint64_t cols = GetU64(p + 16);
  float rate = std::bit_cast<float>(GetU32(p + 24));
  if (cols == 0) throw Error(ErrorKind::kValidation, "FMAT declares D = 0");

  std::size_t payload = bytes.size() - kFmatHeaderBytes;
  if (rows != 0 && cols > (payload / 4) / rows) {
    throw Error(ErrorKind::kTruncated, "FMAT payload has " + std::to_string(payload) +
                                           " bytes, shorter than declared T*D*4");
  }
  std::uint64_t n = rows * cols;
  if (payload > n * 4) {
    throw Error(ErrorKind::kValidation, "FMAT payload has trailing bytes");
  }

  std::vector<float> values(n);
  const std::uint8_t* data = p + kFmatHeaderBytes;
  for (std::uint64_t i = 0; i < n; ++i) {
    values[i] = std::bit_cast<float>(GetU32(data + 4 * i));
    if (!std::isfinite(values[i])) {
      throw Error(ErrorKind::kNonFinite,
                  "non-finite value at row " + std::to_string(i / cols) + ", col " +
                      std::to_string(i % cols));
    }
  }
  return FeatureMatrix(rows, cols, std::move(values), rate);
}

void SaveFeatures(const std::filesystem::path& path, const FeatureMatrix& m) {
  auto bytes = EncodeFeatures(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "short write to " + path.string());
}

FeatureMatrix LoadFeatures(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return DecodeFeatures(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<std::string> ChapterMembers(const std::vector<UtteranceRecord>& records,
                                        const std::string& chapter_id) {
  std::vector<const UtteranceRecord*> members;
  for (const auto& r : records) {
    if (r.chapter_id == chapter_id) members.push_back(&r);
  }
  std::sort(members.begin(), members.end(), [](const auto* a, const auto* b) {
    return a->order_in_chapter < b->order_in_chapter;
  });
  std::vector<std::string> ids;
  ids.reserve(members.size());
  for (const auto* r : members) ids.push_back(r->utterance_id);
  return ids;
}

NeighborContext Neighbors(const std::vector<UtteranceRecord>& records,
                          const std::string& target_id, std::size_t context_size) {
  auto target = std::find_if(records.begin(), records.end(),
                             [&](const auto& r) { return r.utterance_id == target_id; });
  if (target == records.end()) {
    throw Error(ErrorKind::kNotFound, "unknown utterance id '" + target_id + "'");
  }
  auto members = ChapterMembers(records, target->chapter_id);
  auto pos = static_cast<std::size_t>(
      std::find(members.begin(), members.end(), target_id) - members.begin());

  NeighborContext ctx;
  ctx.past.resize(context_size);
  ctx.future.resize(context_size);
  for (std::size_t i = 0; i < context_size; ++i) {
    if (pos >= i + 1) ctx.past[i] = members[pos - i - 1];
    if (pos + i + 1 < members.size()) ctx.future[i] = members[pos + i + 1];
  }
  return ctx;
}

MetricTable ParseMetricTable(std::istream& in, std::string_view value_column) {
  const std::string header = "model_id," + std::string(value_column);
  std::string line;
  if (!std::getline(in, line) || Trim(line) != header) {
    throw Error(ErrorKind::kParse, "table must start with header '" + header + "'");
  }
  MetricTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = Trim(line);
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw Error(ErrorKind::kParse, LineError(line_no, "expected two columns"));
    }
    std::string id = Trim(line.substr(0, comma));
    std::string value = Trim(line.substr(comma + 1));
    char* end = nullptr;
    double v = std::strtod(value.c_str(), &end);
    if (id.empty() || value.empty() || end != value.c_str() + value.size()) {
      throw Error(ErrorKind::kParse, LineError(line_no, "malformed row '" + line + "'"));
    }
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kNonFinite, LineError(line_no, "non-finite value"));
    }
    if (!table.emplace(id, v).second) {
      throw Error(ErrorKind::kValidation, LineError(line_no, "duplicate model id '" + id + "'"));
    }
  }
  return table;
}

MetricTable LoadMetricTable(const std::filesystem::path& path, std::string_view value_column) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open metric table " + path.string());
  try {
    return ParseMetricTable(in, value_column);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace unitmll
