#include "unitmll/cli.h"

#include <glob.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "unitmll/analytics.h"
#include "unitmll/corpus.h"
#include "unitmll/error.h"
#include "unitmll/http_backend.h"
#include "unitmll/ngram_backend.h"
#include "unitmll/promptgen.h"
#include "unitmll/scoring.h"
#include "unitmll/speaker_verif.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace unitmll {

namespace {

template <typename T>
void ReadField(const json& j, const char* key, std::optional<T>& dst) {
  if (j.contains(key) && !j[key].is_null()) dst = j[key].get<T>();
}

void ReadPath(const json& j, const char* key, std::optional<fs::path>& dst) {
  if (j.contains(key) && !j[key].is_null()) dst = fs::path(j[key].get<std::string>());
}

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

std::string Dump(const json& j) { return j.dump(2) + "\n"; }

void RequireFile(const fs::path& path, const char* what) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kNotFound, std::string(what) + " not found: " + path.string());
  }
}

std::vector<fs::path> GlobFiles(const std::string& pattern) {
  glob_t g{};
  int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<fs::path> out;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) {
    throw Error(ErrorKind::kIo, "glob failed for pattern " + pattern);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string UtcNow() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::size_t LocalJobs(std::size_t jobs) {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

SequenceMap ToSequenceMap(const std::vector<TokenRecord>& tokens) {
  SequenceMap map;
  for (const auto& t : tokens) {
    TokenSequence seq{t.dedup, true, t.id};
    if (!map.emplace(t.id, std::move(seq)).second) {
      throw Error(ErrorKind::kValidation, "duplicate utterance '" + t.id + "' in token file");
    }
  }
  return map;
}

struct BackendHandle {
  std::unique_ptr<ScorerBackend> backend;
  bool remote = false;
  std::size_t max_in_flight = 1;
};

BackendHandle MakeBackend(const std::string& spec, const std::string& model_id,
                          std::size_t max_in_flight) {
  BackendHandle h;
  auto starts = [&](std::string_view p) { return spec.rfind(p, 0) == 0; };
  if (starts("ngram:")) {
    fs::path path = spec.substr(6);
    RequireFile(path, "n-gram model");
    h.backend = std::make_unique<NgramModel>(NgramModel::Load(path));
  } else if (starts("uniform:")) {
    h.backend = std::make_unique<UniformBackend>(std::stoul(spec.substr(8)));
  } else if (starts("http://") || starts("https://") || starts("http:")) {
    BackendConfig config;
    config.base_url = starts("http://") || starts("https://") ? spec : spec.substr(5);
    config.model_id = model_id;
    config.max_in_flight = max_in_flight;
    auto http = std::make_unique<HttpBackend>(config);
    http->Connect();
    h.backend = std::move(http);
    h.remote = true;
    h.max_in_flight = max_in_flight;
  } else {
    throw Error(ErrorKind::kInvalidArgument,
                "backend must be ngram:<model.json>, uniform:<size> or http:<url>, got '" + spec +
                    "'");
  }
  return h;
}

std::vector<ScoreRecord> RecordsOf(const fs::path& path) {
  std::vector<ScoreRecord> out;
  for (auto& [key, rec] : LoadScoreFile(path)) out.push_back(std::move(rec));
  return out;
}

std::pair<std::string, std::string> SplitAssignment(const std::string& text) {
  auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw Error(ErrorKind::kInvalidArgument, "expected NAME=PATH, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

double SummaryMll(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  json j = json::parse(in);
  if (!j.contains("corpus_mll") || !j["corpus_mll"].is_number()) {
    throw Error(ErrorKind::kParse, path.string() + ": no numeric 'corpus_mll'");
  }
  return j["corpus_mll"].get<double>();
}

void InitLogging(const std::string& level) {
  auto logger = spdlog::get("unitmll");
  if (!logger) {
    logger = spdlog::stderr_logger_mt("unitmll");
    spdlog::set_default_logger(logger);
  }
  spdlog::set_level(spdlog::level::from_str(level));
}

std::string ErrorJson(std::string_view kind, std::string_view message) {
  return json{{"error", kind}, {"message", message}}.dump();
}

// Selftest: quick end-to-end checks of the core invariants on tiny inputs.
json RunSelftest() {
  json checks = json::array();
  auto check = [&](const std::string& name, bool ok) {
    checks.push_back({{"name", name}, {"ok", ok}});
  };

  check("builtin_templates", BuiltinTemplates().size() == 7);

  std::mt19937_64 rng(7);
  std::normal_distribution<float> gauss;
  FeatureMatrix m(5, 3);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) m(r, c) = gauss(rng);
  check("fmat_roundtrip", DecodeFeatures(EncodeFeatures(m)) == m);

  TokenSequence raw{{21, 21, 12, 1, 1, 1, 9, 83, 83}, false, "u"};
  TokenSequence dd = Dedup(raw);
  check("dedup", RenderSequence(dd) == "[21 12 1 9 83]" && Dedup(dd) == dd);

  std::vector<std::string> texts{"[1 2 3 4]", "[2 3 4 1]", "[3 4 1 2]"};
  auto model = NgramModel::Train(texts, {3, 0.1, 0.0});
  auto scores = model.Score("[1 2 3]", "[4 1]");
  double sum = 0.0, chain = 0.0;
  std::string history = "[1 2 3]";
  for (const auto& s : scores) sum += s.logprob;
  for (char c : std::string("[4 1]")) {
    chain += std::log(model.Probability(history, c));
    history += c;
  }
  check("ngram_chain_rule", std::abs(sum - chain) < 1e-12);

  std::vector<std::pair<double, bool>> sep{{1.0, true}, {1.0, true}, {0.0, false}, {0.0, false}};
  check("eer_separable", ComputeEer(sep).eer == 0.0);

  std::vector<double> x{1, 2, 3, 4}, y{5, 7, 9, 11};
  check("pearson_affine", std::abs(Pearson(x, y) - 1.0) < 1e-12);

  bool ok = std::all_of(checks.begin(), checks.end(), [](const json& c) { return c["ok"].get<bool>(); });
  return {{"ok", ok}, {"checks", checks}};
}

}  // namespace

RunConfig ParseRunConfig(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::kParse, "config must be a JSON object");
  static const std::vector<std::string> known{
      "manifest", "codebook", "tokens", "templates", "template", "context", "context_size",
      "backend", "model_id", "max_in_flight", "norm", "seed", "jobs", "cache", "out_dir"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(ErrorKind::kValidation, "unknown config key '" + key + "'");
    }
  }
  RunConfig c;
  try {
    ReadPath(j, "manifest", c.manifest);
    ReadPath(j, "codebook", c.codebook);
    ReadPath(j, "tokens", c.tokens);
    ReadPath(j, "templates", c.templates);
    ReadField(j, "template", c.template_id);
    ReadField(j, "context", c.context);
    ReadField(j, "context_size", c.context_size);
    ReadField(j, "backend", c.backend);
    ReadField(j, "model_id", c.model_id);
    ReadField(j, "max_in_flight", c.max_in_flight);
    ReadField(j, "norm", c.norm);
    ReadField(j, "seed", c.seed);
    ReadField(j, "jobs", c.jobs);
    ReadPath(j, "cache", c.cache);
    ReadPath(j, "out_dir", c.out_dir);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kValidation, std::string("config field has the wrong type: ") + e.what());
  }
  if (c.context) ParseContextMode(*c.context);
  if (c.norm) ParseNormalization(*c.norm);
  return c;
}

RunConfig LoadRunConfig(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseRunConfig(ss.str());
}

std::string TokenLine(const TokenRecord& record) {
  return json{{"id", record.id}, {"raw", record.raw}, {"dedup", record.dedup}}.dump();
}

std::vector<TokenRecord> LoadTokenFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open token file " + path.string());
  std::vector<TokenRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      TokenRecord r{j.at("id").get<std::string>(), j.at("raw").get<std::vector<std::int32_t>>(),
                    j.at("dedup").get<std::vector<std::int32_t>>()};
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kParse,
                  path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::size_t> ParseSizeList(const std::string& text) {
  auto parse_one = [&](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (s.empty() || pos != s.size() || s[0] == '-') {
      throw Error(ErrorKind::kParse, "bad size '" + s + "' in list '" + text + "'");
    }
    return v;
  };
  std::vector<std::size_t> out;
  if (auto dots = text.find(".."); dots != std::string::npos) {
    std::size_t lo = parse_one(text.substr(0, dots));
    std::size_t hi = parse_one(text.substr(dots + 2));
    if (hi < lo) throw Error(ErrorKind::kParse, "empty range '" + text + "'");
    for (std::size_t v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_one(item));
  if (out.empty()) throw Error(ErrorKind::kParse, "empty size list");
  return out;
}

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"unitmll: discrete speech token evaluation by language-model likelihood"};
  app.name("unitmll");
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;
  std::string norm = "discrete";
  std::string log_level = "warn";
  auto* opt_config = app.add_option("--config", config_path, "Run configuration JSON");
  auto* opt_seed = app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
  auto* opt_jobs = app.add_option("--jobs", jobs, "Worker threads (0 = all cores; HTTP: max in flight)");
  auto* opt_norm = app.add_option("--norm", norm, "MLL denominator: discrete | model-token | char")
                       ->capture_default_str();
  app.add_option("--log-level", log_level, "trace | debug | info | warn | error | off")
      ->capture_default_str();
  (void)opt_config;

  // Shared per-command inputs.
  std::string manifest, codebook, tokens, templates_file, out_path, out_dir, cache_path;
  std::string context = "p1", backend_spec, model_id;
  int template_id = kDefaultTemplateId;
  std::size_t context_size = kDefaultContextSize;
  std::size_t max_in_flight = 4;

  // kmeans
  auto* kmeans = app.add_subcommand("kmeans", "Train a k-means codebook on sampled feature files");
  std::string features_glob;
  std::size_t num_clusters = kDefaultNumClusters;
  double sample_fraction = 0.1;
  std::size_t max_iters = 100;
  double tol = 1e-4;
  kmeans->add_option("--features", features_glob, "Glob of FMAT feature files")->required();
  kmeans->add_option("-K,--clusters", num_clusters, "Codebook size")->capture_default_str();
  kmeans->add_option("--sample-fraction", sample_fraction, "Fraction of files used for training")
      ->capture_default_str();
  kmeans->add_option("--max-iters", max_iters)->capture_default_str();
  kmeans->add_option("--tol", tol, "Stop when no centroid moves further than this")
      ->capture_default_str();
  kmeans->add_option("--out", out_path, "Codebook FMAT path (sidecar written next to it)")->required();

  // quantize
  auto* quantize = app.add_subcommand("quantize", "Assign frames to centroids and deduplicate");
  auto* q_manifest = quantize->add_option("--manifest", manifest);
  auto* q_codebook = quantize->add_option("--codebook", codebook);
  quantize->add_option("--out", out_path, "Token JSONL")->required();

  // prompts
  auto* prompts_cmd = app.add_subcommand("prompts", "Render prompts for every utterance");
  auto* p_manifest = prompts_cmd->add_option("--manifest", manifest);
  auto* p_tokens = prompts_cmd->add_option("--tokens", tokens);
  auto* p_templates = prompts_cmd->add_option("--templates", templates_file, "Template JSON (default: built in)");
  auto* p_template = prompts_cmd->add_option("--template", template_id)->capture_default_str();
  auto* p_context = prompts_cmd->add_option("--context", context, "p1 | p2")->capture_default_str();
  auto* p_csize = prompts_cmd->add_option("-c,--context-size", context_size)->capture_default_str();
  prompts_cmd->add_option("--out", out_path, "Prompt JSONL")->required();

  // score
  auto* score = app.add_subcommand("score", "Score utterances and report corpus MLL");
  std::string ablate, sweep;
  auto* s_manifest = score->add_option("--manifest", manifest);
  auto* s_tokens = score->add_option("--tokens", tokens);
  auto* s_templates = score->add_option("--templates", templates_file);
  auto* s_template = score->add_option("--template", template_id)->capture_default_str();
  auto* s_context = score->add_option("--context", context)->capture_default_str();
  auto* s_csize = score->add_option("-c,--context-size", context_size)->capture_default_str();
  auto* s_backend = score->add_option("--backend", backend_spec, "ngram:<model.json> | http:<url> | uniform:<size>");
  auto* s_model = score->add_option("--model-id", model_id, "Model name sent to an HTTP backend");
  auto* s_inflight = score->add_option("--max-in-flight", max_in_flight)->capture_default_str();
  auto* s_cache = score->add_option("--cache", cache_path, "Score cache JSONL (read and appended)");
  auto* s_out = score->add_option("--out-dir", out_dir);
  score->add_option("--ablate-lengths", ablate, "e.g. 500,1000,max");
  score->add_option("--context-sizes", sweep, "e.g. 0..6");

  // ngram-train
  auto* ngram = app.add_subcommand("ngram-train", "Train the character n-gram scorer on rendered sequences");
  std::size_t order = 5;
  double alpha = 0.1, adaptation = 0.0;
  std::string exclude_manifest;
  auto* n_tokens = ngram->add_option("--tokens", tokens, "Token JSONL to render and train on");
  ngram->add_option("--exclude", exclude_manifest, "Manifest whose utterances are left out");
  ngram->add_option("--order", order)->capture_default_str();
  ngram->add_option("--alpha", alpha, "Additive smoothing")->capture_default_str();
  ngram->add_option("--adaptation", adaptation, "Weight of the in-prompt cache model")
      ->capture_default_str();
  ngram->add_option("--out", out_path)->required();

  // correlate
  auto* correlate = app.add_subcommand("correlate", "Pearson correlation of per-utterance MLL");
  std::string scores_a, scores_b;
  correlate->add_option("--a", scores_a, "Score JSONL")->required();
  correlate->add_option("--b", scores_b, "Score JSONL")->required();
  auto* c_out = correlate->add_option("--out-dir", out_dir);

  // rank
  auto* rank = app.add_subcommand("rank", "Compare model ranking by MLL with an external metric");
  std::vector<std::string> summaries;
  std::string mll_table, metrics_path;
  bool higher_is_better = false;
  rank->add_option("--summary", summaries, "MODEL=summary.json (repeatable)");
  rank->add_option("--mll-table", mll_table, "CSV with header model_id,mll");
  rank->add_option("--metrics", metrics_path, "CSV with header model_id,metric")->required();
  rank->add_flag("--higher-is-better", higher_is_better, "Metric improves upwards");
  auto* r_out = rank->add_option("--out-dir", out_dir);

  // layers
  auto* layers = app.add_subcommand("layers", "Corpus MLL per encoder layer");
  std::vector<std::string> layer_scores;
  std::string layer_model;
  layers->add_option("--model-id", layer_model)->required();
  layers->add_option("--layer", layer_scores, "LAYER=scores.jsonl (repeatable)")->required();
  auto* l_out = layers->add_option("--out-dir", out_dir);

  // sv
  auto* sv = app.add_subcommand("sv", "Speaker verification EER from pooled embeddings");
  std::string embedding_kind = "frames";
  std::size_t pca_dim = kDefaultPcaDim;
  std::size_t utts_per_speaker = kDefaultUtterancesPerSpeaker;
  auto* v_manifest = sv->add_option("--manifest", manifest, "Manifest whose features are embedding FMATs");
  sv->add_option("--embedding", embedding_kind, "frames | centroid")->capture_default_str();
  auto* v_tokens = sv->add_option("--tokens", tokens, "Token JSONL (centroid)");
  auto* v_codebook = sv->add_option("--codebook", codebook, "Codebook (centroid)");
  sv->add_option("--pca-dim", pca_dim, "0 keeps the pooled vectors as they are")->capture_default_str();
  sv->add_option("--utts-per-speaker", utts_per_speaker)->capture_default_str();
  auto* v_out = sv->add_option("--out-dir", out_dir);

  auto* selftest = app.add_subcommand("selftest", "Run built-in sanity checks");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << ErrorJson("usage", e.what()) << '\n';
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    InitLogging(log_level);
    RunConfig cfg;
    if (!config_path.empty()) cfg = LoadRunConfig(config_path);

    auto pick = [](CLI::Option* opt, auto& value, const auto& from_config) {
      if (opt->count() == 0 && from_config) value = *from_config;
    };
    auto pick_path = [](CLI::Option* opt, std::string& value,
                        const std::optional<fs::path>& from_config) {
      if (opt->count() == 0 && from_config) value = from_config->string();
    };
    pick(opt_seed, seed, cfg.seed);
    pick(opt_jobs, jobs, cfg.jobs);
    pick(opt_norm, norm, cfg.norm);
    Normalization mode = ParseNormalization(norm);

    auto need = [](const std::string& value, const char* flag) {
      if (value.empty()) {
        throw Error(ErrorKind::kInvalidArgument, std::string(flag) + " is required");
      }
    };

    if (*kmeans) {
      auto files = GlobFiles(features_glob);
      if (files.empty()) {
        throw Error(ErrorKind::kNotFound, "no features matched '" + features_glob + "'");
      }
      auto picked = SampleUtterances(files.size(), sample_fraction, seed);
      std::vector<FeatureMatrix> parts;
      for (std::size_t i : picked) parts.push_back(LoadFeatures(files[i]));
      FeatureMatrix frames = ConcatFrames(parts);
      KMeansOptions opts;
      opts.num_clusters = num_clusters;
      opts.seed = seed;
      opts.max_iters = max_iters;
      opts.tol = tol;
      opts.jobs = LocalJobs(jobs);
      Codebook cb = KMeansTrain(frames, opts);
      SaveCodebook(out_path, cb);
      out << Dump({{"codebook", out_path},
                   {"num_clusters", cb.num_clusters},
                   {"dim", cb.dim},
                   {"seed", seed},
                   {"n_files", files.size()},
                   {"n_sampled", picked.size()},
                   {"n_frames", frames.rows()},
                   {"iterations_run", cb.iterations_run},
                   {"final_inertia", cb.final_inertia}});
      return 0;
    }

    if (*quantize) {
      pick_path(q_manifest, manifest, cfg.manifest);
      pick_path(q_codebook, codebook, cfg.codebook);
      need(manifest, "--manifest");
      need(codebook, "--codebook");
      RequireFile(manifest, "manifest");
      RequireFile(codebook, "codebook");
      auto records = LoadManifest(manifest);
      Codebook cb = LoadCodebook(codebook);
      fs::path base = fs::path(manifest).parent_path();
      std::string text;
      for (const auto& r : records) {
        FeatureMatrix feats = LoadFeatures(ResolveFeaturePath(r, base));
        TokenSequence raw = Assign(cb, feats, LocalJobs(jobs));
        raw.source_utterance = r.utterance_id;
        if (raw.tokens.empty()) spdlog::warn("utterance '{}' has no frames", r.utterance_id);
        text += TokenLine({r.utterance_id, raw.tokens, Dedup(raw).tokens}) + "\n";
      }
      WriteText(out_path, text);
      return 0;
    }

    auto load_prompt_inputs = [&](CLI::Option* om, CLI::Option* ot, CLI::Option* otf, CLI::Option* oti,
                                  CLI::Option* oc, CLI::Option* ocs) {
      pick_path(om, manifest, cfg.manifest);
      pick_path(ot, tokens, cfg.tokens);
      pick_path(otf, templates_file, cfg.templates);
      pick(oti, template_id, cfg.template_id);
      pick(oc, context, cfg.context);
      pick(ocs, context_size, cfg.context_size);
      need(manifest, "--manifest");
      need(tokens, "--tokens");
      RequireFile(manifest, "manifest");
      RequireFile(tokens, "token file");
    };

    if (*prompts_cmd) {
      load_prompt_inputs(p_manifest, p_tokens, p_templates, p_template, p_context, p_csize);
      auto records = LoadManifest(manifest);
      auto seqs = ToSequenceMap(LoadTokenFile(tokens));
      auto templates = templates_file.empty() ? BuiltinTemplates() : LoadTemplates(templates_file);
      const auto& tmpl = FindTemplate(templates, template_id);
      ContextMode cmode = ParseContextMode(context);
      std::string text;
      for (const auto& r : records) {
        auto p = BuildPrompt(records, seqs, r.utterance_id, tmpl, cmode, context_size);
        text += json{{"id", p.utterance_id},
                     {"template", p.template_id},
                     {"context", ToString(p.mode)},
                     {"context_size", p.context_size},
                     {"prompt", p.prompt_text},
                     {"target", p.target_text}}
                    .dump() +
                "\n";
      }
      WriteText(out_path, text);
      return 0;
    }

    if (*score) {
      load_prompt_inputs(s_manifest, s_tokens, s_templates, s_template, s_context, s_csize);
      pick(s_backend, backend_spec, cfg.backend);
      pick(s_model, model_id, cfg.model_id);
      pick(s_inflight, max_in_flight, cfg.max_in_flight);
      pick_path(s_cache, cache_path, cfg.cache);
      pick_path(s_out, out_dir, cfg.out_dir);
      need(backend_spec, "--backend");
      need(out_dir, "--out-dir");

      auto records = LoadManifest(manifest);
      auto seqs = ToSequenceMap(LoadTokenFile(tokens));
      auto templates = templates_file.empty() ? BuiltinTemplates() : LoadTemplates(templates_file);
      const auto& tmpl = FindTemplate(templates, template_id);
      ContextMode cmode = ParseContextMode(context);
      auto handle = MakeBackend(backend_spec, model_id, max_in_flight);
      const std::size_t workers = jobs > 0 ? jobs : handle.remote ? handle.max_in_flight : LocalJobs(0);

      std::unique_ptr<ScoreCache> cache;
      if (!cache_path.empty()) cache = std::make_unique<ScoreCache>(cache_path);

      std::vector<RenderedPrompt> prompts;
      std::vector<TokenSequence> targets;
      std::vector<std::string> target_ids;
      std::size_t skipped = 0;
      for (const auto& r : records) {
        auto it = seqs.find(r.utterance_id);
        if (it == seqs.end()) {
          throw Error(ErrorKind::kNotFound, "no tokens for utterance '" + r.utterance_id + "'");
        }
        if (it->second.tokens.empty()) {
          spdlog::warn("skipping '{}': empty token sequence", r.utterance_id);
          ++skipped;
          continue;
        }
        prompts.push_back(BuildPrompt(records, seqs, r.utterance_id, tmpl, cmode, context_size));
        targets.push_back(it->second);
        target_ids.push_back(r.utterance_id);
      }
      if (prompts.empty()) throw Error(ErrorKind::kInsufficientData, "nothing to score");

      ScoringOptions sopts;
      sopts.jobs = workers;
      sopts.cache = cache.get();
      auto scored = ScoreAll(*handle.backend, prompts, targets, sopts);

      std::string lines;
      double sum_logprob = 0.0;
      for (std::size_t i = 0; i < scored.size(); ++i) {
        ScoreKey key{handle.backend->name(), handle.backend->version(), tmpl.id, cmode,
                     prompts[i].context_size, prompts[i].utterance_id, std::nullopt};
        lines += ScoreLine(key, scored[i]) + "\n";
      }
      std::vector<double> sums;
      for (const auto& s : scored) sums.push_back(s.sum_logprob);
      std::sort(sums.begin(), sums.end());
      for (double s : sums) sum_logprob += s;

      fs::create_directories(out_dir);
      WriteText(fs::path(out_dir) / "scores.jsonl", lines);

      json summary{{"backend", handle.backend->name()},
                   {"backend_version", handle.backend->version()},
                   {"template", tmpl.id},
                   {"context", ToString(cmode)},
                   {"context_size", prompts.front().context_size},
                   {"norm", ToString(mode)},
                   {"seed", seed},
                   {"n_utterances", scored.size()},
                   {"n_skipped", skipped},
                   {"sum_logprob", sum_logprob},
                   {"corpus_mll", CorpusMll(scored, mode)},
                   {"generated_at", UtcNow()}};

      if (!ablate.empty()) {
        std::vector<CharLimit> limits;
        std::stringstream ss(ablate);
        std::string item;
        while (std::getline(ss, item, ',')) limits.push_back(ParseCharLimit(item));
        auto rows = AblateLength(*handle.backend, prompts, targets, limits, mode, workers, cache.get());
        std::ostringstream csv;
        WriteAblationCsv(csv, rows);
        WriteText(fs::path(out_dir) / "ablation.csv", csv.str());
        json arr = json::array();
        for (const auto& r : rows) arr.push_back({{"char_limit", ToString(r.limit)}, {"mll", r.mll}});
        summary["ablation"] = arr;
      }
      if (!sweep.empty()) {
        auto sizes = ParseSizeList(sweep);
        SweepInputs in;
        in.records = &records;
        in.sequences = &seqs;
        in.prompt_template = &tmpl;
        in.backend = handle.backend.get();
        in.targets = target_ids;
        in.mode = mode;
        in.jobs = workers;
        in.cache = cache.get();
        auto rows = ContextSweep(in, sizes);
        std::ostringstream csv;
        WriteSweepCsv(csv, rows);
        WriteText(fs::path(out_dir) / "context_sweep.csv", csv.str());
        json arr = json::array();
        for (const auto& r : rows) arr.push_back({{"context_size", r.context_size}, {"mll", r.mll}});
        summary["context_sweep"] = arr;
      }
      if (cache) cache->Flush();
      WriteText(fs::path(out_dir) / "summary.json", Dump(summary));
      out << Dump(summary);
      return 0;
    }

    if (*ngram) {
      pick_path(n_tokens, tokens, cfg.tokens);
      need(tokens, "--tokens");
      RequireFile(tokens, "token file");
      std::set<std::string> excluded;
      if (!exclude_manifest.empty()) {
        for (const auto& r : LoadManifest(exclude_manifest)) excluded.insert(r.utterance_id);
      }
      std::vector<std::string> texts;
      for (const auto& t : LoadTokenFile(tokens)) {
        if (excluded.count(t.id) || t.dedup.empty()) continue;
        texts.push_back(RenderTokens(t.dedup));
      }
      if (texts.empty()) throw Error(ErrorKind::kInsufficientData, "no training sequences left");
      auto model = NgramModel::Train(texts, {order, alpha, adaptation});
      model.Save(out_path);
      out << Dump({{"model", out_path},
                   {"order", order},
                   {"alpha", alpha},
                   {"adaptation", adaptation},
                   {"n_texts", texts.size()},
                   {"version", model.version()}});
      return 0;
    }

    auto emit = [&](CLI::Option* o, const std::string& stem, const std::string& csv, const json& j) {
      pick_path(o, out_dir, cfg.out_dir);
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        WriteText(fs::path(out_dir) / (stem + ".csv"), csv);
        WriteText(fs::path(out_dir) / (stem + ".json"), Dump(j));
      }
      out << Dump(j);
    };

    if (*correlate) {
      RequireFile(scores_a, "score file");
      RequireFile(scores_b, "score file");
      auto a = RecordsOf(scores_a);
      auto b = RecordsOf(scores_b);
      auto pairs = PairScores(a, b, mode);
      json j{{"a", scores_a}, {"b", scores_b}, {"norm", ToString(mode)}, {"n", pairs.x.size()}};
      try {
        j["pearson"] = Pearson(pairs);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kUndefined && e.kind() != ErrorKind::kInsufficientData) throw;
        j["pearson"] = nullptr;
        j["reason"] = e.what();
      }
      std::ostringstream csv;
      WritePairsCsv(csv, pairs);
      emit(c_out, "correlation", csv.str(), j);
      return 0;
    }

    if (*rank) {
      RequireFile(metrics_path, "metric table");
      std::map<std::string, double> mll;
      if (!mll_table.empty()) {
        RequireFile(mll_table, "MLL table");
        mll = LoadMetricTable(mll_table, "mll");
      }
      for (const auto& s : summaries) {
        auto [id, path] = SplitAssignment(s);
        RequireFile(path, "summary");
        if (!mll.emplace(id, SummaryMll(path)).second) {
          throw Error(ErrorKind::kValidation, "model '" + id + "' given twice");
        }
      }
      auto report = RankModels(mll, LoadMetricTable(metrics_path), !higher_is_better);
      std::ostringstream csv;
      WriteRankCsv(csv, report);
      emit(r_out, "rank", csv.str(), ToJson(report));
      return 0;
    }

    if (*layers) {
      std::map<int, std::vector<ScoreRecord>> per_layer;
      for (const auto& s : layer_scores) {
        auto [layer, path] = SplitAssignment(s);
        RequireFile(path, "score file");
        int l = 0;
        try {
          std::size_t pos = 0;
          l = std::stoi(layer, &pos);
          if (pos != layer.size()) throw std::invalid_argument(layer);
        } catch (const std::exception&) {
          throw Error(ErrorKind::kParse, "bad layer index '" + layer + "'");
        }
        if (!per_layer.emplace(l, RecordsOf(path)).second) {
          throw Error(ErrorKind::kValidation, "layer " + layer + " given twice");
        }
      }
      auto report = MakeLayerReport(layer_model, per_layer, mode);
      std::ostringstream csv;
      WriteLayerCsv(csv, report);
      emit(l_out, "layers", csv.str(), ToJson(report));
      return 0;
    }

    if (*sv) {
      pick_path(v_manifest, manifest, cfg.manifest);
      need(manifest, "--manifest");
      RequireFile(manifest, "manifest");
      auto records = LoadManifest(manifest);
      fs::path base = fs::path(manifest).parent_path();
      SpeakerEmbeddings pooled;
      if (embedding_kind == "frames") {
        for (const auto& r : records) {
          pooled[r.speaker_id].emplace_back(r.utterance_id,
                                            PoolFrames(LoadFeatures(ResolveFeaturePath(r, base))));
        }
      } else if (embedding_kind == "centroid") {
        pick_path(v_tokens, tokens, cfg.tokens);
        pick_path(v_codebook, codebook, cfg.codebook);
        need(tokens, "--tokens");
        need(codebook, "--codebook");
        RequireFile(tokens, "token file");
        RequireFile(codebook, "codebook");
        Codebook cb = LoadCodebook(codebook);
        std::map<std::string, TokenSequence> raw;
        for (const auto& t : LoadTokenFile(tokens)) raw[t.id] = TokenSequence{t.raw, false, t.id};
        for (const auto& r : records) {
          auto it = raw.find(r.utterance_id);
          if (it == raw.end()) {
            throw Error(ErrorKind::kNotFound, "no tokens for utterance '" + r.utterance_id + "'");
          }
          pooled[r.speaker_id].emplace_back(r.utterance_id, CentroidPool(it->second, cb));
        }
      } else {
        throw Error(ErrorKind::kInvalidArgument, "--embedding must be frames or centroid");
      }
      SvOptions opts{pca_dim, utts_per_speaker, seed};
      auto report = RunSpeakerVerification(pooled, opts);
      std::ostringstream csv;
      csv << "claimed_speaker,utterance_id,score,is_target\n";
      for (const auto& t : report.scored) {
        csv << t.claimed_speaker << ',' << t.utterance_id << ',' << FormatDouble(t.score) << ','
            << (t.is_target ? 1 : 0) << '\n';
      }
      json j{{"eer", report.eer.eer},
             {"threshold", report.eer.threshold},
             {"n_target", report.trials.n_target},
             {"n_impostor", report.trials.n_impostor},
             {"n_verification_utterances", report.trials.n_verification_utterances},
             {"embedding", embedding_kind},
             {"pca_dim", pca_dim},
             {"seed", seed}};
      emit(v_out, "sv", csv.str(), j);
      return 0;
    }

    if (*selftest) {
      json j = RunSelftest();
      out << Dump(j);
      return j["ok"].get<bool>() ? 0 : 1;
    }
  } catch (const Error& e) {
    err << ErrorJson(ToString(e.kind()), e.what()) << '\n';
    return 1;
  } catch (const json::exception& e) {
    err << ErrorJson("parse_error", e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << ErrorJson("internal_error", e.what()) << '\n';
    return 1;
  }
  return 0;
}

}  // namespace unitmll
