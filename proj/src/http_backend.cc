#include "unitmll/http_backend.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "unitmll/error.h"

namespace unitmll {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

Endpoint SplitUrl(const std::string& base_url) {
  auto scheme = base_url.find("://");
  if (scheme == std::string::npos) {
    throw Error(ErrorKind::kInvalidArgument, "backend URL needs a scheme: " + base_url);
  }
  auto slash = base_url.find('/', scheme + 3);
  Endpoint ep;
  ep.origin = base_url.substr(0, slash);
  if (slash != std::string::npos) ep.prefix = base_url.substr(slash);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

std::unique_ptr<httplib::Client> MakeClient(const BackendConfig& config, const Endpoint& ep,
                                            const std::optional<std::string>& token) {
  auto cli = std::make_unique<httplib::Client>(ep.origin);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);
  cli->set_connection_timeout(secs.count(), usecs.count());
  cli->set_read_timeout(secs.count(), usecs.count());
  cli->set_write_timeout(secs.count(), usecs.count());
  if (token) cli->set_bearer_token_auth(*token);
  return cli;
}

bool Transient(int status) {
  return status == 429 || status == 502 || status == 503 || status == 504;
}

std::vector<TokenScore> ParseScoreResponse(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kContract, std::string("score response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("tokens") || !j.contains("logprobs") ||
      !j["tokens"].is_array() || !j["logprobs"].is_array()) {
    throw Error(ErrorKind::kContract, "score response needs 'tokens' and 'logprobs' arrays");
  }
  const auto& tokens = j["tokens"];
  const auto& logprobs = j["logprobs"];
  if (tokens.size() != logprobs.size()) {
    throw Error(ErrorKind::kContract, "score response arrays differ in length");
  }
  std::vector<TokenScore> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!tokens[i].is_string()) {
      throw Error(ErrorKind::kContract, "score response token is not a string");
    }
    // nlohmann has no NaN/Inf literals; a null here means the server sent one.
    if (!logprobs[i].is_number()) {
      throw Error(ErrorKind::kContract, "token " + std::to_string(i) + " has non-finite logprob");
    }
    out.push_back({tokens[i].get<std::string>(), logprobs[i].get<double>()});
  }
  return out;
}

}  // namespace

std::optional<std::string> ResolveAuthToken(const BackendConfig& config) {
  if (config.auth_token) return config.auth_token;
  if (const char* env = std::getenv(kBackendTokenEnv); env && *env) return std::string(env);
  return std::nullopt;
}

BackendIdentity Healthcheck(const BackendConfig& config) {
  Endpoint ep = SplitUrl(config.base_url);
  auto cli = MakeClient(config, ep, ResolveAuthToken(config));
  const std::string path = ep.prefix + "/v1/health";
  auto res = cli->Get(path);
  if (!res) {
    throw Error(ErrorKind::kTransport, "GET " + config.base_url + "/v1/health failed: " +
                                           httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorKind::kHttpStatus, "GET " + path + " returned HTTP " +
                                            std::to_string(res->status));
  }
  try {
    auto j = nlohmann::json::parse(res->body);
    return {j.at("model_id").get<std::string>(), j.at("version").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kContract, std::string("malformed /v1/health response: ") + e.what());
  }
}

HttpBackend::HttpBackend(BackendConfig config)
    : config_(std::move(config)), token_(ResolveAuthToken(config_)) {
  if (config_.max_in_flight == 0) {
    throw Error(ErrorKind::kInvalidArgument, "max_in_flight must be >= 1");
  }
  SplitUrl(config_.base_url);
}

BackendIdentity HttpBackend::Connect() {
  identity_ = Healthcheck(config_);
  spdlog::info("backend {} reports model '{}' version '{}'", config_.base_url,
               identity_->model_id, identity_->version);
  return *identity_;
}

std::string HttpBackend::name() const {
  return "http:" + (identity_ ? identity_->model_id : config_.model_id);
}

std::string HttpBackend::version() const { return identity_ ? identity_->version : "unknown"; }

HttpStats HttpBackend::stats() const {
  std::lock_guard lock(mu_);
  return {requests_.load(), attempts_.load(), retries_.load(), max_in_flight_seen_};
}

void HttpBackend::Acquire() const {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
  ++in_flight_;
  max_in_flight_seen_ = std::max(max_in_flight_seen_, in_flight_);
}

void HttpBackend::Release() const {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

std::vector<TokenScore> HttpBackend::Score(std::string_view prompt, std::string_view target) const {
  Endpoint ep = SplitUrl(config_.base_url);
  const std::string path = ep.prefix + "/v1/score";
  const std::string body = nlohmann::json{{"model", config_.model_id},
                                          {"prompt", std::string(prompt)},
                                          {"target", std::string(target)}}
                               .dump();
  ++requests_;

  std::string last_failure;
  for (std::size_t attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      ++retries_;
      std::chrono::milliseconds backoff = std::min<std::chrono::milliseconds>(
          config_.initial_backoff * (1LL << std::min<std::size_t>(attempt - 1, 10)),
          std::chrono::milliseconds(5000));
      spdlog::warn("POST {}{} attempt {} failed ({}); retrying in {} ms", config_.base_url,
                   "/v1/score", attempt, last_failure, backoff.count());
      std::this_thread::sleep_for(backoff);
    }
    ++attempts_;

    httplib::Result res;
    {
      Acquire();
      struct Guard {
        const HttpBackend* self;
        ~Guard() { self->Release(); }
      } guard{this};
      auto cli = MakeClient(config_, ep, token_);
      res = cli->Post(path, body, "application/json");
    }

    if (!res) {
      last_failure = httplib::to_string(res.error());
      continue;
    }
    if (Transient(res->status)) {
      last_failure = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorKind::kHttpStatus,
                  "POST " + path + " returned HTTP " + std::to_string(res->status));
    }
    auto scores = ParseScoreResponse(res->body);
    CheckTokenScores(target, scores);
    return scores;
  }
  throw Error(ErrorKind::kTransport, "POST " + config_.base_url + "/v1/score failed after " +
                                         std::to_string(config_.max_retries + 1) +
                                         " attempts: " + last_failure);
}

}  // namespace unitmll
