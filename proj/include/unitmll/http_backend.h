#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unitmll/scoring.h"

namespace unitmll {

inline constexpr const char* kBackendTokenEnv = "UNITMLL_BACKEND_TOKEN";

struct BackendConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8080 or http://host/prefix
  std::string model_id;
  std::chrono::milliseconds timeout{30000};
  std::size_t max_retries = 3;
  std::size_t max_in_flight = 4;
  std::optional<std::string> auth_token;
  std::chrono::milliseconds initial_backoff{200};
};

// Falls back to UNITMLL_BACKEND_TOKEN when config.auth_token is unset.
std::optional<std::string> ResolveAuthToken(const BackendConfig& config);

struct BackendIdentity {
  std::string model_id;
  std::string version;
};

// GET {base_url}/v1/health. Throws kTransport or kHttpStatus (naming the
// endpoint) on failure.
BackendIdentity Healthcheck(const BackendConfig& config);

struct HttpStats {
  std::size_t requests = 0;
  std::size_t attempts = 0;
  std::size_t retries = 0;
  std::size_t max_observed_in_flight = 0;
};

// Scores through POST {base_url}/v1/score:
//   request  {"model": str, "prompt": str, "target": str}
//   response {"tokens": [str], "logprobs": [float]}
// Transport failures and 429/502/503/504 are retried with exponential
// backoff; contract violations and other statuses fail immediately. At most
// max_in_flight requests are outstanding across all calling threads.
class HttpBackend final : public ScorerBackend {
 public:
  explicit HttpBackend(BackendConfig config);

  // Runs the health check and pins the identity used in cache keys.
  BackendIdentity Connect();

  std::vector<TokenScore> Score(std::string_view prompt, std::string_view target) const override;
  std::string name() const override;
  std::string version() const override;

  HttpStats stats() const;
  const BackendConfig& config() const { return config_; }

 private:
  void Acquire() const;
  void Release() const;

  BackendConfig config_;
  std::optional<std::string> token_;
  std::optional<BackendIdentity> identity_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable std::size_t in_flight_ = 0;
  mutable std::size_t max_in_flight_seen_ = 0;
  mutable std::atomic<std::size_t> requests_{0};
  mutable std::atomic<std::size_t> attempts_{0};
  mutable std::atomic<std::size_t> retries_{0};
};

}  // namespace unitmll
