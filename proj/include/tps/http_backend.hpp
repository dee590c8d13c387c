#pragma once

#include <chrono>
#include <optional>
#include <string>

#include "tps/backend.hpp"

namespace tps::lm {

struct HttpOptions {
  /// scheme://host[:port][/prefix]; request endpoints are appended to the prefix.
  std::string base_url;
  std::optional<std::string> api_key;
  std::chrono::milliseconds timeout{30000};
};

/// POSTs JSON bodies over HTTP(S). Connection failures, timeouts, 429 and 5xx
/// are reported as transient BackendErrors.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpOptions options);

  nlohmann::json send(const Request& request) override;

 private:
  HttpOptions options_;
  std::string origin_;
  std::string prefix_;
};

}  // namespace tps::lm
