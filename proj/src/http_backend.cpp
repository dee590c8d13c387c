#include "tps/http_backend.hpp"

#include <httplib.h>

#include "tps/errors.hpp"

namespace tps::lm {

HttpBackend::HttpBackend(HttpOptions options) : options_(std::move(options)) {
  const auto& url = options_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("base_url must include a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ValidationError("unsupported scheme in base_url: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  origin_ = url.substr(0, path_start);
  if (path_start != std::string::npos) prefix_ = url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  if (options_.timeout.count() <= 0) throw ValidationError("timeout must be positive");
}

nlohmann::json HttpBackend::send(const Request& request) {
  httplib::Client client(origin_);
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  client.set_write_timeout(options_.timeout);
  if (options_.api_key) client.set_bearer_token_auth(*options_.api_key);

  const auto path = prefix_ + request.endpoint;
  auto res = client.Post(path, request.body.dump(), "application/json");
  if (!res) throw BackendError("POST " + path + " failed: " + httplib::to_string(res.error()), true);

  const int status = res->status;
  if (status == 429 || status >= 500)
    throw BackendError("POST " + path + " returned HTTP " + std::to_string(status), true);
  if (status < 200 || status >= 300)
    throw BackendError("POST " + path + " returned HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200),
                       false);
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw BackendError("POST " + path + " returned malformed JSON: " + e.what(), false);
  }
}

}  // namespace tps::lm
