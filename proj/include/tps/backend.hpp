#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace tps::lm {

/// Failure talking to an inference backend. Transient failures (timeouts,
/// connection errors, 429/5xx) are retried; others are not.
class BackendError : public std::runtime_error {
 public:
  BackendError(const std::string& what, bool transient) : std::runtime_error(what), transient_(transient) {}
  [[nodiscard]] bool transient() const noexcept { return transient_; }

 private:
  bool transient_;
};

/// A replay fixture has no entry for the request.
class ReplayMiss : public BackendError {
 public:
  explicit ReplayMiss(const std::string& key)
      : BackendError("replay fixture has no entry for request " + key, false), key_(key) {}
  [[nodiscard]] const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

std::string sha256_hex(std::string_view data);

/// One HTTP+JSON call: a POST of `body` to `endpoint` (e.g. "/v1/completions").
struct Request {
  std::string endpoint;
  nlohmann::json body;

  /// {"endpoint":..., "body":...} with sorted keys, compact.
  [[nodiscard]] std::string canonical() const;
  /// SHA-256 of canonical(); the record/replay key.
  [[nodiscard]] std::string key() const;
};

/// Anything that turns a request into a response document. Implementations
/// must be safe to call from several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual nlohmann::json send(const Request& request) = 0;
};

/// Answers from a JSON-lines fixture of {"key", "request", "response"}
/// records. Read-only after construction.
class ReplayBackend final : public Backend {
 public:
  static std::unique_ptr<ReplayBackend> from_file(const std::filesystem::path& path);
  static std::unique_ptr<ReplayBackend> parse(std::istream& in);

  nlohmann::json send(const Request& request) override;
  [[nodiscard]] std::size_t size() const noexcept { return responses_.size(); }

 private:
  std::map<std::string, nlohmann::json> responses_;
};

/// Forwards to `inner` and keeps every successful exchange for save().
class RecordingBackend final : public Backend {
 public:
  explicit RecordingBackend(Backend& inner) : inner_(inner) {}

  nlohmann::json send(const Request& request) override;

  /// Writes one line per request, sorted by key, via a temp file + rename.
  void save(const std::filesystem::path& path) const;
  void write(std::ostream& out) const;
  [[nodiscard]] std::size_t size() const;

 private:
  struct Entry {
    nlohmann::json request;
    nlohmann::json response;
  };
  Backend& inner_;
  mutable std::mutex mutex_;
  std::map<std::string, Entry> entries_;
};

struct RetryPolicy {
  int retries = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
};

/// Retries transient BackendErrors with exponential backoff.
class RetryingBackend final : public Backend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  RetryingBackend(Backend& inner, RetryPolicy policy, Sleeper sleeper = {});

  nlohmann::json send(const Request& request) override;

 private:
  Backend& inner_;
  RetryPolicy policy_;
  Sleeper sleeper_;
};

/// Adapts a callable; handy for scripted backends.
class FunctionBackend final : public Backend {
 public:
  using Handler = std::function<nlohmann::json(const Request&)>;
  explicit FunctionBackend(Handler handler) : handler_(std::move(handler)) {}
  nlohmann::json send(const Request& request) override { return handler_(request); }

 private:
  Handler handler_;
};

template <class T>
struct Fallible {
  std::optional<T> value;
  std::exception_ptr error;

  [[nodiscard]] bool ok() const noexcept { return value.has_value(); }
  [[nodiscard]] std::string message() const {
    if (!error) return {};
    try {
      std::rethrow_exception(error);
    } catch (const std::exception& e) {
      return e.what();
    } catch (...) {
      return "unknown error";
    }
  }
};

/// Sends every request with at most `max_in_flight` outstanding; identical
/// requests are sent once. Results come back in input order regardless of
/// completion order. Once `cancel` is set no new request is dispatched and the
/// remainder fail with a non-transient BackendError.
std::vector<Fallible<nlohmann::json>> send_all(Backend& backend, std::span<const Request> requests,
                                               int max_in_flight, const std::atomic<bool>* cancel = nullptr);

}  // namespace tps::lm
