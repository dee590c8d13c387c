#include "tps/backend.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "tps/errors.hpp"
#include "tps/io.hpp"

namespace tps::lm {

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string Request::canonical() const {
  return nlohmann::json{{"endpoint", endpoint}, {"body", body}}.dump();
}

std::string Request::key() const { return sha256_hex(canonical()); }

std::unique_ptr<ReplayBackend> ReplayBackend::parse(std::istream& in) {
  auto backend = std::make_unique<ReplayBackend>();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      Request req{rec.at("request").at("endpoint").get<std::string>(), rec.at("request").at("body")};
      const auto key = rec.at("key").get<std::string>();
      if (req.key() != key)
        throw ValidationError("key does not match the SHA-256 of the recorded request");
      backend->responses_.insert_or_assign(key, rec.at("response"));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("fixture line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("fixture line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return backend;
}

std::unique_ptr<ReplayBackend> ReplayBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open fixture " + path.string());
  return parse(in);
}

nlohmann::json ReplayBackend::send(const Request& request) {
  const auto key = request.key();
  auto it = responses_.find(key);
  if (it == responses_.end()) throw ReplayMiss(key);
  return it->second;
}

nlohmann::json RecordingBackend::send(const Request& request) {
  auto response = inner_.send(request);
  std::lock_guard lock(mutex_);
  entries_.insert_or_assign(request.key(), Entry{{{"endpoint", request.endpoint}, {"body", request.body}}, response});
  return response;
}

void RecordingBackend::write(std::ostream& out) const {
  std::lock_guard lock(mutex_);
  for (const auto& [key, entry] : entries_) {
    out << nlohmann::json{{"key", key}, {"request", entry.request}, {"response", entry.response}}.dump() << '\n';
  }
}

void RecordingBackend::save(const std::filesystem::path& path) const {
  std::ostringstream buf;
  write(buf);
  io::write_file_atomic(path, buf.str());
}

std::size_t RecordingBackend::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

RetryingBackend::RetryingBackend(Backend& inner, RetryPolicy policy, Sleeper sleeper)
    : inner_(inner), policy_(policy), sleeper_(std::move(sleeper)) {
  if (policy_.retries < 0) throw ValidationError("retries must be >= 0");
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

nlohmann::json RetryingBackend::send(const Request& request) {
  auto delay = policy_.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      return inner_.send(request);
    } catch (const BackendError& e) {
      if (!e.transient() || attempt >= policy_.retries) {
        if (attempt == 0) throw;
        throw BackendError(std::string(e.what()) + " (after " + std::to_string(attempt + 1) + " attempts)", false);
      }
    }
    sleeper_(delay);
    delay = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * policy_.multiplier));
  }
}

std::vector<Fallible<nlohmann::json>> send_all(Backend& backend, std::span<const Request> requests,
                                               int max_in_flight, const std::atomic<bool>* cancel) {
  if (max_in_flight < 1) throw ValidationError("max_in_flight must be >= 1");

  // Deduplicate by key, keeping first-seen order.
  std::vector<std::size_t> slot_of(requests.size());
  std::vector<std::size_t> unique;
  {
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < requests.size(); ++i) {
      auto [it, inserted] = seen.try_emplace(requests[i].key(), unique.size());
      if (inserted) unique.push_back(i);
      slot_of[i] = it->second;
    }
  }

  std::vector<Fallible<nlohmann::json>> results(unique.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    while (true) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= unique.size()) return;
      if (cancel && cancel->load()) {
        results[slot].error = std::make_exception_ptr(BackendError("cancelled before dispatch", false));
        continue;
      }
      try {
        results[slot].value = backend.send(requests[unique[slot]]);
      } catch (...) {
        results[slot].error = std::current_exception();
      }
    }
  };

  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(max_in_flight), unique.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  std::vector<Fallible<nlohmann::json>> out;
  out.reserve(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) out.push_back(results[slot_of[i]]);
  return out;
}

}  // namespace tps::lm
