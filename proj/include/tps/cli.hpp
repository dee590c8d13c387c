#pragma once

#include <atomic>
#include <iosfwd>
#include <string>
#include <vector>

namespace tps::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitInterrupted = 130;

std::string_view version();

/// Entry point of the `tps` binary. `cancel` is polled between requests; once
/// set, in-flight requests finish, nothing new is sent, no result files are
/// written and the exit code is 130.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const std::atomic<bool>* cancel = nullptr);

}  // namespace tps::cli
