#include <atomic>
#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include "tps/cli.hpp"

namespace {

std::atomic<bool> g_cancel{false};
static_assert(std::atomic<bool>::is_always_lock_free);

extern "C" void on_sigint(int) { g_cancel.store(true); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_sigint);
  std::vector<std::string> args(argv, argv + argc);
  const int code = tps::cli::run(args, std::cout, std::cerr, &g_cancel);
  return g_cancel.load() ? tps::cli::kExitInterrupted : code;
}
