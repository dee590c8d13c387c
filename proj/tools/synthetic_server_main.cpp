#include <atomic>
#include <chrono>
#include <csignal>
#include <iostream>
#include <thread>

#include "synthetic_model.hpp"

namespace {
std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop.store(true); }
}  // namespace

int main() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  tps::synthetic::SyntheticServer server;
  std::cout << server.url() << std::endl;
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  std::cerr << "served " << server.requests_served() << " requests\n";
  return 0;
}
