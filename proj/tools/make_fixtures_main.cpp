// Regenerates data/fixtures/<experiment>.jsonl by running `tps record` for
// every shipped config against the synthetic server.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "synthetic_model.hpp"
#include "tps/cli.hpp"
#include "tps/experiments.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: tps_make_fixtures <data-dir>\n";
    return 2;
  }
  const fs::path data(argv[1]);
  tps::synthetic::SyntheticServer server;
  int status = 0;
  for (const auto& h : tps::exp::harnesses()) {
    const std::string name(h.name);
    const auto config = data / "configs" / (name + ".json");
    const auto fixture = data / "fixtures" / (name + ".jsonl");
    fs::create_directories(fixture.parent_path());
    const std::vector<std::string> args{"tps", "record", name, "--config", config.string(), "--backend",
                                        server.url(), "--seed", "0", "--out", fixture.string()};
    const int code = tps::cli::run(args, std::cout, std::cerr);
    if (code != 0) {
      std::cerr << name << ": exit " << code << "\n";
      status = 1;
    }
  }
  return status;
}
