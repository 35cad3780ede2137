// Writes the deterministic synthetic story corpus to a file.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "ternarylm/io.hpp"
#include "ternarylm/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic character-level training corpus."};
  std::size_t bytes = 1'000'000;
  std::uint64_t seed = 0;
  std::string out;
  app.add_option("--bytes", bytes, "approximate corpus size")->capture_default_str();
  app.add_option("--seed", seed, "generator seed")->capture_default_str();
  app.add_option("--out", out, "output file")->required();
  CLI11_PARSE(app, argc, argv);
  try {
    ternarylm::write_file_atomic(out, ternarylm::synthetic_corpus(bytes, seed));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "make_corpus: %s\n", e.what());
    return 1;
  }
  return 0;
}
