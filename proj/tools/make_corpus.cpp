// Writes a deterministic synthetic text corpus, handy for smoke runs when no
// real text file is at hand.
#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cslb/data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic byte-level text corpus"};
  std::string out = "corpus.txt";
  std::uint64_t bytes = 1 << 20;
  std::uint64_t seed = 1234;
  app.add_option("--out", out, "Output file");
  app.add_option("--bytes", bytes, "Corpus size in bytes");
  app.add_option("--seed", seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);
  try {
    cslb::write_file(out, cslb::synthetic_text(bytes, seed));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
