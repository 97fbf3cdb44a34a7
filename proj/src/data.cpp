#include "cslb/data.hpp"

#include <cctype>
#include <fstream>
#include <random>
#include <sstream>

#include "cslb/error.hpp"

namespace cslb {

std::vector<std::int32_t> tokenize_bytes(std::string_view text) {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<std::int32_t>(c));
  return ids;
}

std::string detokenize_bytes(std::span<const std::int32_t> ids) {
  std::string out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(static_cast<char>(id & 0xff));
  return out;
}

std::string token_display(std::int32_t id) {
  static const char* hex = "0123456789abcdef";
  if (id >= 0x20 && id < 0x7f) return std::string(1, static_cast<char>(id));
  std::string s = "\\x00";
  s[2] = hex[(id >> 4) & 0xf];
  s[3] = hex[id & 0xf];
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failed: " + path);
  return buf.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path);
}

std::vector<std::int32_t> load_corpus(const std::string& path) {
  return tokenize_bytes(read_file(path));
}

std::string synthetic_text(size_t n_bytes, std::uint64_t seed) {
  static const char* kWords[] = {
      "the", "of", "and", "to", "in", "a", "is", "that", "for", "it",
      "signal", "layer", "stream", "model", "token", "depth", "state",
      "weight", "value", "input", "output", "path", "norm", "field",
      "wave", "phase", "shift", "scale", "graph", "node", "edge", "line",
      "sum", "mean", "rate", "step", "loss", "gain", "gate", "mask",
      "light", "sound", "stone", "river", "cloud", "grain", "metal",
      "forest", "window", "signal", "matrix", "vector", "number", "series",
      "theory", "method", "result", "effect", "cause", "change", "order",
      "system", "energy", "motion", "source", "target", "sample", "basis",
  };
  constexpr size_t kNumWords = sizeof(kWords) / sizeof(kWords[0]);
  std::mt19937_64 rng(seed);
  std::string out;
  out.reserve(n_bytes + 64);
  bool sentence_start = true;
  size_t words_in_sentence = 0;
  size_t sentences_in_paragraph = 0;
  while (out.size() < n_bytes) {
    std::string word = kWords[rng() % kNumWords];
    if (sentence_start) word[0] = static_cast<char>(std::toupper(word[0]));
    out += word;
    sentence_start = false;
    ++words_in_sentence;
    const std::uint64_t r = rng() % 100;
    if (words_in_sentence >= 4 && r < 18) {
      ++sentences_in_paragraph;
      if (sentences_in_paragraph >= 5 && rng() % 3 == 0) {
        out += ".\n";
        sentences_in_paragraph = 0;
      } else {
        out += ". ";
      }
      sentence_start = true;
      words_in_sentence = 0;
    } else if (r < 28) {
      out += ", ";
    } else {
      out += ' ';
    }
  }
  out.resize(n_bytes);
  return out;
}

}  // namespace cslb
