#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cslb {

// Byte-level vocabulary: token id == byte value, vocab size 256.
std::vector<std::int32_t> tokenize_bytes(std::string_view text);
std::string detokenize_bytes(std::span<const std::int32_t> ids);

// Printable representation of a byte token for decode tables: the character
// itself when printable ASCII, otherwise a \xHH escape.
std::string token_display(std::int32_t id);

// Reads a whole file as bytes. Throws IoError.
std::vector<std::int32_t> load_corpus(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// Deterministic english-like filler text for smoke runs and benchmarks.
std::string synthetic_text(size_t n_bytes, std::uint64_t seed);

}  // namespace cslb
