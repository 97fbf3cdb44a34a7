#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cslb/error.hpp"
#include "cslb/model.hpp"
#include "cslb/optim.hpp"

// Checkpoint container:
//   "CSLB" | version u32 LE | header size u64 LE | UTF-8 JSON header |
//   zero padding to a 64-byte boundary | tensor payloads.
// Tensor offsets in the header are relative to the payload base (the first
// 64-aligned byte after the header); every payload starts 64-aligned. Values
// are raw little-endian IEEE-754 in declaration order: parameters first,
// then optimizer moments (opt.m.*, opt.v.*) when present.
namespace cslb {

inline constexpr char kCheckpointMagic[4] = {'C', 'S', 'L', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() { return "f32"; }
template <>
constexpr const char* dtype_name<double>() { return "f64"; }

struct CheckpointInfo {
  nlohmann::json config;
  std::int64_t step = 0;
  std::int64_t opt_step = 0;
  std::string rng_state;
  bool has_optimizer = false;
};

namespace detail {

inline std::uint64_t align64(std::uint64_t n) { return (n + 63) & ~63ull; }

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& s, size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const std::string& s, size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const TransformerModel<S>& model,
                     const AdamW<S>* opt, std::int64_t step,
                     const std::string& rng_state,
                     const nlohmann::json& config_echo) {
  struct Entry {
    std::string name;
    const void* data;
    std::uint64_t bytes;
    Shape shape;
  };
  std::vector<Entry> entries;
  for (size_t p = 0; p < model.num_params(); ++p) {
    const auto& t = model.params()[p];
    entries.push_back({model.names()[p], t.ptr(),
                       static_cast<std::uint64_t>(t.numel()) * sizeof(S),
                       t.shape});
  }
  if (opt) {
    auto& m = const_cast<AdamW<S>*>(opt)->first_moments();
    auto& v = const_cast<AdamW<S>*>(opt)->second_moments();
    for (size_t p = 0; p < model.num_params(); ++p)
      entries.push_back({"opt.m." + model.names()[p], m[p].data(),
                         m[p].size() * sizeof(S),
                         model.params()[p].shape});
    for (size_t p = 0; p < model.num_params(); ++p)
      entries.push_back({"opt.v." + model.names()[p], v[p].data(),
                         v[p].size() * sizeof(S),
                         model.params()[p].shape});
  }

  nlohmann::json table = nlohmann::json::array();
  std::vector<std::uint64_t> offsets;
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    nlohmann::json row;
    row["name"] = e.name;
    row["shape"] = e.shape;
    row["offset"] = offset;
    row["bytes"] = e.bytes;
    table.push_back(std::move(row));
    offsets.push_back(offset);
    offset = detail::align64(offset + e.bytes);
  }

  nlohmann::json header;
  header["config"] = config_echo;
  header["dtype"] = dtype_name<S>();
  header["step"] = step;
  header["rng"] = rng_state;
  if (opt) header["opt_step"] = opt->step();
  header["tensors"] = std::move(table);
  const std::string header_bytes = header.dump();

  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, header_bytes.size());
  out += header_bytes;
  out.resize(detail::align64(out.size()), '\0');
  const size_t payload_base = out.size();
  for (size_t i = 0; i < entries.size(); ++i) {
    out.resize(payload_base + offsets[i], '\0');
    out.append(static_cast<const char*>(entries[i].data), entries[i].bytes);
  }
  out.resize(detail::align64(out.size()), '\0');

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint write failed: " + path);
}

// Parses and validates the container, returning the JSON header.
inline nlohmann::json read_checkpoint_header(const std::string& path,
                                             std::string* raw_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string raw((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  if (raw.size() < 16 || std::memcmp(raw.data(), kCheckpointMagic, 4) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  const std::uint32_t version = detail::get_u32(raw, 4);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " in " + path);
  const std::uint64_t header_len = detail::get_u64(raw, 8);
  if (16 + header_len > raw.size())
    throw IoError("truncated checkpoint header: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  if (raw_out) *raw_out = std::move(raw);
  return header;
}

// Loads tensors by name into an already-constructed model (and optimizer,
// when given). Shapes and dtype must match exactly.
template <typename S>
CheckpointInfo load_checkpoint(const std::string& path,
                               TransformerModel<S>& model, AdamW<S>* opt) {
  std::string raw;
  nlohmann::json header = read_checkpoint_header(path, &raw);
  CheckpointInfo info;
  info.config = header.at("config");
  info.step = header.at("step").get<std::int64_t>();
  info.rng_state = header.at("rng").get<std::string>();
  info.has_optimizer = header.contains("opt_step");
  if (info.has_optimizer)
    info.opt_step = header.at("opt_step").get<std::int64_t>();

  const std::string want = dtype_name<S>();
  const std::string got = header.at("dtype").get<std::string>();
  if (got != want)
    throw ConfigError("checkpoint dtype is '" + got + "', expected '" + want +
                      "'");

  struct Entry {
    Shape shape;
    std::uint64_t offset, bytes;
  };
  std::map<std::string, Entry> table;
  const std::uint64_t payload_base =
      detail::align64(16 + header.dump().size());
  // The dump above may not match the on-disk header length byte for byte if
  // the file came from another writer; recompute from the stored length.
  const std::uint64_t disk_base =
      detail::align64(16 + detail::get_u64(raw, 8));
  (void)payload_base;
  for (const auto& row : header.at("tensors")) {
    Entry e;
    e.shape = row.at("shape").get<Shape>();
    e.offset = row.at("offset").get<std::uint64_t>();
    e.bytes = row.at("bytes").get<std::uint64_t>();
    table[row.at("name").get<std::string>()] = std::move(e);
  }

  auto copy_into = [&](const std::string& name, S* dst, const Shape& shape,
                       std::uint64_t numel) {
    auto it = table.find(name);
    if (it == table.end())
      throw ConfigError("checkpoint is missing tensor '" + name + "'");
    const Entry& e = it->second;
    if (e.shape != shape)
      throw ConfigError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(e.shape) + ", model expects " +
                        shape_str(shape));
    if (e.bytes != numel * sizeof(S))
      throw IoError("checkpoint tensor '" + name + "' has inconsistent size");
    if (disk_base + e.offset + e.bytes > raw.size())
      throw IoError("checkpoint payload for '" + name + "' is truncated");
    std::memcpy(dst, raw.data() + disk_base + e.offset, e.bytes);
  };

  for (size_t p = 0; p < model.num_params(); ++p) {
    auto& t = model.params()[p];
    copy_into(model.names()[p], t.ptr(), t.shape,
              static_cast<std::uint64_t>(t.numel()));
  }
  if (opt) {
    if (!info.has_optimizer)
      throw ConfigError("checkpoint has no optimizer state: " + path);
    for (size_t p = 0; p < model.num_params(); ++p) {
      auto& t = model.params()[p];
      copy_into("opt.m." + model.names()[p], opt->first_moments()[p].data(),
                t.shape, static_cast<std::uint64_t>(t.numel()));
      copy_into("opt.v." + model.names()[p], opt->second_moments()[p].data(),
                t.shape, static_cast<std::uint64_t>(t.numel()));
    }
    opt->set_step(info.opt_step);
  }
  return info;
}

}  // namespace cslb
