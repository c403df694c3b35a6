#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dfrec/nn.hpp"
#include "dfrec/optimizer.hpp"

namespace dfrec {

// Binary tensor container ("DFRT"): little-endian, one record per tensor
// (name, dtype, shape, raw values). Reload reproduces values bit-exactly in
// the same precision mode.

namespace ckpt_detail {

template <typename T>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

inline void write_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_i64(std::ofstream& f, std::int64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
inline std::uint32_t read_u32(std::ifstream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline std::int64_t read_i64(std::ifstream& f) {
  std::int64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

template <typename T>
void write_blob(std::ofstream& f, const std::string& name, const Shape& shape, const std::vector<T>& data) {
  write_u32(f, static_cast<std::uint32_t>(name.size()));
  f.write(name.data(), static_cast<std::streamsize>(name.size()));
  const std::uint8_t tag = dtype_tag<T>();
  f.write(reinterpret_cast<const char*>(&tag), 1);
  write_u32(f, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) write_i64(f, d);
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
}

template <typename T>
void read_blob(std::ifstream& f, std::string& name, Shape& shape, std::vector<T>& data) {
  const std::uint32_t nlen = read_u32(f);
  name.resize(nlen);
  f.read(name.data(), nlen);
  std::uint8_t tag = 0;
  f.read(reinterpret_cast<char*>(&tag), 1);
  if (tag != dtype_tag<T>())
    throw ConfigError("checkpoint dtype does not match the requested precision mode");
  const std::uint32_t rank = read_u32(f);
  shape.resize(rank);
  for (auto& d : shape) d = read_i64(f);
  data.resize(static_cast<std::size_t>(numel(shape)));
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!f) throw IoError("truncated checkpoint blob: " + name);
}

}  // namespace ckpt_detail

// Writes parameters whose names start with `prefix` (empty = all).
template <typename T>
void save_params(const std::filesystem::path& path, const ParamStore<T>& params, const std::string& prefix = "") {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write("DFRT", 4);
  ckpt_detail::write_u32(f, 1);
  std::uint32_t count = 0;
  for (const auto& p : params.all())
    if (p->name.rfind(prefix, 0) == 0) ++count;
  ckpt_detail::write_u32(f, count);
  for (const auto& p : params.all())
    if (p->name.rfind(prefix, 0) == 0) ckpt_detail::write_blob(f, p->name, p->shape, p->value);
  if (!f) throw IoError("write failed: " + path.string());
}

// Loads values into already-registered parameters; names and shapes must
// match the model exactly.
template <typename T>
void load_params(const std::filesystem::path& path, ParamStore<T>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, "DFRT", 4) != 0) throw IoError("not a dfrec checkpoint: " + path.string());
  const std::uint32_t version = ckpt_detail::read_u32(f);
  if (version != 1) throw IoError("unsupported checkpoint version");
  const std::uint32_t count = ckpt_detail::read_u32(f);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name;
    Shape shape;
    std::vector<T> data;
    ckpt_detail::read_blob(f, name, shape, data);
    ParamTensor<T>& p = params.at(name);
    if (p.shape != shape)
      throw ConfigError("checkpoint shape mismatch for " + name + ": " + shape_str(shape) + " vs " + shape_str(p.shape));
    p.value = std::move(data);
  }
}

// Optimizer state: step counter plus first/second moments per parameter.
template <typename T>
void save_optimizer(const std::filesystem::path& path, const ParamStore<T>& params, std::int64_t step) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write("DFRO", 4);
  ckpt_detail::write_u32(f, 1);
  ckpt_detail::write_i64(f, step);
  std::uint32_t count = 0;
  for (const auto& p : params.all())
    if (p->trainable) ++count;
  ckpt_detail::write_u32(f, count);
  for (const auto& p : params.all()) {
    if (!p->trainable) continue;
    std::vector<T> m = p->adam_m.empty() ? std::vector<T>(p->value.size(), T(0)) : p->adam_m;
    std::vector<T> v = p->adam_v.empty() ? std::vector<T>(p->value.size(), T(0)) : p->adam_v;
    ckpt_detail::write_blob(f, p->name + "#m", p->shape, m);
    ckpt_detail::write_blob(f, p->name + "#v", p->shape, v);
  }
  if (!f) throw IoError("write failed: " + path.string());
}

template <typename T>
std::int64_t load_optimizer(const std::filesystem::path& path, ParamStore<T>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, "DFRO", 4) != 0) throw IoError("not an optimizer state file: " + path.string());
  if (ckpt_detail::read_u32(f) != 1) throw IoError("unsupported optimizer state version");
  const std::int64_t step = ckpt_detail::read_i64(f);
  const std::uint32_t count = ckpt_detail::read_u32(f);
  for (std::uint32_t i = 0; i < 2 * count; ++i) {
    std::string name;
    Shape shape;
    std::vector<T> data;
    ckpt_detail::read_blob(f, name, shape, data);
    const auto hash_pos = name.rfind('#');
    if (hash_pos == std::string::npos) throw IoError("malformed optimizer record: " + name);
    ParamTensor<T>& p = params.at(name.substr(0, hash_pos));
    if (name.substr(hash_pos) == "#m") p.adam_m = std::move(data);
    else p.adam_v = std::move(data);
  }
  return step;
}

}  // namespace dfrec
