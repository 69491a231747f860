#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fidlab/tensor.hpp"

namespace fidlab::ckpt {

// Single-file binary checkpoint. Little-endian layout:
//   magic[4] | u32 version | u32 n_meta | (u32 len, bytes, i64)* |
//   u32 n_tensors | (u32 len, bytes, u32 ndim, u64 dims..., f64 data...)*
// Shared framing for all model files; the magic distinguishes model kinds.

inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  std::string magic;  // exactly 4 characters
  std::map<std::string, std::int64_t> meta;
  std::vector<std::pair<std::string, num::Tensor>> tensors;

  const num::Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::runtime_error("checkpoint: missing tensor " + name);
  }
  std::int64_t meta_value(const std::string& name) const {
    auto it = meta.find(name);
    if (it == meta.end()) throw std::runtime_error("checkpoint: missing meta " + name);
    return it->second;
  }
};

namespace detail {

template <class T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));  // host is little-endian
}

template <class T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("checkpoint: truncated file");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

inline void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, std::uint32_t(s.size()));
  out.append(s);
}

inline std::string get_string(const std::string& in, std::size_t& pos) {
  const auto len = get<std::uint32_t>(in, pos);
  if (pos + len > in.size()) throw std::runtime_error("checkpoint: truncated string");
  std::string s = in.substr(pos, len);
  pos += len;
  return s;
}

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
  if (c.magic.size() != 4) throw std::invalid_argument("checkpoint: magic must be 4 bytes");
  std::string out;
  out.append(c.magic);
  detail::put<std::uint32_t>(out, kVersion);
  detail::put<std::uint32_t>(out, std::uint32_t(c.meta.size()));
  for (const auto& [name, value] : c.meta) {
    detail::put_string(out, name);
    detail::put<std::int64_t>(out, value);
  }
  detail::put<std::uint32_t>(out, std::uint32_t(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    detail::put_string(out, name);
    detail::put<std::uint32_t>(out, std::uint32_t(t.ndim()));
    for (std::size_t d : t.shape()) detail::put<std::uint64_t>(out, d);
    for (double v : t.data()) detail::put<double>(out, v);
  }
  return out;
}

inline Checkpoint deserialize(const std::string& bytes, const std::string& expected_magic) {
  if (bytes.size() < 8) throw std::runtime_error("checkpoint: file too small");
  Checkpoint c;
  c.magic = bytes.substr(0, 4);
  if (c.magic != expected_magic)
    throw std::runtime_error("checkpoint: expected magic " + expected_magic + ", found " + c.magic);
  std::size_t pos = 4;
  const auto version = detail::get<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");
  const auto n_meta = detail::get<std::uint32_t>(bytes, pos);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string name = detail::get_string(bytes, pos);
    c.meta[name] = detail::get<std::int64_t>(bytes, pos);
  }
  const auto n_tensors = detail::get<std::uint32_t>(bytes, pos);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = detail::get_string(bytes, pos);
    const auto ndim = detail::get<std::uint32_t>(bytes, pos);
    std::vector<std::size_t> shape(ndim);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = std::size_t(detail::get<std::uint64_t>(bytes, pos));
      count *= d;
    }
    std::vector<double> data(count);
    for (double& v : data) v = detail::get<double>(bytes, pos);
    c.tensors.emplace_back(std::move(name), num::Tensor(std::move(shape), std::move(data)));
  }
  return c;
}

inline void save(const std::string& path, const Checkpoint& c) {
  const std::string bytes = serialize(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  std::rename(tmp.c_str(), path.c_str());
}

inline Checkpoint load(const std::string& path, const std::string& expected_magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes, expected_magic);
}

}  // namespace fidlab::ckpt
