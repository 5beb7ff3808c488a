// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "alei/dataset.hpp"  // format_error

// Named-tensor archive ("ALEI"): magic, u16 version, u32 entry count,
// then per entry: u16 name length + utf8 name, u8 dtype (0=f32, 1=f64),
// u8 rank, u32 dims, little-endian payload. Round trips are bitwise.

namespace alei {

struct CheckpointEntry {
  std::uint8_t dtype = 0;  // 0=f32, 1=f64
  std::vector<int> shape;
  std::vector<unsigned char> payload;
};

class Checkpoint {
 public:
  std::map<std::string, CheckpointEntry> entries;

  template <class T>
  void put(const std::string& name, const Tensor<T>& t) {
    CheckpointEntry e;
    e.dtype = sizeof(T) == 4 ? 0 : 1;
    e.shape = t.shape();
    e.payload.resize(static_cast<size_t>(t.numel()) * sizeof(T));
    std::memcpy(e.payload.data(), t.data(), e.payload.size());
    entries[name] = std::move(e);
  }

  void put_scalar(const std::string& name, double v) {
    put(name, Tensor<double>::scalar(v));
  }

  bool contains(const std::string& name) const { return entries.count(name) != 0; }

  template <class T>
  void get(const std::string& name, Tensor<T>& dst) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw format_error("checkpoint missing entry: " + name);
    const auto& e = it->second;
    if (e.shape != dst.shape())
      throw format_error("checkpoint entry " + name + " has shape " +
                         shape_str(e.shape) + ", expected " + shape_str(dst.shape()));
    const std::uint8_t want = sizeof(T) == 4 ? 0 : 1;
    if (e.dtype == want) {
      std::memcpy(dst.data(), e.payload.data(), e.payload.size());
    } else if (e.dtype == 0) {
      const float* src = reinterpret_cast<const float*>(e.payload.data());
      for (long long i = 0; i < dst.numel(); ++i) dst.data()[i] = static_cast<T>(src[i]);
    } else {
      const double* src = reinterpret_cast<const double*>(e.payload.data());
      for (long long i = 0; i < dst.numel(); ++i) dst.data()[i] = static_cast<T>(src[i]);
    }
  }

  double get_scalar(const std::string& name) const {
    Tensor<double> t = Tensor<double>::scalar(0);
    get(name, t);
    return t.item();
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw format_error("cannot open for writing: " + path);
    f.write("ALEI", 4);
    const std::uint16_t version = 1;
    const std::uint32_t count = static_cast<std::uint32_t>(entries.size());
    f.write(reinterpret_cast<const char*>(&version), 2);
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, e] : entries) {
      const std::uint16_t nlen = static_cast<std::uint16_t>(name.size());
      f.write(reinterpret_cast<const char*>(&nlen), 2);
      f.write(name.data(), nlen);
      const std::uint8_t rank = static_cast<std::uint8_t>(e.shape.size());
      f.write(reinterpret_cast<const char*>(&e.dtype), 1);
      f.write(reinterpret_cast<const char*>(&rank), 1);
      for (int d : e.shape) {
        const std::uint32_t u = static_cast<std::uint32_t>(d);
        f.write(reinterpret_cast<const char*>(&u), 4);
      }
      f.write(reinterpret_cast<const char*>(e.payload.data()),
              static_cast<std::streamsize>(e.payload.size()));
    }
    if (!f) throw format_error("write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw format_error("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != "ALEI")
      throw format_error("bad checkpoint magic at offset 0 in " + path);
    std::uint16_t version;
    std::uint32_t count;
    f.read(reinterpret_cast<char*>(&version), 2);
    f.read(reinterpret_cast<char*>(&count), 4);
    if (!f || version != 1)
      throw format_error("unsupported checkpoint version in " + path);
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
      std::uint16_t nlen;
      f.read(reinterpret_cast<char*>(&nlen), 2);
      std::string name(nlen, '\0');
      f.read(name.data(), nlen);
      CheckpointEntry e;
      std::uint8_t rank;
      f.read(reinterpret_cast<char*>(&e.dtype), 1);
      f.read(reinterpret_cast<char*>(&rank), 1);
      long long numel = 1;
      for (int d = 0; d < rank; ++d) {
        std::uint32_t u;
        f.read(reinterpret_cast<char*>(&u), 4);
        e.shape.push_back(static_cast<int>(u));
        numel *= u;
      }
      e.payload.resize(static_cast<size_t>(numel) * (e.dtype == 0 ? 4 : 8));
      f.read(reinterpret_cast<char*>(e.payload.data()),
             static_cast<std::streamsize>(e.payload.size()));
      if (!f) throw format_error("truncated checkpoint entry '" + name + "' in " + path);
      ck.entries[name] = std::move(e);
    }
    return ck;
  }
};

}  // namespace alei
