#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "divrec/model.hpp"

namespace divrec {

// Binary model file: 8-byte magic, u32 version, u32 header fields
// (users, items, dim, depth, categories), then the raw parameter tensors as
// little-endian doubles in a fixed order (embeddings, conv 0..K-1,
// classifier). A JSON sidecar at <path>.meta.json carries the run settings.

inline constexpr char kCheckpointMagic[8] = {'D', 'I', 'V', 'R', 'E', 'C', 'C', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_u32_le(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated header");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f64_le(std::ostream& out, const double* x, std::size_t n) {
  std::vector<unsigned char> buf(n * 8);
  for (std::size_t j = 0; j < n; ++j) {
    uint64_t bits;
    std::memcpy(&bits, &x[j], 8);
    for (int i = 0; i < 8; ++i) buf[j * 8 + i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void read_f64_le(std::istream& in, double* x, std::size_t n) {
  std::vector<unsigned char> buf(n * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
  for (std::size_t j = 0; j < n; ++j) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(buf[j * 8 + i]) << (8 * i);
    std::memcpy(&x[j], &bits, 8);
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParameters& params,
                            const nlohmann::json& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kCheckpointMagic, 8);
  detail::write_u32_le(out, kCheckpointVersion);
  detail::write_u32_le(out, static_cast<uint32_t>(params.num_users));
  detail::write_u32_le(out, static_cast<uint32_t>(params.num_items));
  detail::write_u32_le(out, static_cast<uint32_t>(params.dim));
  detail::write_u32_le(out, static_cast<uint32_t>(params.depth));
  detail::write_u32_le(out, static_cast<uint32_t>(params.num_categories));
  detail::write_f64_le(out, params.embeddings.a.data(), params.embeddings.a.size());
  for (const auto& w : params.conv) detail::write_f64_le(out, w.a.data(), w.a.size());
  detail::write_f64_le(out, params.classifier.a.data(), params.classifier.a.size());
  if (!out) throw std::runtime_error("write failed: " + path);
  out.close();

  std::ofstream mout(path + ".meta.json");
  if (!mout) throw std::runtime_error("cannot open for writing: " + path + ".meta.json");
  mout << meta.dump(2) << "\n";
}

inline ModelParameters load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint32_t version = detail::read_u32_le(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  ModelParameters p;
  p.num_users = static_cast<int32_t>(detail::read_u32_le(in));
  p.num_items = static_cast<int32_t>(detail::read_u32_le(in));
  p.dim = static_cast<int>(detail::read_u32_le(in));
  p.depth = static_cast<int>(detail::read_u32_le(in));
  p.num_categories = static_cast<int32_t>(detail::read_u32_le(in));
  if (p.num_users < 1 || p.num_items < 1 || p.dim < 1 || p.depth < 1 || p.num_categories < 1)
    throw std::runtime_error("checkpoint: corrupt header in " + path);

  p.embeddings = Matrix(p.num_users + p.num_items, p.dim);
  detail::read_f64_le(in, p.embeddings.a.data(), p.embeddings.a.size());
  p.conv.resize(p.depth);
  for (auto& w : p.conv) {
    w = Matrix(p.dim, p.dim);
    detail::read_f64_le(in, w.a.data(), w.a.size());
  }
  p.classifier = Matrix(p.num_categories, p.dim);
  detail::read_f64_le(in, p.classifier.a.data(), p.classifier.a.size());
  return p;
}

inline nlohmann::json load_checkpoint_meta(const std::string& path) {
  std::ifstream in(path + ".meta.json");
  if (!in) throw std::runtime_error("cannot open for reading: " + path + ".meta.json");
  nlohmann::json meta;
  in >> meta;
  return meta;
}

}  // namespace divrec
