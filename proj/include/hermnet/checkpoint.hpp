#pragma once

// Binary checkpoint, all integers and floats little-endian:
//   u32 len, "HERMNET-CKPT-1"
//   u32 len, variant name
//   u32 hidden, u32 layers, u32 n_rbf, f64 r_cut
//   u32 n_elements, u32 Z[n_elements]
//   u32 n_params, then per parameter:
//     u32 len, name (UTF-8), u32 rank, u64 dims[rank], f64 data[prod(dims)]

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "hermnet/error.hpp"
#include "hermnet/model.hpp"

namespace hermnet {

inline constexpr const char* kCheckpointMagic = "HERMNET-CKPT-1";

namespace ckpt_detail {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error("checkpoint truncated while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, const std::string& what) {
  const auto len = get<std::uint32_t>(in, what);
  if (len > (1u << 20)) throw Error("checkpoint: implausible " + what + " length");
  std::string s(len, '\0');
  if (len && !in.read(s.data(), len)) {
    throw Error("checkpoint truncated while reading " + what);
  }
  return s;
}

}  // namespace ckpt_detail

inline void save_checkpoint(std::ostream& out, const Model& m) {
  using namespace ckpt_detail;
  check_params(m.config, m.params);
  put_string(out, kCheckpointMagic);
  put_string(out, variant_name(m.config.variant));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.config.hidden));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.config.layers));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.config.n_rbf));
  put<double>(out, m.config.r_cut);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.config.element_set.size()));
  for (int z : m.config.element_set) put<std::uint32_t>(out, static_cast<std::uint32_t>(z));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.params.size()));
  for (const auto& [name, t] : m.params) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double x : t.data()) put<double>(out, x);
  }
}

inline Model load_checkpoint(std::istream& in) {
  using namespace ckpt_detail;
  if (get_string(in, "header") != kCheckpointMagic) {
    throw Error("not a HermNet checkpoint (bad header)");
  }
  Model m;
  m.config.variant = parse_variant(get_string(in, "variant"));
  m.config.hidden = get<std::uint32_t>(in, "hidden width");
  m.config.layers = get<std::uint32_t>(in, "layer count");
  m.config.n_rbf = get<std::uint32_t>(in, "basis size");
  m.config.r_cut = get<double>(in, "cutoff");
  const auto n_el = get<std::uint32_t>(in, "element count");
  if (n_el > static_cast<std::uint32_t>(kMaxAtomicNumber)) {
    throw Error("checkpoint: implausible element count");
  }
  for (std::uint32_t k = 0; k < n_el; ++k) {
    m.config.element_set.push_back(static_cast<int>(get<std::uint32_t>(in, "element")));
  }
  validate(m.config);
  const auto shapes = parameter_shapes(m.config);
  const auto n_params = get<std::uint32_t>(in, "parameter count");
  for (std::uint32_t k = 0; k < n_params; ++k) {
    std::string name = get_string(in, "parameter name");
    const auto it = shapes.find(name);
    if (it == shapes.end()) throw Error("checkpoint: unexpected parameter '" + name + "'");
    const auto rank = get<std::uint32_t>(in, "rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank && d < 8; ++d) {
      shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in, "dimension")));
    }
    if (shape != it->second) {
      throw Error("checkpoint: parameter '" + name + "' has shape " +
                  shape_string(shape) + ", expected " + shape_string(it->second));
    }
    Tensor t(shape);
    for (double& x : t.data()) x = get<double>(in, "parameter data");
    m.params.emplace(std::move(name), std::move(t));
  }
  check_params(m.config, m.params);
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  save_checkpoint(out, m);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace hermnet
