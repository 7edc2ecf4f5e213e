#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hmt/tensor.hpp"

// Binary tensor files.
//   HMT1: magic "HMT1", u32 LE rank, rank x u64 LE dims, raw LE f64 data.
//   HMI1: same layout with i64 data, for index/coordinate tensors.
// Multi-byte values are encoded little-endian regardless of host order.

namespace hmt {

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>, std::uint64_t, T>>;
  U u;
  std::memcpy(&u, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (!is) throw std::runtime_error("tensor file truncated");
  using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>, std::uint64_t, T>>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(bytes[i]) << (8 * i);
  T value;
  std::memcpy(&value, &u, sizeof(T));
  return value;
}

inline Shape read_header(std::istream& is, const char* magic) {
  char got[4];
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0) {
    throw std::runtime_error(std::string("bad magic, expected ") + magic);
  }
  const std::uint32_t rank = read_le<std::uint32_t>(is);
  if (rank == 0 || rank > 16) throw std::runtime_error("unreasonable tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(read_le<std::uint64_t>(is));
  return shape;
}

inline void write_header(std::ostream& os, const char* magic, const Shape& shape) {
  os.write(magic, 4);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
}

}  // namespace detail

inline void write_hmt1(std::ostream& os, const NDTensor& t) {
  detail::write_header(os, "HMT1", t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) detail::write_le<double>(os, t[i]);
}

inline NDTensor read_hmt1(std::istream& is) {
  Shape shape = detail::read_header(is, "HMT1");
  std::vector<double> data(shape_volume(shape));
  for (auto& v : data) v = detail::read_le<double>(is);
  return NDTensor(std::move(shape), std::move(data));
}

inline void write_hmi1(std::ostream& os, const IndexTensor& t) {
  detail::write_header(os, "HMI1", t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) detail::write_le<std::int64_t>(os, t[i]);
}

inline IndexTensor read_hmi1(std::istream& is) {
  Shape shape = detail::read_header(is, "HMI1");
  std::vector<std::int64_t> data(shape_volume(shape));
  for (auto& v : data) v = detail::read_le<std::int64_t>(is);
  return IndexTensor(std::move(shape), std::move(data));
}

inline void save_hmt1(const std::string& path, const NDTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_hmt1(os, t);
  if (!os) throw std::runtime_error("write failed on " + path);
}

inline NDTensor load_hmt1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_hmt1(is);
}

inline void save_hmi1(const std::string& path, const IndexTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_hmi1(os, t);
  if (!os) throw std::runtime_error("write failed on " + path);
}

inline IndexTensor load_hmi1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_hmi1(is);
}

}  // namespace hmt
