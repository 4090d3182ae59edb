#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <vector>

#include <fmt/format.h>

#include "afnet/common.hpp"

namespace afnet::detail {

template <class T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

// Same conversion in both directions.
template <class T>
T from_le(T v) {
  if constexpr (std::endian::native == std::endian::big) return byteswap_value(v);
  return v;
}

inline std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<char> bytes(size);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size)))
    throw DataError(fmt::format("short read on '{}'", path.string()));
  return bytes;
}

inline void write_all(const std::filesystem::path& path, const void* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw Error(fmt::format("write failed on '{}'", path.string()));
}

template <class T>
void write_le(const std::filesystem::path& path, const std::vector<T>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    write_all(path, values.data(), values.size() * sizeof(T));
  } else {
    std::vector<T> swapped(values.size());
    std::transform(values.begin(), values.end(), swapped.begin(), from_le<T>);
    write_all(path, swapped.data(), swapped.size() * sizeof(T));
  }
}

template <class T>
std::vector<T> read_le(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  if (bytes.size() % sizeof(T) != 0)
    throw DataError(fmt::format("'{}' size {} is not a multiple of {}", path.string(),
                                bytes.size(), sizeof(T)));
  std::vector<T> values(bytes.size() / sizeof(T));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  for (auto& v : values) v = from_le(v);
  return values;
}

}  // namespace afnet::detail
