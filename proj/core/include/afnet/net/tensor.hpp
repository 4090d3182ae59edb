#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace afnet::net {

/// Per-sample feature extent. Volumetric features use depth > 1 (the
/// spectral axis); planar features have depth == 1. Memory order is
/// (row, col, depth, channel) with channel fastest, so a planar map is the
/// same bytes as a volumetric one with depth folded into channels.
struct FeatureShape {
  int height = 1;
  int width = 1;
  int depth = 1;
  int channels = 1;

  std::size_t positions() const noexcept {
    return static_cast<std::size_t>(height) * width * depth;
  }
  std::size_t size() const noexcept { return positions() * channels; }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

/// Dense batch of features: (batch, height, width, depth, channels).
template <class T>
struct Tensor {
  int batch = 0;
  FeatureShape shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n, FeatureShape s, T fill = T(0))
      : batch(n), shape(s), data(static_cast<std::size_t>(n) * s.size(), fill) {}

  void reset(int n, FeatureShape s) {
    batch = n;
    shape = s;
    data.assign(static_cast<std::size_t>(n) * s.size(), T(0));
  }
  std::size_t sample_size() const noexcept { return shape.size(); }
  std::span<T> sample(int n) noexcept { return {data.data() + n * shape.size(), shape.size()}; }
  std::span<const T> sample(int n) const noexcept {
    return {data.data() + n * shape.size(), shape.size()};
  }
  T& at(int n, int row, int col, int d, int ch) noexcept {
    return data[index(n, row, col, d, ch)];
  }
  const T& at(int n, int row, int col, int d, int ch) const noexcept {
    return data[index(n, row, col, d, ch)];
  }
  std::size_t index(int n, int row, int col, int d, int ch) const noexcept {
    return (((static_cast<std::size_t>(n) * shape.height + row) * shape.width + col) * shape.depth +
            d) * shape.channels + ch;
  }
};

}  // namespace afnet::net
