#pragma once

// Test-side writers for community array formats, a self-deleting temp
// directory, and small synthetic scenes with spatially coherent classes.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "afnet/common.hpp"
#include "afnet/hsio.hpp"

namespace fixture {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    afnet::Rng rng(static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)) ^
                   static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    path_ = fs::temp_directory_path() / ("afnet-test-" + std::to_string(rng.next()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  put_bytes(out, &v, sizeof v);
}

inline void save_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// dtype: "<f4", "<f8", "<i4", "|u1", "<u2". Values are row-major over shape.
inline void write_npy(const fs::path& path, const std::vector<std::size_t>& shape,
                      const std::vector<double>& values, const std::string& dtype = "<f4",
                      bool fortran = false) {
  std::string shape_text = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) shape_text += (i ? ", " : "") + std::to_string(shape[i]);
  shape_text += shape.size() == 1 ? ",)" : ")";
  std::string header = "{'descr': '" + dtype + "', 'fortran_order': " + (fortran ? "True" : "False") +
                       ", 'shape': " + shape_text + ", }";
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::vector<std::uint8_t> out{0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  put<std::uint16_t>(out, static_cast<std::uint16_t>(header.size()));
  put_bytes(out, header.data(), header.size());

  // Fortran order stores the first axis fastest.
  std::vector<std::size_t> order(values.size());
  if (!fortran) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  } else {
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t k = 0; k < order.size(); ++k) {
      std::size_t r = 0;
      for (std::size_t a = 0; a < shape.size(); ++a) r = r * shape[a] + idx[a];
      order[k] = r;
      for (std::size_t a = 0; a < shape.size(); ++a) {
        if (++idx[a] < shape[a]) break;
        idx[a] = 0;
      }
    }
  }
  for (std::size_t i : order) {
    const double v = values[i];
    if (dtype == "<f4") put<float>(out, static_cast<float>(v));
    else if (dtype == "<f8") put<double>(out, v);
    else if (dtype == "<i4") put<std::int32_t>(out, static_cast<std::int32_t>(v));
    else if (dtype == "<u2") put<std::uint16_t>(out, static_cast<std::uint16_t>(v));
    else put<std::uint8_t>(out, static_cast<std::uint8_t>(v));
  }
  save_bytes(path, out);
}

enum class MatType { f64, u8, i16 };

inline void pad8(std::vector<std::uint8_t>& v) {
  while (v.size() % 8) v.push_back(0);
}

// One numeric variable in a MATLAB v5 file. `dims` and `values` are the
// logical row-major array; storage is column-major as MATLAB writes it.
struct MatVar {
  std::string name;
  std::vector<int> dims;
  std::vector<double> values;
  MatType type = MatType::f64;
};

inline std::vector<std::uint8_t> mat_matrix_element(const MatVar& var) {
  std::vector<std::uint8_t> body;
  const std::uint32_t mx = var.type == MatType::f64 ? 6 : var.type == MatType::u8 ? 9 : 10;
  put<std::uint32_t>(body, 6);  // miUINT32
  put<std::uint32_t>(body, 8);
  put<std::uint32_t>(body, mx);
  put<std::uint32_t>(body, 0);
  put<std::uint32_t>(body, 5);  // miINT32 dims
  put<std::uint32_t>(body, static_cast<std::uint32_t>(4 * var.dims.size()));
  for (int d : var.dims) put<std::int32_t>(body, d);
  pad8(body);
  put<std::uint32_t>(body, 1);  // miINT8 name
  put<std::uint32_t>(body, static_cast<std::uint32_t>(var.name.size()));
  put_bytes(body, var.name.data(), var.name.size());
  pad8(body);

  const std::uint32_t mi = var.type == MatType::f64 ? 9 : var.type == MatType::u8 ? 2 : 3;
  const std::size_t esize = var.type == MatType::f64 ? 8 : var.type == MatType::u8 ? 1 : 2;
  put<std::uint32_t>(body, mi);
  put<std::uint32_t>(body, static_cast<std::uint32_t>(var.values.size() * esize));
  std::vector<std::size_t> idx(var.dims.size(), 0);
  for (std::size_t k = 0; k < var.values.size(); ++k) {
    std::size_t r = 0;
    for (std::size_t a = 0; a < var.dims.size(); ++a) r = r * var.dims[a] + idx[a];
    const double v = var.values[r];
    if (var.type == MatType::f64) put<double>(body, v);
    else if (var.type == MatType::u8) put<std::uint8_t>(body, static_cast<std::uint8_t>(v));
    else put<std::int16_t>(body, static_cast<std::int16_t>(v));
    for (std::size_t a = 0; a < var.dims.size(); ++a) {
      if (++idx[a] < static_cast<std::size_t>(var.dims[a])) break;
      idx[a] = 0;
    }
  }
  pad8(body);

  std::vector<std::uint8_t> element;
  put<std::uint32_t>(element, 14);  // miMATRIX
  put<std::uint32_t>(element, static_cast<std::uint32_t>(body.size()));
  element.insert(element.end(), body.begin(), body.end());
  return element;
}

inline std::vector<std::uint8_t> mat_file_bytes(const std::vector<MatVar>& vars, bool compressed) {
  std::vector<std::uint8_t> out(128, ' ');
  const char text[] = "MATLAB 5.0 MAT-file, written by the afnet test suite";
  std::memcpy(out.data(), text, sizeof(text) - 1);
  std::fill(out.begin() + 116, out.begin() + 124, 0);
  out[124] = 0x00;
  out[125] = 0x01;
  out[126] = 'I';
  out[127] = 'M';
  for (const auto& var : vars) {
    const auto element = mat_matrix_element(var);
    if (!compressed) {
      out.insert(out.end(), element.begin(), element.end());
      continue;
    }
    uLongf len = compressBound(static_cast<uLong>(element.size()));
    std::vector<std::uint8_t> z(len);
    compress2(z.data(), &len, element.data(), static_cast<uLong>(element.size()), 6);
    z.resize(len);
    put<std::uint32_t>(out, 15);  // miCOMPRESSED
    put<std::uint32_t>(out, static_cast<std::uint32_t>(z.size()));
    out.insert(out.end(), z.begin(), z.end());
  }
  return out;
}

inline void write_mat(const fs::path& path, const std::vector<MatVar>& vars, bool compressed = false) {
  save_bytes(path, mat_file_bytes(vars, compressed));
}

struct Scene {
  afnet::hsio::HyperspectralCube cube;
  afnet::hsio::GroundTruthMap gt;
};

// Classes occupy vertical stripes with a ragged unlabeled margin; each class
// has its own smooth spectrum plus per-pixel noise.
inline Scene synthetic_scene(int height, int width, int bands, int classes, std::uint64_t seed,
                             double noise = 0.3) {
  afnet::Rng rng(seed);
  Scene s;
  s.cube.height = height;
  s.cube.width = width;
  s.cube.bands = bands;
  s.cube.data.resize(static_cast<std::size_t>(height) * width * bands);
  std::vector<std::int32_t> labels(static_cast<std::size_t>(height) * width, 0);
  std::vector<std::vector<double>> signature(classes + 1, std::vector<double>(bands));
  for (int c = 0; c <= classes; ++c) {
    const double phase = rng.uniform(0, 6.283), amp = rng.uniform(0.5, 1.5);
    for (int b = 0; b < bands; ++b) signature[c][b] = amp * std::sin(phase + 0.4 * b) + 0.2 * c;
  }
  for (int r = 0; r < height; ++r)
    for (int col = 0; col < width; ++col) {
      const bool margin = r == 0 || col == 0 || r == height - 1 || rng.uniform() < 0.05;
      const int c = margin ? 0 : 1 + (col * classes) / width;
      labels[static_cast<std::size_t>(r) * width + col] = c;
      for (int b = 0; b < bands; ++b)
        s.cube.data[(static_cast<std::size_t>(r) * width + col) * bands + b] =
            static_cast<float>(signature[c][b] + noise * rng.normal());
    }
  s.gt = afnet::hsio::make_ground_truth(height, width, std::move(labels));
  return s;
}

inline fs::path save_scene(const Scene& s, const fs::path& dir, const std::string& name = "synthetic") {
  fs::create_directories(dir);
  afnet::hsio::SaveOptions options;
  options.name = name;
  afnet::hsio::save_cube(s.cube, dir / "cube", options);
  options.legend = afnet::hsio::default_legend(s.gt.class_count);
  afnet::hsio::save_ground_truth(s.gt, dir / "gt", options);
  return dir;
}

}  // namespace fixture
