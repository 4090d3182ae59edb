// Readers for the matrix containers the benchmark scenes are distributed in.
// Only what those files use is supported: MATLAB level-5 files (optionally
// zlib-compressed elements) holding numeric arrays, and NumPy .npy arrays.

#include <cstring>
#include <fstream>
#include <regex>

#include <fmt/format.h>
#include <zlib.h>

#include "afnet/hsio.hpp"

namespace afnet::hsio {

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T load_le(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

// MAT-file data types (miXXX) and array classes (mxXXX).
enum MiType : std::uint32_t {
  miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6,
  miSINGLE = 7, miDOUBLE = 9, miINT64 = 12, miUINT64 = 13, miMATRIX = 14, miCOMPRESSED = 15,
};

std::size_t mi_size(std::uint32_t type) {
  switch (type) {
    case miINT8: case miUINT8: return 1;
    case miINT16: case miUINT16: return 2;
    case miINT32: case miUINT32: case miSINGLE: return 4;
    case miDOUBLE: case miINT64: case miUINT64: return 8;
    default: return 0;
  }
}

double mi_value(std::uint32_t type, const std::uint8_t* p) {
  switch (type) {
    case miINT8: return static_cast<std::int8_t>(*p);
    case miUINT8: return *p;
    case miINT16: return load_le<std::int16_t>(p);
    case miUINT16: return load_le<std::uint16_t>(p);
    case miINT32: return load_le<std::int32_t>(p);
    case miUINT32: return load_le<std::uint32_t>(p);
    case miSINGLE: return load_le<float>(p);
    case miDOUBLE: return load_le<double>(p);
    case miINT64: return static_cast<double>(load_le<std::int64_t>(p));
    case miUINT64: return static_cast<double>(load_le<std::uint64_t>(p));
    default: throw DataError(fmt::format("unsupported MAT data type {}", type));
  }
}

struct Element {
  std::uint32_t type = 0;
  const std::uint8_t* data = nullptr;
  std::size_t size = 0;
  std::size_t advance = 0;  // bytes consumed including tag and padding
};

Element read_element(const std::uint8_t* p, std::size_t remaining) {
  if (remaining < 8) throw DataError("truncated MAT element tag");
  Element e;
  const auto first = load_le<std::uint32_t>(p);
  if ((first >> 16) != 0) {  // small data element packed into the tag
    e.type = first & 0xFFFF;
    e.size = first >> 16;
    e.data = p + 4;
    e.advance = 8;
    if (e.size > 4) throw DataError("malformed small MAT element");
    return e;
  }
  e.type = first;
  e.size = load_le<std::uint32_t>(p + 4);
  if (e.size > remaining - 8) throw DataError("truncated MAT element payload");
  e.data = p + 8;
  const std::size_t padded = e.type == miCOMPRESSED ? e.size : (e.size + 7) / 8 * 8;
  e.advance = 8 + std::min(padded, remaining - 8);
  return e;
}

std::vector<std::uint8_t> inflate_all(const std::uint8_t* data, std::size_t size) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw DataError("zlib init failed");
  zs.next_in = const_cast<Bytef*>(data);
  zs.avail_in = static_cast<uInt>(size);
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 20);
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("corrupt or truncated compressed MAT element");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw DataError("truncated compressed MAT element");
    }
  }
  inflateEnd(&zs);
  return out;
}

// Parses one miMATRIX body. Returns nullopt for non-numeric classes.
std::optional<ConvertedArray> parse_matrix(const std::uint8_t* p, std::size_t size) {
  std::size_t off = 0;
  const Element flags = read_element(p + off, size - off);
  off += flags.advance;
  if (flags.size < 4) throw DataError("malformed MAT array flags");
  const std::uint32_t mx_class = load_le<std::uint32_t>(flags.data) & 0xFF;
  const bool complex = (load_le<std::uint32_t>(flags.data) & 0x800) != 0;
  const Element dims_el = read_element(p + off, size - off);
  off += dims_el.advance;
  const Element name_el = read_element(p + off, size - off);
  off += name_el.advance;
  ConvertedArray out;
  out.variable.assign(reinterpret_cast<const char*>(name_el.data), name_el.size);
  if (mx_class < 6 || mx_class > 15) return std::nullopt;  // cell, struct, char, sparse...
  if (complex) throw DataError(fmt::format("complex array '{}' not supported", out.variable));
  std::vector<int> col_dims;
  for (std::size_t i = 0; i + 4 <= dims_el.size; i += 4)
    col_dims.push_back(load_le<std::int32_t>(dims_el.data + i));
  const Element real = read_element(p + off, size - off);
  const std::size_t esize = mi_size(real.type);
  if (esize == 0) throw DataError(fmt::format("unsupported MAT data type {}", real.type));
  std::size_t count = 1;
  for (int d : col_dims) count *= static_cast<std::size_t>(d);
  if (real.size != count * esize)
    throw DataError(fmt::format("MAT array '{}' payload is {} bytes, expected {}", out.variable,
                                real.size, count * esize));
  // Drop trailing singleton axes beyond the second.
  while (col_dims.size() > 2 && col_dims.back() == 1) col_dims.pop_back();
  out.dims = col_dims;
  out.values.resize(count);
  // Column-major -> row-major.
  std::vector<std::size_t> col_stride(col_dims.size(), 1);
  for (std::size_t k = 1; k < col_dims.size(); ++k)
    col_stride[k] = col_stride[k - 1] * static_cast<std::size_t>(col_dims[k - 1]);
  std::vector<int> idx(col_dims.size(), 0);
  for (std::size_t r = 0; r < count; ++r) {
    std::size_t src = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) src += idx[k] * col_stride[k];
    out.values[r] = mi_value(real.type, real.data + src * esize);
    for (std::size_t k = idx.size(); k-- > 0;) {
      if (++idx[k] < col_dims[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

ConvertedArray read_mat_v5(const fs::path& path, const std::string& variable) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 128) throw DataError("truncated MAT header");
  if (bytes[126] != 'I' || bytes[127] != 'M')
    throw DataError("big-endian MAT files are not supported");
  std::size_t off = 128;
  std::vector<std::string> seen;
  while (off < bytes.size()) {
    Element e = read_element(bytes.data() + off, bytes.size() - off);
    off += e.advance;
    std::vector<std::uint8_t> inflated;
    if (e.type == miCOMPRESSED) {
      inflated = inflate_all(e.data, e.size);
      e = read_element(inflated.data(), inflated.size());
    }
    if (e.type != miMATRIX) continue;
    auto array = parse_matrix(e.data, e.size);
    if (!array) continue;
    if (variable.empty() || array->variable == variable) return std::move(*array);
    seen.push_back(array->variable);
  }
  if (!variable.empty())
    throw DataError(fmt::format("variable '{}' not found in '{}' (found: {})", variable,
                                path.string(), fmt::join(seen, ", ")));
  throw DataError(fmt::format("no numeric array in '{}'", path.string()));
}

ConvertedArray read_npy(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() < 10) throw DataError("truncated npy header");
  const int major = bytes[6];
  std::size_t header_len = 0;
  std::size_t start = 0;
  if (major == 1) {
    header_len = load_le<std::uint16_t>(bytes.data() + 8);
    start = 10;
  } else {
    if (bytes.size() < 12) throw DataError("truncated npy header");
    header_len = load_le<std::uint32_t>(bytes.data() + 8);
    start = 12;
  }
  if (start + header_len > bytes.size()) throw DataError("truncated npy header");
  const std::string header(reinterpret_cast<const char*>(bytes.data() + start), header_len);
  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([<>|=])([a-z])(\d+)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, descr_re)) throw DataError("npy header lacks descr");
  const char endian = m[1].str()[0];
  const char kind = m[2].str()[0];
  const int width = std::stoi(m[3].str());
  if (endian == '>' && width > 1) throw DataError("big-endian npy not supported");
  std::uint32_t type = 0;
  if (kind == 'f' && width == 4) type = miSINGLE;
  else if (kind == 'f' && width == 8) type = miDOUBLE;
  else if (kind == 'i' && width == 1) type = miINT8;
  else if (kind == 'u' && width == 1) type = miUINT8;
  else if (kind == 'i' && width == 2) type = miINT16;
  else if (kind == 'u' && width == 2) type = miUINT16;
  else if (kind == 'i' && width == 4) type = miINT32;
  else if (kind == 'u' && width == 4) type = miUINT32;
  else if (kind == 'i' && width == 8) type = miINT64;
  else if (kind == 'u' && width == 8) type = miUINT64;
  else throw DataError(fmt::format("unsupported npy dtype {}{}", kind, width));
  if (!std::regex_search(header, m, order_re)) throw DataError("npy header lacks fortran_order");
  const bool fortran = m[1].str() == "True";
  if (!std::regex_search(header, m, shape_re)) throw DataError("npy header lacks shape");
  ConvertedArray out;
  {
    std::string shape = m[1].str();
    static const std::regex num_re(R"(\d+)");
    for (auto it = std::sregex_iterator(shape.begin(), shape.end(), num_re);
         it != std::sregex_iterator(); ++it)
      out.dims.push_back(std::stoi(it->str()));
  }
  std::size_t count = 1;
  for (int d : out.dims) count *= static_cast<std::size_t>(d);
  const std::size_t data_off = start + header_len;
  if (bytes.size() - data_off != count * static_cast<std::size_t>(width))
    throw DataError(fmt::format("npy payload is {} bytes, expected {}", bytes.size() - data_off,
                                count * width));
  out.values.resize(count);
  if (!fortran) {
    for (std::size_t i = 0; i < count; ++i)
      out.values[i] = mi_value(type, bytes.data() + data_off + i * width);
  } else {
    std::vector<std::size_t> col_stride(out.dims.size(), 1);
    for (std::size_t k = 1; k < out.dims.size(); ++k)
      col_stride[k] = col_stride[k - 1] * static_cast<std::size_t>(out.dims[k - 1]);
    std::vector<int> idx(out.dims.size(), 0);
    for (std::size_t r = 0; r < count; ++r) {
      std::size_t src = 0;
      for (std::size_t k = 0; k < idx.size(); ++k) src += idx[k] * col_stride[k];
      out.values[r] = mi_value(type, bytes.data() + data_off + src * width);
      for (std::size_t k = idx.size(); k-- > 0;) {
        if (++idx[k] < out.dims[k]) break;
        idx[k] = 0;
      }
    }
  }
  return out;
}

}  // namespace

SourceFormat detect_format(const fs::path& path) {
  if (!fs::exists(path)) throw DataError(fmt::format("missing file '{}'", path.string()));
  std::ifstream in(path, std::ios::binary);
  char head[128] = {};
  in.read(head, sizeof(head));
  const auto got = in.gcount();
  if (got >= 6 && std::memcmp(head, "\x93NUMPY", 6) == 0) return SourceFormat::npy;
  if (got >= 10 && std::memcmp(head, "MATLAB 5.0", 10) == 0) {
    if (got < 128) throw DataError("truncated MAT header");
    return SourceFormat::mat_v5;
  }
  if (got >= 10 && std::memcmp(head, "MATLAB 7.3", 10) == 0)
    throw DataError("MATLAB v7.3 (HDF5) files are not supported; re-save with -v7");
  throw DataError(fmt::format("unknown format for '{}'", path.string()));
}

ConvertedArray read_source_array(const fs::path& path, const std::string& variable) {
  switch (detect_format(path)) {
    case SourceFormat::mat_v5: return read_mat_v5(path, variable);
    case SourceFormat::npy: {
      auto a = read_npy(path);
      a.variable = path.stem().string();
      return a;
    }
  }
  throw DataError("unreachable");
}

}  // namespace afnet::hsio
