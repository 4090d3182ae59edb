#include "afnet/hsio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "detail/binary_io.hpp"

namespace afnet::hsio {

namespace {

using json = nlohmann::json;

using detail::from_le;
using detail::read_all;
using detail::write_all;

std::vector<float> decode_payload(const fs::path& payload, const ContainerHeader& header) {
  const auto bytes = read_all(payload);
  const std::size_t count =
      static_cast<std::size_t>(header.height) * header.width * header.bands;
  const std::size_t elem = header.dtype == Dtype::f32 ? 4 : 8;
  if (bytes.size() != count * elem) {
    throw DataError(fmt::format(
        "size mismatch: header {}x{}x{} {} expects {} bytes, payload '{}' has {}", header.height,
        header.width, header.bands, header.dtype == Dtype::f32 ? "f32" : "f64", count * elem,
        payload.string(), bytes.size()));
  }
  std::vector<float> values(count);
  if (header.dtype == Dtype::f32) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t raw;
      std::memcpy(&raw, bytes.data() + i * 4, 4);
      values[i] = std::bit_cast<float>(from_le(raw));
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t raw;
      std::memcpy(&raw, bytes.data() + i * 8, 8);
      values[i] = static_cast<float>(std::bit_cast<double>(from_le(raw)));
    }
  }
  return values;
}

void write_payload(const fs::path& payload, const std::vector<float>& values) {
  std::vector<std::uint32_t> raw(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    raw[i] = from_le(std::bit_cast<std::uint32_t>(values[i]));
  write_all(payload, raw.data(), raw.size() * sizeof(std::uint32_t));
}

void write_header(const fs::path& path, const ContainerHeader& h) {
  json j;
  j["height"] = h.height;
  j["width"] = h.width;
  j["bands"] = h.bands;
  j["dtype"] = h.dtype == Dtype::f32 ? "f32" : "f64";
  j["order"] = "bip";
  j["endianness"] = "little";
  j["kind"] = h.kind;
  if (!h.name.empty()) j["name"] = h.name;
  if (h.legend) j["legend"] = *h.legend;
  if (!h.band_wavelengths.empty()) j["band_wavelengths"] = h.band_wavelengths;
  if (!h.removed_bands.empty()) j["removed_bands"] = h.removed_bands;
  const std::string text = j.dump(2) + "\n";
  write_all(path, text.data(), text.size());
}

}  // namespace

// ---------------------------------------------------------------------------

void HyperspectralCube::validate() const {
  if (height < 1 || width < 1 || bands < 1)
    throw DataError(fmt::format("cube dimensions must be >= 1, got {}x{}x{}", height, width, bands));
  const std::size_t expected = pixel_count() * static_cast<std::size_t>(bands);
  if (data.size() != expected)
    throw DataError(fmt::format("cube data holds {} values, expected {}", data.size(), expected));
  std::size_t bad = 0;
  std::size_t first_bad = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      if (bad == 0) first_bad = i;
      ++bad;
    }
  }
  if (bad > 0) {
    const std::size_t pixel = first_bad / bands;
    throw DataError(fmt::format(
        "cube contains {} non-finite values; first at index {} (row {}, col {}, band {})", bad,
        first_bad, pixel / width, pixel % width, first_bad % bands));
  }
  if (!band_wavelengths.empty() && band_wavelengths.size() != static_cast<std::size_t>(bands))
    throw DataError("band_wavelengths length differs from band count");
}

std::size_t GroundTruthMap::labeled_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](std::int32_t v) { return v != 0; }));
}

void ClassLegend::validate() const {
  std::set<int> ids;
  std::set<std::array<std::uint8_t, 3>> colors;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw DataError(fmt::format("duplicate legend id {}", e.id));
    if (!colors.insert(e.rgb).second)
      throw DataError(fmt::format("duplicate legend colour for id {}", e.id));
  }
  int expect = 1;
  for (int id : ids) {
    if (id != expect) throw DataError("legend ids must be contiguous starting at 1");
    ++expect;
  }
}

const LegendEntry* ClassLegend::find(int id) const noexcept {
  for (const auto& e : entries)
    if (e.id == id) return &e;
  return nullptr;
}

ClassLegend default_legend(int class_count) {
  ClassLegend legend;
  for (int c = 1; c <= class_count; ++c) {
    // Golden-angle hue walk, alternating value so neighbours differ.
    const double hue = std::fmod((c - 1) * 137.508, 360.0);
    const double sat = 0.85;
    const double val = (c % 2 == 0) ? 0.75 : 0.95;
    const double chroma = val * sat;
    const double hp = hue / 60.0;
    const double x = chroma * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = chroma; g = x; }
    else if (hp < 2) { r = x; g = chroma; }
    else if (hp < 3) { g = chroma; b = x; }
    else if (hp < 4) { g = x; b = chroma; }
    else if (hp < 5) { r = x; b = chroma; }
    else { r = chroma; b = x; }
    const double m = val - chroma;
    LegendEntry e;
    e.id = c;
    e.name = fmt::format("class {}", c);
    e.rgb = {static_cast<std::uint8_t>(std::lround((r + m) * 255)),
             static_cast<std::uint8_t>(std::lround((g + m) * 255)),
             static_cast<std::uint8_t>(std::lround((b + m) * 255))};
    // Never emit pure black: it marks unlabeled pixels in rendered maps.
    if (e.rgb == std::array<std::uint8_t, 3>{0, 0, 0}) e.rgb = {1, 1, 1};
    legend.entries.push_back(std::move(e));
  }
  // Collisions are possible after rounding for large C; nudge them apart.
  std::set<std::array<std::uint8_t, 3>> seen;
  for (auto& e : legend.entries) {
    while (!seen.insert(e.rgb).second) e.rgb[2] = static_cast<std::uint8_t>(e.rgb[2] + 1);
  }
  return legend;
}

const std::vector<DatasetDescriptor>& reference_datasets() {
  // Pavia University is 610x340 in the distributed files.
  static const std::vector<DatasetDescriptor> refs = {
      {"botswana", 1476, 256, 242, 14, 3248, "NASA EO-1 Hyperion (satellite), 30 m"},
      {"indian_pines", 145, 145, 220, 16, 10249, "NASA AVIRIS (aerial), 20 m"},
      {"salinas", 512, 217, 224, 16, 54129, "NASA AVIRIS (aerial), 3.7 m"},
      {"pavia_university", 610, 340, 103, 9, 42776, "ROSIS-03 (aerial), 1.3 m"},
  };
  return refs;
}

std::optional<DatasetDescriptor> find_reference(const std::string& name) {
  for (const auto& d : reference_datasets())
    if (d.name == name) return d;
  return std::nullopt;
}

std::string short_code(const std::string& dataset_name) {
  if (dataset_name == "indian_pines") return "IP";
  if (dataset_name == "botswana") return "BS";
  if (dataset_name == "salinas") return "SA";
  if (dataset_name == "pavia_university") return "PU";
  return dataset_name;
}

fs::path header_path(const fs::path& any) {
  fs::path p = any;
  if (p.extension() == ".hsij") return p;
  if (p.extension() == ".hsib") return p.replace_extension(".hsij");
  p += ".hsij";
  return p;
}

fs::path payload_path(const fs::path& any) {
  fs::path p = header_path(any);
  return p.replace_extension(".hsib");
}

ContainerHeader read_header(const fs::path& path) {
  const fs::path hp = header_path(path);
  if (!fs::exists(hp)) throw DataError(fmt::format("missing file '{}'", hp.string()));
  std::ifstream in(hp);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed header '{}': {}", hp.string(), e.what()));
  }
  ContainerHeader h;
  try {
    h.height = j.at("height").get<int>();
    h.width = j.at("width").get<int>();
    h.bands = j.at("bands").get<int>();
    const auto dtype = j.at("dtype").get<std::string>();
    if (dtype == "f32") h.dtype = Dtype::f32;
    else if (dtype == "f64") h.dtype = Dtype::f64;
    else throw DataError(fmt::format("unsupported dtype '{}'", dtype));
    const auto order = j.value("order", std::string("bip"));
    if (order != "bip") throw DataError(fmt::format("unsupported order '{}'", order));
    const auto endian = j.value("endianness", std::string("little"));
    if (endian != "little") throw DataError(fmt::format("unsupported endianness '{}'", endian));
    h.kind = j.value("kind", std::string("cube"));
    h.name = j.value("name", std::string());
    if (j.contains("legend")) h.legend = j.at("legend").get<ClassLegend>();
    if (j.contains("band_wavelengths"))
      h.band_wavelengths = j.at("band_wavelengths").get<std::vector<double>>();
    if (j.contains("removed_bands")) h.removed_bands = j.at("removed_bands").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError(fmt::format("invalid header '{}': {}", hp.string(), e.what()));
  }
  if (h.height < 1 || h.width < 1 || h.bands < 1)
    throw DataError(fmt::format("header '{}' has non-positive dimensions", hp.string()));
  return h;
}

HyperspectralCube load_cube(const fs::path& path, const std::optional<DatasetDescriptor>& expected) {
  const ContainerHeader header = read_header(path);
  if (expected && (expected->height != header.height || expected->width != header.width ||
                   expected->bands != header.bands)) {
    throw DataError(fmt::format("size mismatch: expected {}x{}x{}, header declares {}x{}x{}",
                                expected->height, expected->width, expected->bands, header.height,
                                header.width, header.bands));
  }
  HyperspectralCube cube;
  cube.height = header.height;
  cube.width = header.width;
  cube.bands = header.bands;
  cube.band_wavelengths = header.band_wavelengths;
  const fs::path pp = payload_path(path);
  if (!fs::exists(pp)) throw DataError(fmt::format("missing file '{}'", pp.string()));
  cube.data = decode_payload(pp, header);
  cube.validate();
  return cube;
}

void save_cube(const HyperspectralCube& cube, const fs::path& base, const SaveOptions& options) {
  cube.validate();
  ContainerHeader h;
  h.height = cube.height;
  h.width = cube.width;
  h.bands = cube.bands;
  h.kind = "cube";
  h.name = options.name;
  h.legend = options.legend;
  h.band_wavelengths = cube.band_wavelengths;
  h.removed_bands = options.removed_bands;
  write_header(header_path(base), h);
  write_payload(payload_path(base), cube.data);
}

GroundTruthMap make_ground_truth(int height, int width, std::vector<std::int32_t> labels) {
  if (height < 1 || width < 1) throw DataError("ground truth dimensions must be >= 1");
  if (labels.size() != static_cast<std::size_t>(height) * width)
    throw DataError("ground truth label count does not match extent");
  GroundTruthMap gt;
  gt.height = height;
  gt.width = width;
  std::int32_t max_label = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0)
      throw DataError(fmt::format("negative label {} at row {}, col {}", labels[i], i / width,
                                  i % width));
    max_label = std::max(max_label, labels[i]);
  }
  gt.class_count = max_label;
  gt.labels = std::move(labels);
  return gt;
}

GroundTruthMap load_ground_truth(const fs::path& path) {
  const ContainerHeader header = read_header(path);
  if (header.bands != 1)
    throw DataError(fmt::format("label raster must have 1 band, header declares {}", header.bands));
  const fs::path pp = payload_path(path);
  if (!fs::exists(pp)) throw DataError(fmt::format("missing file '{}'", pp.string()));
  const auto values = decode_payload(pp, header);
  std::vector<std::int32_t> labels(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (!std::isfinite(v) || v != std::floor(v) || std::fabs(v) > 1e7f)
      throw DataError(fmt::format("non-integer label {} at index {}", v, i));
    labels[i] = static_cast<std::int32_t>(v);
  }
  return make_ground_truth(header.height, header.width, std::move(labels));
}

void save_ground_truth(const GroundTruthMap& gt, const fs::path& base, const SaveOptions& options) {
  ContainerHeader h;
  h.height = gt.height;
  h.width = gt.width;
  h.bands = 1;
  h.kind = "labels";
  h.name = options.name;
  h.legend = options.legend;
  write_header(header_path(base), h);
  std::vector<float> values(gt.labels.begin(), gt.labels.end());
  write_payload(payload_path(base), values);
}

std::optional<ClassLegend> load_legend(const fs::path& path) { return read_header(path).legend; }

DatasetDescriptor validate_pair(const HyperspectralCube& cube, const GroundTruthMap& gt,
                                const std::string& name) {
  if (cube.height != gt.height || cube.width != gt.width) {
    throw DataError(fmt::format("extent mismatch: cube is {}x{}, ground truth is {}x{}",
                                cube.height, cube.width, gt.height, gt.width));
  }
  DatasetDescriptor d;
  d.name = name;
  d.height = cube.height;
  d.width = cube.width;
  d.bands = cube.bands;
  d.class_count = gt.class_count;
  d.labeled_sample_count = gt.labeled_count();
  if (auto ref = find_reference(name)) d.sensor = ref->sensor;
  return d;
}

void to_json(json& j, const ClassLegend& legend) {
  j = json::array();
  for (const auto& e : legend.entries)
    j.push_back({{"id", e.id}, {"name", e.name}, {"rgb", {e.rgb[0], e.rgb[1], e.rgb[2]}}});
}

void from_json(const json& j, ClassLegend& legend) {
  legend.entries.clear();
  for (const auto& item : j) {
    LegendEntry e;
    e.id = item.at("id").get<int>();
    e.name = item.value("name", fmt::format("class {}", e.id));
    const auto rgb = item.at("rgb").get<std::vector<int>>();
    if (rgb.size() != 3) throw DataError("legend rgb must have three components");
    for (int k = 0; k < 3; ++k) e.rgb[k] = static_cast<std::uint8_t>(std::clamp(rgb[k], 0, 255));
    legend.entries.push_back(std::move(e));
  }
  legend.validate();
}

void to_json(json& j, const DatasetDescriptor& d) {
  j = {{"name", d.name},         {"height", d.height},
       {"width", d.width},       {"bands", d.bands},
       {"class_count", d.class_count}, {"labeled_sample_count", d.labeled_sample_count},
       {"sensor", d.sensor}};
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

HyperspectralCube cube_from_array(const ConvertedArray& array, const std::vector<int>& removed_bands) {
  if (array.dims.size() != 3 && array.dims.size() != 2)
    throw DataError(fmt::format("expected a 2- or 3-axis array, got {} axes", array.dims.size()));
  const int h = array.dims[0];
  const int w = array.dims[1];
  const int l = array.dims.size() == 3 ? array.dims[2] : 1;
  std::set<int> drop;
  for (int b : removed_bands) {
    if (b < 1 || b > l) throw PreconditionError(fmt::format("removed band {} outside 1..{}", b, l));
    drop.insert(b - 1);
  }
  std::vector<int> keep;
  for (int b = 0; b < l; ++b)
    if (!drop.count(b)) keep.push_back(b);
  if (keep.empty()) throw PreconditionError("all bands removed");
  HyperspectralCube cube;
  cube.height = h;
  cube.width = w;
  cube.bands = static_cast<int>(keep.size());
  cube.data.resize(static_cast<std::size_t>(h) * w * keep.size());
  std::size_t out = 0;
  for (std::size_t px = 0; px < static_cast<std::size_t>(h) * w; ++px)
    for (int b : keep) cube.data[out++] = static_cast<float>(array.values[px * l + b]);
  cube.validate();
  return cube;
}

GroundTruthMap ground_truth_from_array(const ConvertedArray& array) {
  if (array.dims.size() != 2 && !(array.dims.size() == 3 && array.dims[2] == 1))
    throw DataError("label array must be 2-axis");
  std::vector<std::int32_t> labels(array.values.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = array.values[i];
    if (v != std::floor(v)) throw DataError(fmt::format("non-integer label {} at index {}", v, i));
    labels[i] = static_cast<std::int32_t>(v);
  }
  return make_ground_truth(array.dims[0], array.dims[1], std::move(labels));
}

}  // namespace afnet::hsio
