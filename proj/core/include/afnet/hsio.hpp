#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "afnet/common.hpp"

namespace afnet::hsio {

namespace fs = std::filesystem;

/// Reflectance cube in band-interleaved-by-pixel order: the value for
/// (row, col, band) lives at ((row * width) + col) * bands + band.
struct HyperspectralCube {
  int height = 0;
  int width = 0;
  int bands = 0;
  std::vector<float> data;
  std::vector<double> band_wavelengths;  // nm, optional (empty or size == bands)

  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  float at(int row, int col, int band) const noexcept {
    return data[(static_cast<std::size_t>(row) * width + col) * bands + band];
  }

  /// Throws DataError if any invariant (extent, finiteness, dims >= 1) fails.
  void validate() const;
};

/// Label raster; 0 is unlabeled, 1..class_count are classes.
struct GroundTruthMap {
  int height = 0;
  int width = 0;
  int class_count = 0;
  std::vector<std::int32_t> labels;

  std::int32_t at(int row, int col) const noexcept {
    return labels[static_cast<std::size_t>(row) * width + col];
  }
  std::size_t labeled_count() const noexcept;
};

struct LegendEntry {
  int id = 0;
  std::string name;
  std::array<std::uint8_t, 3> rgb{};
};

struct ClassLegend {
  std::vector<LegendEntry> entries;

  /// ids unique and contiguous 1..C, colours unique.
  void validate() const;
  const LegendEntry* find(int id) const noexcept;
};

/// Evenly spread hues so that generated maps are readable for any class count.
ClassLegend default_legend(int class_count);

struct DatasetDescriptor {
  std::string name;
  int height = 0;
  int width = 0;
  int bands = 0;
  int class_count = 0;
  std::size_t labeled_sample_count = 0;
  std::string sensor;
};

/// Reference descriptors of the four benchmark scenes, used for sanity
/// warnings when converting and for table labels.
const std::vector<DatasetDescriptor>& reference_datasets();
std::optional<DatasetDescriptor> find_reference(const std::string& name);
/// Two-letter table code ("IP", "BS", ...); falls back to the name itself.
std::string short_code(const std::string& dataset_name);

enum class Dtype { f32, f64 };

/// Parsed `.hsij` header.
struct ContainerHeader {
  int height = 0;
  int width = 0;
  int bands = 0;
  Dtype dtype = Dtype::f32;
  std::string kind = "cube";  // "cube" | "labels"
  std::string name;
  std::optional<ClassLegend> legend;
  std::vector<double> band_wavelengths;
  std::vector<int> removed_bands;
};

/// Header path for a container given either the header, the payload, or the
/// extension-less base path.
fs::path header_path(const fs::path& any);
fs::path payload_path(const fs::path& any);

ContainerHeader read_header(const fs::path& path);

/// Loads a cube. When `expected` is given its dimensions must match the
/// embedded header.
HyperspectralCube load_cube(const fs::path& path,
                            const std::optional<DatasetDescriptor>& expected = std::nullopt);

struct SaveOptions {
  std::string name;
  std::optional<ClassLegend> legend;
  std::vector<int> removed_bands;
};

/// Always writes f32; load(save(x)) is bit-exact.
void save_cube(const HyperspectralCube& cube, const fs::path& base, const SaveOptions& options = {});

GroundTruthMap load_ground_truth(const fs::path& path);
void save_ground_truth(const GroundTruthMap& gt, const fs::path& base, const SaveOptions& options = {});

/// Legend embedded in a container header, if any.
std::optional<ClassLegend> load_legend(const fs::path& path);

DatasetDescriptor validate_pair(const HyperspectralCube& cube, const GroundTruthMap& gt,
                                const std::string& name = {});

/// Builds a label map from raw integers, inferring class_count.
GroundTruthMap make_ground_truth(int height, int width, std::vector<std::int32_t> labels);

void to_json(nlohmann::json& j, const ClassLegend& legend);
void from_json(const nlohmann::json& j, ClassLegend& legend);
void to_json(nlohmann::json& j, const DatasetDescriptor& d);

/// SHA-256 hex digest of a file's bytes (for run manifests).
std::string file_sha256(const fs::path& path);

// ---------------------------------------------------------------------------
// Conversion from community container formats.

enum class SourceFormat { mat_v5, npy };

struct ConvertedArray {
  std::vector<int> dims;        // logical (rows, cols[, bands])
  std::vector<double> values;   // row-major over dims
  std::string variable;
};

/// Reads the first (or the named) numeric array of a MATLAB v5 .mat file or
/// a NumPy .npy file. MATLAB column-major storage is transposed to row-major.
ConvertedArray read_source_array(const fs::path& path, const std::string& variable = {});

/// Sniffs the file signature; throws DataError for unknown formats.
SourceFormat detect_format(const fs::path& path);

HyperspectralCube cube_from_array(const ConvertedArray& array, const std::vector<int>& removed_bands = {});
GroundTruthMap ground_truth_from_array(const ConvertedArray& array);

}  // namespace afnet::hsio
