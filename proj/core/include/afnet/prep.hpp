#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "afnet/hsio.hpp"

namespace afnet::prep {

enum class PcaMode {
  covariance,   // mean-centred bands
  correlation,  // mean-centred and scaled to unit variance
};

std::string to_string(PcaMode mode);
PcaMode pca_mode_from_string(const std::string& text);

/// Cube projected onto its leading principal components.
struct ReducedCube {
  int height = 0;
  int width = 0;
  int components = 0;
  std::vector<double> data;  // (row, col, component), component fastest
  std::vector<double> explained_variance;
  Eigen::MatrixXd projection;  // bands x components, orthonormal columns
  Eigen::VectorXd band_means;
  Eigen::VectorXd band_scales;  // all ones in covariance mode
  double total_variance = 0.0;
  PcaMode mode = PcaMode::covariance;

  double at(int row, int col, int component) const noexcept {
    return data[(static_cast<std::size_t>(row) * width + col) * components + component];
  }
};

/// Projects every pixel onto the top `components` eigenvectors of the band
/// covariance (or correlation) matrix. Statistics use all pixels. Each
/// eigenvector is sign-normalised so its largest-magnitude entry is positive.
ReducedCube pca_reduce(const hsio::HyperspectralCube& cube, int components,
                       PcaMode mode = PcaMode::covariance);

/// Maps reduced coordinates of one pixel back to band space.
Eigen::VectorXd back_project(const ReducedCube& reduced, std::span<const double> coefficients);

enum class BorderMode { interior, mirror };

std::string to_string(BorderMode mode);
BorderMode border_mode_from_string(const std::string& text);

/// Reflect-101 index: -1 -> 1, n -> n-2. Valid while |overhang| < n.
constexpr int reflect_index(int i, int n) noexcept {
  if (n == 1) return 0;
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

struct PatchCoord {
  int row = 0;
  int col = 0;
};

/// Center-labeled patches, stored as coordinates into a shared reduced cube
/// and gathered on demand. gather() is const and safe for concurrent use.
class PatchSet {
 public:
  PatchSet() = default;
  PatchSet(std::shared_ptr<const ReducedCube> cube, int patch_size, BorderMode mode,
           std::vector<PatchCoord> coords, std::vector<int> labels, int class_count);

  std::size_t size() const noexcept { return coords_.size(); }
  int patch_size() const noexcept { return patch_size_; }
  int components() const noexcept { return cube_ ? cube_->components : 0; }
  int class_count() const noexcept { return class_count_; }
  BorderMode border_mode() const noexcept { return mode_; }
  std::span<const int> labels() const noexcept { return labels_; }
  std::span<const PatchCoord> coords() const noexcept { return coords_; }
  const ReducedCube& cube() const noexcept { return *cube_; }
  std::size_t patch_elements() const noexcept {
    return static_cast<std::size_t>(patch_size_) * patch_size_ * components();
  }

  /// Copies patch `index` into `out` (size patch_elements()), layout
  /// (row, col, component) with component fastest.
  template <class T>
  void gather(std::size_t index, std::span<T> out) const;

  /// Gathers several patches back to back.
  template <class T>
  void gather_batch(std::span<const std::size_t> indices, std::span<T> out) const;

 private:
  std::shared_ptr<const ReducedCube> cube_;
  int patch_size_ = 0;
  BorderMode mode_ = BorderMode::mirror;
  std::vector<PatchCoord> coords_;
  std::vector<int> labels_;
  int class_count_ = 0;
};

/// One patch per labeled eligible centre, in raster order.
PatchSet extract_patches(std::shared_ptr<const ReducedCube> reduced, const hsio::GroundTruthMap& gt,
                         int patch_size, BorderMode mode = BorderMode::mirror);

struct SplitFractions {
  double train = 0.15;
  double validation = 0.15;
  double test = 0.70;

  /// All positive, summing to 1.
  void validate() const;
};

SplitFractions parse_fractions(const std::string& text);

struct ClassSplit {
  int label = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct SplitAssignment {
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::vector<std::size_t> test_idx;
  SplitFractions fractions;
  std::uint64_t seed = 0;
  std::vector<ClassSplit> per_class;
};

/// Per-class train/validation sizes; exposed for tests and reports.
struct SplitCounts {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};
SplitCounts split_counts(std::size_t class_size, const SplitFractions& fractions);

/// Stratified random split; a pure function of (labels, fractions, seed).
SplitAssignment stratified_split(std::span<const int> labels, const SplitFractions& fractions,
                                 std::uint64_t seed);
inline SplitAssignment stratified_split(const PatchSet& patches, const SplitFractions& fractions,
                                        std::uint64_t seed) {
  return stratified_split(patches.labels(), fractions, seed);
}

void to_json(nlohmann::json& j, const SplitAssignment& split);
void from_json(const nlohmann::json& j, SplitAssignment& split);

}  // namespace afnet::prep
