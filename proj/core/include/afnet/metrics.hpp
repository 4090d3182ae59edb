#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "afnet/hsio.hpp"
#include "afnet/prep.hpp"

namespace afnet::metrics {

/// counts(i, j): samples of true class i+1 predicted as class j+1.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;  // row-major classes x classes
  std::int64_t total = 0;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int c)
      : classes(c), counts(static_cast<std::size_t>(c) * static_cast<std::size_t>(c), 0) {}

  std::int64_t& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth) * classes + pred]; }
  std::int64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth) * classes + pred];
  }
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int pred) const;
  std::int64_t trace() const;
};

/// Labels are 1..C on both sides.
ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth, int classes);

/// trace / n (0 for an empty matrix).
double overall_accuracy(const ConfusionMatrix& m);
/// Mean recall over classes that have at least one true sample.
double average_accuracy(const ConfusionMatrix& m);
/// Cohen's kappa (P_o - P_e) / (1 - P_e) with P_e = sum_i row_i * col_i / n^2.
/// When P_e == 1 the ratio is undefined; 0 is returned and a warning logged.
double kappa(const ConfusionMatrix& m);
/// Recall per class; NaN for classes absent from the truth.
std::vector<double> per_class_accuracy(const ConfusionMatrix& m);

struct Timings {
  double train_seconds = 0.0;
  double test_seconds = 0.0;
};

struct EvaluationReport {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class;
  ConfusionMatrix confusion;
  double tr_seconds = 0.0;
  double te_seconds = 0.0;
};

EvaluationReport evaluate(const ConfusionMatrix& m, Timings timings = {});
EvaluationReport evaluate(std::span<const int> predicted, std::span<const int> truth, int classes,
                          Timings timings = {});

/// Fraction as a percentage with two decimals, ties to even ("66.67").
std::string format_percent(double fraction);

/// Per-class accuracies followed by kappa, OA, AA and timings, one per line.
std::string format_report(const EvaluationReport& report, const hsio::ClassLegend* legend = nullptr);

/// Fractions in [0,1]; absent classes appear as null in per_class.
void to_json(nlohmann::json& j, const EvaluationReport& r);
void from_json(const nlohmann::json& j, EvaluationReport& r);

// ---------------------------------------------------------------------------
// Classification maps.

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}
  std::uint8_t* at(int row, int col) noexcept {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
  const std::uint8_t* at(int row, int col) const noexcept {
    return pixels.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
};

/// Legend colour at each predicted pixel, black everywhere else. The scene
/// extent comes from `gt`.
RgbImage render_map(std::span<const int> predictions, std::span<const prep::PatchCoord> coords,
                    const hsio::ClassLegend& legend, const hsio::GroundTruthMap& gt);
/// Labeled pixels in legend colours, unlabeled pixels black.
RgbImage render_ground_truth(const hsio::GroundTruthMap& gt, const hsio::ClassLegend& legend);
/// Left and right images separated by a `gap`-pixel white strip.
RgbImage side_by_side(const RgbImage& left, const RgbImage& right, int gap = 4);
RgbImage scale_nearest(const RgbImage& image, int factor);

/// 8-bit RGB PNG, zlib-compressed, no filtering.
std::vector<std::uint8_t> encode_png(const RgbImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace afnet::metrics
