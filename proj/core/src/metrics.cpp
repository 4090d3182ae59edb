#include "afnet/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include "afnet/common.hpp"
#include "detail/binary_io.hpp"

namespace afnet::metrics {

using json = nlohmann::json;

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int j = 0; j < classes; ++j) s += at(truth, j);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
  std::int64_t s = 0;
  for (int i = 0; i < classes; ++i) s += at(i, pred);
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (int i = 0; i < classes; ++i) s += at(i, i);
  return s;
}

ConfusionMatrix confusion(std::span<const int> predicted, std::span<const int> truth, int classes) {
  if (classes < 1) throw PreconditionError("class count must be >= 1");
  if (predicted.size() != truth.size())
    throw PreconditionError(fmt::format("{} predictions for {} true labels", predicted.size(),
                                        truth.size()));
  ConfusionMatrix m(classes);
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const int t = truth[k], p = predicted[k];
    if (t < 1 || t > classes || p < 1 || p > classes)
      throw PreconditionError(fmt::format("label out of range at sample {}: truth {}, predicted {} "
                                          "(valid 1..{})", k, t, p, classes));
    ++m.at(t - 1, p - 1);
  }
  m.total = static_cast<std::int64_t>(truth.size());
  return m;
}

double overall_accuracy(const ConfusionMatrix& m) {
  if (m.total == 0) return 0.0;
  return static_cast<double>(m.trace()) / static_cast<double>(m.total);
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& m) {
  std::vector<double> r(m.classes, std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < m.classes; ++i) {
    const auto row = m.row_sum(i);
    if (row > 0) r[i] = static_cast<double>(m.at(i, i)) / static_cast<double>(row);
  }
  return r;
}

double average_accuracy(const ConfusionMatrix& m) {
  double sum = 0;
  int present = 0;
  for (double r : per_class_accuracy(m))
    if (!std::isnan(r)) {
      sum += r;
      ++present;
    }
  return present ? sum / present : 0.0;
}

double kappa(const ConfusionMatrix& m) {
  if (m.total == 0) return 0.0;
  // Integer numerators keep the hand cases exact: with T = trace, n = total
  // and E = sum row_i * col_i, kappa = (T n - E) / (n^2 - E).
  const long double n = static_cast<long double>(m.total);
  long double expected = 0;
  for (int i = 0; i < m.classes; ++i)
    expected += static_cast<long double>(m.row_sum(i)) * static_cast<long double>(m.col_sum(i));
  const long double denom = n * n - expected;
  if (denom == 0) {
    spdlog::warn("kappa undefined (chance agreement is 1); reporting 0");
    return 0.0;
  }
  return static_cast<double>((static_cast<long double>(m.trace()) * n - expected) / denom);
}

EvaluationReport evaluate(const ConfusionMatrix& m, Timings timings) {
  EvaluationReport r;
  r.oa = overall_accuracy(m);
  r.aa = average_accuracy(m);
  r.kappa = kappa(m);
  r.per_class = per_class_accuracy(m);
  r.confusion = m;
  r.tr_seconds = timings.train_seconds;
  r.te_seconds = timings.test_seconds;
  return r;
}

EvaluationReport evaluate(std::span<const int> predicted, std::span<const int> truth, int classes,
                          Timings timings) {
  return evaluate(confusion(predicted, truth, classes), timings);
}

std::string format_percent(double fraction) {
  if (std::isnan(fraction)) return "-";
  // nearbyint under the default rounding mode rounds halves to even.
  const double hundredths = std::nearbyint(fraction * 10000.0);
  return fmt::format("{:.2f}", hundredths / 100.0);
}

std::string format_report(const EvaluationReport& r, const hsio::ClassLegend* legend) {
  std::ostringstream out;
  out << fmt::format("{:<4} {:<28} {:>8}\n", "#", "class", "acc (%)");
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    std::string name = fmt::format("class {}", i + 1);
    if (legend)
      if (const auto* e = legend->find(static_cast<int>(i) + 1)) name = e->name;
    out << fmt::format("{:<4} {:<28} {:>8}\n", i + 1, name, format_percent(r.per_class[i]));
  }
  out << fmt::format("{:<33} {:>8}\n", "kappa (%)", format_percent(r.kappa));
  out << fmt::format("{:<33} {:>8}\n", "OA (%)", format_percent(r.oa));
  out << fmt::format("{:<33} {:>8}\n", "AA (%)", format_percent(r.aa));
  out << fmt::format("{:<33} {:>8.2f}\n", "Tr time (s)", r.tr_seconds);
  out << fmt::format("{:<33} {:>8.2f}\n", "Te time (s)", r.te_seconds);
  return out.str();
}

void to_json(json& j, const EvaluationReport& r) {
  json per_class = json::array();
  for (double v : r.per_class) per_class.push_back(std::isnan(v) ? json(nullptr) : json(v));
  json rows = json::array();
  for (int i = 0; i < r.confusion.classes; ++i) {
    json row = json::array();
    for (int k = 0; k < r.confusion.classes; ++k) row.push_back(r.confusion.at(i, k));
    rows.push_back(std::move(row));
  }
  j = json{{"oa", r.oa},
           {"aa", r.aa},
           {"kappa", r.kappa},
           {"per_class", per_class},
           {"confusion", rows},
           {"tr_seconds", r.tr_seconds},
           {"te_seconds", r.te_seconds}};
}

void from_json(const json& j, EvaluationReport& r) {
  r.oa = j.at("oa").get<double>();
  r.aa = j.at("aa").get<double>();
  r.kappa = j.at("kappa").get<double>();
  r.per_class.clear();
  for (const auto& v : j.at("per_class"))
    r.per_class.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
  const auto& rows = j.at("confusion");
  r.confusion = ConfusionMatrix(static_cast<int>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      r.confusion.at(static_cast<int>(i), static_cast<int>(k)) = rows[i][k].get<std::int64_t>();
      r.confusion.total += rows[i][k].get<std::int64_t>();
    }
  r.tr_seconds = j.value("tr_seconds", 0.0);
  r.te_seconds = j.value("te_seconds", 0.0);
}

namespace {

void paint(RgbImage& img, int row, int col, const hsio::ClassLegend& legend, int label) {
  const auto* e = legend.find(label);
  if (!e) throw PreconditionError(fmt::format("legend has no colour for class {}", label));
  std::copy(e->rgb.begin(), e->rgb.end(), img.at(row, col));
}

}  // namespace

RgbImage render_map(std::span<const int> predictions, std::span<const prep::PatchCoord> coords,
                    const hsio::ClassLegend& legend, const hsio::GroundTruthMap& gt) {
  if (predictions.size() != coords.size())
    throw PreconditionError(fmt::format("{} predictions for {} pixel coordinates",
                                        predictions.size(), coords.size()));
  RgbImage img(gt.width, gt.height);
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const auto c = coords[k];
    if (c.row < 0 || c.row >= gt.height || c.col < 0 || c.col >= gt.width)
      throw PreconditionError(fmt::format("pixel ({}, {}) outside the {}x{} scene", c.row, c.col,
                                          gt.height, gt.width));
    paint(img, c.row, c.col, legend, predictions[k]);
  }
  return img;
}

RgbImage render_ground_truth(const hsio::GroundTruthMap& gt, const hsio::ClassLegend& legend) {
  RgbImage img(gt.width, gt.height);
  for (int r = 0; r < gt.height; ++r)
    for (int c = 0; c < gt.width; ++c)
      if (const int label = gt.at(r, c); label > 0) paint(img, r, c, legend, label);
  return img;
}

RgbImage side_by_side(const RgbImage& left, const RgbImage& right, int gap) {
  RgbImage out(left.width + gap + right.width, std::max(left.height, right.height));
  std::fill(out.pixels.begin(), out.pixels.end(), std::uint8_t{255});
  auto blit = [&](const RgbImage& src, int x0) {
    for (int r = 0; r < src.height; ++r)
      std::copy(src.at(r, 0), src.at(r, 0) + 3 * src.width, out.at(r, x0));
  };
  blit(left, 0);
  blit(right, left.width + gap);
  return out;
}

RgbImage scale_nearest(const RgbImage& image, int factor) {
  if (factor < 1) throw PreconditionError("scale factor must be >= 1");
  RgbImage out(image.width * factor, image.height * factor);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c)
      std::copy(image.at(r / factor, c / factor), image.at(r / factor, c / factor) + 3, out.at(r, c));
  return out;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  if (image.width < 1 || image.height < 1) throw PreconditionError("cannot encode an empty image");
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(image.height) * (1 + 3 * image.width));
  for (int r = 0; r < image.height; ++r) {
    raw.push_back(0);
    raw.insert(raw.end(), image.at(r, 0), image.at(r, 0) + 3 * image.width);
  }
  uLongf size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(size);
  if (compress2(packed.data(), &size, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw Error("zlib compression failed");
  packed.resize(size);

  std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(image.width));
  put_u32(ihdr, static_cast<std::uint32_t>(image.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit, truecolour, deflate, no filter, no interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", packed);
  put_chunk(png, "IEND", {});
  return png;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  const auto bytes = encode_png(image);
  detail::write_all(path, bytes.data(), bytes.size());
}

}  // namespace afnet::metrics
