#include "afnet/prep.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

namespace afnet::prep {

ReducedCube pca_reduce(const hsio::HyperspectralCube& cube, int components, PcaMode mode) {
  const int bands = cube.bands;
  const std::size_t pixels = cube.pixel_count();
  if (components < 1 || components > bands)
    throw PreconditionError(
        fmt::format("component count {} must lie in [1, {}] (band count)", components, bands));
  if (pixels < 2) throw PreconditionError("PCA needs at least two pixels");
  if (cube.data.size() != pixels * bands) throw DataError("cube data extent mismatch");

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(bands);
  for (std::size_t p = 0; p < pixels; ++p)
    for (int b = 0; b < bands; ++b) mean[b] += cube.data[p * bands + b];
  mean /= static_cast<double>(pixels);

  // Covariance accumulated over pixel chunks to bound the temporary.
  constexpr std::size_t kChunk = 4096;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(bands, bands);
  Eigen::MatrixXd chunk(kChunk, bands);
  for (std::size_t start = 0; start < pixels; start += kChunk) {
    const std::size_t rows = std::min(kChunk, pixels - start);
    for (std::size_t r = 0; r < rows; ++r)
      for (int b = 0; b < bands; ++b)
        chunk(static_cast<Eigen::Index>(r), b) = cube.data[(start + r) * bands + b] - mean[b];
    const auto block = chunk.topRows(static_cast<Eigen::Index>(rows));
    cov.noalias() += block.transpose() * block;
  }
  cov /= static_cast<double>(pixels - 1);

  Eigen::VectorXd scale = Eigen::VectorXd::Ones(bands);
  if (mode == PcaMode::correlation) {
    for (int b = 0; b < bands; ++b) {
      const double sd = std::sqrt(std::max(cov(b, b), 0.0));
      if (sd > 0) scale[b] = sd;
    }
    cov = scale.cwiseInverse().asDiagonal() * cov * scale.cwiseInverse().asDiagonal();
  }

  const double total = cov.trace();
  const double magnitude = std::max(1.0, mean.cwiseAbs().maxCoeff());
  if (!(total > 1e-12 * magnitude * magnitude))
    throw NumericError("degenerate cube: band covariance is zero (all pixels constant)");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  // Eigen returns ascending eigenvalues.
  const Eigen::VectorXd values = solver.eigenvalues().reverse();
  Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();

  ReducedCube out;
  out.height = cube.height;
  out.width = cube.width;
  out.components = components;
  out.mode = mode;
  out.band_means = mean;
  out.band_scales = scale;
  out.total_variance = total;
  out.projection.resize(bands, components);
  for (int k = 0; k < components; ++k) {
    Eigen::VectorXd v = vectors.col(k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    out.projection.col(k) = v;
    out.explained_variance.push_back(std::clamp(values[k] / total, 0.0, 1.0));
  }
  for (int k = 1; k < components; ++k)  // guard rounding noise between equal eigenvalues
    out.explained_variance[k] = std::min(out.explained_variance[k], out.explained_variance[k - 1]);

  out.data.assign(pixels * components, 0.0);
  Eigen::VectorXd centered(bands);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (int b = 0; b < bands; ++b) centered[b] = (cube.data[p * bands + b] - mean[b]) / scale[b];
    const Eigen::VectorXd coeffs = out.projection.transpose() * centered;
    std::copy(coeffs.data(), coeffs.data() + components, out.data.begin() + p * components);
  }
  return out;
}

Eigen::VectorXd back_project(const ReducedCube& reduced, std::span<const double> coefficients) {
  if (static_cast<int>(coefficients.size()) != reduced.components)
    throw PreconditionError("coefficient count differs from component count");
  const Eigen::Map<const Eigen::VectorXd> c(coefficients.data(), reduced.components);
  Eigen::VectorXd spectrum = reduced.projection * c;
  return spectrum.cwiseProduct(reduced.band_scales) + reduced.band_means;
}

std::string to_string(PcaMode mode) {
  return mode == PcaMode::correlation ? "correlation" : "covariance";
}

PcaMode pca_mode_from_string(const std::string& text) {
  if (text == "covariance") return PcaMode::covariance;
  if (text == "correlation") return PcaMode::correlation;
  throw PreconditionError(fmt::format("unknown PCA mode '{}'", text));
}

std::string to_string(BorderMode mode) {
  return mode == BorderMode::interior ? "interior" : "mirror";
}

BorderMode border_mode_from_string(const std::string& text) {
  if (text == "interior") return BorderMode::interior;
  if (text == "mirror") return BorderMode::mirror;
  throw PreconditionError(fmt::format("unknown border mode '{}'", text));
}

PatchSet::PatchSet(std::shared_ptr<const ReducedCube> cube, int patch_size, BorderMode mode,
                   std::vector<PatchCoord> coords, std::vector<int> labels, int class_count)
    : cube_(std::move(cube)),
      patch_size_(patch_size),
      mode_(mode),
      coords_(std::move(coords)),
      labels_(std::move(labels)),
      class_count_(class_count) {
  if (coords_.size() != labels_.size()) throw PreconditionError("coords/labels length differ");
}

template <class T>
void PatchSet::gather(std::size_t index, std::span<T> out) const {
  const ReducedCube& rc = *cube_;
  const int radius = (patch_size_ - 1) / 2;
  const int comps = rc.components;
  const PatchCoord c = coords_[index];
  std::size_t o = 0;
  for (int dr = -radius; dr <= radius; ++dr) {
    const int row = reflect_index(c.row + dr, rc.height);
    for (int dc = -radius; dc <= radius; ++dc) {
      const int col = reflect_index(c.col + dc, rc.width);
      const double* src = rc.data.data() + (static_cast<std::size_t>(row) * rc.width + col) * comps;
      for (int k = 0; k < comps; ++k) out[o++] = static_cast<T>(src[k]);
    }
  }
}

template <class T>
void PatchSet::gather_batch(std::span<const std::size_t> indices, std::span<T> out) const {
  const std::size_t stride = patch_elements();
  if (out.size() < indices.size() * stride) throw PreconditionError("gather buffer too small");
  for (std::size_t i = 0; i < indices.size(); ++i)
    gather<T>(indices[i], out.subspan(i * stride, stride));
}

template void PatchSet::gather<float>(std::size_t, std::span<float>) const;
template void PatchSet::gather<double>(std::size_t, std::span<double>) const;
template void PatchSet::gather_batch<float>(std::span<const std::size_t>, std::span<float>) const;
template void PatchSet::gather_batch<double>(std::span<const std::size_t>, std::span<double>) const;

PatchSet extract_patches(std::shared_ptr<const ReducedCube> reduced, const hsio::GroundTruthMap& gt,
                         int patch_size, BorderMode mode) {
  if (!reduced) throw PreconditionError("null reduced cube");
  if (patch_size < 1 || patch_size % 2 == 0)
    throw PreconditionError(fmt::format("patch size must be odd and positive, got {}", patch_size));
  if (patch_size > std::min(reduced->height, reduced->width))
    throw PreconditionError(fmt::format("patch size {} exceeds cube extent {}x{}", patch_size,
                                        reduced->height, reduced->width));
  if (gt.height != reduced->height || gt.width != reduced->width)
    throw DataError(fmt::format("extent mismatch: cube is {}x{}, ground truth is {}x{}",
                                reduced->height, reduced->width, gt.height, gt.width));
  const int radius = (patch_size - 1) / 2;
  int row_lo = 0, row_hi = gt.height - 1, col_lo = 0, col_hi = gt.width - 1;
  if (mode == BorderMode::interior) {
    row_lo = col_lo = radius;
    row_hi -= radius;
    col_hi -= radius;
  }
  std::vector<PatchCoord> coords;
  std::vector<int> labels;
  for (int r = row_lo; r <= row_hi; ++r) {
    for (int c = col_lo; c <= col_hi; ++c) {
      const int label = gt.at(r, c);
      if (label == 0) continue;
      coords.push_back({r, c});
      labels.push_back(label);
    }
  }
  return PatchSet(std::move(reduced), patch_size, mode, std::move(coords), std::move(labels),
                  gt.class_count);
}

void SplitFractions::validate() const {
  if (!(train > 0 && validation > 0 && test > 0))
    throw PreconditionError("split fractions must be positive");
  if (std::fabs(train + validation + test - 1.0) > 1e-9)
    throw PreconditionError(fmt::format("split fractions sum to {}, expected 1", train + validation + test));
}

SplitFractions parse_fractions(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '/')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw PreconditionError(fmt::format("cannot parse fractions '{}'", text));
    }
  }
  if (parts.size() != 3) throw PreconditionError(fmt::format("expected a/b/c, got '{}'", text));
  const double sum = parts[0] + parts[1] + parts[2];
  if (std::fabs(sum - 100.0) < 1e-6)
    for (auto& p : parts) p /= 100.0;
  return {parts[0], parts[1], parts[2]};
}

SplitCounts split_counts(std::size_t class_size, const SplitFractions& f) {
  // Round half away from zero; the epsilon absorbs representation error in
  // products like 0.15 * 10 that are meant to be exact halves.
  auto round_half_up = [](double x) {
    return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
  };
  const auto n = static_cast<double>(class_size);
  SplitCounts c;
  c.train = std::max<std::size_t>(1, round_half_up(f.train * n));
  c.train = std::min(c.train, class_size - 2);
  c.validation = std::max<std::size_t>(1, round_half_up(f.validation * n));
  c.validation = std::min(c.validation, class_size - c.train - 1);
  c.test = class_size - c.train - c.validation;
  return c;
}

SplitAssignment stratified_split(std::span<const int> labels, const SplitFractions& fractions,
                                 std::uint64_t seed) {
  fractions.validate();
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1) throw DataError(fmt::format("patch {} has invalid label {}", i, labels[i]));
    by_class[labels[i]].push_back(i);
  }
  SplitAssignment out;
  out.fractions = fractions;
  out.seed = seed;
  for (auto& [label, members] : by_class) {
    if (members.size() < 3)
      throw PreconditionError(fmt::format(
          "class {} has {} patch(es); at least 3 are needed to populate train/validation/test",
          label, members.size()));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    rng.shuffle(std::span<std::size_t>(members));
    const SplitCounts counts = split_counts(members.size(), fractions);
    ClassSplit cs;
    cs.label = label;
    cs.train.assign(members.begin(), members.begin() + counts.train);
    cs.validation.assign(members.begin() + counts.train,
                         members.begin() + counts.train + counts.validation);
    cs.test.assign(members.begin() + counts.train + counts.validation, members.end());
    for (auto* list : {&cs.train, &cs.validation, &cs.test}) std::sort(list->begin(), list->end());
    out.train_idx.insert(out.train_idx.end(), cs.train.begin(), cs.train.end());
    out.val_idx.insert(out.val_idx.end(), cs.validation.begin(), cs.validation.end());
    out.test_idx.insert(out.test_idx.end(), cs.test.begin(), cs.test.end());
    out.per_class.push_back(std::move(cs));
  }
  for (auto* list : {&out.train_idx, &out.val_idx, &out.test_idx})
    std::sort(list->begin(), list->end());
  return out;
}

void to_json(nlohmann::json& j, const SplitAssignment& split) {
  j["seed"] = split.seed;
  j["fractions"] = {{"train", split.fractions.train},
                    {"validation", split.fractions.validation},
                    {"test", split.fractions.test}};
  auto classes = nlohmann::json::array();
  for (const auto& cs : split.per_class)
    classes.push_back(
        {{"label", cs.label}, {"train", cs.train}, {"validation", cs.validation}, {"test", cs.test}});
  j["classes"] = std::move(classes);
}

void from_json(const nlohmann::json& j, SplitAssignment& split) {
  split = {};
  split.seed = j.at("seed").get<std::uint64_t>();
  const auto& f = j.at("fractions");
  split.fractions = {f.at("train").get<double>(), f.at("validation").get<double>(),
                     f.at("test").get<double>()};
  for (const auto& c : j.at("classes")) {
    ClassSplit cs;
    cs.label = c.at("label").get<int>();
    cs.train = c.at("train").get<std::vector<std::size_t>>();
    cs.validation = c.at("validation").get<std::vector<std::size_t>>();
    cs.test = c.at("test").get<std::vector<std::size_t>>();
    split.train_idx.insert(split.train_idx.end(), cs.train.begin(), cs.train.end());
    split.val_idx.insert(split.val_idx.end(), cs.validation.begin(), cs.validation.end());
    split.test_idx.insert(split.test_idx.end(), cs.test.begin(), cs.test.end());
    split.per_class.push_back(std::move(cs));
  }
  for (auto* list : {&split.train_idx, &split.val_idx, &split.test_idx})
    std::sort(list->begin(), list->end());
}

}  // namespace afnet::prep
