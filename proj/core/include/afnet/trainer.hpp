#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "afnet/net/model.hpp"
#include "afnet/prep.hpp"

namespace afnet::trainer {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 256;
  int epochs = 100;
  std::uint64_t seed = 0;  // mini-batch shuffling
  AdamConfig adam;
  /// Restore the parameters of the best validation epoch at the end
  /// (ties go to the earlier epoch) instead of keeping the last ones.
  bool keep_best = false;
  /// Samples evaluated per forward/backward pass; bounds activation memory.
  /// Does not change the optimisation (gradients are summed over the batch).
  int micro_batch = 32;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Adam with bias correction. Moments are kept in double whatever the
/// parameter type.
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(std::size_t parameter_count, double learning_rate, AdamConfig config = {});

  template <class T>
  void step(std::span<T> params, std::span<const T> grad);

  std::int64_t steps() const noexcept { return steps_; }
  double learning_rate() const noexcept { return lr_; }
  const AdamConfig& config() const noexcept { return config_; }
  std::span<const double> first_moment() const noexcept { return m_; }
  std::span<const double> second_moment() const noexcept { return v_; }

  /// Restores a saved state exactly.
  void restore(std::int64_t steps, std::vector<double> m, std::vector<double> v);

 private:
  double lr_ = 0.001;
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

struct TrainingHistory {
  std::vector<double> train_loss;
  std::vector<double> train_accuracy;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;
  /// Optimisation-loop wall time only (no data preparation, no validation).
  double train_seconds = 0.0;
  double test_seconds = 0.0;
  int best_epoch = -1;  // 0-based, by validation accuracy

  int epochs() const noexcept { return static_cast<int>(train_loss.size()); }
};

void to_json(nlohmann::json& j, const TrainingHistory& h);
void from_json(const nlohmann::json& j, TrainingHistory& h);

/// Where to pick up an interrupted run.
struct ResumeState {
  TrainingHistory history;  // completed epochs
  AdamOptimizer optimizer;
  std::vector<float> best_parameters;  // only with keep_best
};

struct EpochReport {
  int epoch = 0;  // 0-based, just completed
  const TrainingHistory& history;
  const AdamOptimizer& optimizer;
  const net::Model<float>& model;
};

struct TrainOptions {
  const ResumeState* resume = nullptr;
  std::function<void(const EpochReport&)> on_epoch;
};

/// Runs cfg.epochs passes over split.train_idx in shuffled mini-batches (the
/// last partial batch is kept) and updates `model` in place. Validation loss
/// and accuracy are recorded per epoch when split.val_idx is non-empty.
/// Epoch e shuffles with Rng(derive_seed(cfg.seed, e)), so a resumed run
/// reproduces an uninterrupted one exactly.
TrainingHistory train(net::Model<float>& model, const prep::PatchSet& patches,
                      const prep::SplitAssignment& split, const TrainConfig& cfg,
                      const TrainOptions& options = {});

struct Prediction {
  std::vector<int> labels;          // 1..C; ties go to the lowest class
  std::vector<float> probabilities;  // row-major (n x C)
};

Prediction predict(const net::Model<float>& model, const prep::PatchSet& patches,
                   std::span<const std::size_t> indices, int batch_size = 64);

/// Lowest index wins ties.
int argmax(std::span<const float> row) noexcept;

/// Mean loss and accuracy over `indices` without touching the parameters.
std::pair<double, double> evaluate_loss(const net::Model<float>& model,
                                        const prep::PatchSet& patches,
                                        std::span<const std::size_t> indices, int batch_size = 64);

// ---------------------------------------------------------------------------
// Checkpoints: model.json (manifest), parameters.bin (little-endian f32 in
// layer declaration order) and, when an optimizer is given, optimizer.bin
// (f64 first moments followed by f64 second moments).

struct Checkpoint {
  nlohmann::json manifest;
  std::vector<float> parameters;
  std::optional<AdamOptimizer> optimizer;
};

void save_checkpoint(const std::filesystem::path& dir, const net::Model<float>& model,
                     nlohmann::json manifest, const AdamOptimizer* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Copies checkpoint parameters into `model`; the counts must agree.
void apply_checkpoint(const Checkpoint& checkpoint, net::Model<float>& model);

}  // namespace afnet::trainer
