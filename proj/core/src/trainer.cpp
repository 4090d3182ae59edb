#include "afnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "afnet/common.hpp"
#include "afnet/json_io.hpp"
#include "detail/binary_io.hpp"

namespace afnet::trainer {

namespace fs = std::filesystem;
using json = nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw PreconditionError(fmt::format("learning rate must be >= 0, got {}", learning_rate));
  if (batch_size < 1) throw PreconditionError(fmt::format("batch size must be >= 1, got {}", batch_size));
  if (epochs < 1) throw PreconditionError(fmt::format("epochs must be >= 1, got {}", epochs));
  if (micro_batch < 1) throw PreconditionError("micro batch must be >= 1");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.epsilon > 0))
    throw PreconditionError("Adam betas must lie in [0, 1) and epsilon must be positive");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"seed", c.seed},
           {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
           {"keep_best", c.keep_best},
           {"micro_batch", c.micro_batch}};
}

void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  if (j.contains("adam")) {
    const json& a = j["adam"];
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
  }
  c.keep_best = j.value("keep_best", c.keep_best);
  c.micro_batch = j.value("micro_batch", c.micro_batch);
}

AdamOptimizer::AdamOptimizer(std::size_t parameter_count, double learning_rate, AdamConfig config)
    : lr_(learning_rate), config_(config), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

template <class T>
void AdamOptimizer::step(std::span<T> params, std::span<const T> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw PreconditionError("optimizer size mismatch");
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double update = lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.epsilon);
    params[i] = static_cast<T>(params[i] - update);
  }
}

template void AdamOptimizer::step<float>(std::span<float>, std::span<const float>);
template void AdamOptimizer::step<double>(std::span<double>, std::span<const double>);

void AdamOptimizer::restore(std::int64_t steps, std::vector<double> m, std::vector<double> v) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw DataError(fmt::format("optimizer state holds {} moments, model has {} parameters",
                                m.size(), m_.size()));
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

void to_json(json& j, const TrainingHistory& h) {
  j = json{{"train_loss", h.train_loss},       {"train_accuracy", h.train_accuracy},
           {"val_loss", h.val_loss},           {"val_accuracy", h.val_accuracy},
           {"train_seconds", h.train_seconds}, {"test_seconds", h.test_seconds},
           {"best_epoch", h.best_epoch},       {"epochs", h.epochs()}};
}

void from_json(const json& j, TrainingHistory& h) {
  h.train_loss = j.at("train_loss").get<std::vector<double>>();
  h.train_accuracy = j.at("train_accuracy").get<std::vector<double>>();
  h.val_loss = j.value("val_loss", std::vector<double>{});
  h.val_accuracy = j.value("val_accuracy", std::vector<double>{});
  h.train_seconds = j.value("train_seconds", 0.0);
  h.test_seconds = j.value("test_seconds", 0.0);
  h.best_epoch = j.value("best_epoch", -1);
}

int argmax(std::span<const float> row) noexcept {
  int best = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[best]) best = static_cast<int>(c);
  return best;
}

namespace {

using Clock = std::chrono::steady_clock;

void check_compatible(const net::Model<float>& model, const prep::PatchSet& patches) {
  if (model.input_size() != patches.patch_elements())
    throw PreconditionError(fmt::format(
        "shape mismatch: model expects {} values per sample, patches hold {} ({}x{}x{})",
        model.input_size(), patches.patch_elements(), patches.patch_size(), patches.patch_size(),
        patches.components()));
  if (model.class_count() != patches.class_count())
    throw PreconditionError(fmt::format("model has {} classes, patches have {}",
                                        model.class_count(), patches.class_count()));
}

void check_indices(std::span<const std::size_t> indices, std::size_t size, const char* what) {
  for (std::size_t i : indices)
    if (i >= size)
      throw PreconditionError(fmt::format("{} index {} out of range for {} patches", what, i, size));
}

// Gathers patches and 0-based labels for one chunk.
void load_chunk(const prep::PatchSet& patches, std::span<const std::size_t> idx,
                std::vector<float>& x, std::vector<int>& y) {
  x.resize(idx.size() * patches.patch_elements());
  patches.gather_batch<float>(idx, x);
  y.resize(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) y[k] = patches.labels()[idx[k]] - 1;
}

}  // namespace

std::pair<double, double> evaluate_loss(const net::Model<float>& model,
                                        const prep::PatchSet& patches,
                                        std::span<const std::size_t> indices, int batch_size) {
  check_compatible(model, patches);
  check_indices(indices, patches.size(), "evaluation");
  if (indices.empty()) return {0.0, 0.0};
  const int classes = model.class_count();
  std::vector<float> x, probs;
  std::vector<int> y;
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto idx = indices.subspan(start, std::min<std::size_t>(batch_size, indices.size() - start));
    load_chunk(patches, idx, x, y);
    loss += model.loss_and_gradient(x, y, {}, 1.0, &probs) * static_cast<double>(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (argmax(std::span<const float>(probs).subspan(k * classes, classes)) == y[k]) ++correct;
  }
  const double n = static_cast<double>(indices.size());
  return {loss / n, static_cast<double>(correct) / n};
}

TrainingHistory train(net::Model<float>& model, const prep::PatchSet& patches,
                      const prep::SplitAssignment& split, const TrainConfig& cfg,
                      const TrainOptions& options) {
  cfg.validate();
  if (split.train_idx.empty()) throw PreconditionError("empty training split");
  check_compatible(model, patches);
  check_indices(split.train_idx, patches.size(), "training");
  check_indices(split.val_idx, patches.size(), "validation");

  const std::size_t n_params = model.parameters().size();
  AdamOptimizer adam(n_params, cfg.learning_rate, cfg.adam);
  TrainingHistory history;
  std::vector<float> best;
  double best_accuracy = -1.0;
  if (options.resume) {
    history = options.resume->history;
    const auto& saved = options.resume->optimizer;
    adam.restore(saved.steps(), {saved.first_moment().begin(), saved.first_moment().end()},
                 {saved.second_moment().begin(), saved.second_moment().end()});
    best = options.resume->best_parameters;
    if (history.best_epoch >= 0 && history.best_epoch < static_cast<int>(history.val_accuracy.size()))
      best_accuracy = history.val_accuracy[history.best_epoch];
    if (history.epochs() > cfg.epochs)
      throw PreconditionError(fmt::format("resume state has {} epochs, more than the {} requested",
                                          history.epochs(), cfg.epochs));
  }

  const int classes = model.class_count();
  std::vector<float> grad(n_params), x, probs;
  std::vector<int> y;
  std::vector<std::size_t> order;
  for (int epoch = history.epochs(); epoch < cfg.epochs; ++epoch) {
    order = split.train_idx;
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));

    const auto t0 = Clock::now();
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t batch = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      std::fill(grad.begin(), grad.end(), 0.0f);
      for (std::size_t off = 0; off < batch; off += cfg.micro_batch) {
        const std::size_t count = std::min<std::size_t>(cfg.micro_batch, batch - off);
        const auto idx = std::span<const std::size_t>(order).subspan(start + off, count);
        load_chunk(patches, idx, x, y);
        const double loss = model.loss_and_gradient(
            x, y, grad, static_cast<double>(count) / static_cast<double>(batch), &probs);
        if (!std::isfinite(loss))
          throw NumericError(fmt::format("training diverged at epoch {} (non-finite loss)", epoch + 1));
        loss_sum += loss * static_cast<double>(count);
        for (std::size_t k = 0; k < count; ++k)
          if (argmax(std::span<const float>(probs).subspan(k * classes, classes)) == y[k]) ++correct;
      }
      adam.step<float>(model.parameters(), grad);
    }
    history.train_seconds += std::chrono::duration<double>(Clock::now() - t0).count();
    history.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    history.train_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(order.size()));

    double accuracy = history.train_accuracy.back();
    if (!split.val_idx.empty()) {
      const auto [vloss, vacc] = evaluate_loss(model, patches, split.val_idx, cfg.micro_batch);
      history.val_loss.push_back(vloss);
      history.val_accuracy.push_back(vacc);
      accuracy = vacc;
    }
    if (accuracy > best_accuracy) {
      best_accuracy = accuracy;
      history.best_epoch = epoch;
      if (cfg.keep_best) best.assign(model.parameters().begin(), model.parameters().end());
    }
    if (options.on_epoch) options.on_epoch(EpochReport{epoch, history, adam, model});
  }
  if (cfg.keep_best && best.size() == n_params)
    std::copy(best.begin(), best.end(), model.parameters().begin());
  return history;
}

Prediction predict(const net::Model<float>& model, const prep::PatchSet& patches,
                   std::span<const std::size_t> indices, int batch_size) {
  check_compatible(model, patches);
  check_indices(indices, patches.size(), "prediction");
  if (batch_size < 1) throw PreconditionError("batch size must be >= 1");
  const int classes = model.class_count();
  Prediction out;
  out.labels.reserve(indices.size());
  out.probabilities.reserve(indices.size() * classes);
  std::vector<float> x;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const auto idx = indices.subspan(start, std::min<std::size_t>(batch_size, indices.size() - start));
    x.resize(idx.size() * patches.patch_elements());
    patches.gather_batch<float>(idx, x);
    const auto p = model.forward(x, static_cast<int>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k)
      out.labels.push_back(argmax(std::span<const float>(p).subspan(k * classes, classes)) + 1);
    out.probabilities.insert(out.probabilities.end(), p.begin(), p.end());
  }
  return out;
}

void save_checkpoint(const fs::path& dir, const net::Model<float>& model, json manifest,
                     const AdamOptimizer* optimizer) {
  fs::create_directories(dir);
  const auto params = model.parameters();
  manifest["parameter_count"] = params.size();
  manifest["parameters"] = {{"file", "parameters.bin"}, {"dtype", "f32"}, {"byte_order", "little"}};
  detail::write_le(dir / "parameters.bin", std::vector<float>(params.begin(), params.end()));
  if (optimizer) {
    const auto& c = optimizer->config();
    manifest["optimizer"] = {{"type", "adam"},
                             {"file", "optimizer.bin"},
                             {"steps", optimizer->steps()},
                             {"learning_rate", optimizer->learning_rate()},
                             {"beta1", c.beta1},
                             {"beta2", c.beta2},
                             {"epsilon", c.epsilon}};
    std::vector<double> moments(optimizer->first_moment().begin(), optimizer->first_moment().end());
    moments.insert(moments.end(), optimizer->second_moment().begin(),
                   optimizer->second_moment().end());
    detail::write_le(dir / "optimizer.bin", moments);
  }
  write_json(dir / "model.json", manifest);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint cp;
  cp.manifest = read_json(dir / "model.json");
  const auto count = cp.manifest.at("parameter_count").get<std::size_t>();
  cp.parameters = detail::read_le<float>(dir / "parameters.bin");
  if (cp.parameters.size() != count)
    throw DataError(fmt::format("checkpoint '{}' declares {} parameters but holds {}", dir.string(),
                                count, cp.parameters.size()));
  if (cp.manifest.contains("optimizer")) {
    const json& o = cp.manifest["optimizer"];
    auto moments = detail::read_le<double>(dir / o.value("file", std::string("optimizer.bin")));
    if (moments.size() != 2 * count)
      throw DataError(fmt::format("optimizer state in '{}' has {} values, expected {}",
                                  dir.string(), moments.size(), 2 * count));
    AdamOptimizer adam(count, o.at("learning_rate").get<double>(),
                       AdamConfig{o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                                  o.at("epsilon").get<double>()});
    std::vector<double> m(moments.begin(), moments.begin() + count);
    std::vector<double> v(moments.begin() + count, moments.end());
    adam.restore(o.at("steps").get<std::int64_t>(), std::move(m), std::move(v));
    cp.optimizer = std::move(adam);
  }
  return cp;
}

void apply_checkpoint(const Checkpoint& checkpoint, net::Model<float>& model) {
  auto params = model.parameters();
  if (checkpoint.parameters.size() != params.size())
    throw DataError(fmt::format("checkpoint holds {} parameters, model has {}",
                                checkpoint.parameters.size(), params.size()));
  std::copy(checkpoint.parameters.begin(), checkpoint.parameters.end(), params.begin());
}

}  // namespace afnet::trainer
