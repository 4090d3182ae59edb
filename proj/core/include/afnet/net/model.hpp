#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "afnet/net/graph.hpp"
#include "afnet/net/tensor.hpp"

namespace afnet::net {

/// A graph plus one flat parameter vector in layer declaration order.
///
/// Evaluation is single-threaded with a fixed reduction order, so identical
/// inputs and parameters always produce bit-identical outputs. forward() and
/// loss_and_gradient() are const and allocate their own workspace, so one
/// model may be evaluated from several threads at once.
template <class T>
class Model {
 public:
  explicit Model(Graph graph);

  const Graph& graph() const noexcept { return graph_; }
  std::span<T> parameters() noexcept { return params_; }
  std::span<const T> parameters() const noexcept { return params_; }
  std::size_t input_size() const noexcept { return graph_.input_shape().size(); }
  int class_count() const noexcept { return graph_.class_count(); }

  /// Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases.
  void initialize(std::uint64_t seed);

  /// Class probabilities, row-major (batch x classes).
  std::vector<T> forward(std::span<const T> inputs, int batch) const;

  /// Raw classifier outputs before softmax.
  std::vector<T> logits(std::span<const T> inputs, int batch) const;

  /// Mean softmax cross-entropy of the batch. Adds weight * d(mean loss)/dθ
  /// into `grad` (size == parameter count, or empty to skip the backward pass). labels are 0-based. When `probs`
  /// is non-null it receives the batch probabilities.
  double loss_and_gradient(std::span<const T> inputs, std::span<const int> labels,
                           std::span<T> grad, double weight = 1.0,
                           std::vector<T>* probs = nullptr) const;

 private:
  struct Workspace;
  void run_forward(std::span<const T> inputs, int batch, Workspace& ws) const;

  Graph graph_;
  std::vector<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

/// Standalone forms of the network's building operations, used by tests and
/// benchmarks. Each validates its arguments and throws PreconditionError.
template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const ConvSpec& spec, std::span<const T> weights,
                         std::span<const T> bias);
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvSpec& spec, std::span<const T> weights,
                         std::span<const T> bias);
/// Fold spectral depth into channels, then same-padded stride-1 max-pool.
template <class T>
Tensor<T> bridge_3d_to_2d(const Tensor<T>& features, const Kernel& window = {3, 3, 1});

}  // namespace afnet::net
