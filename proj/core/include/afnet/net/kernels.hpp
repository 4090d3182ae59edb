#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "afnet/net/config.hpp"
#include "afnet/net/tensor.hpp"

// Forward and backward kernels for every operation the graphs use. Backward
// routines accumulate (+=) into gradient buffers because a node's output can
// feed several consumers. All loops run in a fixed order, so results are
// bitwise reproducible.
namespace afnet::net::kernels {

/// Weight layout: [kh][kw][kd][in_channels][filters]; bias: [filters].
inline std::size_t conv_weight_count(const Kernel& k, int in_channels, int filters) {
  return static_cast<std::size_t>(k.volume()) * in_channels * filters;
}

/// Same-padded stride-1 convolution over (row, col, depth):
///   out(x,y,z,f) = act( b_f + sum_c sum_{p,q,r} w(p,q,r,c,f) * in(x+p-γ, y+q-δ, z+r-ν, c) )
/// with taps outside the input contributing zero.
template <class T>
void conv_forward(const Tensor<T>& in, const Kernel& k, int filters, std::span<const T> weights,
                  std::span<const T> bias, bool relu, Tensor<T>& out);

/// `out` is the forward output (used for the ReLU mask). grad_in may be null.
template <class T>
void conv_backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                   const Kernel& k, int filters, std::span<const T> weights, bool relu,
                   std::span<T> grad_weights, std::span<T> grad_bias, Tensor<T>* grad_in);

/// Max-pool over (row, col) with a k.height x k.width window, stride 1, same
/// padding (out-of-range taps ignored). Depth and channels are pooled
/// independently. `argmax` receives the flat source index per output.
template <class T>
void max_pool_forward(const Tensor<T>& in, const Kernel& k, Tensor<T>& out,
                      std::vector<std::uint32_t>& argmax);

template <class T>
void max_pool_backward(const Tensor<T>& grad_out, const std::vector<std::uint32_t>& argmax,
                       Tensor<T>& grad_in);

/// (h, w, d, c) -> (h, w, 1, d*c). Memory order is unchanged.
FeatureShape fold_shape(const FeatureShape& s);

template <class T>
void concat_channels(std::span<const Tensor<T>* const> inputs, Tensor<T>& out);

template <class T>
void concat_channels_backward(const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_inputs);

/// out(n, u) = b(u) + sum_f in(n, f) * w(f, u); weights [features][units].
template <class T>
void dense_forward(const Tensor<T>& in, int units, std::span<const T> weights,
                   std::span<const T> bias, Tensor<T>& out);

template <class T>
void dense_backward(const Tensor<T>& in, const Tensor<T>& grad_out, int units,
                    std::span<const T> weights, std::span<T> grad_weights,
                    std::span<T> grad_bias, Tensor<T>* grad_in);

/// Logistic function clamped to the open interval (0, 1) at T's precision.
template <class T>
T gate_sigmoid(T z) noexcept;

/// Parameter layout of one attention gate for given trunk/skip shapes.
struct AttentionLayout {
  int trunk_channels = 0;
  int skip_channels = 0;
  int hidden = 0;
  Kernel spatial_kernel;
  std::size_t channel_params = 0;  // W1, b1, W2, b2
  std::size_t spatial_params = 0;  // spatial conv weights + bias
  std::size_t total() const noexcept { return channel_params + spatial_params; }
};

AttentionLayout attention_layout(const AttentionSpec& spec, const FeatureShape& trunk,
                                 const FeatureShape& skip);

/// Intermediates kept from the forward pass for the backward pass.
template <class T>
struct AttentionCache {
  std::vector<T> descriptor;     // n x (ct + cs)
  std::vector<T> hidden_pre;     // n x hidden
  std::vector<T> hidden;         // n x hidden
  std::vector<T> channel_gate;   // n x cs
  Tensor<T> spatial_maps;        // (n, h, w, d, 4)
  std::vector<std::uint32_t> max_channel;  // n x positions x 2 (trunk, skip)
  Tensor<T> spatial_gate;        // (n, h, w, d, 1)
  Tensor<T> gate;                // same shape as skip
};

/// Computes the full gate tensor (shape of skip) into cache.gate. With kind
/// == none the gate is identically one.
template <class T>
void attention_gate_forward(const Tensor<T>& trunk, const Tensor<T>& skip, const AttentionSpec& spec,
                            std::span<const T> params, AttentionCache<T>& cache);

/// out = concat(trunk, gate ⊙ skip) along channels.
template <class T>
void fuse_with_gate(const Tensor<T>& trunk, const Tensor<T>& skip, const Tensor<T>& gate,
                    Tensor<T>& out);

template <class T>
void attention_fuse_backward(const Tensor<T>& trunk, const Tensor<T>& skip,
                             const AttentionSpec& spec, std::span<const T> params,
                             const AttentionCache<T>& cache, const Tensor<T>& grad_out,
                             std::span<T> grad_params, Tensor<T>& grad_trunk,
                             Tensor<T>& grad_skip);

/// Row-wise softmax of logits (n x classes).
template <class T>
void softmax(std::span<const T> logits, int classes, std::span<T> probs);

/// Mean cross-entropy over the batch; writes d(loss)/d(logits) when
/// grad_logits is non-empty. labels are 0-based.
template <class T>
double softmax_cross_entropy(std::span<const T> logits, int classes, std::span<const int> labels,
                             std::span<T> probs, std::span<T> grad_logits);

}  // namespace afnet::net::kernels
