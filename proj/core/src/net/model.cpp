#include "afnet/net/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "afnet/common.hpp"
#include "afnet/net/kernels.hpp"

namespace afnet::net {

template <class T>
struct Model<T>::Workspace {
  std::vector<Tensor<T>> acts;
  std::vector<kernels::AttentionCache<T>> attention;
  std::vector<std::vector<std::uint32_t>> argmax;
};

template <class T>
Model<T>::Model(Graph graph) : graph_(std::move(graph)), params_(graph_.parameter_count(), T(0)) {}

template <class T>
void Model<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  std::fill(params_.begin(), params_.end(), T(0));
  auto fill_uniform = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (std::size_t i = 0; i < count; ++i) params_[offset + i] = static_cast<T>(rng.uniform(-bound, bound));
  };
  for (const Node& n : graph_.nodes()) {
    switch (n.op) {
      case OpKind::conv: {
        const int cin = graph_.node(n.inputs[0]).shape.channels;
        const std::size_t wcount = kernels::conv_weight_count(n.conv.kernel, cin, n.conv.filters);
        fill_uniform(n.param_offset, wcount, static_cast<std::size_t>(n.conv.kernel.volume()) * cin);
        break;
      }
      case OpKind::attention_fuse: {
        const auto l = kernels::attention_layout(n.attention, graph_.node(n.inputs[0]).shape,
                                                 graph_.node(n.inputs[1]).shape);
        std::size_t off = n.param_offset;
        if (n.attention.has_channel()) {
          const std::size_t desc = static_cast<std::size_t>(l.trunk_channels) + l.skip_channels;
          fill_uniform(off, desc * l.hidden, desc);
          off += desc * l.hidden + l.hidden;
          fill_uniform(off, static_cast<std::size_t>(l.hidden) * l.skip_channels, l.hidden);
          off += static_cast<std::size_t>(l.hidden) * l.skip_channels + l.skip_channels;
        }
        if (n.attention.has_spatial()) {
          const std::size_t wcount = kernels::conv_weight_count(l.spatial_kernel, 4, 1);
          fill_uniform(off, wcount, wcount);
        }
        break;
      }
      case OpKind::dense: {
        const std::size_t features = graph_.node(n.inputs[0]).shape.size();
        fill_uniform(n.param_offset, features * n.units, features);
        break;
      }
      default:
        break;
    }
  }
}

template <class T>
void Model<T>::run_forward(std::span<const T> inputs, int batch, Workspace& ws) const {
  if (batch < 1) throw PreconditionError("batch must contain at least one sample");
  if (inputs.size() != static_cast<std::size_t>(batch) * input_size())
    throw PreconditionError(fmt::format("shape mismatch: expected {} values ({} x {}), got {}",
                                        static_cast<std::size_t>(batch) * input_size(), batch,
                                        input_size(), inputs.size()));
  const auto nodes = graph_.nodes();
  ws.acts.assign(nodes.size(), {});
  ws.attention.assign(nodes.size(), {});
  ws.argmax.assign(nodes.size(), {});
  const std::span<const T> params(params_);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    Tensor<T>& out = ws.acts[i];
    const auto node_params = params.subspan(n.param_offset, n.param_count);
    switch (n.op) {
      case OpKind::input:
        out.reset(batch, n.shape);
        std::copy(inputs.begin(), inputs.end(), out.data.begin());
        break;
      case OpKind::conv: {
        const std::size_t wcount = n.param_count - n.conv.filters;
        kernels::conv_forward<T>(ws.acts[n.inputs[0]], n.conv.kernel, n.conv.filters,
                                 node_params.first(wcount), node_params.subspan(wcount), n.relu,
                                 out);
        break;
      }
      case OpKind::concat: {
        std::vector<const Tensor<T>*> in;
        for (int id : n.inputs) in.push_back(&ws.acts[id]);
        kernels::concat_channels<T>(in, out);
        break;
      }
      case OpKind::attention_fuse: {
        const Tensor<T>& trunk = ws.acts[n.inputs[0]];
        const Tensor<T>& skip = ws.acts[n.inputs[1]];
        kernels::attention_gate_forward<T>(trunk, skip, n.attention, node_params, ws.attention[i]);
        kernels::fuse_with_gate<T>(trunk, skip, ws.attention[i].gate, out);
        break;
      }
      case OpKind::fold:
        out = ws.acts[n.inputs[0]];
        out.shape = n.shape;
        break;
      case OpKind::max_pool:
        kernels::max_pool_forward<T>(ws.acts[n.inputs[0]], n.pool, out, ws.argmax[i]);
        break;
      case OpKind::dense: {
        const std::size_t wcount = n.param_count - n.units;
        kernels::dense_forward<T>(ws.acts[n.inputs[0]], n.units, node_params.first(wcount),
                                  node_params.subspan(wcount), out);
        break;
      }
    }
  }
}

template <class T>
std::vector<T> Model<T>::logits(std::span<const T> inputs, int batch) const {
  Workspace ws;
  run_forward(inputs, batch, ws);
  return std::move(ws.acts.back().data);
}

template <class T>
std::vector<T> Model<T>::forward(std::span<const T> inputs, int batch) const {
  const std::vector<T> z = logits(inputs, batch);
  std::vector<T> probs(z.size());
  kernels::softmax<T>(z, class_count(), probs);
  return probs;
}

template <class T>
double Model<T>::loss_and_gradient(std::span<const T> inputs, std::span<const int> labels,
                                   std::span<T> grad, double weight, std::vector<T>* probs) const {
  const int batch = static_cast<int>(labels.size());
  if (!grad.empty() && grad.size() != params_.size())
    throw PreconditionError("gradient buffer size mismatch");
  for (int label : labels)
    if (label < 0 || label >= class_count())
      throw PreconditionError(fmt::format("label {} outside [0, {})", label, class_count()));
  Workspace ws;
  run_forward(inputs, batch, ws);
  const auto nodes = graph_.nodes();
  const int classes = class_count();

  std::vector<Tensor<T>> grads(nodes.size());
  Tensor<T>& top = grads.back();
  top.reset(batch, nodes.back().shape);
  std::vector<T> p(static_cast<std::size_t>(batch) * classes);
  const double loss =
      kernels::softmax_cross_entropy<T>(ws.acts.back().data, classes, labels, p, top.data);
  if (weight != 1.0)
    for (auto& g : top.data) g = static_cast<T>(g * weight);
  if (probs) *probs = std::move(p);
  if (grad.empty()) return loss;

  auto grad_of = [&](int id) -> Tensor<T>& {
    if (grads[id].data.empty()) grads[id].reset(batch, nodes[id].shape);
    return grads[id];
  };
  const std::span<const T> params(params_);
  for (std::size_t i = nodes.size(); i-- > 1;) {
    if (grads[i].data.empty()) continue;
    const Node& n = nodes[i];
    const Tensor<T>& g = grads[i];
    const auto node_params = params.subspan(n.param_offset, n.param_count);
    const auto node_grad = grad.subspan(n.param_offset, n.param_count);
    switch (n.op) {
      case OpKind::input:
        break;
      case OpKind::conv: {
        const std::size_t wcount = n.param_count - n.conv.filters;
        const int in = n.inputs[0];
        kernels::conv_backward<T>(ws.acts[in], ws.acts[i], g, n.conv.kernel, n.conv.filters,
                                  node_params.first(wcount), n.relu, node_grad.first(wcount),
                                  node_grad.subspan(wcount), in == 0 ? nullptr : &grad_of(in));
        break;
      }
      case OpKind::concat: {
        std::vector<Tensor<T>*> gi;
        for (int id : n.inputs) gi.push_back(&grad_of(id));
        kernels::concat_channels_backward<T>(g, gi);
        break;
      }
      case OpKind::attention_fuse: {
        const int t = n.inputs[0], s = n.inputs[1];
        Tensor<T>& gt = grad_of(t);
        Tensor<T>& gs = grad_of(s);
        kernels::attention_fuse_backward<T>(ws.acts[t], ws.acts[s], n.attention, node_params,
                                            ws.attention[i], g, node_grad, gt, gs);
        break;
      }
      case OpKind::fold: {
        Tensor<T>& gi = grad_of(n.inputs[0]);
        for (std::size_t k = 0; k < g.data.size(); ++k) gi.data[k] += g.data[k];
        break;
      }
      case OpKind::max_pool:
        kernels::max_pool_backward<T>(g, ws.argmax[i], grad_of(n.inputs[0]));
        break;
      case OpKind::dense: {
        const std::size_t wcount = n.param_count - n.units;
        const int in = n.inputs[0];
        kernels::dense_backward<T>(ws.acts[in], g, n.units, node_params.first(wcount),
                                   node_grad.first(wcount), node_grad.subspan(wcount),
                                   in == 0 ? nullptr : &grad_of(in));
        break;
      }
    }
    grads[i] = Tensor<T>();
    ws.attention[i] = {};
  }
  return loss;
}

template class Model<float>;
template class Model<double>;

template <class T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const ConvSpec& spec, std::span<const T> weights,
                         std::span<const T> bias) {
  spec.validate();
  Tensor<T> out;
  kernels::conv_forward<T>(input, spec.kernel, spec.filters, weights, bias, true, out);
  return out;
}

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const ConvSpec& spec, std::span<const T> weights,
                         std::span<const T> bias) {
  spec.validate();
  if (input.shape.depth != 1 || spec.kernel.depth != 1)
    throw PreconditionError("2D convolution expects planar input and a depth-1 kernel");
  Tensor<T> out;
  kernels::conv_forward<T>(input, spec.kernel, spec.filters, weights, bias, true, out);
  return out;
}

template <class T>
Tensor<T> bridge_3d_to_2d(const Tensor<T>& features, const Kernel& window) {
  Tensor<T> folded = features;
  folded.shape = kernels::fold_shape(features.shape);
  Tensor<T> out;
  std::vector<std::uint32_t> argmax;
  kernels::max_pool_forward<T>(folded, window, out, argmax);
  return out;
}

template Tensor<float> conv3d_forward<float>(const Tensor<float>&, const ConvSpec&,
                                             std::span<const float>, std::span<const float>);
template Tensor<double> conv3d_forward<double>(const Tensor<double>&, const ConvSpec&,
                                               std::span<const double>, std::span<const double>);
template Tensor<float> conv2d_forward<float>(const Tensor<float>&, const ConvSpec&,
                                             std::span<const float>, std::span<const float>);
template Tensor<double> conv2d_forward<double>(const Tensor<double>&, const ConvSpec&,
                                               std::span<const double>, std::span<const double>);
template Tensor<float> bridge_3d_to_2d<float>(const Tensor<float>&, const Kernel&);
template Tensor<double> bridge_3d_to_2d<double>(const Tensor<double>&, const Kernel&);

}  // namespace afnet::net
