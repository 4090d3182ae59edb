#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "afnet/net/config.hpp"
#include "afnet/net/tensor.hpp"

namespace afnet::net {

enum class OpKind { input, conv, concat, attention_fuse, fold, max_pool, dense };

/// What a convolution is for; only branch and head convolutions count
/// towards the network's convolution-layer total.
enum class LayerRole { none, branch, head, adapter, classifier };

std::string to_string(OpKind op);

struct Node {
  std::string name;
  OpKind op = OpKind::input;
  std::vector<int> inputs;  // node ids; attention_fuse is (trunk, skip)
  FeatureShape shape;       // per-sample output extent
  LayerRole role = LayerRole::none;
  ConvSpec conv;            // conv
  bool relu = true;         // conv
  AttentionSpec attention;  // attention_fuse
  Kernel pool;              // max_pool
  int units = 0;            // dense
  std::size_t param_offset = 0;
  std::size_t param_count = 0;
};

/// Static description of a network: nodes in topological order with their
/// output extents and offsets into one flat parameter vector (declaration
/// order). Built by the functions below; consumed by Model<T>.
class Graph {
 public:
  Graph(ModelKind kind, FeatureShape input, int class_count);

  ModelKind kind() const noexcept { return kind_; }
  FeatureShape input_shape() const noexcept { return input_; }
  int class_count() const noexcept { return class_count_; }
  std::span<const Node> nodes() const noexcept { return nodes_; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  int output() const noexcept { return static_cast<int>(nodes_.size()) - 1; }
  std::size_t parameter_count() const noexcept { return params_; }

  /// Branch and head convolutions (adapters and gate internals excluded).
  int conv_layer_count() const noexcept;
  int conv3d_layer_count() const noexcept;
  int conv2d_layer_count() const noexcept;
  /// Human-readable layer table.
  std::string summary() const;

  int add_input();
  int add_conv(std::string name, int input, const ConvSpec& spec, bool relu, LayerRole role);
  int add_concat(std::string name, std::vector<int> inputs);
  int add_attention_fuse(std::string name, int trunk, int skip, const AttentionSpec& spec);
  int add_fold(std::string name, int input);
  int add_max_pool(std::string name, int input, const Kernel& window);
  int add_dense(std::string name, int input, int units);

 private:
  int push(Node node);

  ModelKind kind_;
  FeatureShape input_;
  int class_count_;
  std::vector<Node> nodes_;
  std::size_t params_ = 0;
};

/// Hybrid network: 3D blocks -> reshape + max-pool bridge -> 2D blocks ->
/// fusion concat -> 1x1 head -> flatten -> dense softmax classifier.
Graph build_afnet(const AfNetConfig& config);
/// 3D blocks -> fusion -> spectral fold -> 1x1 head -> dense.
Graph build_baseline_3d(const AfNetConfig& config);
/// Patch consumed as a B-channel image -> 2D blocks -> fusion -> head -> dense.
Graph build_baseline_2d(const AfNetConfig& config);
Graph build_model(ModelKind kind, const AfNetConfig& config);

std::size_t count_parameters(const AfNetConfig& config, ModelKind kind = ModelKind::afnet);

}  // namespace afnet::net
