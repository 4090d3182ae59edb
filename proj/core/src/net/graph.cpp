#include "afnet/net/graph.hpp"

#include <sstream>

#include <fmt/format.h>

#include "afnet/common.hpp"
#include "afnet/net/kernels.hpp"

namespace afnet::net {

std::string to_string(OpKind op) {
  switch (op) {
    case OpKind::input: return "input";
    case OpKind::conv: return "conv";
    case OpKind::concat: return "concat";
    case OpKind::attention_fuse: return "attention_fuse";
    case OpKind::fold: return "fold";
    case OpKind::max_pool: return "max_pool";
    case OpKind::dense: return "dense";
  }
  return "?";
}

Graph::Graph(ModelKind kind, FeatureShape input, int class_count)
    : kind_(kind), input_(input), class_count_(class_count) {}

int Graph::push(Node node) {
  node.param_offset = params_;
  params_ += node.param_count;
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::add_input() {
  Node n;
  n.name = "input";
  n.op = OpKind::input;
  n.shape = input_;
  return push(std::move(n));
}

int Graph::add_conv(std::string name, int input, const ConvSpec& spec, bool relu, LayerRole role) {
  spec.validate();
  const FeatureShape in = node(input).shape;
  if (spec.kernel.depth > 1 && in.depth == 1)
    throw PreconditionError(fmt::format("edge {} -> {}: 3D kernel applied to a planar input",
                                        node(input).name, name));
  Node n;
  n.name = std::move(name);
  n.op = OpKind::conv;
  n.inputs = {input};
  n.conv = spec;
  n.relu = relu;
  n.role = role;
  n.shape = {in.height, in.width, in.depth, spec.filters};
  n.param_count = kernels::conv_weight_count(spec.kernel, in.channels, spec.filters) + spec.filters;
  return push(std::move(n));
}

int Graph::add_concat(std::string name, std::vector<int> inputs) {
  if (inputs.empty()) throw PreconditionError("concat needs at least one input");
  FeatureShape s = node(inputs[0]).shape;
  int channels = 0;
  for (int id : inputs) {
    const FeatureShape t = node(id).shape;
    if (t.height != s.height || t.width != s.width || t.depth != s.depth)
      throw PreconditionError(fmt::format(
          "edge {} -> {}: extent {}x{}x{} incompatible with {}x{}x{}", node(id).name, name,
          t.height, t.width, t.depth, s.height, s.width, s.depth));
    channels += t.channels;
  }
  s.channels = channels;
  Node n;
  n.name = std::move(name);
  n.op = OpKind::concat;
  n.inputs = std::move(inputs);
  n.shape = s;
  return push(std::move(n));
}

int Graph::add_attention_fuse(std::string name, int trunk, int skip, const AttentionSpec& spec) {
  const FeatureShape ts = node(trunk).shape, ss = node(skip).shape;
  if (ts.height != ss.height || ts.width != ss.width || ts.depth != ss.depth)
    throw PreconditionError(fmt::format("edge {} -> {}: skip extent {}x{}x{} incompatible with "
                                        "trunk {} extent {}x{}x{}",
                                        node(skip).name, name, ss.height, ss.width, ss.depth,
                                        node(trunk).name, ts.height, ts.width, ts.depth));
  Node n;
  n.name = std::move(name);
  n.op = OpKind::attention_fuse;
  n.inputs = {trunk, skip};
  n.attention = spec;
  n.shape = {ts.height, ts.width, ts.depth, ts.channels + ss.channels};
  n.param_count = kernels::attention_layout(spec, ts, ss).total();
  return push(std::move(n));
}

int Graph::add_fold(std::string name, int input) {
  Node n;
  n.name = std::move(name);
  n.op = OpKind::fold;
  n.inputs = {input};
  n.shape = kernels::fold_shape(node(input).shape);
  return push(std::move(n));
}

int Graph::add_max_pool(std::string name, int input, const Kernel& window) {
  Node n;
  n.name = std::move(name);
  n.op = OpKind::max_pool;
  n.inputs = {input};
  n.pool = window;
  n.shape = node(input).shape;
  return push(std::move(n));
}

int Graph::add_dense(std::string name, int input, int units) {
  Node n;
  n.name = std::move(name);
  n.op = OpKind::dense;
  n.inputs = {input};
  n.units = units;
  n.role = LayerRole::classifier;
  n.shape = {1, 1, 1, units};
  n.param_count = node(input).shape.size() * units + units;
  return push(std::move(n));
}

int Graph::conv_layer_count() const noexcept {
  return conv3d_layer_count() + conv2d_layer_count();
}

int Graph::conv3d_layer_count() const noexcept {
  int count = 0;
  for (const auto& n : nodes_)
    if (n.op == OpKind::conv && (n.role == LayerRole::branch || n.role == LayerRole::head) &&
        n.shape.depth > 1)
      ++count;
  return count;
}

int Graph::conv2d_layer_count() const noexcept {
  int count = 0;
  for (const auto& n : nodes_)
    if (n.op == OpKind::conv && (n.role == LayerRole::branch || n.role == LayerRole::head) &&
        n.shape.depth == 1)
      ++count;
  return count;
}

std::string Graph::summary() const {
  std::ostringstream out;
  out << fmt::format("{:<28} {:<15} {:>18} {:>12}\n", "layer", "op", "output", "params");
  for (const auto& n : nodes_) {
    std::string op = to_string(n.op);
    if (n.op == OpKind::conv)
      op = fmt::format("conv{}x{}x{}", n.conv.kernel.height, n.conv.kernel.width,
                       n.conv.kernel.depth);
    out << fmt::format("{:<28} {:<15} {:>18} {:>12}\n", n.name, op,
                       fmt::format("{}x{}x{}x{}", n.shape.height, n.shape.width, n.shape.depth,
                                   n.shape.channels),
                       n.param_count);
  }
  out << fmt::format("conv layers: {} ({} 3D, {} 2D); parameters: {}\n", conv_layer_count(),
                     conv3d_layer_count(), conv2d_layer_count(), params_);
  return out.str();
}

namespace {

struct StageOutputs {
  std::vector<int> blocks;
  std::vector<std::vector<int>> branches;
};

int maybe_adapt(Graph& g, const AfNetConfig& cfg, int trunk, int skip, const std::string& name) {
  const int tc = g.node(trunk).shape.channels;
  if (!cfg.wiring.adapters || g.node(skip).shape.channels == tc) return skip;
  ConvSpec adapter{{1, 1, 1}, tc};
  return g.add_conv(name + ".adapter", skip, adapter, false, LayerRole::adapter);
}

int fuse(Graph& g, const AfNetConfig& cfg, int trunk, int skip, const AttentionSpec& spec,
         const std::string& name) {
  const int adapted = maybe_adapt(g, cfg, trunk, skip, name);
  return g.add_attention_fuse(name, trunk, adapted, spec);
}

// Builds one stage of multi-scale blocks. cross_skips[i] (or -1) is an extra
// skip into block i from the other stage.
StageOutputs build_stage(Graph& g, const AfNetConfig& cfg, int stage_input,
                         const std::vector<BlockSpec>& blocks, const std::string& prefix,
                         const std::vector<int>& cross_skips) {
  StageOutputs out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpec& block = blocks[i];
    const std::string bname = fmt::format("{}{}", prefix, i + 1);
    const int trunk = i == 0 ? stage_input : out.blocks[i - 1];
    std::vector<int> skips;
    if (i < cross_skips.size() && cross_skips[i] >= 0 && cross_skips[i] != trunk)
      skips.push_back(cross_skips[i]);
    if (cfg.wiring.block_skips)
      for (std::size_t j = 0; j + 1 < i; ++j) skips.push_back(out.blocks[j]);
    int input = trunk;
    for (std::size_t s = 0; s < skips.size(); ++s)
      input = fuse(g, cfg, input, skips[s], block.attention, fmt::format("{}.fuse{}", bname, s + 1));

    std::vector<int> branch_out;
    for (std::size_t b = 0; b < block.branches.size(); ++b) {
      int branch_in = input;
      if (cfg.topology == BlockTopology::sequential && b > 0) branch_in = branch_out[b - 1];
      if (b == 1 && i > 0 && cfg.wiring.middle_branch_link && out.branches[i - 1].size() > 1)
        branch_in = fuse(g, cfg, branch_in, out.branches[i - 1][1], block.attention,
                         fmt::format("{}.link2", bname));
      const ConvSpec& spec = block.branches[b];
      branch_out.push_back(g.add_conv(
          fmt::format("{}.conv{}_{}x{}x{}", bname, b + 1, spec.kernel.height, spec.kernel.width,
                      spec.kernel.depth),
          branch_in, spec, true, LayerRole::branch));
    }
    const int block_out =
        branch_out.size() == 1 ? branch_out[0] : g.add_concat(bname + ".concat", branch_out);
    out.blocks.push_back(block_out);
    out.branches.push_back(std::move(branch_out));
  }
  return out;
}

int add_head(Graph& g, const AfNetConfig& cfg, int fused) {
  const int head = g.add_conv("head.conv1x1", fused, ConvSpec{{1, 1, 1}, cfg.head_filters}, true,
                              LayerRole::head);
  return g.add_dense("classifier", head, cfg.class_count);
}

int fusion(Graph& g, const std::vector<int>& blocks) {
  return blocks.size() == 1 ? blocks[0] : g.add_concat("fusion", blocks);
}

}  // namespace

Graph build_afnet(const AfNetConfig& cfg) {
  cfg.validate();
  if (cfg.blocks3d.empty() || cfg.blocks2d.empty())
    throw PreconditionError("the hybrid network needs at least one 3D and one 2D block");
  Graph g(ModelKind::afnet, {cfg.patch_size, cfg.patch_size, cfg.components, 1}, cfg.class_count);
  const int input = g.add_input();
  const StageOutputs s3 = build_stage(g, cfg, input, cfg.blocks3d, "3d.block", {});

  std::vector<int> bridged(s3.blocks.size(), -1);
  auto bridge = [&](std::size_t k) {
    if (bridged[k] < 0) {
      const std::string name = fmt::format("bridge{}", k + 1);
      const int folded = g.add_fold(name + ".reshape", s3.blocks[k]);
      bridged[k] = g.add_max_pool(name + ".maxpool", folded, cfg.bridge_pool);
    }
    return bridged[k];
  };
  const int stage2_input = bridge(s3.blocks.size() - 1);
  std::vector<int> cross(cfg.blocks2d.size(), -1);
  if (cfg.wiring.cross_stage_links)
    for (std::size_t k = 0; k < cross.size() && k < s3.blocks.size(); ++k) cross[k] = bridge(k);
  const StageOutputs s2 = build_stage(g, cfg, stage2_input, cfg.blocks2d, "2d.block", cross);
  add_head(g, cfg, fusion(g, s2.blocks));
  return g;
}

Graph build_baseline_3d(const AfNetConfig& cfg) {
  cfg.validate();
  if (cfg.blocks3d.empty()) throw PreconditionError("the 3D baseline needs at least one 3D block");
  Graph g(ModelKind::inception3d, {cfg.patch_size, cfg.patch_size, cfg.components, 1},
          cfg.class_count);
  const int input = g.add_input();
  const StageOutputs s3 = build_stage(g, cfg, input, cfg.blocks3d, "3d.block", {});
  const int folded = g.add_fold("fusion.reshape", fusion(g, s3.blocks));
  add_head(g, cfg, folded);
  return g;
}

Graph build_baseline_2d(const AfNetConfig& cfg) {
  cfg.validate();
  if (cfg.blocks2d.empty()) throw PreconditionError("the 2D baseline needs at least one 2D block");
  Graph g(ModelKind::inception2d, {cfg.patch_size, cfg.patch_size, 1, cfg.components},
          cfg.class_count);
  const int input = g.add_input();
  const StageOutputs s2 = build_stage(g, cfg, input, cfg.blocks2d, "2d.block", {});
  add_head(g, cfg, fusion(g, s2.blocks));
  return g;
}

Graph build_model(ModelKind kind, const AfNetConfig& config) {
  switch (kind) {
    case ModelKind::afnet: return build_afnet(config);
    case ModelKind::inception2d: return build_baseline_2d(config);
    case ModelKind::inception3d: return build_baseline_3d(config);
  }
  throw PreconditionError("unknown model kind");
}

std::size_t count_parameters(const AfNetConfig& config, ModelKind kind) {
  return build_model(kind, config).parameter_count();
}

}  // namespace afnet::net
