#include "afnet/net/config.hpp"

#include <fmt/format.h>

#include "afnet/common.hpp"

namespace afnet::net {

using json = nlohmann::json;

void ConvSpec::validate() const {
  for (int k : {kernel.height, kernel.width, kernel.depth})
    if (k < 1 || k % 2 == 0)
      throw PreconditionError(fmt::format("kernel extents must be odd and >= 1, got ({},{},{})",
                                          kernel.height, kernel.width, kernel.depth));
  if (filters < 1) throw PreconditionError("filter count must be >= 1");
}

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::none: return "none";
    case AttentionKind::channel: return "channel";
    case AttentionKind::spatial: return "spatial";
    case AttentionKind::both: return "both";
  }
  return "none";
}

AttentionKind attention_kind_from_string(const std::string& text) {
  if (text == "none") return AttentionKind::none;
  if (text == "channel") return AttentionKind::channel;
  if (text == "spatial") return AttentionKind::spatial;
  if (text == "both" || text == "channel+spatial") return AttentionKind::both;
  throw PreconditionError(fmt::format("unknown attention kind '{}'", text));
}

int BlockSpec::output_channels() const noexcept {
  int total = 0;
  for (const auto& b : branches) total += b.filters;
  return total;
}

void BlockSpec::validate(bool expect_3d) const {
  if (branches.empty()) throw PreconditionError("a block needs at least one branch");
  for (const auto& b : branches) {
    b.validate();
    if (!expect_3d && b.kernel.depth != 1)
      throw PreconditionError("2D block branches must have kernel depth 1");
  }
  if (attention.reduction_ratio < 1) throw PreconditionError("reduction ratio must be >= 1");
}

std::string to_string(BlockTopology topology) {
  return topology == BlockTopology::parallel ? "parallel" : "sequential";
}

BlockTopology block_topology_from_string(const std::string& text) {
  if (text == "parallel") return BlockTopology::parallel;
  if (text == "sequential") return BlockTopology::sequential;
  throw PreconditionError(fmt::format("unknown block topology '{}'", text));
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::afnet: return "afnet";
    case ModelKind::inception2d: return "inception2d";
    case ModelKind::inception3d: return "inception3d";
  }
  return "afnet";
}

ModelKind model_kind_from_string(const std::string& text) {
  if (text == "afnet") return ModelKind::afnet;
  if (text == "inception2d") return ModelKind::inception2d;
  if (text == "inception3d") return ModelKind::inception3d;
  throw PreconditionError(fmt::format("unknown model kind '{}'", text));
}

AfNetConfig AfNetConfig::paper_default() {
  AfNetConfig c;
  const Kernel k3[3] = {{7, 7, 9}, {5, 5, 7}, {3, 3, 5}};
  const int f3[3][3] = {{30, 20, 10}, {40, 20, 10}, {60, 30, 10}};
  for (const auto& filters : f3) {
    BlockSpec block;
    for (int i = 0; i < 3; ++i) block.branches.push_back({k3[i], filters[i]});
    c.blocks3d.push_back(block);
  }
  const Kernel k2[3] = {{3, 3, 1}, {3, 3, 1}, {1, 1, 1}};
  for (int b = 0; b < 3; ++b) {
    BlockSpec block;
    const int f2[3] = {16, 32, 64};
    for (int i = 0; i < 3; ++i) block.branches.push_back({k2[i], f2[i]});
    c.blocks2d.push_back(block);
  }
  return c;
}

void AfNetConfig::set_attention(const AttentionSpec& spec) {
  for (auto& b : blocks3d) b.attention = spec;
  for (auto& b : blocks2d) b.attention = spec;
}

void AfNetConfig::validate() const {
  if (patch_size < 1 || patch_size % 2 == 0)
    throw PreconditionError(fmt::format("patch size must be odd, got {}", patch_size));
  if (components < 1) throw PreconditionError("components must be >= 1");
  if (class_count < 2) throw PreconditionError("class count must be >= 2");
  if (head_filters < 1) throw PreconditionError("head filter count must be >= 1");
  for (const auto& b : blocks3d) b.validate(true);
  for (const auto& b : blocks2d) b.validate(false);
  if (bridge_pool.height < 1 || bridge_pool.width < 1 || bridge_pool.height % 2 == 0 ||
      bridge_pool.width % 2 == 0)
    throw PreconditionError("bridge pool extents must be odd and >= 1");
}

void to_json(json& j, const Kernel& k) { j = json::array({k.height, k.width, k.depth}); }

void from_json(const json& j, Kernel& k) {
  const auto v = j.get<std::vector<int>>();
  if (v.size() == 2) k = {v[0], v[1], 1};
  else if (v.size() == 3) k = {v[0], v[1], v[2]};
  else throw PreconditionError("kernel must have 2 or 3 extents");
}

void to_json(json& j, const ConvSpec& c) { j = {{"kernel", c.kernel}, {"filters", c.filters}}; }

void from_json(const json& j, ConvSpec& c) {
  c.kernel = j.at("kernel").get<Kernel>();
  c.filters = j.at("filters").get<int>();
}

void to_json(json& j, const AttentionSpec& a) {
  j = {{"kind", to_string(a.kind)}, {"reduction_ratio", a.reduction_ratio}, {"gate", "sigmoid"}};
}

void from_json(const json& j, AttentionSpec& a) {
  a.kind = attention_kind_from_string(j.value("kind", std::string("channel")));
  a.reduction_ratio = j.value("reduction_ratio", 4);
}

void to_json(json& j, const BlockSpec& b) {
  j = {{"branches", b.branches}, {"attention", b.attention}};
}

void from_json(const json& j, BlockSpec& b) {
  b.branches = j.at("branches").get<std::vector<ConvSpec>>();
  b.attention = j.contains("attention") ? j.at("attention").get<AttentionSpec>() : AttentionSpec{};
}

void to_json(json& j, const DenseWiring& w) {
  j = {{"block_skips", w.block_skips},
       {"middle_branch_link", w.middle_branch_link},
       {"cross_stage_links", w.cross_stage_links},
       {"adapters", w.adapters}};
}

void from_json(const json& j, DenseWiring& w) {
  w.block_skips = j.value("block_skips", true);
  w.middle_branch_link = j.value("middle_branch_link", true);
  w.cross_stage_links = j.value("cross_stage_links", true);
  w.adapters = j.value("adapters", false);
}

void to_json(json& j, const AfNetConfig& c) {
  j = {{"patch_size", c.patch_size},
       {"components", c.components},
       {"class_count", c.class_count},
       {"blocks3d", c.blocks3d},
       {"bridge_pool", c.bridge_pool},
       {"blocks2d", c.blocks2d},
       {"head_filters", c.head_filters},
       {"block_topology", to_string(c.topology)},
       {"wiring", c.wiring}};
}

void from_json(const json& j, AfNetConfig& c) {
  c = AfNetConfig::paper_default();
  c.patch_size = j.value("patch_size", c.patch_size);
  c.components = j.value("components", c.components);
  c.class_count = j.value("class_count", c.class_count);
  if (j.contains("blocks3d")) c.blocks3d = j.at("blocks3d").get<std::vector<BlockSpec>>();
  if (j.contains("bridge_pool")) c.bridge_pool = j.at("bridge_pool").get<Kernel>();
  if (j.contains("blocks2d")) c.blocks2d = j.at("blocks2d").get<std::vector<BlockSpec>>();
  c.head_filters = j.value("head_filters", c.head_filters);
  if (j.contains("block_topology"))
    c.topology = block_topology_from_string(j.at("block_topology").get<std::string>());
  if (j.contains("wiring")) c.wiring = j.at("wiring").get<DenseWiring>();
}

}  // namespace afnet::net
