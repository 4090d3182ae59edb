#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace afnet::net {

/// Convolution kernel extents. `depth` is the spectral extent; 2D layers
/// use depth == 1.
struct Kernel {
  int height = 1;
  int width = 1;
  int depth = 1;

  int volume() const noexcept { return height * width * depth; }
  friend bool operator==(const Kernel&, const Kernel&) = default;
};

/// One convolution: same padding, stride 1, ReLU.
struct ConvSpec {
  Kernel kernel;
  int filters = 1;

  bool is_3d() const noexcept { return kernel.depth > 1; }
  void validate() const;
};

enum class AttentionKind { none, channel, spatial, both };

std::string to_string(AttentionKind kind);
AttentionKind attention_kind_from_string(const std::string& text);

/// Gate applied to a skip connection before it is concatenated onto the
/// trunk. Channel gating is a squeeze-excitation bottleneck over pooled
/// trunk+skip descriptors; spatial gating is a single 3x3(x3) convolution over
/// channel mean/max maps of trunk and skip.
struct AttentionSpec {
  AttentionKind kind = AttentionKind::channel;
  int reduction_ratio = 4;

  bool has_channel() const noexcept {
    return kind == AttentionKind::channel || kind == AttentionKind::both;
  }
  bool has_spatial() const noexcept {
    return kind == AttentionKind::spatial || kind == AttentionKind::both;
  }
  int hidden_units(int descriptor_channels) const noexcept {
    return std::max(1, descriptor_channels / std::max(1, reduction_ratio));
  }
};

/// Multi-scale block: branches see the same input and their outputs are
/// concatenated along channels (parallel topology) or chained (sequential).
struct BlockSpec {
  std::vector<ConvSpec> branches;
  AttentionSpec attention;

  int output_channels() const noexcept;
  void validate(bool expect_3d) const;
};

enum class BlockTopology { parallel, sequential };

std::string to_string(BlockTopology topology);
BlockTopology block_topology_from_string(const std::string& text);

/// Which skip connections exist besides the plain block-to-block trunk.
struct DenseWiring {
  /// Block i also receives the outputs of blocks 0..i-2 of its stage.
  bool block_skips = true;
  /// Branch 2 of block i receives branch 2's output of block i-1.
  bool middle_branch_link = true;
  /// 2D block k receives the bridged output of 3D block k.
  bool cross_stage_links = true;
  /// Skips whose width differs from the trunk pass a learned 1x1 adapter
  /// that maps them to the trunk width before gating.
  bool adapters = false;
};

enum class ModelKind { afnet, inception2d, inception3d };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& text);

struct AfNetConfig {
  int patch_size = 9;
  int components = 15;
  int class_count = 16;
  std::vector<BlockSpec> blocks3d;
  Kernel bridge_pool{3, 3, 1};
  std::vector<BlockSpec> blocks2d;
  int head_filters = 128;
  BlockTopology topology = BlockTopology::parallel;
  DenseWiring wiring;

  /// The published schedule: three 3D blocks with (7,7,9)/(5,5,7)/(3,3,5)
  /// kernels, three 2D blocks with (3,3)/(3,3)/(1,1) kernels.
  static AfNetConfig paper_default();

  /// Sets every block's attention spec.
  void set_attention(const AttentionSpec& spec);
  void validate() const;
};

void to_json(nlohmann::json& j, const Kernel& k);
void from_json(const nlohmann::json& j, Kernel& k);
void to_json(nlohmann::json& j, const ConvSpec& c);
void from_json(const nlohmann::json& j, ConvSpec& c);
void to_json(nlohmann::json& j, const AttentionSpec& a);
void from_json(const nlohmann::json& j, AttentionSpec& a);
void to_json(nlohmann::json& j, const BlockSpec& b);
void from_json(const nlohmann::json& j, BlockSpec& b);
void to_json(nlohmann::json& j, const DenseWiring& w);
void from_json(const nlohmann::json& j, DenseWiring& w);
void to_json(nlohmann::json& j, const AfNetConfig& c);
/// Missing keys keep their paper_default() values.
void from_json(const nlohmann::json& j, AfNetConfig& c);

}  // namespace afnet::net
