#ifndef GEOCAPS_BACKBONE_HPP_
#define GEOCAPS_BACKBONE_HPP_

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "geocaps/layers.hpp"

namespace geocaps {

enum class Branch { ground, satellite };

inline const char* branch_name(Branch b) {
  return b == Branch::ground ? "ground" : "satellite";
}

// Residual feature extractor: two strided stem convolutions followed by four
// bottleneck stages, batch norm at every layer, and no pooling unless
// use_max_pool asks for a pooling stem. width_scale shrinks every channel
// count so a desk-scale instance shares code with the full-scale shape.
struct BackboneConfig {
  Index input_h = 224;
  Index input_w = 224;
  Index stem_channels = 64;
  std::array<Index, 4> block_counts{3, 4, 6, 3};
  std::array<std::array<Index, 3>, 4> block_channels{{{64, 64, 256},
                                                      {128, 128, 256},
                                                      {256, 256, 1024},
                                                      {512, 512, 2048}}};
  double width_scale = 1.0;
  bool use_max_pool = false;  // true swaps the second strided conv for 3x3/s2 max-pool
};

inline Index scaled_channels(Index c, double width_scale) {
  const Index s = static_cast<Index>(std::llround(static_cast<double>(c) * width_scale));
  if (s < 1) {
    throw ConfigError("width_scale " + std::to_string(width_scale) +
                      " scales channel count " + std::to_string(c) + " to zero");
  }
  return s;
}

inline Index conv_out_size(Index in, Index kernel, Index stride, Index pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

struct StageDesc {
  std::string name;
  Index out_size = 0;                     // square spatial size after the stage
  std::array<Index, 3> channels{0, 0, 0}; // bottleneck triple; plain convs use [c,0,0]
  Index kernel = 0;                       // plain convs only
  Index stride = 1;
  Index block_count = 0;                  // 0 for plain convs / pool
  std::int64_t param_count = 0;           // trainable scalars
};

namespace detail {

inline std::int64_t conv_params(Index out_ch, Index in_ch, Index k) {
  return static_cast<std::int64_t>(out_ch) * in_ch * k * k;
}

inline std::int64_t conv_bn_params(Index out_ch, Index in_ch, Index k) {
  return conv_params(out_ch, in_ch, k) + 2 * static_cast<std::int64_t>(out_ch);
}

inline std::int64_t bottleneck_params(Index in_ch, const std::array<Index, 3>& t,
                                      bool project) {
  std::int64_t p = conv_bn_params(t[0], in_ch, 1) + conv_bn_params(t[1], t[0], 3) +
                   conv_bn_params(t[2], t[1], 1);
  if (project) p += conv_bn_params(t[2], in_ch, 1);
  return p;
}

}  // namespace detail

// Structural self-description computed from the config alone; the built
// network's describe() must agree with it field by field.
inline std::vector<StageDesc> describe_backbone(const BackboneConfig& cfg) {
  std::vector<StageDesc> out;
  const Index stem = scaled_channels(cfg.stem_channels, cfg.width_scale);
  Index size = conv_out_size(cfg.input_h, 7, 2, 3);
  out.push_back({"conv1", size, {stem, 0, 0}, 7, 2, 0, detail::conv_bn_params(stem, 3, 7)});
  size = conv_out_size(size, 3, 2, 1);
  if (cfg.use_max_pool) {
    out.push_back({"max_pool", size, {stem, 0, 0}, 3, 2, 0, 0});
  } else {
    out.push_back({"conv2", size, {stem, 0, 0}, 3, 2, 0, detail::conv_bn_params(stem, stem, 3)});
  }
  Index in_ch = stem;
  for (int s = 0; s < 4; ++s) {
    StageDesc sd;
    sd.name = "conv" + std::to_string(s + 3) + "_x";
    sd.block_count = cfg.block_counts[static_cast<std::size_t>(s)];
    std::array<Index, 3> triple{};
    for (int i = 0; i < 3; ++i) {
      triple[static_cast<std::size_t>(i)] = scaled_channels(
          cfg.block_channels[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)],
          cfg.width_scale);
    }
    sd.channels = triple;
    const Index stage_stride = s == 0 ? 1 : 2;
    sd.stride = stage_stride;
    size = conv_out_size(size, 3, stage_stride, 1);
    sd.out_size = size;
    for (Index b = 0; b < sd.block_count; ++b) {
      const bool first = b == 0;
      const bool project = first && (in_ch != triple[2] || stage_stride != 1);
      sd.param_count += detail::bottleneck_params(first ? in_ch : triple[2], triple, project);
    }
    in_ch = triple[2];
    out.push_back(sd);
  }
  return out;
}

inline std::int64_t backbone_param_count(const BackboneConfig& cfg) {
  std::int64_t total = 0;
  for (const auto& sd : describe_backbone(cfg)) total += sd.param_count;
  return total;
}

template <typename Scalar>
struct FeatureMap {
  Tensor<Scalar> values;  // [N, C_out, h, w]
  Branch branch = Branch::ground;
};

// conv 1x1 -> conv 3x3 (stage stride on the first block) -> conv 1x1, batch
// norm after each, relu between, added to the identity or a 1x1 projection
// shortcut, relu on the sum.
template <typename Scalar>
class Bottleneck {
 public:
  Bottleneck() = default;

  Bottleneck(Index in_ch, const std::array<Index, 3>& triple, Index stride, Rng& rng)
      : conv_a_(triple[0], in_ch, 1, 1, 1, Padding::valid, rng),
        bn_a_(triple[0]),
        conv_b_(triple[1], triple[0], 3, 3, stride, Padding::same, rng),
        bn_b_(triple[1]),
        conv_c_(triple[2], triple[1], 1, 1, 1, Padding::valid, rng),
        bn_c_(triple[2]) {
    if (in_ch != triple[2] || stride != 1) {
      proj_conv_.emplace(triple[2], in_ch, 1, 1, stride, Padding::valid, rng);
      proj_bn_.emplace(triple[2]);
    }
  }

  Tensor<Scalar> forward(const Context<Scalar>& ctx, const Tensor<Scalar>& x) {
    Tensor<Scalar> h = relu(bn_a_.forward(ctx, conv_a_.forward(ctx, x)));
    h = relu(bn_b_.forward(ctx, conv_b_.forward(ctx, h)));
    h = bn_c_.forward(ctx, conv_c_.forward(ctx, h));
    Tensor<Scalar> shortcut =
        proj_conv_ ? proj_bn_->forward(ctx, proj_conv_->forward(ctx, x)) : x;
    return relu(add(shortcut, h));
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<Scalar>>& out) {
    conv_a_.collect_params(prefix + ".conv_a", out);
    bn_a_.collect_params(prefix + ".bn_a", out);
    conv_b_.collect_params(prefix + ".conv_b", out);
    bn_b_.collect_params(prefix + ".bn_b", out);
    conv_c_.collect_params(prefix + ".conv_c", out);
    bn_c_.collect_params(prefix + ".bn_c", out);
    if (proj_conv_) {
      proj_conv_->collect_params(prefix + ".proj", out);
      proj_bn_->collect_params(prefix + ".proj_bn", out);
    }
  }

 private:
  ConvLayer<Scalar> conv_a_;
  BatchNormLayer<Scalar> bn_a_;
  ConvLayer<Scalar> conv_b_;
  BatchNormLayer<Scalar> bn_b_;
  ConvLayer<Scalar> conv_c_;
  BatchNormLayer<Scalar> bn_c_;
  std::optional<ConvLayer<Scalar>> proj_conv_;
  std::optional<BatchNormLayer<Scalar>> proj_bn_;
};

template <typename Scalar>
class Backbone {
 public:
  Backbone() = default;

  Backbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    const Index stem = scaled_channels(cfg.stem_channels, cfg.width_scale);
    conv1_ = ConvLayer<Scalar>(stem, 3, 7, 7, 2, Padding::same, rng);
    bn1_ = BatchNormLayer<Scalar>(stem);
    if (!cfg.use_max_pool) {
      conv2_.emplace(stem, stem, 3, 3, 2, Padding::same, rng);
      bn2_.emplace(stem);
    }
    Index in_ch = stem;
    for (int s = 0; s < 4; ++s) {
      std::array<Index, 3> triple{};
      for (int i = 0; i < 3; ++i) {
        triple[static_cast<std::size_t>(i)] = scaled_channels(
            cfg.block_channels[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)],
            cfg.width_scale);
      }
      const Index stage_stride = s == 0 ? 1 : 2;
      std::vector<Bottleneck<Scalar>>& stage = stages_[static_cast<std::size_t>(s)];
      for (Index b = 0; b < cfg.block_counts[static_cast<std::size_t>(s)]; ++b) {
        stage.emplace_back(b == 0 ? in_ch : triple[2], triple, b == 0 ? stage_stride : 1,
                           rng);
      }
      in_ch = triple[2];
    }
    out_channels_ = in_ch;
    const auto desc = describe_backbone(cfg);
    out_spatial_ = desc.back().out_size;
  }

  FeatureMap<Scalar> forward(const Context<Scalar>& ctx, const Tensor<Scalar>& images,
                             Branch branch) {
    if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg_.input_h ||
        images.dim(3) != cfg_.input_w) {
      throw DimensionError("backbone: expected images [N,3," + std::to_string(cfg_.input_h) +
                           "," + std::to_string(cfg_.input_w) + "], got " +
                           shape_str(images.shape()));
    }
    Tensor<Scalar> h = relu(bn1_.forward(ctx, conv1_.forward(ctx, images)));
    if (cfg_.use_max_pool) {
      h = max_pool2d(h, 3, 2, Padding::same);
    } else {
      h = relu(bn2_->forward(ctx, conv2_->forward(ctx, h)));
    }
    for (auto& stage : stages_) {
      for (auto& block : stage) h = block.forward(ctx, h);
    }
    return FeatureMap<Scalar>{h, branch};
  }

  void collect_params(const std::string& prefix, std::vector<NamedParam<Scalar>>& out) {
    conv1_.collect_params(prefix + ".conv1", out);
    bn1_.collect_params(prefix + ".bn1", out);
    if (conv2_) {
      conv2_->collect_params(prefix + ".conv2", out);
      bn2_->collect_params(prefix + ".bn2", out);
    }
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        stages_[s][b].collect_params(
            prefix + ".stage" + std::to_string(s + 3) + ".block" + std::to_string(b), out);
      }
    }
  }

  std::vector<StageDesc> describe() const { return describe_backbone(cfg_); }
  const BackboneConfig& config() const { return cfg_; }
  Index out_channels() const { return out_channels_; }
  Index out_spatial() const { return out_spatial_; }

  std::int64_t param_count() {
    std::vector<NamedParam<Scalar>> params;
    collect_params("bb", params);
    std::int64_t total = 0;
    for (const auto& p : params) {
      if (p.trainable) total += p.value.size();
    }
    return total;
  }

 private:
  BackboneConfig cfg_;
  ConvLayer<Scalar> conv1_;
  BatchNormLayer<Scalar> bn1_;
  std::optional<ConvLayer<Scalar>> conv2_;
  std::optional<BatchNormLayer<Scalar>> bn2_;
  std::array<std::vector<Bottleneck<Scalar>>, 4> stages_;
  Index out_channels_ = 0;
  Index out_spatial_ = 0;
};

template <typename Scalar>
Backbone<Scalar> build_resnetx(const BackboneConfig& cfg, std::uint64_t seed) {
  return Backbone<Scalar>(cfg, seed);
}

}  // namespace geocaps

#endif  // GEOCAPS_BACKBONE_HPP_
