#ifndef GEOCAPS_MODEL_HPP_
#define GEOCAPS_MODEL_HPP_

#include <string>
#include <vector>

#include "geocaps/backbone.hpp"
#include "geocaps/capsules.hpp"

namespace geocaps {

enum class Variant { I, II };
enum class HeadKind { caps, fc };

struct ModelConfig {
  Variant variant = Variant::II;
  HeadKind head = HeadKind::caps;
  BackboneConfig backbone;
  CapsuleConfig capsules;
  Index fc_dim = 2048;  // fc-head baseline output width
  std::uint64_t seed = 1;
};

// Unit-norm embeddings, one row per image. `degenerate` marks rows whose
// pre-normalization vector collapsed to zero (they stay zero instead of
// dividing by zero).
template <typename Scalar>
struct DescriptorBatch {
  Tensor<Scalar> values;  // [N, D], rows unit norm unless degenerate
  Branch branch = Branch::ground;
  std::vector<std::uint8_t> degenerate;
};

// Two-branch Siamese embedding network. The two backbones always hold
// separate parameter sets. Variant I also duplicates the capsule parameters;
// variant II shares one capsule parameter set between the branches (the same
// underlying buffers, so an update through either branch is visible to both).
// The fc head replaces the capsule stack with a single affine projection and
// is always per-branch.
template <typename Scalar>
class Model {
 public:
  explicit Model(const ModelConfig& cfg)
      : cfg_(cfg),
        backbone_g_(cfg.backbone, derive_seed(cfg.seed, 1)),
        backbone_s_(cfg.backbone, derive_seed(cfg.seed, 2)) {
    if (cfg.head == HeadKind::caps) {
      Rng rng_g(derive_seed(cfg.seed, 3));
      caps_g_ = CapsuleHead<Scalar>(cfg.capsules, backbone_g_.out_channels(),
                                    backbone_g_.out_spatial(), rng_g);
      if (cfg.variant == Variant::I) {
        Rng rng_s(derive_seed(cfg.seed, 4));
        caps_s_ = CapsuleHead<Scalar>(cfg.capsules, backbone_s_.out_channels(),
                                      backbone_s_.out_spatial(), rng_s);
      } else {
        caps_s_ = caps_g_;  // shared buffers
      }
    } else {
      const Index flat = backbone_g_.out_channels() * backbone_g_.out_spatial() *
                         backbone_g_.out_spatial();
      Rng rng_g(derive_seed(cfg.seed, 5));
      fc_g_ = AffineLayer<Scalar>(flat, cfg.fc_dim, rng_g);
      Rng rng_s(derive_seed(cfg.seed, 6));
      fc_s_ = AffineLayer<Scalar>(flat, cfg.fc_dim, rng_s);
    }
  }

  DescriptorBatch<Scalar> embed(const Context<Scalar>& ctx, const Tensor<Scalar>& images,
                                Branch branch) {
    Backbone<Scalar>& bb = branch == Branch::ground ? backbone_g_ : backbone_s_;
    FeatureMap<Scalar> f = bb.forward(ctx, images, branch);
    if (cfg_.head == HeadKind::caps) {
      const CapsuleHead<Scalar>& head = branch == Branch::ground ? caps_g_ : caps_s_;
      auto [geo, state] = head.forward(ctx, f);
      (void)state;
      Tensor<Scalar> pre = reshape(geo.values, {geo.values.dim(0),
                                                geo.values.dim(1) * geo.values.dim(2)});
      DescriptorBatch<Scalar> out{l2_normalize(pre), branch, degenerate_rows(pre)};
      return out;
    }
    return fc_head_forward(ctx, f, branch);
  }

  // Fc baseline: flatten the feature map and apply one affine layer, no
  // activation on the output, then L2-normalize.
  DescriptorBatch<Scalar> fc_head_forward(const Context<Scalar>& ctx,
                                          const FeatureMap<Scalar>& f, Branch branch) {
    const AffineLayer<Scalar>& head = branch == Branch::ground ? fc_g_ : fc_s_;
    const Index n = f.values.dim(0);
    Tensor<Scalar> flat = reshape(f.values, {n, f.values.size() / n});
    Tensor<Scalar> pre = head.forward(ctx, flat);
    return DescriptorBatch<Scalar>{l2_normalize(pre), branch, degenerate_rows(pre)};
  }

  std::vector<NamedParam<Scalar>> parameters() {
    std::vector<NamedParam<Scalar>> out;
    backbone_g_.collect_params("backbone_g", out);
    backbone_s_.collect_params("backbone_s", out);
    if (cfg_.head == HeadKind::caps) {
      if (cfg_.variant == Variant::II) {
        caps_g_.collect_params("caps", out);
      } else {
        caps_g_.collect_params("caps_g", out);
        caps_s_.collect_params("caps_s", out);
      }
    } else {
      fc_g_.collect_params("fc_g", out);
      fc_s_.collect_params("fc_s", out);
    }
    return out;
  }

  std::int64_t parameter_count() {
    std::int64_t total = 0;
    for (const auto& p : parameters()) {
      if (p.trainable) total += p.value.size();
    }
    return total;
  }

  // Trainable scalars in the capsule (or fc) section across both branches.
  std::int64_t head_parameter_count() const {
    if (cfg_.head == HeadKind::caps) {
      const std::int64_t one = caps_g_.param_count();
      return cfg_.variant == Variant::II ? one : 2 * one;
    }
    return fc_g_.param_count() + fc_s_.param_count();
  }

  const ModelConfig& config() const { return cfg_; }
  Backbone<Scalar>& backbone(Branch b) {
    return b == Branch::ground ? backbone_g_ : backbone_s_;
  }
  const CapsuleHead<Scalar>& capsule_head(Branch b) const {
    return b == Branch::ground ? caps_g_ : caps_s_;
  }

  Index descriptor_length() const {
    return cfg_.head == HeadKind::caps ? cfg_.capsules.descriptor_length() : cfg_.fc_dim;
  }

  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    Rng rng(seed ^ (salt * 0x9e3779b97f4a7c15ULL));
    return rng.next_u64();
  }

 private:
  ModelConfig cfg_;
  Backbone<Scalar> backbone_g_;
  Backbone<Scalar> backbone_s_;
  CapsuleHead<Scalar> caps_g_;
  CapsuleHead<Scalar> caps_s_;
  AffineLayer<Scalar> fc_g_;
  AffineLayer<Scalar> fc_s_;
};

template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& cfg) {
  return Model<Scalar>(cfg);
}

// Trainable parameter total from config arithmetic alone (no allocation);
// the built model's parameter_count() must agree.
inline std::int64_t model_parameter_count(const ModelConfig& cfg) {
  const auto desc = describe_backbone(cfg.backbone);
  std::int64_t backbone = 0;
  Index out_spatial = 0;
  for (const auto& sd : desc) {
    backbone += sd.param_count;
    out_spatial = sd.out_size;
  }
  const Index out_channels = desc.back().channels[2];
  std::int64_t head = 0;
  if (cfg.head == HeadKind::caps) {
    const std::int64_t one = capsule_param_count(cfg.capsules, out_channels, out_spatial);
    head = cfg.variant == Variant::II ? one : 2 * one;
  } else {
    const std::int64_t flat = static_cast<std::int64_t>(out_channels) * out_spatial * out_spatial;
    head = 2 * (flat * cfg.fc_dim + cfg.fc_dim);
  }
  return 2 * backbone + head;
}

}  // namespace geocaps

#endif  // GEOCAPS_MODEL_HPP_
