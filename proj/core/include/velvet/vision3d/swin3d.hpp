#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "velvet/ag/ops.hpp"
#include "velvet/nn/layers.hpp"
#include "velvet/vision3d/volume.hpp"

namespace velvet::vision3d {

using ag::Tensor;

struct VisionConfig {
  std::int64_t in_size = kDefaultVolumeSize;
  std::int64_t patch = 2;
  std::int64_t embed_dim = 48;
  std::vector<std::int64_t> depths{2, 2, 2, 2};
  std::vector<std::int64_t> heads{3, 6, 12, 24};
  std::int64_t window = 6;
  std::int64_t mlp_ratio = 4;

  /// "T", "S" or "B".
  static VisionConfig preset(const std::string& name);
  void validate() const;
  std::int64_t num_stages() const { return static_cast<std::int64_t>(depths.size()); }
  std::int64_t stage_res(std::int64_t s) const { return (in_size / patch) >> s; }
  std::int64_t stage_dim(std::int64_t s) const { return embed_dim << s; }
};

/// Token routing for one windowed attention block at a cubic resolution.
///
/// Windows fall back to a single full-volume window without shift when the
/// resolution is not larger than, or not divisible by, the window size.
struct WindowPlan {
  std::int64_t res = 0;
  std::int64_t window = 0;
  std::int64_t shift = 0;
  std::int64_t num_windows = 0;
  std::int64_t tokens = 0;  // per window
  ag::Index to_windows;     // window-major row -> spatial row, one sample
  ag::Index to_spatial;     // inverse
  ag::AttnMaskPtr mask;     // per window, set only when shifted
  ag::Index rel_index;      // [tokens * tokens] into the (2w-1)^3 bias table

  static WindowPlan make(std::int64_t res, std::int64_t window, bool shifted);
  /// Offset each sample's rows for a batch of n.
  ag::Index batched(const ag::Index& idx, std::int64_t n) const;
};

/// Pre-norm windowed attention block with relative position bias.
class SwinBlock3D {
 public:
  SwinBlock3D() = default;
  SwinBlock3D(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t heads,
              std::int64_t res, std::int64_t window, bool shifted, std::int64_t mlp_ratio, Rng& rng);

  /// x: [n * res^3, dim] in (z, y, x) row order.
  Tensor operator()(const Tensor& x, std::int64_t n) const;
  const WindowPlan& plan() const { return plan_; }
  /// [heads, tokens, tokens] relative position bias.
  Tensor bias() const;

 private:
  WindowPlan plan_;
  std::int64_t heads_ = 1;
  nn::LayerNorm ln1_, ln2_;
  nn::MultiHeadAttention attn_;
  nn::Mlp mlp_;
  Tensor table_;
};

/// 2x2x2 neighbourhood concat -> LayerNorm -> linear 8C -> 2C.
class PatchMerging3D {
 public:
  PatchMerging3D() = default;
  PatchMerging3D(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t res, Rng& rng);
  Tensor operator()(const Tensor& x, std::int64_t n) const;

 private:
  std::int64_t res_ = 0;
  ag::Index gather_;
  nn::LayerNorm norm_;
  nn::Linear reduce_;
};

/// Last three stage outputs. Feature maps are token rows [n * res^3, c] in
/// (z, y, x) order per sample.
struct VisionPyramid {
  std::int64_t n = 0;
  std::int64_t res_bot = 0, res_mid = 0, res_top = 0;
  Tensor bot, mid, top;
  Tensor pooled_top;  // [n, c_top]

  std::int64_t tokens_bot() const { return res_bot * res_bot * res_bot; }
  std::int64_t tokens_mid() const { return res_mid * res_mid * res_mid; }
  std::int64_t tokens_top() const { return res_top * res_top * res_top; }
};

class SwinEncoder3D {
 public:
  SwinEncoder3D() = default;
  SwinEncoder3D(nn::ParamStore& store, const std::string& name, const VisionConfig& cfg, Rng& rng);

  const VisionConfig& config() const { return cfg_; }
  std::int64_t c_bot() const { return cfg_.stage_dim(1); }
  std::int64_t c_mid() const { return cfg_.stage_dim(2); }
  std::int64_t c_top() const { return cfg_.stage_dim(3); }

  /// Patch rows [n * r0^3, patch^3] of cubic inputs of side in_size.
  Tensor patchify(const std::vector<const Grid*>& volumes) const;
  VisionPyramid encode(const std::vector<const Grid*>& volumes) const;
  const std::vector<std::vector<SwinBlock3D>>& stages() const { return blocks_; }

 private:
  VisionConfig cfg_;
  nn::Linear embed_;
  std::vector<std::vector<SwinBlock3D>> blocks_;
  std::vector<PatchMerging3D> merges_;
  std::vector<nn::LayerNorm> out_norms_;  // stages 1..3
};

}  // namespace velvet::vision3d
