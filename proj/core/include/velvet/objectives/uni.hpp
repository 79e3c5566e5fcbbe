#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "velvet/ag/ops.hpp"
#include "velvet/nn/layers.hpp"
#include "velvet/objectives/cm.hpp"
#include "velvet/tribert/tribert.hpp"
#include "velvet/vision3d/swin3d.hpp"

namespace velvet::objectives {

inline constexpr double kMaskRatio = 0.15;

enum class Corruption : std::uint8_t { Mask, Random, Keep };

/// Corrupted copy of a batch's token ids. `labels` holds the original id at
/// each selected position and kIgnoreIndex elsewhere.
struct MaskedText {
  std::vector<std::int64_t> input_ids;
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> positions;  // flat, ascending within a report
  std::vector<Corruption> kinds;        // per position

  /// Labels at `positions`, the targets for gathered rows.
  std::vector<std::int64_t> targets() const;
};

/// Selects round(ratio * n_words) word positions per report without
/// replacement; 80% become [MASK], 10% a random body token, 10% unchanged.
MaskedText mask_tokens(const tribert::TriBatch& batch, const prep::Vocabulary& vocab, double ratio, Rng& rng);

/// Mean cross-entropy over the given rows. Throws NoMaskedPositions when
/// there are none.
Tensor loss_mlm(const Tensor& logits, const std::vector<std::int64_t>& targets);

/// 90 degree rotation k times in the (y, x) plane. Throws NonSquarePlane.
vision3d::Grid rotate_xy(const vision3d::Grid& g, int k);

struct InpaintingTask {
  vision3d::Grid corrupted;
  vision3d::Grid original;
  std::vector<std::uint8_t> dropped;  // per voxel
  double fraction = 0.0;
};

/// Zeroes grid-aligned cubic blocks in random order until at least `ratio`
/// of the voxels are dropped. Throws BadBlockSize unless the block divides
/// every side.
InpaintingTask make_inpainting(const vision3d::Grid& g, std::int64_t block, double ratio, Rng& rng);

struct RotationTask {
  vision3d::Grid rotated;
  int label = 0;
};

RotationTask make_rotation(const vision3d::Grid& g, Rng& rng);

/// One augmented view for the vision pretext tasks: sub-volume, then
/// rotation, then block drop. The inpainting target is the rotated view.
struct SslView {
  RotationTask rotation;
  InpaintingTask inpainting;
};

struct SslConfig {
  vision3d::AugmentConfig augment;
  std::int64_t block = 16;
  double drop_ratio = 0.30;
};

SslView make_ssl_view(const vision3d::Grid& volume, const SslConfig& cfg, Rng& rng);

/// Stack of linear 2x voxel-shuffle steps (a stride-2, kernel-2 transposed
/// convolution) from the top feature map back to a one-channel volume.
class InpaintingHead {
 public:
  InpaintingHead() = default;
  InpaintingHead(nn::ParamStore& store, const std::string& name, std::int64_t c_top, std::int64_t res_top,
                 std::int64_t out_size, Rng& rng);

  /// top: [n * res_top^3, c_top] -> [n * out_size^3, 1].
  Tensor operator()(const Tensor& top, std::int64_t n) const;

 private:
  std::int64_t res_top_ = 0;
  std::vector<nn::Linear> steps_;
};

/// Mean squared error over dropped voxels.
Tensor loss_inp(const Tensor& recon, const std::vector<const InpaintingTask*>& tasks);

struct VisFlags {
  bool inp = true;
  bool rot = true;
  bool con = true;
};

struct VisLoss {
  Tensor inp, rot, con;  // undefined when disabled
  Tensor total;
};

/// Inpainting, rotation and view-contrast heads over the top feature map.
class VisionSslHeads {
 public:
  VisionSslHeads() = default;
  VisionSslHeads(nn::ParamStore& store, const std::string& name, std::int64_t c_top, std::int64_t res_top,
                 std::int64_t out_size, std::int64_t proj_dim, Rng& rng);

  /// `pyr` encodes 2n views: views [0, n) are the first augmentation of each
  /// scan, [n, 2n) the second.
  VisLoss loss(const vision3d::VisionPyramid& pyr, const std::vector<SslView>& views, const VisFlags& flags = {}) const;

  const InpaintingHead& inpainting() const { return inpaint_; }
  const nn::Linear& rotation() const { return rot_; }
  const nn::Mlp& contrast() const { return con_; }

 private:
  InpaintingHead inpaint_;
  nn::Linear rot_;
  nn::Mlp con_;
  Temperature tau_;
};

}  // namespace velvet::objectives
