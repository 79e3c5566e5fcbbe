#include "velvet/objectives/uni.hpp"

#include <algorithm>
#include <cmath>

#include "velvet/error.hpp"

namespace velvet::objectives {

using vision3d::Grid;

std::vector<std::int64_t> MaskedText::targets() const {
  std::vector<std::int64_t> t;
  t.reserve(positions.size());
  for (auto p : positions) t.push_back(labels[static_cast<std::size_t>(p)]);
  return t;
}

MaskedText mask_tokens(const tribert::TriBatch& batch, const prep::Vocabulary& vocab, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) fail(Errc::ConfigError, "mask ratio must lie in [0, 1)");
  MaskedText m;
  m.input_ids = batch.token_ids;
  m.labels.assign(batch.token_ids.size(), ag::kIgnoreIndex);
  const std::int64_t body = vocab.size() - vocab.first_body_id();
  for (std::int64_t b = 0; b < batch.n; ++b) {
    std::vector<std::int64_t> words;
    for (std::int64_t i = 0; i < batch.len; ++i)
      if (batch.role[batch.flat(b, i)] == tribert::Role::Word) words.push_back(i);
    const auto count = static_cast<std::int64_t>(std::lround(ratio * static_cast<double>(words.size())));
    auto picks = rng.sample_without_replacement(static_cast<std::int64_t>(words.size()), count);
    std::sort(picks.begin(), picks.end());
    for (auto w : picks) {
      const auto f = batch.flat(b, words[static_cast<std::size_t>(w)]);
      m.labels[f] = batch.token_ids[f];
      m.positions.push_back(static_cast<std::int64_t>(f));
      const double u = rng.uniform();
      if (u < 0.8) {
        m.input_ids[f] = prep::Vocabulary::kMask;
        m.kinds.push_back(Corruption::Mask);
      } else if (u < 0.9) {
        m.input_ids[f] = vocab.first_body_id() + rng.below(body);
        m.kinds.push_back(Corruption::Random);
      } else {
        m.kinds.push_back(Corruption::Keep);
      }
    }
  }
  return m;
}

Tensor loss_mlm(const Tensor& logits, const std::vector<std::int64_t>& targets) {
  const bool any = std::any_of(targets.begin(), targets.end(), [](auto t) { return t != ag::kIgnoreIndex; });
  if (!any) fail(Errc::NoMaskedPositions, "no masked positions to predict");
  return ag::cross_entropy(logits, targets);
}

Grid rotate_xy(const Grid& g, int k) {
  if (g.h != g.w) fail(Errc::NonSquarePlane, "rotation needs a square (y, x) plane");
  k = ((k % 4) + 4) % 4;
  Grid cur = g;
  const std::int64_t n = g.w;
  for (int r = 0; r < k; ++r) {
    Grid out(g.d, n, n);
    for (std::int64_t z = 0; z < g.d; ++z)
      for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x < n; ++x) out.at(z, y, x) = cur.at(z, x, n - 1 - y);
    cur = std::move(out);
  }
  return cur;
}

InpaintingTask make_inpainting(const Grid& g, std::int64_t block, double ratio, Rng& rng) {
  if (block <= 0 || g.d % block || g.h % block || g.w % block)
    fail(Errc::BadBlockSize, "block " + std::to_string(block) + " does not divide the volume");
  InpaintingTask t;
  t.original = g;
  t.corrupted = g;
  t.dropped.assign(static_cast<std::size_t>(g.size()), 0);
  const std::int64_t bz = g.d / block, by = g.h / block, bx = g.w / block;
  const auto order = rng.permutation(bz * by * bx);
  const double target = ratio * static_cast<double>(g.size());
  std::int64_t dropped = 0;
  for (auto id : order) {
    if (static_cast<double>(dropped) >= target) break;
    const std::int64_t z0 = id / (by * bx) * block, y0 = (id / bx) % by * block, x0 = id % bx * block;
    for (std::int64_t z = z0; z < z0 + block; ++z)
      for (std::int64_t y = y0; y < y0 + block; ++y)
        for (std::int64_t x = x0; x < x0 + block; ++x) {
          t.dropped[g.index(z, y, x)] = 1;
          t.corrupted.at(z, y, x) = 0.0f;
        }
    dropped += block * block * block;
  }
  t.fraction = static_cast<double>(dropped) / static_cast<double>(g.size());
  return t;
}

RotationTask make_rotation(const Grid& g, Rng& rng) {
  RotationTask t;
  t.label = static_cast<int>(rng.below(4));
  t.rotated = rotate_xy(g, t.label);
  return t;
}

SslView make_ssl_view(const Grid& volume, const SslConfig& cfg, Rng& rng) {
  SslView v;
  const auto sub = vision3d::extract_subvolume(volume, cfg.augment, rng);
  v.rotation = make_rotation(sub.grid, rng);
  v.inpainting = make_inpainting(v.rotation.rotated, cfg.block, cfg.drop_ratio, rng);
  return v;
}

InpaintingHead::InpaintingHead(nn::ParamStore& store, const std::string& name, std::int64_t c_top,
                               std::int64_t res_top, std::int64_t out_size, Rng& rng)
    : res_top_(res_top) {
  std::int64_t r = res_top, c = c_top, k = 0;
  if (r <= 0 || out_size % r) fail(Errc::ConfigError, "inpainting output must be a multiple of the top resolution");
  while (r < out_size) {
    r *= 2;
    const std::int64_t next = r >= out_size ? 1 : std::max<std::int64_t>(c / 2, 4);
    steps_.emplace_back(store, name + ".up" + std::to_string(k++), c, 8 * next, rng);
    c = next;
  }
  if (r != out_size) fail(Errc::ConfigError, "inpainting output size must be res_top times a power of two");
}

Tensor InpaintingHead::operator()(const Tensor& top, std::int64_t n) const {
  Tensor x = top;
  std::int64_t r = res_top_;
  for (std::size_t s = 0; s < steps_.size(); ++s) {
    x = steps_[s](x);
    const std::int64_t c = x.dim(1) / 8;
    x = ag::reshape(x, {x.dim(0) * 8, c});
    const std::int64_t r2 = 2 * r;
    ag::Index idx(static_cast<std::size_t>(n * r2 * r2 * r2));
    std::size_t o = 0;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t z = 0; z < r2; ++z)
        for (std::int64_t y = 0; y < r2; ++y)
          for (std::int64_t xx = 0; xx < r2; ++xx) {
            const std::int64_t src = b * r * r * r + ((z / 2) * r + y / 2) * r + xx / 2;
            idx[o++] = src * 8 + ((z % 2) * 2 + y % 2) * 2 + xx % 2;
          }
    x = ag::gather_rows(x, std::move(idx));
    r = r2;
    if (s + 1 < steps_.size()) x = ag::gelu(x);
  }
  return x;
}

Tensor loss_inp(const Tensor& recon, const std::vector<const InpaintingTask*>& tasks) {
  std::vector<double> target;
  std::vector<std::uint8_t> mask;
  for (const auto* t : tasks) {
    target.insert(target.end(), t->original.data.begin(), t->original.data.end());
    mask.insert(mask.end(), t->dropped.begin(), t->dropped.end());
  }
  if (recon.numel() != static_cast<std::int64_t>(target.size()))
    fail(Errc::ShapeMismatch, "reconstruction " + ag::shape_str(recon.shape()) + " vs targets");
  return ag::masked_mse(recon, target, mask);
}

VisionSslHeads::VisionSslHeads(nn::ParamStore& store, const std::string& name, std::int64_t c_top,
                               std::int64_t res_top, std::int64_t out_size, std::int64_t proj_dim, Rng& rng)
    : inpaint_(store, name + ".inpaint", c_top, res_top, out_size, rng),
      rot_(store, name + ".rotation", c_top, 4, rng),
      con_(store, name + ".contrast", c_top, proj_dim, proj_dim, rng),
      tau_(store, name + ".log_tau_con") {}

VisLoss VisionSslHeads::loss(const vision3d::VisionPyramid& pyr, const std::vector<SslView>& views,
                             const VisFlags& flags) const {
  const auto total_views = static_cast<std::int64_t>(views.size());
  if (pyr.n != total_views || total_views % 2) fail(Errc::ShapeMismatch, "expected two views per scan");
  VisLoss out;
  std::vector<Tensor> parts;
  if (flags.inp) {
    std::vector<const InpaintingTask*> tasks;
    for (const auto& v : views) tasks.push_back(&v.inpainting);
    parts.push_back(out.inp = loss_inp(inpaint_(pyr.top, pyr.n), tasks));
  }
  if (flags.rot) {
    std::vector<std::int64_t> labels;
    for (const auto& v : views) labels.push_back(v.rotation.label);
    parts.push_back(out.rot = ag::cross_entropy(rot_(pyr.pooled_top), labels));
  }
  if (flags.con) {
    const std::int64_t n = total_views / 2;
    const Tensor z = con_(pyr.pooled_top);
    parts.push_back(out.con = info_nce(ag::slice_rows(z, 0, n), ag::slice_rows(z, n, 2 * n), tau_.inv_tau()));
  }
  out.total = Tensor::scalar(0.0);
  for (const auto& p : parts) out.total = ag::add(out.total, p);
  return out;
}

}  // namespace velvet::objectives
