#include "velvet/vision3d/swin3d.hpp"

#include "velvet/error.hpp"

namespace velvet::vision3d {

VisionConfig VisionConfig::preset(const std::string& name) {
  VisionConfig c;
  if (name == "T") {
    c.embed_dim = 48;
    c.depths = {2, 2, 2, 2};
    c.heads = {3, 6, 12, 24};
  } else if (name == "S") {
    c.embed_dim = 48;
    c.depths = {2, 8, 8, 8};
    c.heads = {4, 8, 16, 32};
  } else if (name == "B") {
    c.embed_dim = 96;
    c.depths = {2, 8, 8, 8};
    c.heads = {4, 8, 16, 32};
  } else {
    fail(Errc::ConfigError, "unknown vision encoder preset '" + name + "'");
  }
  return c;
}

void VisionConfig::validate() const {
  if (depths.size() != 4 || heads.size() != 4) fail(Errc::ConfigError, "vision encoder needs four stages");
  if (patch <= 0 || in_size % patch != 0) fail(Errc::ConfigError, "in_size must be a multiple of patch");
  const std::int64_t r0 = in_size / patch;
  if (r0 % 8 != 0) fail(Errc::ConfigError, "in_size / patch must be divisible by 8");
  if (window <= 0 || embed_dim <= 0 || mlp_ratio <= 0) fail(Errc::ConfigError, "invalid vision encoder config");
  for (std::int64_t s = 0; s < 4; ++s) {
    if (depths[static_cast<std::size_t>(s)] < 0) fail(Errc::ConfigError, "negative depth");
    const auto h = heads[static_cast<std::size_t>(s)];
    if (h <= 0 || stage_dim(s) % h != 0)
      fail(Errc::ConfigError, "stage " + std::to_string(s) + " dim not divisible by heads");
  }
}

WindowPlan WindowPlan::make(std::int64_t res, std::int64_t window, bool shifted) {
  WindowPlan p;
  p.res = res;
  const bool full = res <= window || res % window != 0;
  p.window = full ? res : window;
  p.shift = (!full && shifted) ? p.window / 2 : 0;
  const std::int64_t w = p.window, nw = res / w;
  p.num_windows = nw * nw * nw;
  p.tokens = w * w * w;
  const auto total = static_cast<std::size_t>(res * res * res);
  p.to_windows.resize(total);
  p.to_spatial.resize(total);
  auto region = [&](std::int64_t c) { return c < res - w ? 0 : (c < res - p.shift ? 1 : 2); };
  std::vector<std::int64_t> label(total);
  std::size_t row = 0;
  for (std::int64_t wz = 0; wz < nw; ++wz)
    for (std::int64_t wy = 0; wy < nw; ++wy)
      for (std::int64_t wx = 0; wx < nw; ++wx)
        for (std::int64_t a = 0; a < w; ++a)
          for (std::int64_t b = 0; b < w; ++b)
            for (std::int64_t c = 0; c < w; ++c, ++row) {
              const std::int64_t sz = wz * w + a, sy = wy * w + b, sx = wx * w + c;
              const std::int64_t z = (sz + p.shift) % res, y = (sy + p.shift) % res, x = (sx + p.shift) % res;
              const std::int64_t sp = (z * res + y) * res + x;
              p.to_windows[row] = sp;
              p.to_spatial[static_cast<std::size_t>(sp)] = static_cast<std::int64_t>(row);
              label[row] = (region(sz) * 3 + region(sy)) * 3 + region(sx);
            }
  if (p.shift > 0) {
    auto m = std::make_shared<ag::AttnMask>();
    m->groups = p.num_windows;
    m->lq = m->lk = p.tokens;
    m->allowed.resize(static_cast<std::size_t>(p.num_windows * p.tokens * p.tokens));
    for (std::int64_t g = 0; g < p.num_windows; ++g)
      for (std::int64_t i = 0; i < p.tokens; ++i)
        for (std::int64_t j = 0; j < p.tokens; ++j)
          m->allowed[static_cast<std::size_t>((g * p.tokens + i) * p.tokens + j)] =
              label[static_cast<std::size_t>(g * p.tokens + i)] == label[static_cast<std::size_t>(g * p.tokens + j)];
    p.mask = std::move(m);
  }
  const std::int64_t span = 2 * w - 1;
  p.rel_index.resize(static_cast<std::size_t>(p.tokens * p.tokens));
  for (std::int64_t i = 0; i < p.tokens; ++i)
    for (std::int64_t j = 0; j < p.tokens; ++j) {
      const std::int64_t dz = i / (w * w) - j / (w * w), dy = (i / w) % w - (j / w) % w, dx = i % w - j % w;
      p.rel_index[static_cast<std::size_t>(i * p.tokens + j)] = ((dz + w - 1) * span + dy + w - 1) * span + dx + w - 1;
    }
  return p;
}

ag::Index WindowPlan::batched(const ag::Index& idx, std::int64_t n) const {
  const auto per = static_cast<std::int64_t>(idx.size());
  ag::Index out(static_cast<std::size_t>(n * per));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < per; ++i) out[static_cast<std::size_t>(b * per + i)] = b * per + idx[static_cast<std::size_t>(i)];
  return out;
}

SwinBlock3D::SwinBlock3D(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t heads,
                         std::int64_t res, std::int64_t window, bool shifted, std::int64_t mlp_ratio, Rng& rng)
    : plan_(WindowPlan::make(res, window, shifted)),
      heads_(heads),
      ln1_(store, name + ".ln1", dim),
      ln2_(store, name + ".ln2", dim),
      attn_(store, name + ".attn", dim, heads, rng),
      mlp_(store, name + ".mlp", dim, dim * mlp_ratio, dim, rng) {
  const std::int64_t span = 2 * plan_.window - 1;
  table_ = store.normal(name + ".rel_bias", {span * span * span, heads}, rng);
}

Tensor SwinBlock3D::bias() const {
  const std::int64_t t = plan_.tokens;
  return ag::permute(ag::reshape(ag::gather_rows(table_, plan_.rel_index), {t, t, heads_}), {2, 0, 1});
}

Tensor SwinBlock3D::operator()(const Tensor& x, std::int64_t n) const {
  const std::int64_t vox = plan_.res * plan_.res * plan_.res;
  if (x.rank() != 2 || x.dim(0) != n * vox) fail(Errc::ShapeMismatch, "window block input " + ag::shape_str(x.shape()));
  const Tensor win = ag::gather_rows(ln1_(x), plan_.batched(plan_.to_windows, n));
  const Tensor att = attn_(win, plan_.tokens, win, plan_.tokens, plan_.mask, bias());
  const Tensor y = ag::add(x, ag::gather_rows(att, plan_.batched(plan_.to_spatial, n)));
  return ag::add(y, mlp_(ln2_(y)));
}

PatchMerging3D::PatchMerging3D(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t res,
                               Rng& rng)
    : res_(res), norm_(store, name + ".norm", 8 * dim), reduce_(store, name + ".reduce", 8 * dim, 2 * dim, rng, false) {
  const std::int64_t h = res / 2;
  for (std::int64_t z = 0; z < h; ++z)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < h; ++x)
        for (std::int64_t dz = 0; dz < 2; ++dz)
          for (std::int64_t dy = 0; dy < 2; ++dy)
            for (std::int64_t dx = 0; dx < 2; ++dx)
              gather_.push_back(((2 * z + dz) * res + 2 * y + dy) * res + 2 * x + dx);
}

Tensor PatchMerging3D::operator()(const Tensor& x, std::int64_t n) const {
  const std::int64_t vox = res_ * res_ * res_, c = x.dim(1);
  if (x.dim(0) != n * vox) fail(Errc::ShapeMismatch, "patch merging input " + ag::shape_str(x.shape()));
  ag::Index idx(static_cast<std::size_t>(n) * gather_.size());
  for (std::int64_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < gather_.size(); ++i) idx[static_cast<std::size_t>(b) * gather_.size() + i] = b * vox + gather_[i];
  const Tensor g = ag::reshape(ag::gather_rows(x, std::move(idx)), {n * vox / 8, 8 * c});
  return reduce_(norm_(g));
}

SwinEncoder3D::SwinEncoder3D(nn::ParamStore& store, const std::string& name, const VisionConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::int64_t p = cfg.patch;
  embed_ = nn::Linear(store, name + ".patch_embed", p * p * p, cfg.embed_dim, rng);
  for (std::int64_t s = 0; s < cfg.num_stages(); ++s) {
    const std::string sn = name + ".stage" + std::to_string(s);
    std::vector<SwinBlock3D> blocks;
    for (std::int64_t b = 0; b < cfg.depths[static_cast<std::size_t>(s)]; ++b)
      blocks.emplace_back(store, sn + ".block" + std::to_string(b), cfg.stage_dim(s), cfg.heads[static_cast<std::size_t>(s)],
                          cfg.stage_res(s), cfg.window, b % 2 == 1, cfg.mlp_ratio, rng);
    blocks_.push_back(std::move(blocks));
    if (s + 1 < cfg.num_stages()) merges_.emplace_back(store, sn + ".merge", cfg.stage_dim(s), cfg.stage_res(s), rng);
    if (s >= 1) out_norms_.emplace_back(store, sn + ".out_norm", cfg.stage_dim(s));
  }
}

Tensor SwinEncoder3D::patchify(const std::vector<const Grid*>& volumes) const {
  const std::int64_t p = cfg_.patch, r = cfg_.stage_res(0), n = static_cast<std::int64_t>(volumes.size());
  const std::int64_t pp = p * p * p;
  std::vector<double> rows(static_cast<std::size_t>(n * r * r * r * pp));
  std::size_t o = 0;
  for (const Grid* g : volumes) {
    if (g->d != cfg_.in_size || g->h != cfg_.in_size || g->w != cfg_.in_size)
      fail(Errc::ShapeMismatch, "vision input must be a cube of side " + std::to_string(cfg_.in_size));
    for (std::int64_t z = 0; z < r; ++z)
      for (std::int64_t y = 0; y < r; ++y)
        for (std::int64_t x = 0; x < r; ++x)
          for (std::int64_t dz = 0; dz < p; ++dz)
            for (std::int64_t dy = 0; dy < p; ++dy)
              for (std::int64_t dx = 0; dx < p; ++dx) rows[o++] = g->at(z * p + dz, y * p + dy, x * p + dx);
  }
  return Tensor::constant({n * r * r * r, pp}, std::move(rows));
}

VisionPyramid SwinEncoder3D::encode(const std::vector<const Grid*>& volumes) const {
  const auto n = static_cast<std::int64_t>(volumes.size());
  if (n == 0) fail(Errc::ShapeMismatch, "empty vision batch");
  Tensor x = embed_(patchify(volumes));
  VisionPyramid out;
  out.n = n;
  for (std::int64_t s = 0; s < cfg_.num_stages(); ++s) {
    for (const auto& blk : blocks_[static_cast<std::size_t>(s)]) x = blk(x, n);
    if (s >= 1) {
      const Tensor f = out_norms_[static_cast<std::size_t>(s - 1)](x);
      if (s == 1) out.bot = f, out.res_bot = cfg_.stage_res(s);
      if (s == 2) out.mid = f, out.res_mid = cfg_.stage_res(s);
      if (s == 3) out.top = f, out.res_top = cfg_.stage_res(s);
    }
    if (s + 1 < cfg_.num_stages()) x = merges_[static_cast<std::size_t>(s)](x, n);
  }
  out.pooled_top = ag::pool_rows(out.top, std::make_shared<ag::Groups>(ag::Groups::contiguous(n, out.tokens_top())));
  return out;
}

}  // namespace velvet::vision3d
