#include "velvet/objectives/mm.hpp"

#include <algorithm>
#include <cmath>

#include "velvet/error.hpp"

namespace velvet::objectives {

ag::AttnMaskPtr select_mask(const ag::AttnMaskPtr& mask, const std::vector<std::int64_t>& text_rows) {
  if (!mask) return nullptr;
  auto m = std::make_shared<ag::AttnMask>();
  m->groups = static_cast<std::int64_t>(text_rows.size());
  m->lq = mask->lq;
  m->lk = mask->lk;
  const auto per = static_cast<std::size_t>(mask->lq * mask->lk);
  m->allowed.reserve(per * text_rows.size());
  for (auto r : text_rows) {
    const auto g = static_cast<std::size_t>(r % mask->groups);
    m->allowed.insert(m->allowed.end(), mask->allowed.begin() + static_cast<std::ptrdiff_t>(g * per),
                      mask->allowed.begin() + static_cast<std::ptrdiff_t>((g + 1) * per));
  }
  return m;
}

MultiModalEncoder::MultiModalEncoder(nn::ParamStore& store, const std::string& name, std::int64_t dim,
                                     std::int64_t vision_dim, const MultiModalConfig& cfg, Rng& rng)
    : dim_(dim), vision_dim_(vision_dim) {
  if (cfg.num_layers < 1 || cfg.heads < 1 || dim % cfg.heads != 0)
    fail(Errc::ConfigError, "multi-modal encoder needs >= 1 layer and heads dividing the width");
  for (std::int64_t l = 0; l < cfg.num_layers; ++l)
    blocks_.emplace_back(store, name + ".layer" + std::to_string(l), dim, cfg.heads, dim * cfg.ffn_mult, rng,
                         vision_dim);
}

Tensor MultiModalEncoder::operator()(const Tensor& text_states, const tribert::TriBatch& batch, const Tensor& vision,
                                     std::int64_t lvis, const std::vector<Pair>& pairs) const {
  if (lvis <= 0 || !vision.defined() || vision.dim(0) == 0) fail(Errc::EmptyContext, "no vision tokens");
  if (text_states.dim(0) != batch.n * batch.len || text_states.dim(1) != dim_)
    fail(Errc::ShapeMismatch, "text states do not match batch");
  if (vision.dim(1) != vision_dim_ || vision.dim(0) % lvis != 0) fail(Errc::ShapeMismatch, "vision token shape");
  const std::int64_t nv = vision.dim(0) / lvis;
  ag::Index trows, vrows;
  std::vector<std::int64_t> which;
  for (const auto& p : pairs) {
    if (p.text < 0 || p.text >= batch.n || p.vision < 0 || p.vision >= nv)
      fail(Errc::ShapeMismatch, "pair index outside batch");
    which.push_back(p.text);
    for (std::int64_t i = 0; i < batch.len; ++i) trows.push_back(p.text * batch.len + i);
    for (std::int64_t i = 0; i < lvis; ++i) vrows.push_back(p.vision * lvis + i);
  }
  Tensor x = ag::gather_rows(text_states, std::move(trows));
  const Tensor ctx = ag::gather_rows(vision, std::move(vrows));
  const auto mask = select_mask(batch.attn_mask, which);
  for (const auto& b : blocks_) x = b(x, batch.len, mask, nullptr, ctx, lvis);
  return x;
}

std::vector<std::int64_t> mine_hard_negatives(const std::vector<double>& sim, std::int64_t n, Rng& rng,
                                              bool by_column) {
  if (n < 2) fail(Errc::BatchTooSmall, "hard-negative mining needs two pairs");
  if (static_cast<std::int64_t>(sim.size()) != n * n) fail(Errc::ShapeMismatch, "similarity matrix size");
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  std::vector<double> w(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    auto s = [&](std::int64_t j) { return sim[static_cast<std::size_t>(by_column ? j * n + i : i * n + j)]; };
    double hi = -INFINITY;
    for (std::int64_t j = 0; j < n; ++j)
      if (j != i) hi = std::max(hi, s(j));
    for (std::int64_t j = 0; j < n; ++j) w[static_cast<std::size_t>(j)] = j == i ? 0.0 : std::exp(s(j) - hi);
    out[static_cast<std::size_t>(i)] = rng.categorical(w);
  }
  return out;
}

std::vector<Pair> negative_pairs(const std::vector<double>& sim, std::int64_t n, NegativeMode mode, std::int64_t step,
                                 Rng& rng) {
  std::vector<Pair> out;
  const bool scan_side = mode == NegativeMode::Both || step % 2 == 0;
  const bool report_side = mode == NegativeMode::Both || step % 2 == 1;
  // sim rows are scans, columns reports.
  if (scan_side) {
    const auto hard_report = mine_hard_negatives(sim, n, rng, false);
    for (std::int64_t i = 0; i < n; ++i) out.push_back({hard_report[static_cast<std::size_t>(i)], i});
  }
  if (report_side) {
    const auto hard_scan = mine_hard_negatives(sim, n, rng, true);
    for (std::int64_t j = 0; j < n; ++j) out.push_back({j, hard_scan[static_cast<std::size_t>(j)]});
  }
  return out;
}

Tensor loss_match(const Tensor& logits, const std::vector<double>& labels) {
  return ag::bce_with_logits(logits, labels);
}

MultiModalHeads::MultiModalHeads(nn::ParamStore& store, const std::string& name, std::int64_t dim,
                                 std::int64_t vision_dim, std::int64_t vocab, const MultiModalConfig& cfg, Rng& rng)
    : encoder_(store, name + ".encoder", dim, vision_dim, cfg, rng),
      match_(store, name + ".match", dim, 1, rng),
      mlm_(store, name + ".mlm", dim, vocab, rng) {
  // Zero head: every pair starts at logit 0.
  for (double& v : match_.weight().mutable_data()) v = 0.0;
}

Tensor MultiModalHeads::match_logits(const Tensor& text_states, const tribert::TriBatch& batch, const Tensor& vision,
                                     std::int64_t lvis, const std::vector<Pair>& negatives) const {
  std::vector<Pair> pairs;
  for (std::int64_t i = 0; i < batch.n; ++i) pairs.push_back({i, i});
  pairs.insert(pairs.end(), negatives.begin(), negatives.end());
  const Tensor fused = encoder_(text_states, batch, vision, lvis, pairs);
  ag::Index cls;
  for (std::size_t p = 0; p < pairs.size(); ++p) cls.push_back(static_cast<std::int64_t>(p) * batch.len);
  return match_(ag::gather_rows(fused, std::move(cls)));
}

Tensor MultiModalHeads::loss_match(const Tensor& text_states, const tribert::TriBatch& batch, const Tensor& vision,
                                   std::int64_t lvis, const std::vector<Pair>& negatives) const {
  std::vector<double> labels(static_cast<std::size_t>(batch.n), 1.0);
  labels.resize(labels.size() + negatives.size(), 0.0);
  return objectives::loss_match(match_logits(text_states, batch, vision, lvis, negatives), labels);
}

Tensor MultiModalHeads::loss_mlm(const Tensor& masked_states, const tribert::TriBatch& batch, const Tensor& vision,
                                 std::int64_t lvis, const MaskedText& masked) const {
  if (masked.positions.empty()) fail(Errc::NoMaskedPositions, "no masked tokens");
  std::vector<Pair> pairs;
  for (std::int64_t i = 0; i < batch.n; ++i) pairs.push_back({i, i});
  const Tensor fused = encoder_(masked_states, batch, vision, lvis, pairs);
  return objectives::loss_mlm(mlm_(ag::gather_rows(fused, masked.positions)), masked.targets());
}

}  // namespace velvet::objectives
