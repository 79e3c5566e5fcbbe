#include "velvet/objectives/cm.hpp"

#include <cmath>

#include "velvet/error.hpp"

namespace velvet::objectives {

Temperature::Temperature(nn::ParamStore& store, const std::string& name, double init)
    : log_tau_(store.constant(name, {1}, std::log(init))) {}

Tensor Temperature::tau() const { return ag::exp(ag::clamp(log_tau_, std::log(kMin), std::log(kMax))); }

Tensor Temperature::inv_tau() const {
  return ag::exp(ag::scale(ag::clamp(log_tau_, std::log(kMin), std::log(kMax)), -1.0));
}

Tensor symmetric_ce(const Tensor& logits) {
  const std::int64_t n = logits.dim(0);
  if (logits.rank() != 2 || logits.dim(1) != n) fail(Errc::ShapeMismatch, "symmetric_ce needs a square matrix");
  std::vector<std::int64_t> diag(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;
  return ag::scale(ag::add(ag::cross_entropy(logits, diag), ag::cross_entropy(ag::transpose2d(logits), diag)), 0.5);
}

Tensor info_nce(const Tensor& a, const Tensor& b, const Tensor& inv_tau) {
  if (a.dim(0) < 2) fail(Errc::BatchTooSmall, "contrastive loss needs at least two pairs");
  if (a.shape() != b.shape()) fail(Errc::ShapeMismatch, "info_nce " + ag::shape_str(a.shape()) + " vs " + ag::shape_str(b.shape()));
  const Tensor s = ag::matmul_nt(ag::l2_normalize_rows(a), ag::l2_normalize_rows(b));
  return symmetric_ce(ag::mul_scalar(s, inv_tau));
}

std::vector<double> cosine_matrix(const Tensor& a, const Tensor& b) {
  ag::NoGradGuard guard;
  const Tensor s = ag::matmul_nt(ag::l2_normalize_rows(a.detach()), ag::l2_normalize_rows(b.detach()));
  return {s.data().begin(), s.data().end()};
}

Tensor contextualize(const Tensor& queries, std::int64_t n, std::int64_t k, const std::vector<std::uint8_t>& valid,
                     const Tensor& context, std::int64_t t) {
  if (t <= 0) fail(Errc::EmptyContext, "contextualize with no context tokens");
  const std::int64_t d = queries.dim(-1);
  const std::int64_t nc = context.dim(0) / t;
  if (queries.dim(0) != n * k || context.dim(-1) != d || (nc != n && nc != 1))
    fail(Errc::ShapeMismatch, "contextualize " + ag::shape_str(queries.shape()) + " over " + ag::shape_str(context.shape()));
  const Tensor q = ag::reshape(queries, {n, 1, k, d});
  const Tensor kv = ag::reshape(context, {nc, 1, t, d});
  return ag::mask_rows(ag::reshape(ag::attention(q, kv, kv), {n * k, d}), valid);
}

Tensor loss_local(const Tensor& text, std::int64_t n, std::int64_t k, const std::vector<std::uint8_t>& valid,
                  const Tensor& vision, std::int64_t t, const Tensor& inv_tau) {
  auto groups = std::make_shared<ag::Groups>();
  for (std::int64_t j = 0; j < n; ++j) {
    std::vector<std::int64_t> rows;
    for (std::int64_t u = 0; u < k; ++u)
      if (valid[static_cast<std::size_t>(j * k + u)]) rows.push_back(j * k + u);
    if (rows.empty()) fail(Errc::NoValidUnits, "pair " + std::to_string(j) + " has no valid text units");
    groups->add_group(rows);
  }
  const Tensor text_n = ag::l2_normalize_rows(text);
  std::vector<Tensor> rows;
  for (std::int64_t i = 0; i < n; ++i) {
    const Tensor ctx = contextualize(text, n, k, valid, ag::slice_rows(vision, i * t, (i + 1) * t), t);
    const Tensor cos = ag::row_dot(ag::l2_normalize_rows(ctx), text_n);  // [n * k]
    rows.push_back(ag::reshape(ag::pool_rows(ag::reshape(cos, {n * k, 1}), groups), {1, n}));
  }
  return symmetric_ce(ag::mul_scalar(ag::concat_rows(rows), inv_tau));
}

Tensor pool_tokens(const Tensor& x, std::int64_t n, std::int64_t res, std::int64_t max_tokens, std::int64_t* new_res) {
  std::int64_t f = 1;
  while ((res / f) * (res / f) * (res / f) > max_tokens || res % f != 0) ++f;
  if (new_res) *new_res = res / f;
  if (f == 1) return x;
  const std::int64_t r = res / f;
  auto groups = std::make_shared<ag::Groups>();
  std::vector<std::int64_t> rows;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t z = 0; z < r; ++z)
      for (std::int64_t y = 0; y < r; ++y)
        for (std::int64_t xx = 0; xx < r; ++xx) {
          rows.clear();
          for (std::int64_t dz = 0; dz < f; ++dz)
            for (std::int64_t dy = 0; dy < f; ++dy)
              for (std::int64_t dx = 0; dx < f; ++dx)
                rows.push_back(b * res * res * res + ((z * f + dz) * res + y * f + dy) * res + xx * f + dx);
          groups->add_group(rows);
        }
  return ag::pool_rows(x, groups);
}

CrossModalHeads::CrossModalHeads(nn::ParamStore& store, const std::string& name, std::int64_t c_bot,
                                 std::int64_t c_mid, std::int64_t c_top, std::int64_t c_text, std::int64_t dim,
                                 Rng& rng)
    : v_top_(store, name + ".vision_top", c_top, dim, rng),
      v_mid_(store, name + ".vision_mid", c_mid, dim, rng),
      v_bot_(store, name + ".vision_bot", c_bot, dim, rng),
      t_rep_(store, name + ".text_rep", c_text, dim, rng),
      t_sent_(store, name + ".text_sent", c_text, dim, rng),
      t_word_(store, name + ".text_word", c_text, dim, rng),
      tau_top_(store, name + ".log_tau_top"),
      tau_mid_(store, name + ".log_tau_mid"),
      tau_bot_(store, name + ".log_tau_bot") {}

SharedEmbeddings CrossModalHeads::project(const vision3d::VisionPyramid& v, const tribert::TextFeatureSet& t,
                                          const CmFlags& flags) const {
  if (v.n != t.n) fail(Errc::ShapeMismatch, "vision and text batch sizes differ");
  SharedEmbeddings e;
  e.n = v.n;
  e.v_top = v_top_(v.pooled_top);
  e.t_rep = t_rep_(t.rep);
  if (flags.mid) {
    e.v_mid = v_mid_(v.mid);
    e.t_mid = v.tokens_mid();
    e.t_sent = t_sent_(t.sent);
    e.k_sent = t.n_sent;
    e.sent_valid = t.sent_valid;
  }
  if (flags.bot) {
    std::int64_t r = 0;
    e.v_bot = v_bot_(pool_tokens(v.bot, v.n, v.res_bot, kMaxBotTokens, &r));
    e.t_bot = r * r * r;
    e.t_word = t_word_(t.word);
    e.k_word = t.n_word;
    e.word_valid = t.word_valid;
  }
  return e;
}

CmLoss CrossModalHeads::loss(const SharedEmbeddings& e, const CmFlags& flags) const {
  CmLoss out;
  std::vector<Tensor> parts;
  if (flags.top) parts.push_back(out.top = info_nce(e.v_top, e.t_rep, tau_top_.inv_tau()));
  if (flags.mid) {
    if (e.n < 2) fail(Errc::BatchTooSmall, "contrastive loss needs at least two pairs");
    if (!e.v_mid.defined()) fail(Errc::MissingComponent, "mid-level embeddings were not projected");
    parts.push_back(out.mid = loss_local(e.t_sent, e.n, e.k_sent, e.sent_valid, e.v_mid, e.t_mid, tau_mid_.inv_tau()));
  }
  if (flags.bot) {
    if (e.n < 2) fail(Errc::BatchTooSmall, "contrastive loss needs at least two pairs");
    if (!e.v_bot.defined()) fail(Errc::MissingComponent, "bottom-level embeddings were not projected");
    parts.push_back(out.bot = loss_local(e.t_word, e.n, e.k_word, e.word_valid, e.v_bot, e.t_bot, tau_bot_.inv_tau()));
  }
  out.total = Tensor::scalar(0.0);
  for (const auto& p : parts) out.total = ag::add(out.total, p);
  return out;
}

}  // namespace velvet::objectives
