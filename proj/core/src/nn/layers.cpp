#include "velvet/nn/layers.hpp"

#include "velvet/error.hpp"

namespace velvet::nn {

Tensor ParamStore::add(const std::string& name, ag::Shape shape, std::vector<double> values) {
  if (params_.count(name)) fail(Errc::ConfigError, "duplicate parameter " + name);
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::normal(const std::string& name, ag::Shape shape, Rng& rng, double stddev) {
  std::vector<double> values(static_cast<std::size_t>(ag::numel(shape)));
  for (double& v : values) v = rng.truncated_normal(stddev);
  return add(name, std::move(shape), std::move(values));
}

Tensor ParamStore::zeros(const std::string& name, ag::Shape shape) { return constant(name, std::move(shape), 0.0); }

Tensor ParamStore::constant(const std::string& name, ag::Shape shape, double value) {
  std::vector<double> values(static_cast<std::size_t>(ag::numel(shape)), value);
  return add(name, std::move(shape), std::move(values));
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) fail(Errc::ConfigError, "unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(Errc::ConfigError, "unknown parameter " + name);
  return it->second;
}

std::int64_t ParamStore::count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

Linear::Linear(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng, bool bias)
    : weight_(store.normal(name + ".weight", {in, out}, rng)) {
  if (bias) bias_ = store.zeros(name + ".bias", {out});
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::int64_t dim)
    : gamma_(store.constant(name + ".gamma", {dim}, 1.0)), beta_(store.zeros(name + ".beta", {dim})) {}

Mlp::Mlp(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t hidden, std::int64_t out,
         Rng& rng)
    : fc1_(store, name + ".fc1", in, hidden, rng), fc2_(store, name + ".fc2", hidden, out, rng) {}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, std::int64_t dim,
                                       std::int64_t heads, Rng& rng, std::int64_t kv_dim)
    : dim_(dim), heads_(heads) {
  if (heads <= 0 || dim % heads != 0)
    fail(Errc::ConfigError, name + ": dim " + std::to_string(dim) + " not divisible by heads");
  if (kv_dim < 0) kv_dim = dim;
  q_ = Linear(store, name + ".q", dim, dim, rng);
  k_ = Linear(store, name + ".k", kv_dim, dim, rng);
  v_ = Linear(store, name + ".v", kv_dim, dim, rng);
  o_ = Linear(store, name + ".out", dim, dim, rng);
}

Tensor split_heads(const Tensor& x, std::int64_t n, std::int64_t l, std::int64_t heads) {
  const std::int64_t d = x.dim(-1) / heads;
  return ag::permute(ag::reshape(x, {n, l, heads, d}), {0, 2, 1, 3});
}

Tensor merge_heads(const Tensor& x) {
  const std::int64_t n = x.dim(0), h = x.dim(1), l = x.dim(2), d = x.dim(3);
  return ag::reshape(ag::permute(x, {0, 2, 1, 3}), {n * l, h * d});
}

Tensor MultiHeadAttention::operator()(const Tensor& xq, std::int64_t lq, const Tensor& xkv, std::int64_t lk,
                                      const ag::AttnMaskPtr& mask, const Tensor& bias,
                                      std::vector<double>* probs_out) const {
  if (lk <= 0) fail(Errc::EmptyContext, "attention with no keys");
  const std::int64_t nq = xq.dim(0) / lq;
  const std::int64_t nk = xkv.dim(0) / lk;
  const Tensor q = split_heads(q_(xq), nq, lq, heads_);
  const Tensor k = split_heads(k_(xkv), nk, lk, heads_);
  const Tensor v = split_heads(v_(xkv), nk, lk, heads_);
  return o_(merge_heads(ag::attention(q, k, v, mask, bias, probs_out)));
}

}  // namespace velvet::nn
