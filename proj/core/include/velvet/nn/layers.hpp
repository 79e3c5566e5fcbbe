#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "velvet/ag/ops.hpp"
#include "velvet/rng.hpp"

namespace velvet::nn {

using ag::Tensor;

/// Named, ordered registry of trainable leaves. Names are dotted paths.
class ParamStore {
 public:
  /// Truncated normal (sigma 0.02) weights.
  Tensor normal(const std::string& name, ag::Shape shape, Rng& rng, double stddev = 0.02);
  Tensor zeros(const std::string& name, ag::Shape shape);
  Tensor constant(const std::string& name, ag::Shape shape, double value);

  const std::map<std::string, Tensor>& all() const { return params_; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::int64_t count() const;
  void zero_grad();

 private:
  Tensor add(const std::string& name, ag::Shape shape, std::vector<double> values);
  std::map<std::string, Tensor> params_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
         bool bias = true);
  Tensor operator()(const Tensor& x) const { return ag::linear(x, weight_, bias_); }

  std::int64_t in() const { return weight_.dim(0); }
  std::int64_t out() const { return weight_.dim(1); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::int64_t dim);
  Tensor operator()(const Tensor& x) const { return ag::layer_norm(x, gamma_, beta_); }

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }

 private:
  Tensor gamma_;
  Tensor beta_;
};

/// Linear -> GELU -> Linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t hidden, std::int64_t out,
      Rng& rng);
  Tensor operator()(const Tensor& x) const { return fc2_(ag::gelu(fc1_(x))); }

  Linear& fc1() { return fc1_; }
  Linear& fc2() { return fc2_; }

 private:
  Linear fc1_;
  Linear fc2_;
};

/// Multi-head attention over token rows.
///
/// Queries arrive as [nq * lq, query_dim] and keys/values as
/// [nk * lk, kv_dim] with nk equal to nq or 1. The result is [nq * lq, dim].
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t heads, Rng& rng,
                     std::int64_t kv_dim = -1);

  Tensor operator()(const Tensor& xq, std::int64_t lq, const Tensor& xkv, std::int64_t lk,
                    const ag::AttnMaskPtr& mask = nullptr, const Tensor& bias = Tensor(),
                    std::vector<double>* probs_out = nullptr) const;

  std::int64_t heads() const { return heads_; }
  std::int64_t dim() const { return dim_; }
  Linear& q() { return q_; }
  Linear& k() { return k_; }
  Linear& v() { return v_; }
  Linear& out() { return o_; }

 private:
  std::int64_t dim_ = 0;
  std::int64_t heads_ = 1;
  Linear q_, k_, v_, o_;
};

/// [n * l, heads * d] -> [n, heads, l, d]
Tensor split_heads(const Tensor& x, std::int64_t n, std::int64_t l, std::int64_t heads);
/// [n, heads, l, d] -> [n * l, heads * d]
Tensor merge_heads(const Tensor& x);

}  // namespace velvet::nn
