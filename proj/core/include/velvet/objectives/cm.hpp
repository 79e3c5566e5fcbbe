#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "velvet/ag/ops.hpp"
#include "velvet/nn/layers.hpp"
#include "velvet/tribert/tribert.hpp"
#include "velvet/vision3d/swin3d.hpp"

namespace velvet::objectives {

using ag::Tensor;

/// Learnable temperature stored as log(tau); tau is clamped to [0.001, 10].
class Temperature {
 public:
  static constexpr double kMin = 0.001;
  static constexpr double kMax = 10.0;

  Temperature() = default;
  Temperature(nn::ParamStore& store, const std::string& name, double init = 0.07);

  Tensor tau() const;
  /// 1 / tau as a one-element tensor.
  Tensor inv_tau() const;

 private:
  Tensor log_tau_;
};

/// Mean of row-wise and column-wise cross-entropy of square `logits` with the
/// diagonal as targets.
Tensor symmetric_ce(const Tensor& logits);

/// Symmetric InfoNCE between rows of a and b after L2 normalization.
/// Throws BatchTooSmall for fewer than two rows.
Tensor info_nce(const Tensor& a, const Tensor& b, const Tensor& inv_tau);

/// Cosine similarity matrix, row i = a_i against every b_j.
std::vector<double> cosine_matrix(const Tensor& a, const Tensor& b);

/// Parameter-free single-head cross-attention.
///
/// queries: [n * k, d] with per-row validity; context: [nc * t, d], nc in
/// {n, 1}. Invalid query rows come out as zeros.
Tensor contextualize(const Tensor& queries, std::int64_t n, std::int64_t k, const std::vector<std::uint8_t>& valid,
                     const Tensor& context, std::int64_t t);

/// Local contrastive loss. For each vision context i and text j, a(i, j) is
/// the mean over valid units of cos(contextualize(text_j | vision_i), text_j).
/// The n x n matrix a / tau goes through symmetric_ce.
Tensor loss_local(const Tensor& text, std::int64_t n, std::int64_t k, const std::vector<std::uint8_t>& valid,
                  const Tensor& vision, std::int64_t t, const Tensor& inv_tau);

/// Mean-pools cubic token grids ([n * res^3, c]) by the smallest integer
/// factor bringing the count to at most `max_tokens`. Returns the new side.
Tensor pool_tokens(const Tensor& x, std::int64_t n, std::int64_t res, std::int64_t max_tokens, std::int64_t* new_res);

struct SharedEmbeddings {
  std::int64_t n = 0;
  Tensor v_top;  // [n, d]
  Tensor v_mid;  // [n * t_mid, d]
  Tensor v_bot;  // [n * t_bot, d]
  std::int64_t t_mid = 0, t_bot = 0;
  Tensor t_rep;   // [n, d]
  Tensor t_sent;  // [n * k_sent, d]
  Tensor t_word;  // [n * k_word, d]
  std::int64_t k_sent = 0, k_word = 0;
  std::vector<std::uint8_t> sent_valid, word_valid;
};

struct CmFlags {
  bool top = true;
  bool mid = true;
  bool bot = true;
};

struct CmLoss {
  Tensor top, mid, bot;  // undefined when disabled
  Tensor total;
};

/// Linear projections into the shared space plus one temperature per level.
class CrossModalHeads {
 public:
  static constexpr std::int64_t kMaxBotTokens = 512;

  CrossModalHeads() = default;
  CrossModalHeads(nn::ParamStore& store, const std::string& name, std::int64_t c_bot, std::int64_t c_mid,
                  std::int64_t c_top, std::int64_t c_text, std::int64_t dim, Rng& rng);

  SharedEmbeddings project(const vision3d::VisionPyramid& v, const tribert::TextFeatureSet& t,
                           const CmFlags& flags = {}) const;
  /// Global-level embeddings only.
  Tensor project_vision_top(const Tensor& pooled_top) const { return v_top_(pooled_top); }
  Tensor project_text_rep(const Tensor& rep) const { return t_rep_(rep); }

  CmLoss loss(const SharedEmbeddings& e, const CmFlags& flags = {}) const;

  const Temperature& tau_top() const { return tau_top_; }

 private:
  nn::Linear v_top_, v_mid_, v_bot_, t_rep_, t_sent_, t_word_;
  Temperature tau_top_, tau_mid_, tau_bot_;
};

}  // namespace velvet::objectives
