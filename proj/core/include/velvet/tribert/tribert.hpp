#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "velvet/ag/ops.hpp"
#include "velvet/nn/layers.hpp"
#include "velvet/prep/report_prep.hpp"
#include "velvet/rng.hpp"

namespace velvet::tribert {

using ag::Tensor;

struct TriBertConfig {
  std::int64_t feature_dim = 768;
  std::int64_t num_layers = 12;
  std::int64_t num_heads = 12;
  std::int64_t max_num_sent = 50;
  std::int64_t max_len = 1024;
  std::int64_t vocab_size = 0;
  std::int64_t ffn_mult = 4;

  /// "S" (6 layers) or "B" (12 layers).
  static TriBertConfig preset(const std::string& name, std::int64_t vocab_size);
  void validate() const;
};

enum class Role : std::uint8_t { Cls, Sent, Word, Pad };

/// Batched TriBERT input. Per-position arrays are [n * len], row-major.
struct TriBatch {
  std::int64_t n = 0;
  std::int64_t len = 0;
  std::vector<std::int64_t> token_ids;
  std::vector<std::int64_t> sentence_type_ids;
  std::vector<std::int64_t> position_ids;
  std::vector<std::uint8_t> pad_mask;  // 1 = real token
  std::vector<Role> role;
  ag::AttnMaskPtr attn_mask;

  // Per report: sequence position of each [SENT_i] and token span of each word.
  std::vector<std::vector<std::int64_t>> sent_positions;
  std::vector<std::vector<prep::Span>> word_positions;
  std::int64_t max_sentences = 0;  // n_sent of the feature set
  std::int64_t max_words = 0;      // n_word of the feature set

  std::size_t flat(std::int64_t b, std::int64_t i) const { return static_cast<std::size_t>(b * len + i); }
};

/// [CLS], then [SENT_i] followed by sentence i's tokens, right-padded. `pad_to`
/// forces a longer padded length.
TriBatch build_tri_batch(const std::vector<prep::TokenizedReport>& reports, const prep::Vocabulary& vocab,
                         const TriBertConfig& cfg, const prep::TextCaps& caps = {}, std::int64_t pad_to = 0);

/// Tri-level self-attention pattern derived from roles and sentence types.
ag::AttnMaskPtr build_tri_mask(const TriBatch& batch);

struct TextFeatureSet {
  std::int64_t n = 0;
  std::int64_t n_sent = 0;
  std::int64_t n_word = 0;
  Tensor rep;                             // [n, c]
  Tensor sent;                            // [n * n_sent, c]
  std::vector<std::uint8_t> sent_valid;   // [n * n_sent]
  Tensor word;                            // [n * n_word, c]
  std::vector<std::uint8_t> word_valid;   // [n * n_word]
  Tensor token_states;                    // [n * len, c]
};

/// Pulls [CLS], [SENT_i] and mean word states out of token states.
TextFeatureSet extract_features(const TriBatch& batch, const Tensor& states);

/// Pre-norm transformer block with optional cross-attention.
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t heads,
                   std::int64_t ffn_dim, Rng& rng, std::int64_t cross_kv_dim = 0);

  /// x: [n * len, dim]. ctx: [n * lctx, cross_kv_dim] or undefined to skip the
  /// cross-attention sublayer.
  Tensor operator()(const Tensor& x, std::int64_t len, const ag::AttnMaskPtr& mask,
                    std::vector<double>* probs_out = nullptr, const Tensor& ctx = Tensor(),
                    std::int64_t lctx = 0) const;

  bool has_cross() const { return has_cross_; }

 private:
  nn::LayerNorm ln1_, ln_cross_, ln2_;
  nn::MultiHeadAttention self_, cross_;
  nn::Mlp ffn_;
  bool has_cross_ = false;
};

class TriBert {
 public:
  TriBert() = default;
  TriBert(nn::ParamStore& store, const std::string& name, const TriBertConfig& cfg, Rng& rng);

  const TriBertConfig& config() const { return cfg_; }

  /// Token + sentence-type + position embeddings, [n * len, c].
  Tensor embed(const TriBatch& batch) const;
  /// Runs the encoder stack. `token_ids` overrides the batch tokens when not
  /// null. `last_attn` receives the final layer's [n, heads, len, len] weights.
  TextFeatureSet encode(const TriBatch& batch, const std::vector<std::int64_t>* token_ids = nullptr,
                        std::vector<double>* last_attn = nullptr) const;
  /// Encoder stack over precomputed embeddings.
  Tensor run_layers(const Tensor& embeddings, const TriBatch& batch, std::vector<double>* last_attn = nullptr) const;

 private:
  Tensor embed_ids(const TriBatch& batch, const std::vector<std::int64_t>& ids) const;

  TriBertConfig cfg_;
  Tensor tok_, type_, pos_;
  std::vector<TransformerBlock> blocks_;
};

/// Dense -> GELU -> LayerNorm -> vocabulary logits.
class MlmHead {
 public:
  MlmHead() = default;
  MlmHead(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t vocab, Rng& rng);
  Tensor operator()(const Tensor& x) const { return decoder_(ln_(ag::gelu(dense_(x)))); }

 private:
  nn::Linear dense_;
  nn::LayerNorm ln_;
  nn::Linear decoder_;
};

}  // namespace velvet::tribert
