#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "velvet/ag/ops.hpp"
#include "velvet/nn/layers.hpp"
#include "velvet/objectives/uni.hpp"
#include "velvet/tribert/tribert.hpp"

namespace velvet::objectives {

/// A text/vision pairing; `text` and `vision` index the batch.
struct Pair {
  std::int64_t text = 0;
  std::int64_t vision = 0;
  bool operator==(const Pair& o) const { return text == o.text && vision == o.vision; }
};

/// Tri-level mask rows re-ordered to follow `text_rows` (one pattern each).
ag::AttnMaskPtr select_mask(const ag::AttnMaskPtr& mask, const std::vector<std::int64_t>& text_rows);

struct MultiModalConfig {
  std::int64_t num_layers = 2;
  std::int64_t heads = 12;
  std::int64_t ffn_mult = 4;
};

/// Transformer blocks stacked on the text encoder output. Each block runs
/// masked self-attention over text tokens, cross-attention to vision tokens
/// and a feed-forward layer.
class MultiModalEncoder {
 public:
  MultiModalEncoder() = default;
  MultiModalEncoder(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t vision_dim,
                    const MultiModalConfig& cfg, Rng& rng);

  /// text_states: [n * len, dim] for `batch`; vision: [nv * lvis, vision_dim].
  /// Returns fused states [pairs * len, dim]. Throws EmptyContext if lvis is 0.
  Tensor operator()(const Tensor& text_states, const tribert::TriBatch& batch, const Tensor& vision,
                    std::int64_t lvis, const std::vector<Pair>& pairs) const;

  const std::vector<tribert::TransformerBlock>& blocks() const { return blocks_; }

 private:
  std::int64_t dim_ = 0;
  std::int64_t vision_dim_ = 0;
  std::vector<tribert::TransformerBlock> blocks_;
};

enum class NegativeMode : std::uint8_t {
  Alternate,  // one negative per pair; scan side on even steps, report side on odd
  Both,       // a hard report for each scan and a hard scan for each report
};

/// For each row i of the n x n similarity matrix samples j != i with
/// probability softmax over the off-diagonal entries. `by_column` mines
/// sim[., i] instead. Throws BatchTooSmall for n < 2.
std::vector<std::int64_t> mine_hard_negatives(const std::vector<double>& sim, std::int64_t n, Rng& rng,
                                              bool by_column = false);

/// Negative pairs from a scan-by-report similarity matrix.
std::vector<Pair> negative_pairs(const std::vector<double>& sim, std::int64_t n, NegativeMode mode,
                                 std::int64_t step, Rng& rng);

/// Mean binary cross-entropy of [m, 1] logits.
Tensor loss_match(const Tensor& logits, const std::vector<double>& labels);

struct MmFlags {
  bool match = true;
  bool mlm = true;
};

struct MmLoss {
  Tensor match, mlm;  // undefined when disabled
  Tensor total;
};

/// Fusion encoder plus matching and masked-token heads.
class MultiModalHeads {
 public:
  MultiModalHeads() = default;
  MultiModalHeads(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t vision_dim,
                  std::int64_t vocab, const MultiModalConfig& cfg, Rng& rng);

  /// Positives (i, i) followed by `negatives`; logits of the fused [CLS].
  Tensor match_logits(const Tensor& text_states, const tribert::TriBatch& batch, const Tensor& vision,
                      std::int64_t lvis, const std::vector<Pair>& negatives) const;
  Tensor loss_match(const Tensor& text_states, const tribert::TriBatch& batch, const Tensor& vision,
                    std::int64_t lvis, const std::vector<Pair>& negatives) const;
  /// masked_states: text encoder output on `masked.input_ids`.
  Tensor loss_mlm(const Tensor& masked_states, const tribert::TriBatch& batch, const Tensor& vision,
                  std::int64_t lvis, const MaskedText& masked) const;

  const MultiModalEncoder& encoder() const { return encoder_; }
  const tribert::MlmHead& mlm_head() const { return mlm_; }

 private:
  MultiModalEncoder encoder_;
  nn::Linear match_;
  tribert::MlmHead mlm_;
};

}  // namespace velvet::objectives
