#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "velvet/ag/tensor.hpp"

namespace velvet::ag {

using Index = std::vector<std::int64_t>;
using IndexPtr = std::shared_ptr<const Index>;

inline constexpr std::int64_t kIgnoreIndex = -100;

/// Row groups in CSR form: group g owns members[offsets[g] .. offsets[g+1]).
struct Groups {
  std::vector<std::int64_t> offsets{0};
  std::vector<std::int64_t> members;

  std::int64_t size() const { return static_cast<std::int64_t>(offsets.size()) - 1; }
  void add_group(const std::vector<std::int64_t>& rows);
  /// `count` groups of `per` consecutive rows each.
  static Groups contiguous(std::int64_t count, std::int64_t per);
};
using GroupsPtr = std::shared_ptr<const Groups>;

/// Boolean attention pattern shared by all heads. Batch entry b uses
/// pattern `b % groups`; `allowed` is [groups, lq, lk].
struct AttnMask {
  std::int64_t groups = 0;
  std::int64_t lq = 0;
  std::int64_t lk = 0;
  std::vector<std::uint8_t> allowed;

  bool at(std::int64_t g, std::int64_t i, std::int64_t j) const {
    return allowed[static_cast<std::size_t>((g * lq + i) * lk + j)] != 0;
  }
};
using AttnMaskPtr = std::shared_ptr<const AttnMask>;

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor transpose2d(const Tensor& x);
Tensor gather_rows(const Tensor& x, IndexPtr rows);  // -1 yields a zero row
Tensor gather_rows(const Tensor& x, Index rows);
Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
/// Mean of each group's rows; empty groups give zero rows.
Tensor pool_rows(const Tensor& x, GroupsPtr groups);
/// Zeroes rows whose keep flag is 0.
Tensor mask_rows(const Tensor& x, const std::vector<std::uint8_t>& keep);

// Elementwise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
/// x * s where s holds one element.
Tensor mul_scalar(const Tensor& x, const Tensor& s);
Tensor exp(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Dense algebra.
/// x[..., in] @ w[in, out] + b[out]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// a[m, k] @ b[n, k]^T.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);
Tensor row_dot(const Tensor& a, const Tensor& b);

/// Scaled dot-product attention.
///
/// q: [B, H, Lq, d]; k: [Bk, H, Lk, d]; v: [Bk, H, Lk, dv] with Bk in {B, 1}.
/// Disallowed logits get probability exactly 0 and a query row with nothing
/// allowed outputs zeros. `bias` is an optional [H, Lq, Lk] additive term.
/// When `probs_out` is set it receives the [B, H, Lq, Lk] attention weights.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttnMaskPtr& mask = nullptr,
                 const Tensor& bias = Tensor(), std::vector<double>* probs_out = nullptr);

// Losses.
/// Mean softmax cross-entropy over rows whose target is not kIgnoreIndex.
/// Returns an exact zero when every row is ignored.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& targets);
Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets);
/// Mean squared error over elements whose mask is non-zero.
Tensor masked_mse(const Tensor& pred, const std::vector<double>& target, const std::vector<std::uint8_t>& mask);

}  // namespace velvet::ag
