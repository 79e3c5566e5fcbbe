#include <gtest/gtest.h>

#include <cmath>

#include "support/gradcheck.hpp"
#include "velvet/ag/ops.hpp"
#include "velvet/error.hpp"
#include "velvet/rng.hpp"

namespace ag = velvet::ag;
using ag::Tensor;
using velvet::testing::gradcheck;

namespace {

Tensor random_param(ag::Shape shape, velvet::Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(ag::numel(shape)));
  for (double& x : v) x = rng.uniform(-scale, scale);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor random_const(ag::Shape shape, velvet::Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(ag::numel(shape)));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::constant(std::move(shape), std::move(v));
}

// Contracts any tensor against fixed weights so every output entry matters.
Tensor probe(const Tensor& x, std::uint64_t seed = 99) {
  velvet::Rng rng(seed);
  return ag::sum(ag::mul(x, random_const(x.shape(), rng)));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Autograd, LinearAndGelu) {
  velvet::Rng rng(1);
  Tensor x = random_param({3, 4}, rng), w = random_param({4, 5}, rng), b = random_param({5}, rng);
  auto r = gradcheck([&] { return probe(ag::gelu(ag::linear(x, w, b))); }, {x, w, b});
  EXPECT_LT(r.max_rel_err, kTol);
}

TEST(Autograd, LayerNorm) {
  velvet::Rng rng(2);
  Tensor x = random_param({4, 6}, rng), g = random_param({6}, rng), b = random_param({6}, rng);
  auto r = gradcheck([&] { return probe(ag::layer_norm(x, g, b)); }, {x, g, b});
  EXPECT_LT(r.max_rel_err, kTol);
}

TEST(Autograd, ShapeOps) {
  velvet::Rng rng(3);
  Tensor x = random_param({2, 3, 4}, rng);
  auto r = gradcheck(
      [&] {
        Tensor p = ag::permute(x, {2, 0, 1});
        Tensor rs = ag::reshape(p, {8, 3});
        Tensor g = ag::gather_rows(rs, ag::Index{7, -1, 0, 0, 3});
        Tensor s = ag::slice_rows(rs, 2, 6);
        Tensor c = ag::concat_rows({g, s});
        auto groups = std::make_shared<ag::Groups>();
        groups->add_group({0, 1, 2});
        groups->add_group({});
        groups->add_group({4, 8});
        return ag::add(probe(c), probe(ag::pool_rows(c, groups), 5));
      },
      {x});
  EXPECT_LT(r.max_rel_err, kTol);
}

TEST(Autograd, NormalizeDotMatmul) {
  velvet::Rng rng(4);
  Tensor a = random_param({3, 5}, rng), b = random_param({3, 5}, rng), s = random_param({1}, rng);
  auto r = gradcheck(
      [&] {
        Tensor na = ag::l2_normalize_rows(a), nb = ag::l2_normalize_rows(b);
        Tensor sim = ag::mul_scalar(ag::matmul_nt(na, nb), ag::exp(s));
        return ag::add(probe(sim), probe(ag::row_dot(na, ag::transpose2d(ag::transpose2d(nb))), 3));
      },
      {a, b, s});
  EXPECT_LT(r.max_rel_err, kTol);
}

TEST(Autograd, AttentionWithMaskBiasAndBroadcast) {
  velvet::Rng rng(5);
  Tensor q = random_param({2, 2, 3, 4}, rng), k = random_param({1, 2, 5, 4}, rng),
         v = random_param({1, 2, 5, 3}, rng), bias = random_param({2, 3, 5}, rng);
  auto mask = std::make_shared<ag::AttnMask>();
  mask->groups = 2;
  mask->lq = 3;
  mask->lk = 5;
  mask->allowed.assign(30, 1);
  mask->allowed[0 * 15 + 0 * 5 + 1] = 0;
  mask->allowed[1 * 15 + 2 * 5 + 4] = 0;
  for (int j = 0; j < 5; ++j) mask->allowed[1 * 15 + 1 * 5 + j] = 0;  // an empty row
  ag::AttnMaskPtr m = mask;
  auto r = gradcheck([&] { return probe(ag::attention(q, k, v, m, bias)); }, {q, k, v, bias});
  EXPECT_LT(r.max_rel_err, kTol);

  velvet::ag::NoGradGuard guard;
  std::vector<double> probs;
  Tensor out = ag::attention(q, k, v, m, bias, &probs);
  for (int h = 0; h < 2; ++h)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(out.at(((1 * 2 + h) * 3 + 1) * 3 + j), 0.0);
  EXPECT_EQ(probs[((0 * 2 + 0) * 3 + 0) * 5 + 1], 0.0);
}

TEST(Autograd, Losses) {
  velvet::Rng rng(6);
  Tensor logits = random_param({4, 3}, rng);
  auto r1 = gradcheck([&] { return ag::cross_entropy(logits, {0, ag::kIgnoreIndex, 2, 1}); }, {logits});
  EXPECT_LT(r1.max_rel_err, kTol);
  Tensor z = random_param({4}, rng);
  auto r2 = gradcheck([&] { return ag::bce_with_logits(z, {1, 0, 0, 1}); }, {z});
  EXPECT_LT(r2.max_rel_err, kTol);
  Tensor p = random_param({5}, rng);
  auto r3 = gradcheck([&] { return ag::masked_mse(p, {1, 2, 3, 4, 5}, {1, 0, 1, 1, 0}); }, {p});
  EXPECT_LT(r3.max_rel_err, kTol);
  Tensor c = random_param({3}, rng, 2.0);
  auto r4 = gradcheck([&] { return probe(ag::clamp(c, -0.5, 0.5)); }, {c});
  EXPECT_LT(r4.max_rel_err, 1e-5);
}

TEST(Autograd, CrossEntropyAllIgnoredIsZero) {
  Tensor logits = Tensor::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(ag::cross_entropy(logits, {ag::kIgnoreIndex, ag::kIgnoreIndex}).item(), 0.0);
}

TEST(Autograd, NoGradRecordsNothing) {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  ag::NoGradGuard guard;
  EXPECT_FALSE(ag::scale(w, 3.0).requires_grad());
}

TEST(Autograd, ShapeErrorsAreTyped) {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({3, 2});
  try {
    ag::add(a, b);
    FAIL() << "expected ShapeMismatch";
  } catch (const velvet::Error& e) {
    EXPECT_EQ(e.code(), velvet::Errc::ShapeMismatch);
  }
}
