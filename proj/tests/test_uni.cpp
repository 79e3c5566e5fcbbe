#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "support/gradcheck.hpp"
#include "velvet/error.hpp"
#include "velvet/objectives/uni.hpp"

using namespace velvet;
using namespace velvet::objectives;
using velvet::testing::gradcheck;
using vision3d::Grid;

namespace {

const prep::Vocabulary& vocab() { return prep::Vocabulary::builtin(); }

prep::TokenizedReport words_report(int sentences, int words_per_sentence, Rng& rng) {
  prep::TokenizedReport r;
  for (int s = 0; s < sentences; ++s) {
    const auto first = r.num_words();
    for (int w = 0; w < words_per_sentence; ++w) {
      const auto b = static_cast<std::int64_t>(r.token_ids.size());
      r.token_ids.push_back(vocab().first_body_id() + rng.below(vocab().size() - vocab().first_body_id()));
      r.word_spans.push_back({b, b + 1});
    }
    r.sentence_spans.push_back({first, r.num_words()});
  }
  return r;
}

tribert::TriBertConfig text_cfg() {
  tribert::TriBertConfig c;
  c.feature_dim = 8;
  c.num_heads = 2;
  c.num_layers = 1;
  c.vocab_size = vocab().size();
  return c;
}

Grid random_grid(std::int64_t d, std::int64_t h, std::int64_t w, Rng& rng) {
  Grid g(d, h, w);
  for (float& v : g.data) v = static_cast<float>(rng.uniform());
  return g;
}

Tensor rand_t(ag::Shape s, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(ag::numel(s)));
  for (double& x : v) x = rng.normal();
  return Tensor::constant(std::move(s), std::move(v));
}

}  // namespace

TEST(MaskTokens, ExactCountAndNoSpecials) {
  Rng rng(1);
  const auto b = tribert::build_tri_batch({words_report(4, 25, rng)}, vocab(), text_cfg());
  Rng m(2);
  const auto masked = mask_tokens(b, vocab(), kMaskRatio, m);
  EXPECT_EQ(masked.positions.size(), 15u);
  std::int64_t labeled = 0;
  for (auto l : masked.labels) labeled += l != ag::kIgnoreIndex;
  EXPECT_EQ(labeled, 15);

  Rng z(3);
  const auto none = mask_tokens(b, vocab(), 0.0, z);
  EXPECT_TRUE(none.positions.empty());
  EXPECT_EQ(none.input_ids, b.token_ids);
  try {
    loss_mlm(Tensor::zeros({0, 5}), none.targets());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoMaskedPositions);
  }
}

TEST(MaskTokens, SpecialsNeverMaskedOver1kBatches) {
  Rng rng(4);
  for (int t = 0; t < 1000; ++t) {
    std::vector<prep::TokenizedReport> reports;
    for (int i = 0; i < 3; ++i)
      reports.push_back(words_report(1 + static_cast<int>(rng.below(5)), 1 + static_cast<int>(rng.below(12)), rng));
    const auto b = tribert::build_tri_batch(reports, vocab(), text_cfg());
    const auto m = mask_tokens(b, vocab(), kMaskRatio, rng);
    for (std::size_t f = 0; f < b.token_ids.size(); ++f) {
      if (b.role[f] != tribert::Role::Word) {
        ASSERT_EQ(m.labels[f], ag::kIgnoreIndex);
        ASSERT_EQ(m.input_ids[f], b.token_ids[f]);
      }
    }
  }
}

TEST(MaskTokens, CorruptionSplit) {
  Rng rng(5);
  std::vector<prep::TokenizedReport> reports;
  for (int i = 0; i < 100; ++i) reports.push_back(words_report(10, 20, rng));  // 20k words
  const auto b = tribert::build_tri_batch(reports, vocab(), text_cfg());
  Rng m(6);
  const auto masked = mask_tokens(b, vocab(), kMaskRatio, m);
  std::map<Corruption, double> count;
  for (auto k : masked.kinds) count[k] += 1.0;
  const double n = static_cast<double>(masked.kinds.size());
  EXPECT_EQ(n, 100 * 30);
  EXPECT_NEAR(count[Corruption::Mask] / n, 0.8, 0.02);
  EXPECT_NEAR(count[Corruption::Random] / n, 0.1, 0.02);
  EXPECT_NEAR(count[Corruption::Keep] / n, 0.1, 0.02);
  for (std::size_t i = 0; i < masked.positions.size(); ++i) {
    const auto f = static_cast<std::size_t>(masked.positions[i]);
    if (masked.kinds[i] == Corruption::Mask) EXPECT_EQ(masked.input_ids[f], prep::Vocabulary::kMask);
    if (masked.kinds[i] == Corruption::Keep) EXPECT_EQ(masked.input_ids[f], b.token_ids[f]);
    if (masked.kinds[i] == Corruption::Random) EXPECT_FALSE(vocab().is_special(masked.input_ids[f]));
  }
}

TEST(MaskTokens, SeparateStreamsDiffer) {
  // 10 maskable words, 2 picks: the two sets agree with probability 1 / C(10, 2).
  Rng rng(7);
  const auto b = tribert::build_tri_batch({words_report(2, 5, rng)}, vocab(), text_cfg());
  const int trials = 5000;
  int differ = 0;
  for (int t = 0; t < trials; ++t) {
    Rng uni(mix_seed(t, "mask_uni")), mm(mix_seed(t, "mask_mm"));
    differ += mask_tokens(b, vocab(), kMaskRatio, uni).positions != mask_tokens(b, vocab(), kMaskRatio, mm).positions;
  }
  EXPECT_NEAR(static_cast<double>(differ) / trials, 1.0 - 1.0 / 45.0, 0.02);
}

TEST(MlmLoss, ClosedFormsAndOracle) {
  const std::int64_t V = 7;
  EXPECT_NEAR(loss_mlm(Tensor::zeros({3, V}), {1, 4, 6}).item(), std::log(7.0), 1e-12);
  std::vector<double> sharp(3 * V, -50.0);
  sharp[0 * V + 1] = sharp[1 * V + 4] = sharp[2 * V + 6] = 50.0;
  EXPECT_LT(loss_mlm(Tensor::constant({3, V}, sharp), {1, 4, 6}).item(), 1e-12);

  Rng rng(8);
  const Tensor logits = rand_t({3, V}, rng);
  const std::vector<std::int64_t> t = {2, ag::kIgnoreIndex, 5};
  double want = 0;
  for (std::int64_t r : {0, 2}) {
    double z = 0;
    for (std::int64_t j = 0; j < V; ++j) z += std::exp(logits.at(r * V + j));
    want += -std::log(std::exp(logits.at(r * V + t[r])) / z);
  }
  EXPECT_NEAR(loss_mlm(logits, t).item(), want / 2, 1e-12);
}

TEST(Rotation, GroupPropertiesAndBijection) {
  Rng rng(9);
  const Grid g = random_grid(3, 5, 5, rng);
  EXPECT_EQ(rotate_xy(g, 0), g);
  EXPECT_EQ(rotate_xy(rotate_xy(g, 1), 3), g);
  Grid r = g;
  for (int i = 0; i < 4; ++i) r = rotate_xy(r, 1);
  EXPECT_EQ(r, g);
  EXPECT_NE(rotate_xy(g, 1), g);
  auto sorted = [](std::vector<float> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  for (int k = 1; k < 4; ++k) EXPECT_EQ(sorted(rotate_xy(g, k).data), sorted(g.data));
  EXPECT_EQ(rotate_xy(g, 1).at(1, 0, 0), g.at(1, 0, 4));
  try {
    rotate_xy(random_grid(2, 3, 4, rng), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NonSquarePlane);
  }
}

TEST(Rotation, LabelsUniform) {
  Rng rng(10);
  const Grid g(1, 2, 2);
  std::array<double, 4> count{};
  for (int t = 0; t < 4000; ++t) count[make_rotation(g, rng).label] += 1;
  double chi2 = 0;
  for (double c : count) chi2 += (c - 1000) * (c - 1000) / 1000;
  EXPECT_LT(chi2, 11.345);  // chi-square, 3 dof, p = 0.01
}

TEST(Inpainting, DropFractionBounds) {
  const Grid g(96, 96, 96, 1.0f);
  const double quantum = 16.0 * 16 * 16 / (96.0 * 96 * 96);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto t = make_inpainting(g, 16, 0.30, rng);
    std::int64_t dropped = 0;
    for (std::size_t i = 0; i < t.dropped.size(); ++i) {
      dropped += t.dropped[i];
      ASSERT_EQ(t.corrupted.data[i], t.dropped[i] ? 0.0f : 1.0f);
    }
    const double f = static_cast<double>(dropped) / static_cast<double>(g.size());
    EXPECT_EQ(f, t.fraction);
    EXPECT_GE(f, 0.30);
    EXPECT_LE(f, 0.30 + quantum);
  }
  Rng rng(1);
  try {
    make_inpainting(g, 10, 0.3, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BadBlockSize);
  }
}

TEST(Inpainting, LossValuesAndMaskedGradient) {
  Rng rng(11);
  const Grid ones(4, 4, 4, 1.0f);
  const auto t = make_inpainting(ones, 2, 0.3, rng);
  const Tensor perfect = Tensor::constant({64, 1}, std::vector<double>(64, 1.0));
  EXPECT_EQ(loss_inp(perfect, {&t}).item(), 0.0);
  EXPECT_NEAR(loss_inp(Tensor::zeros({64, 1}), {&t}).item(), 1.0, 1e-15);
  Tensor p = Tensor::parameter({64, 1}, std::vector<double>(64, 0.3));
  loss_inp(p, {&t}).backward();
  for (std::size_t i = 0; i < 64; ++i)
    if (!t.dropped[i]) EXPECT_EQ(p.grad()[i], 0.0);
    else EXPECT_NE(p.grad()[i], 0.0);
}

TEST(InpaintingHead, VoxelShuffleLayout) {
  Rng rng(12);
  nn::ParamStore store;
  InpaintingHead head(store, "inp", 3, 1, 2, rng);
  const Tensor top = rand_t({2, 3}, rng);
  const Tensor out = head(top, 2);
  ASSERT_EQ(out.shape(), (ag::Shape{16, 1}));
  const Tensor lin = ag::linear(top, store.at("inp.up0.weight"), store.at("inp.up0.bias"));
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t z = 0; z < 2; ++z)
      for (std::int64_t y = 0; y < 2; ++y)
        for (std::int64_t x = 0; x < 2; ++x)
          EXPECT_EQ(out.at(b * 8 + (z * 2 + y) * 2 + x), lin.at(b * 8 + (z * 2 + y) * 2 + x));

  nn::ParamStore s2;
  InpaintingHead deep(s2, "inp", 16, 2, 32, rng);
  EXPECT_EQ(deep(rand_t({8, 16}, rng), 1).shape(), (ag::Shape{32 * 32 * 32, 1}));
}

TEST(ViewContrast, ClosedFormAndMisalignment) {
  std::vector<double> e(4 * 5, 0.0);
  for (int i = 0; i < 4; ++i) e[i * 5 + i] = 1.0;
  const Tensor z = Tensor::constant({4, 5}, e);
  const double aligned = info_nce(z, z, Tensor::scalar(1.0)).item();
  EXPECT_NEAR(aligned, std::log(1.0 + 3.0 / std::exp(1.0)), 1e-12);
  const double shuffled = info_nce(z, ag::gather_rows(z, ag::Index{1, 2, 3, 0}), Tensor::scalar(1.0)).item();
  EXPECT_GT(shuffled, aligned);
  Rng rng(13);
  Tensor a = Tensor::parameter({3, 5}, std::vector<double>(15)), b = Tensor::parameter({3, 5}, std::vector<double>(15));
  for (double& v : a.mutable_data()) v = rng.normal();
  for (double& v : b.mutable_data()) v = rng.normal();
  const auto r = gradcheck([&] { return info_nce(a, b, Tensor::scalar(1 / 0.3)); }, {a, b});
  EXPECT_LT(r.max_rel_err, 1e-4);
}

namespace {

struct VisToy {
  nn::ParamStore store;
  Rng rng{14};
  VisionSslHeads heads;
  vision3d::VisionPyramid pyr;
  std::vector<SslView> views;
  Tensor top;

  VisToy() {
    heads = VisionSslHeads(store, "ssl", 3, 1, 4, 3, rng);
    for (auto& [name, t] : store.all()) {
      auto v = store.at(name).mutable_data();
      if (name.find("log_tau") == std::string::npos)
        for (double& x : v) x = rng.uniform(-1, 1);
    }
    const std::int64_t n = 6;  // three scans, two views each
    SslConfig cfg;
    cfg.augment.crop = 4;
    cfg.augment.out = 4;
    cfg.block = 2;
    const Grid vol = random_grid(4, 4, 4, rng);
    for (int i = 0; i < n; ++i) views.push_back(make_ssl_view(vol, cfg, rng));
    std::vector<double> tv(static_cast<std::size_t>(n * 3));
    for (double& x : tv) x = rng.normal();
    top = Tensor::parameter({n, 3}, tv);
    pyr.n = n;
    pyr.res_top = 1;
  }

  Tensor run(const VisFlags& f) {
    pyr.top = top;
    pyr.pooled_top = top;
    return heads.loss(pyr, views, f).total;
  }
};

}  // namespace

TEST(VisLoss, CompositionAndGradients) {
  VisToy toy;
  toy.pyr.top = toy.pyr.pooled_top = toy.top;
  const auto all = toy.heads.loss(toy.pyr, toy.views);
  EXPECT_NEAR(all.total.item(), all.inp.item() + all.rot.item() + all.con.item(), 1e-12);
  const auto no_rot = toy.heads.loss(toy.pyr, toy.views, {true, false, true});
  EXPECT_FALSE(no_rot.rot.defined());
  EXPECT_NEAR(no_rot.total.item(), all.inp.item() + all.con.item(), 1e-12);

  std::vector<Tensor> params = {toy.top};
  for (auto& [_, t] : toy.store.all()) params.push_back(t);
  for (const VisFlags f : {VisFlags{true, false, false}, VisFlags{false, true, false}, VisFlags{false, false, true}, VisFlags{}}) {
    const auto r = gradcheck([&] { return toy.run(f); }, params);
    EXPECT_LT(r.max_rel_err, 1e-4);
  }
  // additivity of gradients w.r.t. the shared feature map
  auto grad = [&](const VisFlags& f) {
    toy.store.zero_grad();
    toy.top.zero_grad();
    toy.run(f).backward();
    return std::vector<double>(toy.top.grad().begin(), toy.top.grad().end());
  };
  const auto g = grad({});
  const auto gi = grad({true, false, false}), gr = grad({false, true, false}), gc = grad({false, false, true});
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], gi[i] + gr[i] + gc[i], 1e-12);
}
