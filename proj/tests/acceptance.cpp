// Acceptance runner: one PASS/FAIL line per criterion.
//
//   velvet_acceptance [--strict] [--only N[,N...]]
//
// Exit status is 0 once every criterion has run and reported. With --strict
// any FAIL line makes the exit status 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "support/reference.hpp"
#include "support/window_reference.hpp"
#include "velvet/error.hpp"
#include "velvet/harness/retrieval.hpp"
#include "velvet/harness/train.hpp"
#include "velvet/objectives/cm.hpp"
#include "velvet/objectives/mm.hpp"
#include "velvet/objectives/uni.hpp"
#include "velvet/vision3d/swin3d.hpp"

using namespace velvet;
using namespace velvet::testing;
using ag::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

const prep::Vocabulary& vocab() { return prep::Vocabulary::builtin(); }

prep::TokenizedReport make_report(const std::vector<std::vector<int>>& pieces, Rng& rng) {
  prep::TokenizedReport r;
  for (const auto& sent : pieces) {
    const auto first = r.num_words();
    for (int np : sent) {
      const auto b = static_cast<std::int64_t>(r.token_ids.size());
      for (int k = 0; k < np; ++k)
        r.token_ids.push_back(vocab().first_body_id() +
                              static_cast<std::int64_t>(rng.below(vocab().size() - vocab().first_body_id())));
      r.word_spans.push_back({b, static_cast<std::int64_t>(r.token_ids.size())});
    }
    r.sentence_spans.push_back({first, r.num_words()});
  }
  return r;
}

prep::TokenizedReport random_report(Rng& rng, int min_sent = 1, int max_sent = 6, int max_words = 5) {
  std::vector<std::vector<int>> p(min_sent + rng.below(max_sent - min_sent + 1));
  for (auto& s : p) {
    s.resize(1 + rng.below(max_words));
    for (int& w : s) w = 1 + static_cast<int>(rng.below(3));
  }
  return make_report(p, rng);
}

tribert::TriBertConfig text_cfg(std::int64_t dim, std::int64_t heads, std::int64_t layers) {
  tribert::TriBertConfig c;
  c.feature_dim = dim;
  c.num_heads = heads;
  c.num_layers = layers;
  c.max_len = 1024;
  c.vocab_size = vocab().size();
  c.ffn_mult = 2;
  return c;
}

Tensor rand_t(ag::Shape s, Rng& rng, bool param = false) {
  std::vector<double> v(static_cast<std::size_t>(ag::numel(s)));
  for (double& x : v) x = rng.normal();
  return param ? Tensor::parameter(std::move(s), std::move(v)) : Tensor::constant(std::move(s), std::move(v));
}

Tensor uniform_param(ag::Shape s, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(ag::numel(s)));
  for (double& x : v) x = rng.uniform(-1, 1);
  return Tensor::parameter(std::move(s), std::move(v));
}

// Unit-scale weights keep central differences well conditioned; temperatures
// are left at their initial value.
void randomize(nn::ParamStore& store, Rng& rng) {
  for (const auto& [name, _] : store.all()) {
    auto v = store.at(name).mutable_data();
    if (name.find("log_tau") != std::string::npos) continue;
    for (double& x : v) x = rng.uniform(-1, 1);
  }
}

vision3d::Grid random_grid(std::int64_t d, std::int64_t h, std::int64_t w, Rng& rng) {
  vision3d::Grid g(d, h, w);
  for (float& v : g.data) v = static_cast<float>(rng.uniform());
  return g;
}

std::vector<Tensor> params_of(const nn::ParamStore& store) {
  std::vector<Tensor> out;
  for (const auto& [_, t] : store.all()) out.push_back(t);
  return out;
}

Tensor eye(std::int64_t n, std::int64_t d) {
  std::vector<double> v(static_cast<std::size_t>(n * d), 0.0);
  for (std::int64_t i = 0; i < n; ++i) v[i * d + i] = 1.0;
  return Tensor::constant({n, d}, v);
}

// ---------------------------------------------------------------------------

Outcome mask_correctness() {
  Rng rng(101);
  const auto cfg = text_cfg(8, 2, 1);
  std::int64_t checked = 0, wrong = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<prep::TokenizedReport> reports;
    const int n = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < n; ++i) reports.push_back(random_report(rng));
    const auto b = tribert::build_tri_batch(reports, vocab(), cfg);
    for (int i = 0; i < n; ++i) {
      // Real positions, sentence-token positions and each sentence's columns
      // are laid out from the report directly.
      const auto& r = reports[static_cast<std::size_t>(i)];
      std::set<std::int64_t> real;
      std::map<std::int64_t, std::set<std::int64_t>> sentence_cols;
      std::int64_t p = 0;
      real.insert(p++);
      for (const auto& s : r.sentence_spans) {
        const auto sp = p;
        std::set<std::int64_t> cols = {0, sp};
        real.insert(p++);
        const auto ntok = r.word_spans[s.end - 1].end - r.word_spans[s.begin].begin;
        for (std::int64_t t = 0; t < ntok; ++t) {
          cols.insert(p);
          real.insert(p++);
        }
        sentence_cols[sp] = cols;
      }
      for (std::int64_t q = 0; q < b.len; ++q) {
        std::set<std::int64_t> expect;
        if (sentence_cols.count(q)) expect = sentence_cols[q];
        else if (real.count(q)) expect = real;
        for (std::int64_t k = 0; k < b.len; ++k) {
          ++checked;
          wrong += b.attn_mask->at(i, q, k) != (expect.count(k) == 1);
        }
      }
    }
  }
  return {wrong == 0, fmt("200 segmentations, %lld entries, %lld differ", (long long)checked, (long long)wrong)};
}

Outcome sentence_isolation() {
  Rng rng(102);
  const auto cfg = text_cfg(8, 2, 1);
  nn::ParamStore store;
  tribert::TriBert enc(store, "text", cfg, rng);
  std::int64_t grad_leaks = 0, moved_outputs = 0, cases = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = random_report(rng, 2, 5);
    const auto b = tribert::build_tri_batch({r}, vocab(), cfg);
    const Tensor e = enc.embed(b).detach();
    const auto c = cfg.feature_dim;
    for (std::int64_t target = 0; target < r.num_sentences(); ++target) {
      ++cases;
      Tensor leaf = Tensor::parameter(e.shape(), std::vector<double>(e.data().begin(), e.data().end()));
      const auto f = tribert::extract_features(b, enc.run_layers(leaf, b));
      ag::sum(ag::slice_rows(f.sent, target, target + 1)).backward();
      auto other = [&](std::int64_t p) {
        return p != 0 && b.sentence_type_ids[static_cast<std::size_t>(p)] != target + 1;
      };
      for (std::int64_t p = 0; p < b.len; ++p)
        if (other(p))
          for (std::int64_t j = 0; j < c; ++j) grad_leaks += leaf.grad()[p * c + j] != 0.0;
      std::vector<double> moved(e.data().begin(), e.data().end());
      for (std::int64_t p = 0; p < b.len; ++p)
        if (other(p))
          for (std::int64_t j = 0; j < c; ++j) moved[p * c + j] += rng.normal();
      const auto g = tribert::extract_features(b, enc.run_layers(Tensor::constant(e.shape(), moved), b));
      for (std::int64_t j = 0; j < c; ++j) moved_outputs += g.sent.at(target * c + j) != f.sent.at(target * c + j);
    }
  }
  return {grad_leaks == 0 && moved_outputs == 0,
          fmt("%lld sentences, %lld nonzero cross-sentence grads, %lld perturbed outputs", (long long)cases,
              (long long)grad_leaks, (long long)moved_outputs)};
}

// --- gradient suite --------------------------------------------------------

struct CmToy {
  nn::ParamStore store;
  Rng rng{103};
  objectives::CrossModalHeads heads;
  vision3d::VisionPyramid pyr;
  tribert::TextFeatureSet text;

  CmToy() {
    heads = objectives::CrossModalHeads(store, "cm", 3, 3, 3, 3, 2, rng);
    const std::int64_t n = 3;
    pyr.n = n;
    pyr.res_bot = 2;
    pyr.res_mid = 2;
    pyr.res_top = 1;
    pyr.bot = rand_t({n * 8, 3}, rng);
    pyr.mid = rand_t({n * 8, 3}, rng);
    pyr.top = rand_t({n, 3}, rng);
    pyr.pooled_top = pyr.top;
    text.n = n;
    text.n_sent = 2;
    text.n_word = 3;
    text.rep = rand_t({n, 3}, rng);
    text.sent = rand_t({n * 2, 3}, rng);
    text.sent_valid = {1, 1, 1, 0, 1, 1};
    text.word = rand_t({n * 3, 3}, rng);
    text.word_valid = {1, 1, 0, 1, 0, 0, 1, 1, 1};
    for (const auto& [name, _] : store.all()) {
      auto v = store.at(name).mutable_data();
      if (name.find("log_tau") != std::string::npos) v[0] = std::log(0.5);
      else for (double& x : v) x = rng.uniform(-1, 1);
    }
  }
  Tensor run(const objectives::CmFlags& f) { return heads.loss(heads.project(pyr, text, f), f).total; }
};

struct VisToy {
  nn::ParamStore store;
  Rng rng{104};
  objectives::VisionSslHeads heads;
  vision3d::VisionPyramid pyr;
  std::vector<objectives::SslView> views;
  Tensor top;

  VisToy() {
    heads = objectives::VisionSslHeads(store, "ssl", 3, 1, 4, 3, rng);
    randomize(store, rng);
    const std::int64_t n = 6;
    objectives::SslConfig cfg;
    cfg.augment.crop = 4;
    cfg.augment.out = 4;
    cfg.block = 2;
    const auto vol = random_grid(4, 4, 4, rng);
    for (int i = 0; i < n; ++i) views.push_back(objectives::make_ssl_view(vol, cfg, rng));
    top = rand_t({n, 3}, rng, true);
    pyr.n = n;
    pyr.res_top = 1;
  }
  Tensor run(const objectives::VisFlags& f) {
    pyr.top = pyr.pooled_top = top;
    return heads.loss(pyr, views, f).total;
  }
};

// Finite differences on the `count` parameter entries with the largest
// analytic gradient.
GradCheck gradcheck_top_entries(const std::function<Tensor()>& loss, nn::ParamStore& store, int count) {
  store.zero_grad();
  loss().backward();
  struct Entry {
    std::string name;
    std::size_t i;
    double g;
  };
  std::vector<Entry> all;
  for (const auto& [n, t] : store.all())
    for (std::size_t i = 0; i < t.grad().size(); ++i) all.push_back({n, i, t.grad()[i]});
  std::partial_sort(all.begin(), all.begin() + std::min<std::size_t>(count, all.size()), all.end(),
                    [](const Entry& a, const Entry& b) { return std::abs(a.g) > std::abs(b.g); });
  all.resize(std::min<std::size_t>(count, all.size()));
  GradCheck out;
  const double h = 1e-5;
  for (const auto& e : all) {
    auto v = store.at(e.name).mutable_data();
    const double saved = v[e.i];
    auto at = [&](double dx) {
      ag::NoGradGuard guard;
      v[e.i] = saved + dx;
      return loss().item();
    };
    // Five-point stencil: the curvature at 0.02-scale init is large enough
    // that the plain central difference is off by ~1e-3 at this h.
    const double numeric = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
    v[e.i] = saved;
    const double err = std::abs(numeric - e.g);
    out.max_abs_err = std::max(out.max_abs_err, err);
    out.max_rel_err = std::max(out.max_rel_err, err / std::max(std::abs(numeric), std::abs(e.g)));
    ++out.entries;
  }
  return out;
}

Outcome gradient_suite() {
  std::vector<std::pair<std::string, GradCheck>> results;

  {
    CmToy toy;
    const auto params = params_of(toy.store);
    results.push_back({"cm_top", gradcheck([&] { return toy.run({true, false, false}); }, params)});
    results.push_back({"cm_mid", gradcheck([&] { return toy.run({false, true, false}); }, params)});
    results.push_back({"cm_bot", gradcheck([&] { return toy.run({false, false, true}); }, params)});
  }
  {
    Rng rng(105);
    nn::ParamStore store;
    const std::int64_t V = 6;
    tribert::MlmHead head(store, "mlm", 4, V, rng);
    randomize(store, rng);
    Tensor states = rand_t({5, 4}, rng, true);
    const std::vector<std::int64_t> targets = {1, ag::kIgnoreIndex, 3, 5, 0};
    auto params = params_of(store);
    params.push_back(states);
    results.push_back({"mlm", gradcheck([&] { return objectives::loss_mlm(head(states), targets); }, params)});
  }
  {
    Rng rng(106);
    const auto b = tribert::build_tri_batch({random_report(rng, 1, 2, 2), random_report(rng, 1, 2, 2)}, vocab(),
                                            text_cfg(4, 1, 1));
    nn::ParamStore store;
    objectives::MultiModalHeads heads(store, "mm", 4, 3, 6, {1, 1, 1}, rng);
    randomize(store, rng);
    Tensor text = uniform_param({b.n * b.len, 4}, rng);
    Tensor vision = uniform_param({2 * 2, 3}, rng);
    objectives::MaskedText m;
    m.positions = {1, b.len + 2};
    m.labels.assign(static_cast<std::size_t>(b.n * b.len), ag::kIgnoreIndex);
    m.labels[1] = 3;
    m.labels[static_cast<std::size_t>(b.len + 2)] = 5;
    const std::vector<objectives::Pair> neg = {{1, 0}, {0, 1}};
    auto params = params_of(store);
    params.push_back(text);
    params.push_back(vision);
    results.push_back({"mm_match", gradcheck([&] { return heads.loss_match(text, b, vision, 2, neg); }, params)});
    results.push_back({"mm_mlm", gradcheck([&] { return heads.loss_mlm(text, b, vision, 2, m); }, params)});
  }
  {
    VisToy toy;
    auto params = params_of(toy.store);
    params.push_back(toy.top);
    results.push_back({"inp", gradcheck([&] { return toy.run({true, false, false}); }, params)});
    results.push_back({"rot", gradcheck([&] { return toy.run({false, true, false}); }, params)});
    results.push_back({"con", gradcheck([&] { return toy.run({false, false, true}); }, params)});
  }
  {
    // Whole objective on the smallest model, checked on the ten entries with
    // the largest gradient.
    auto cfg = harness::tiny_config();
    cfg.batch_size = 3;
    const auto data = harness::to_dataset(harness::synth_dataset(3, 3), cfg.vision_in_size, vocab());
    harness::Model model(cfg, vocab());
    const auto in = harness::make_step_inputs(cfg, model, data, {0, 1, 2}, 77);
    auto loss = [&] {
      Rng mining(5);
      return harness::forward_losses(model, cfg, in, 0, mining).bundle.total;
    };
    results.push_back({"total", gradcheck_top_entries(loss, model.store, 10)});
  }

  bool pass = true;
  std::string detail;
  for (const auto& [name, r] : results) {
    const bool ok = r.entries > 0 && r.max_rel_err < 1e-4;
    pass = pass && ok;
    detail += fmt("%s%s %.1e/%d", detail.empty() ? "" : ", ", name.c_str(), r.max_rel_err, r.entries);
  }
  return {pass, "max rel err/entries: " + detail};
}

// --- attention oracles -----------------------------------------------------

double tribert_layer_diff() {
  Rng rng(107);
  const auto cfg = text_cfg(8, 2, 1);
  nn::ParamStore store;
  tribert::TriBert enc(store, "text", cfg, rng);
  const auto b = tribert::build_tri_batch({random_report(rng), random_report(rng), random_report(rng)}, vocab(), cfg);
  const auto f = enc.encode(b);
  const auto e = enc.embed(b);
  auto P = [&](const std::string& s) { return store.at("text.layer0." + s); };
  const std::int64_t c = cfg.feature_dim;
  double worst = 0;
  for (std::int64_t i = 0; i < b.n; ++i) {
    const Mat x = rows_of(e, i * b.len, b.len);
    Mat k, v;
    for (const auto& row : x) {
      const auto h = ref_ln(row, P("ln1.gamma"), P("ln1.beta"));
      k.push_back(ref_linear(h, P("attn.k.weight"), P("attn.k.bias")));
      v.push_back(ref_linear(h, P("attn.v.weight"), P("attn.v.bias")));
    }
    for (std::int64_t q = 0; q < b.len; ++q) {
      if (b.role[static_cast<std::size_t>(b.flat(i, q))] == tribert::Role::Pad) continue;
      const auto qv = ref_linear(ref_ln(x[q], P("ln1.gamma"), P("ln1.beta")), P("attn.q.weight"), P("attn.q.bias"));
      const auto ctx = ref_attend(
          qv, k, v, cfg.num_heads, [&](std::size_t kk) { return b.attn_mask->at(i, q, static_cast<std::int64_t>(kk)); },
          [](std::int64_t, std::size_t) { return 0.0; });
      const auto y = ref_add(ref_linear(ctx, P("attn.out.weight"), P("attn.out.bias")), x[q]);
      const auto hid =
          ref_gelu(ref_linear(ref_ln(y, P("ln2.gamma"), P("ln2.beta")), P("ffn.fc1.weight"), P("ffn.fc1.bias")));
      const auto out = ref_add(ref_linear(hid, P("ffn.fc2.weight"), P("ffn.fc2.bias")), y);
      for (std::int64_t j = 0; j < c; ++j)
        worst = std::max(worst, std::abs(f.token_states.at((i * b.len + q) * c + j) - out[j]));
    }
  }
  return worst;
}

double window_block_diff() {
  double worst = 0;
  for (bool shifted : {false, true}) {
    Rng rng(108);
    nn::ParamStore store;
    const std::int64_t res = 8, dim = 8, heads = 2;
    vision3d::SwinBlock3D blk(store, "blk", dim, heads, res, 4, shifted, 2, rng);
    for (const char* n : {"blk.rel_bias", "blk.attn.q.weight", "blk.attn.k.weight"})
      for (double& w : store.at(n).mutable_data()) w = rng.uniform(-0.5, 0.5);
    const Tensor x = rand_t({res * res * res, dim}, rng);
    const Tensor y = blk(x, 1);
    const Mat ref = reference_block(rows_of(x, 0, res * res * res), store, "blk", res, 4, shifted ? 2 : 0, heads);
    for (std::int64_t p = 0; p < res * res * res; ++p)
      for (std::int64_t j = 0; j < dim; ++j) worst = std::max(worst, std::abs(y.at(p * dim + j) - ref[p][j]));
  }
  return worst;
}

double contextualizer_diff() {
  Rng rng(109);
  const std::int64_t n = 2, k = 4, t = 5, c = 6;
  const Tensor q = rand_t({n * k, c}, rng), ctx = rand_t({n * t, c}, rng);
  const std::vector<std::uint8_t> valid = {1, 1, 0, 1, 1, 1, 1, 0};
  const Tensor out = objectives::contextualize(q, n, k, valid, ctx, t);
  double worst = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const Mat mem = rows_of(ctx, i * t, t);
    for (std::int64_t r = 0; r < k; ++r) {
      const auto row = i * k + r;
      const Vec want = valid[static_cast<std::size_t>(row)] ? ref_attend(rows_of(q, row, 1)[0], mem, mem, 1)
                                                            : Vec(static_cast<std::size_t>(c), 0.0);
      for (std::int64_t j = 0; j < c; ++j) worst = std::max(worst, std::abs(out.at(row * c + j) - want[j]));
    }
  }
  return worst;
}

double decoder_block_diff() {
  Rng rng(110);
  const std::int64_t c = 8, H = 2, cv = 6, lv = 5;
  const auto b = tribert::build_tri_batch({random_report(rng), random_report(rng)}, vocab(), text_cfg(c, H, 1));
  nn::ParamStore store;
  objectives::MultiModalEncoder enc(store, "mm", c, cv, {1, H, 2}, rng);
  randomize(store, rng);
  const Tensor text = rand_t({b.n * b.len, c}, rng);
  const Tensor vision = rand_t({2 * lv, cv}, rng);
  const std::vector<objectives::Pair> pairs = {{0, 0}, {1, 1}, {1, 0}, {0, 1}};
  const Tensor fused = enc(text, b, vision, lv, pairs);
  auto P = [&](const std::string& s) { return store.at("mm.layer0." + s); };
  double worst = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto ti = pairs[p].text, vi = pairs[p].vision;
    const Mat x = rows_of(text, ti * b.len, b.len);
    const Mat mem = rows_of(vision, vi * lv, lv);
    Mat k, v, ck, cvv;
    for (const auto& row : x) {
      const auto h = ref_ln(row, P("ln1.gamma"), P("ln1.beta"));
      k.push_back(ref_linear(h, P("attn.k.weight"), P("attn.k.bias")));
      v.push_back(ref_linear(h, P("attn.v.weight"), P("attn.v.bias")));
    }
    for (const auto& row : mem) {
      ck.push_back(ref_linear(row, P("cross.k.weight"), P("cross.k.bias")));
      cvv.push_back(ref_linear(row, P("cross.v.weight"), P("cross.v.bias")));
    }
    for (std::int64_t q = 0; q < b.len; ++q) {
      if (b.role[static_cast<std::size_t>(b.flat(ti, q))] == tribert::Role::Pad) continue;
      const auto qv = ref_linear(ref_ln(x[q], P("ln1.gamma"), P("ln1.beta")), P("attn.q.weight"), P("attn.q.bias"));
      const auto att = ref_attend(
          qv, k, v, H, [&](std::size_t kk) { return b.attn_mask->at(ti, q, static_cast<std::int64_t>(kk)); },
          [](std::int64_t, std::size_t) { return 0.0; });
      auto y = ref_add(ref_linear(att, P("attn.out.weight"), P("attn.out.bias")), x[q]);
      const auto cq =
          ref_linear(ref_ln(y, P("ln_cross.gamma"), P("ln_cross.beta")), P("cross.q.weight"), P("cross.q.bias"));
      y = ref_add(ref_linear(ref_attend(cq, ck, cvv, H), P("cross.out.weight"), P("cross.out.bias")), y);
      const auto hid =
          ref_gelu(ref_linear(ref_ln(y, P("ln2.gamma"), P("ln2.beta")), P("ffn.fc1.weight"), P("ffn.fc1.bias")));
      const auto out = ref_add(ref_linear(hid, P("ffn.fc2.weight"), P("ffn.fc2.bias")), y);
      for (std::int64_t j = 0; j < c; ++j)
        worst = std::max(worst, std::abs(fused.at((static_cast<std::int64_t>(p) * b.len + q) * c + j) - out[j]));
    }
  }
  return worst;
}

Outcome attention_oracles() {
  const double a = tribert_layer_diff(), w = window_block_diff(), x = contextualizer_diff(), d = decoder_block_diff();
  const double worst = std::max({a, w, x, d});
  return {worst < 1e-5, fmt("max abs diff: text layer %.1e, window block %.1e, contextualizer %.1e, decoder %.1e", a,
                            w, x, d)};
}

// ---------------------------------------------------------------------------

Outcome retrieval_oracle() {
  Rng rng(111);
  const std::vector<std::int64_t> ks = {1, 5, 10};
  int mismatches = 0, sets = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t n = 2 + rng.below(63), d = 1 + rng.below(8);
    const bool coarse = trial % 2 == 0;  // small integer values force ties
    harness::Embeddings e{n, d, {}, {}};
    for (std::int64_t i = 0; i < n * d; ++i) {
      e.scans.push_back(coarse ? static_cast<double>(rng.below(3)) : rng.normal());
      e.reports.push_back(coarse ? static_cast<double>(rng.below(3)) : rng.normal());
    }
    const auto r = harness::recall_at_k(e, ks);
    for (int dir = 0; dir < 2; ++dir) {
      const auto& q = dir == 0 ? e.scans : e.reports;
      const auto& c = dir == 0 ? e.reports : e.scans;
      std::vector<double> hits(ks.size(), 0.0);
      for (std::int64_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::int64_t>> order;
        for (std::int64_t j = 0; j < n; ++j) {
          double s = 0;
          for (std::int64_t k = 0; k < d; ++k) s += q[i * d + k] * c[j * d + k];
          order.push_back({s, j});
        }
        std::stable_sort(order.begin(), order.end(), [](auto& a, auto& b) { return a.first > b.first; });
        for (std::size_t k = 0; k < ks.size(); ++k)
          for (std::int64_t p = 0; p < std::min(ks[k], n); ++p) hits[k] += order[p].second == i;
      }
      const auto& got = dir == 0 ? r.srr : r.rsr;
      for (std::size_t k = 0; k < ks.size(); ++k) mismatches += got[k] != hits[k] / static_cast<double>(n);
    }
    ++sets;
  }
  return {mismatches == 0, fmt("%d embedding sets (N <= 64), both directions, %d recall values differ", sets, mismatches)};
}

Outcome closed_forms() {
  const std::int64_t N = 6, V = vocab().size();
  Rng rng(112);
  const Tensor row = rand_t({1, 5}, rng);
  const Tensor same = ag::concat_rows(std::vector<Tensor>(N, row));
  const double ln_n = objectives::info_nce(same, same, Tensor::scalar(1 / 0.07)).item();
  const double ln_v = objectives::loss_mlm(Tensor::zeros({3, V}), {4, 9, V - 1}).item();
  const double ln_2 = objectives::loss_match(Tensor::zeros({6, 1}), {1, 1, 1, 0, 0, 0}).item();

  const double ortho = objectives::info_nce(eye(4, 6), eye(4, 6), Tensor::scalar(1.0)).item();
  // Scalar softmax over the 4x4 similarity matrix, both directions.
  double oracle = 0;
  for (int dir = 0; dir < 2; ++dir)
    for (int i = 0; i < 4; ++i) {
      double z = 0;
      for (int j = 0; j < 4; ++j) z += std::exp(i == j ? 1.0 : 0.0);
      oracle += -std::log(std::exp(1.0) / z);
    }
  oracle /= 8.0;

  const bool pass = std::abs(ln_n - std::log(double(N))) < 1e-6 && std::abs(ln_v - std::log(double(V))) < 1e-6 &&
                    std::abs(ln_2 - std::log(2.0)) < 1e-6 && std::abs(ortho - oracle) < 1e-4;
  return {pass, fmt("ln N err %.1e, ln V err %.1e, ln 2 err %.1e; orthonormal N=4 tau=1: %.6f vs oracle %.6f "
                    "(closed form ln(1+3/e); 0.7828 does not satisfy it)",
                    std::abs(ln_n - std::log(double(N))), std::abs(ln_v - std::log(double(V))),
                    std::abs(ln_2 - std::log(2.0)), ortho, oracle)};
}

Outcome preprocessing_determinism() {
  int index_errors = 0;
  for (std::int64_t s : {97, 120, 192, 1210}) {
    const auto idx = vision3d::uniform_slice_indices(s, 96);
    if (idx.size() != 96u) {
      ++index_errors;
      continue;
    }
    for (std::int64_t k = 0; k < 96; ++k)
      index_errors += idx[k] != static_cast<std::int64_t>(std::nearbyint(double(k) * double(s - 1) / 95.0));
  }

  // Synthetic corpus with slice counts spread around the threshold.
  auto samples = harness::synth_dataset(60, 113, 8);
  Rng rng(113);
  int filter_errors = 0;
  std::set<std::string> short_ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& rec = samples[i].record;
    const std::int64_t s = i < 12 ? std::vector<std::int64_t>{1, 20, 46, 47, 48, 49, 50, 95, 96, 97, 150, 200}[i]
                                  : 1 + static_cast<std::int64_t>(rng.below(160));
    vision3d::Grid g(s, rec.slices.h, rec.slices.w);
    for (std::int64_t z = 0; z < s; ++z)
      for (std::int64_t y = 0; y < g.h; ++y)
        for (std::int64_t x = 0; x < g.w; ++x) g.at(z, y, x) = rec.slices.at(z % rec.slices.d, y, x);
    rec.slices = std::move(g);
    filter_errors += vision3d::filter_record(rec).accepted != (s >= 48);
    if (s < 48) short_ids.insert(samples[i].record.id);
  }

  // The same rule through the preparation pipeline on a small slice of it.
  const auto dir = fs::temp_directory_path() / "velvet_acceptance_prep";
  fs::remove_all(dir);
  std::vector<harness::SynthSample> few(samples.begin(), samples.begin() + 12);
  harness::write_raw_dataset(dir / "raw", few);
  { std::ofstream(dir / "exclude.txt"); }
  const auto summary = harness::prepare_dataset(dir / "raw", dir / "out", dir / "exclude.txt", vocab());
  std::int64_t expect_rejected = 0;
  for (const auto& s : few) expect_rejected += short_ids.count(s.record.id);
  const bool pipeline_ok = summary.rejected == expect_rejected &&
                           summary.kept == static_cast<std::int64_t>(few.size()) - expect_rejected;
  fs::remove_all(dir);

  return {index_errors == 0 && filter_errors == 0 && pipeline_ok,
          fmt("slice index mismatches %d; filter disagreements %d of %zu; pipeline rejected %lld of %zu (expected %lld)",
              index_errors, filter_errors, samples.size(), (long long)summary.rejected, few.size(),
              (long long)expect_rejected)};
}

Outcome ssl_integrity() {
  Rng rng(114);
  int rotation_errors = 0;
  for (int t = 0; t < 20; ++t) {
    const std::int64_t side = 1 + rng.below(7);
    const auto g = random_grid(1 + rng.below(4), side, side, rng);
    auto r = g;
    for (int i = 0; i < 4; ++i) r = objectives::rotate_xy(r, 1);
    rotation_errors += !(r == g);
  }

  const vision3d::Grid cube(96, 96, 96, 1.0f);
  const double quantum = 16.0 * 16 * 16 / (96.0 * 96 * 96);
  double lo = 1, hi = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng r(seed);
    const auto task = objectives::make_inpainting(cube, 16, 0.30, r);
    std::int64_t dropped = 0;
    for (auto d : task.dropped) dropped += d;
    const double f = double(dropped) / double(cube.size());
    lo = std::min(lo, f);
    hi = std::max(hi, f);
  }
  const bool drop_ok = lo >= 0.30 && hi <= 0.30 + quantum;

  const auto cfg = text_cfg(8, 2, 1);
  std::int64_t special_hits = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<prep::TokenizedReport> reports;
    for (int i = 0; i < 3; ++i) reports.push_back(random_report(rng, 1, 5, 12));
    const auto b = tribert::build_tri_batch(reports, vocab(), cfg);
    const auto m = objectives::mask_tokens(b, vocab(), objectives::kMaskRatio, rng);
    for (std::size_t f = 0; f < b.token_ids.size(); ++f)
      if (b.role[f] != tribert::Role::Word)
        special_hits += m.labels[f] != ag::kIgnoreIndex || m.input_ids[f] != b.token_ids[f];
  }

  std::vector<prep::TokenizedReport> big;
  for (int i = 0; i < 100; ++i) big.push_back(make_report(std::vector<std::vector<int>>(10, std::vector<int>(20, 1)), rng));
  const auto b = tribert::build_tri_batch(big, vocab(), text_cfg(8, 2, 1));
  const auto m = objectives::mask_tokens(b, vocab(), objectives::kMaskRatio, rng);
  std::map<objectives::Corruption, double> count;
  for (auto k : m.kinds) count[k] += 1;
  const double n = double(m.kinds.size());
  const double pm = count[objectives::Corruption::Mask] / n, pr = count[objectives::Corruption::Random] / n,
               pk = count[objectives::Corruption::Keep] / n;
  const bool split_ok = std::abs(pm - 0.8) <= 0.02 && std::abs(pr - 0.1) <= 0.02 && std::abs(pk - 0.1) <= 0.02;

  return {rotation_errors == 0 && drop_ok && special_hits == 0 && split_ok,
          fmt("rot^4 failures %d; drop fraction [%.4f, %.4f] vs [0.30, %.4f]; special tokens touched %lld; "
              "split %.3f/%.3f/%.3f over %.0f picks",
              rotation_errors, lo, hi, 0.30 + quantum, (long long)special_hits, pm, pr, pk, n)};
}

harness::RunConfig overfit_config() {
  auto c = harness::tiny_config();
  c.batch_size = 8;
  c.max_steps = 300;
  c.lr = 5e-4;
  c.text_dim = 128;
  c.text_layers = 2;
  c.text_heads = 4;
  c.mm_heads = 4;
  c.proj_dim = 32;
  c.vision_embed_dim = 8;
  return c;
}

Outcome end_to_end_overfit() {
  const auto cfg = overfit_config();
  const auto data = harness::to_dataset(harness::synth_dataset(8, 1), cfg.vision_in_size, vocab());
  harness::Trainer t(cfg, vocab(), data);
  const auto t0 = std::chrono::steady_clock::now();
  harness::StepRecord first = t.step(), last = first;
  while (!t.done()) last = t.step();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto rep = harness::eval_retrieval(t.model(), data, {1});
  const double drop = 1.0 - last.total / first.total;
  std::string parts;
  for (std::size_t i = 0; i < harness::kNumComponents; ++i)
    parts += " " + std::string(harness::kComponentNames[i]) + fmt("=%.3f", last.parts[i].value_or(NAN));
  return {drop >= 0.90 && rep.srr[0] == 1.0 && rep.rsr[0] == 1.0 && secs < 900,
          fmt("%lld steps in %.0f s; total %.3f -> %.3f (drop %.1f%%, need 90%%); SRR R@1 %.3f, RSR R@1 %.3f; final:",
              (long long)last.step, secs, first.total, last.total, 100 * drop, rep.srr[0], rep.rsr[0]) +
              parts};
}

Outcome ablation_plumbing() {
  using harness::Component;
  const std::vector<std::pair<const char*, std::vector<Component>>> regimes = {
      {"cm_top", {Component::CmTop}},
      {"cm_top+mm", {Component::CmTop, Component::MmMatch, Component::MmMlm}},
      {"full",
       {Component::CmTop, Component::CmMid, Component::CmBot, Component::MmMatch, Component::MmMlm, Component::LanMlm,
        Component::VisInp, Component::VisRot, Component::VisCon}}};
  const auto data = harness::to_dataset(harness::synth_dataset(6, 3), harness::tiny_config().vision_in_size, vocab());
  bool pass = true;
  std::string detail;
  for (const auto& [name, comps] : regimes) {
    auto c = harness::tiny_config();
    c.batch_size = 3;
    c.max_steps = 5;
    c.enable_only(comps);
    const auto t0 = std::chrono::steady_clock::now();
    harness::Trainer t(c, vocab(), data);
    int bad = 0;
    while (!t.done()) {
      const auto rec = t.step();
      // Presence in the record and a non-empty cell in the metrics row must
      // both follow the flags.
      std::vector<std::string> cells;
      std::stringstream ss(harness::metrics_row(rec));
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      cells.resize(harness::kNumComponents + 3);
      for (std::size_t i = 0; i < harness::kNumComponents; ++i) {
        const bool on = std::count(comps.begin(), comps.end(), static_cast<Component>(i)) == 1;
        bad += rec.parts[i].has_value() != on || cells[2 + i].empty() == on;
      }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    pass = pass && bad == 0 && secs < 60;
    detail += fmt("%s%s: %d wrong cells, %.1f s", detail.empty() ? "" : "; ", name, bad, secs);
  }
  return {pass, detail};
}

Outcome checkpoint_fidelity() {
  auto c = harness::tiny_config();
  c.batch_size = 3;
  c.max_steps = 20;
  const auto data = harness::to_dataset(harness::synth_dataset(6, 3), c.vision_in_size, vocab());
  const auto dir = fs::temp_directory_path() / "velvet_acceptance_resume";
  fs::remove_all(dir);
  fs::create_directories(dir);
  harness::Trainer full(c, vocab(), data);
  std::vector<harness::StepRecord> trace;
  for (int s = 0; s < 20; ++s) {
    trace.push_back(full.step());
    if (s == 9) full.save(dir / "step10.ckpt");
  }
  auto resumed = harness::Trainer::resume(dir / "step10.ckpt", data);
  int differing = 0;
  for (int s = 10; s < 20; ++s) {
    const auto r = resumed->step();
    const auto& want = trace[static_cast<std::size_t>(s)];
    bool same = r.step == want.step && std::memcmp(&r.total, &want.total, sizeof(double)) == 0;
    for (std::size_t i = 0; i < harness::kNumComponents; ++i)
      same = same && r.parts[i].has_value() == want.parts[i].has_value() &&
             (!r.parts[i] || std::memcmp(&*r.parts[i], &*want.parts[i], sizeof(double)) == 0);
    differing += !same;
  }
  fs::remove_all(dir);
  return {differing == 0, fmt("steps 11-20 after resume: %d of 10 differ bitwise", differing)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") {
      strict = true;
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else {
      std::fprintf(stderr, "usage: %s [--strict] [--only N[,N...]]\n", argv[0]);
      return 2;
    }
  }

  const std::vector<Criterion> criteria = {
      {1, "mask correctness", mask_correctness},
      {2, "sentence isolation", sentence_isolation},
      {3, "gradient suite", gradient_suite},
      {4, "attention oracles", attention_oracles},
      {5, "retrieval oracle", retrieval_oracle},
      {6, "closed-form losses", closed_forms},
      {7, "preprocessing determinism", preprocessing_determinism},
      {8, "ssl task integrity", ssl_integrity},
      {9, "end-to-end overfit", end_to_end_overfit},
      {10, "ablation plumbing", ablation_plumbing},
      {11, "checkpoint fidelity", checkpoint_fidelity},
  };

  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s [%2d] %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
    ++ran;
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return strict && failed > 0 ? 1 : 0;
}
