#include <benchmark/benchmark.h>

#include "velvet/harness/retrieval.hpp"
#include "velvet/harness/train.hpp"

using namespace velvet;
using namespace velvet::harness;

namespace {

Tensor random(ag::Shape s, Rng& rng, bool param) {
  std::vector<double> v(static_cast<std::size_t>(ag::numel(s)));
  for (double& x : v) x = rng.normal();
  return param ? Tensor::parameter(std::move(s), std::move(v)) : Tensor::constant(std::move(s), std::move(v));
}

void BM_Attention(benchmark::State& state) {
  const auto L = state.range(0);
  Rng rng(1);
  const Tensor q = random({4, 4, L, 16}, rng, true), k = random({4, 4, L, 16}, rng, true),
               v = random({4, 4, L, 16}, rng, true);
  for (auto _ : state) {
    auto y = ag::sum(ag::attention(q, k, v));
    y.backward();
    benchmark::DoNotOptimize(y.item());
  }
  state.SetItemsProcessed(state.iterations() * 4 * 4 * L * L);
}
BENCHMARK(BM_Attention)->Arg(32)->Arg(128)->Arg(512);

void BM_TextEncode(benchmark::State& state) {
  const auto& vocab = prep::Vocabulary::builtin();
  auto cfg = tribert::TriBertConfig::preset("S", vocab.size());
  cfg.feature_dim = state.range(0);
  cfg.num_heads = 4;
  cfg.num_layers = 2;
  nn::ParamStore store;
  Rng rng(2);
  tribert::TriBert enc(store, "text", cfg, rng);
  std::vector<prep::TokenizedReport> reports;
  for (const auto& s : synth_dataset(8, 3, 8)) reports.push_back(prep::tokenize(prep::segment_report(s.report.text), vocab));
  const auto batch = tribert::build_tri_batch(reports, vocab, cfg);
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(batch).rep.at(0));
}
BENCHMARK(BM_TextEncode)->Arg(32)->Arg(128);

void BM_VisionEncode(benchmark::State& state) {
  auto cfg = vision3d::VisionConfig::preset("T");
  cfg.in_size = state.range(0);
  cfg.embed_dim = 8;
  cfg.window = 4;
  cfg.depths = {1, 1, 1, 1};
  cfg.heads = {1, 2, 2, 4};
  nn::ParamStore store;
  Rng rng(4);
  vision3d::SwinEncoder3D enc(store, "vision", cfg, rng);
  vision3d::Grid g(cfg.in_size, cfg.in_size, cfg.in_size);
  for (float& v : g.data) v = static_cast<float>(rng.uniform());
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode({&g}).pooled_top.at(0));
}
BENCHMARK(BM_VisionEncode)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  auto cfg = tiny_config();
  cfg.batch_size = 8;
  cfg.max_steps = 1 << 20;
  const auto data = to_dataset(synth_dataset(8, 5), cfg.vision_in_size, prep::Vocabulary::builtin());
  Trainer t(cfg, prep::Vocabulary::builtin(), data);
  for (auto _ : state) benchmark::DoNotOptimize(t.step().total);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_Retrieval(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(6);
  Embeddings e{n, 64, {}, {}};
  for (std::int64_t i = 0; i < n * 64; ++i) {
    e.scans.push_back(rng.normal());
    e.reports.push_back(rng.normal());
  }
  for (auto _ : state) benchmark::DoNotOptimize(recall_at_k(e, {1, 5, 10}).sim_hash);
}
BENCHMARK(BM_Retrieval)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
