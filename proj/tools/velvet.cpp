// velvet: command line front end for data generation, preprocessing,
// pretraining and evaluation.

#if __has_include(<CLI/CLI.hpp>)
#include <CLI/CLI.hpp>
#else
#include <CLI11.hpp>
#endif

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "velvet/error.hpp"
#include "velvet/harness/heatmap.hpp"
#include "velvet/harness/retrieval.hpp"
#include "velvet/harness/train.hpp"

namespace fs = std::filesystem;
using namespace velvet;
using namespace velvet::harness;

namespace {

prep::Vocabulary vocab_for(const fs::path& data) {
  return fs::exists(data / "vocab.txt") ? prep::Vocabulary::load(data / "vocab.txt") : prep::Vocabulary::builtin();
}

int cmd_synth(std::int64_t n, std::uint64_t seed, std::int64_t size, const fs::path& out) {
  write_raw_dataset(out, synth_dataset(n, seed, size));
  std::cout << "wrote " << n << " pairs to " << out << "\n";
  return 0;
}

int cmd_prep(const fs::path& in, const fs::path& out, const fs::path& exclude) {
  const auto s = prepare_dataset(in, out, exclude, prep::Vocabulary::builtin());
  for (const auto& line : s.log) std::cout << "dropped " << line << "\n";
  std::cout << "kept " << s.kept << ", excluded " << s.excluded << ", rejected " << s.rejected << "\n";
  return 0;
}

int cmd_pretrain(const fs::path& config, const fs::path& data, const fs::path& ckpt, std::int64_t log_every) {
  const auto cfg = RunConfig::load(config);
  const auto vocab = vocab_for(data);
  const auto in_size = vision_config(cfg).in_size;
  const auto ds = load_dataset(data, in_size, vocab);
  std::cout << "loaded " << ds.size() << " pairs at " << in_size << "^3\n";
  const auto s = pretrain(cfg, vocab, ds, ckpt, [&](const StepRecord& r) {
    if (log_every > 0 && (r.step == 1 || r.step % log_every == 0)) {
      std::printf("step %lld  lr %.3g  total %.6f\n", static_cast<long long>(r.step), r.lr, r.total);
      std::fflush(stdout);
    }
  });
  std::printf("finished %lld steps  first %.6f  last %.6f  best step %lld\n", static_cast<long long>(s.steps),
              s.first_total, s.last_total, static_cast<long long>(s.best_step));
  return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data, const std::vector<std::int64_t>& ks) {
  RunConfig cfg;
  const auto model = load_model(ckpt, &cfg);
  const auto ds = load_dataset(data, model->vision_cfg.in_size, model->vocab);
  std::cout << eval_retrieval(*model, ds, ks, cfg.batch_size).to_json() << "\n";
  return 0;
}

int cmd_inspect(const fs::path& ckpt, const fs::path& report, const fs::path& out) {
  const auto model = load_model(ckpt);
  std::ifstream in(report);
  if (!in) fail(Errc::IoError, "cannot open " + report.string());
  std::stringstream text;
  text << in.rdbuf();
  const auto tokens = prep::tokenize(prep::segment_report(text.str()), model->vocab);
  const auto batch = tribert::build_tri_batch({tokens}, model->vocab, model->text_cfg);
  std::vector<double> attn;
  {
    ag::NoGradGuard guard;
    model->text.encode(batch, nullptr, &attn);
  }
  if (attn.empty()) fail(Errc::ConfigError, "text encoder has no layers to inspect");
  fs::create_directories(out);
  const auto L = batch.len, H = model->text_cfg.num_heads;
  const auto per = static_cast<std::size_t>(L * L);
  std::vector<double> mean(per, 0.0);
  for (std::int64_t h = 0; h < H; ++h) {
    std::vector<double> head(attn.begin() + static_cast<std::ptrdiff_t>(h * per),
                             attn.begin() + static_cast<std::ptrdiff_t>((h + 1) * per));
    for (std::size_t i = 0; i < per; ++i) mean[i] += head[i] / static_cast<double>(H);
    write_heatmap_png(out / ("attn_head" + std::to_string(h) + ".png"), head, L, L);
  }
  write_heatmap_png(out / "attn_mean.png", mean, L, L);

  static const char* kRole[] = {"cls", "sent", "word", "pad"};
  std::ofstream tsv(out / "tokens.tsv");
  tsv << "position\ttoken\trole\tsentence\tcls_attention\n";
  for (std::int64_t i = 0; i < L; ++i)
    tsv << i << '\t' << model->vocab.token(batch.token_ids[static_cast<std::size_t>(i)]) << '\t'
        << kRole[static_cast<int>(batch.role[static_cast<std::size_t>(i)])] << '\t'
        << batch.sentence_type_ids[static_cast<std::size_t>(i)] << '\t' << mean[static_cast<std::size_t>(i)] << '\n';
  std::cout << "wrote " << H << " head maps for " << L << " tokens to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"velvet: 3D scan / report vision-language pretraining"};
  app.require_subcommand(1);

  std::int64_t n = 8, size = vision3d::kDefaultVolumeSize, log_every = 10;
  std::uint64_t seed = 0;
  std::string in, out, exclude, config, data, ckpt, report;
  std::vector<std::int64_t> ks{1, 5, 10};

  auto* synth = app.add_subcommand("synth", "generate paired synthetic scans and reports");
  synth->add_option("--n", n, "number of pairs")->check(CLI::Range(2, 1000000));
  synth->add_option("--seed", seed, "random seed");
  synth->add_option("--size", size, "frame side in voxels")->check(CLI::Range(8, 1024));
  synth->add_option("--out", out, "output directory")->required();

  auto* prep_cmd = app.add_subcommand("prep", "filter, resample and clean a raw dataset");
  prep_cmd->add_option("--in", in, "raw dataset directory")->required()->check(CLI::ExistingDirectory);
  prep_cmd->add_option("--out", out, "output directory")->required();
  prep_cmd->add_option("--exclude", exclude, "file of ids to drop, one per line")->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("pretrain", "run pretraining");
  train->add_option("--config", config, "flat JSON run config")->required()->check(CLI::ExistingFile);
  train->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--ckpt", ckpt, "checkpoint and metrics directory")->required();
  train->add_option("--log-every", log_every, "print every N steps (0: quiet)");

  auto* eval = app.add_subcommand("eval-retrieval", "scan/report retrieval recall");
  eval->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--k", ks, "ranks, comma separated")->delimiter(',');

  auto* inspect = app.add_subcommand("inspect-attn", "dump last-layer text attention maps");
  inspect->add_option("--ckpt", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  inspect->add_option("--report", report, "plain text report")->required()->check(CLI::ExistingFile);
  inspect->add_option("--out", out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(n, seed, size, out);
    if (*prep_cmd) return cmd_prep(in, out, exclude);
    if (*train) return cmd_pretrain(config, data, ckpt, log_every);
    if (*eval) return cmd_eval(ckpt, data, ks);
    if (*inspect) return cmd_inspect(ckpt, report, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
