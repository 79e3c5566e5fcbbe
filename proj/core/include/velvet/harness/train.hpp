#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "velvet/harness/config.hpp"
#include "velvet/harness/dataset.hpp"
#include "velvet/harness/model.hpp"

namespace velvet::harness {

using ag::Tensor;

/// Everything random about one step, drawn from streams keyed by `key`.
struct StepInputs {
  std::vector<std::int64_t> indices;
  tribert::TriBatch text;
  std::vector<const vision3d::Grid*> volumes;  // whole scans
  std::vector<objectives::SslView> views;      // two per scan, first views then second views
  objectives::MaskedText uni;                  // text-only masking
  objectives::MaskedText mm;                   // masking for the fused pass
};

StepInputs make_step_inputs(const RunConfig& cfg, const Model& model, const Dataset& data,
                            std::vector<std::int64_t> indices, std::uint64_t key);

struct LossBundle {
  std::array<Tensor, kNumComponents> parts;  // undefined when disabled
  Tensor total;

  std::optional<double> value(Component c) const {
    const auto& t = parts[idx(c)];
    return t.defined() ? std::optional<double>(t.item()) : std::nullopt;
  }
};

/// Weighted sum of the enabled parts in component order. Throws
/// MissingComponent when an enabled part is undefined.
LossBundle composite_loss(const std::array<Tensor, kNumComponents>& parts, const RunConfig& cfg);

struct ForwardResult {
  LossBundle bundle;
  std::vector<objectives::Pair> negatives;
};

/// Runs only what the enabled components need. `step` picks the mining
/// direction; `mining` draws the hard negatives.
ForwardResult forward_losses(const Model& model, const RunConfig& cfg, const StepInputs& in, std::int64_t step,
                             Rng& mining);

/// Cosine decay from `lr0` at step 0 to zero at `total`.
double cosine_lr(double lr0, std::int64_t step, std::int64_t total);

/// Adam with decoupled weight decay on matrices.
class AdamW {
 public:
  struct Moments {
    std::vector<double> m, v;
  };

  explicit AdamW(const RunConfig& cfg) : b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.eps), wd_(cfg.weight_decay) {}

  /// Updates every parameter that received a gradient.
  void step(nn::ParamStore& store, double lr);

  std::int64_t t = 0;
  std::map<std::string, Moments> moments;

 private:
  double b1_, b2_, eps_, wd_;
};

struct StepRecord {
  std::int64_t step = 0;  // 1-based
  double lr = 0.0;
  std::array<std::optional<double>, kNumComponents> parts{};
  double total = 0.0;
  std::vector<objectives::Pair> negatives;
};

std::string metrics_header();
std::string metrics_row(const StepRecord& r);

/// Holds model, optimizer and data for one run.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const prep::Vocabulary& vocab, Dataset train, Dataset val = {});

  /// Rebuilds a trainer from a checkpoint. Throws VersionMismatch or CorruptFile.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& ckpt, Dataset train, Dataset val = {});

  /// Forward, backward and one optimizer update. Throws NonFiniteLoss.
  StepRecord step();
  bool done() const { return step_ >= total_steps_; }

  std::int64_t steps_done() const { return step_; }
  std::int64_t total_steps() const { return total_steps_; }
  std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
  std::vector<std::int64_t> batch_indices(std::int64_t step) const;

  /// Mean total loss over the validation split with fixed draws.
  double validation_loss() const;

  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const RunConfig& config() const { return cfg_; }
  const AdamW& optimizer() const { return opt_; }

  std::vector<std::uint8_t> serialize() const;
  void save(const std::filesystem::path& path) const;

 private:
  RunConfig cfg_;
  std::unique_ptr<Model> model_;
  Dataset train_, val_;
  AdamW opt_;
  Rng mining_;
  std::int64_t step_ = 0;
  std::int64_t steps_per_epoch_ = 0;
  std::int64_t total_steps_ = 0;
};

inline constexpr char kCheckpointMagic[8] = {'V', 'L', 'V', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Loads weights only, for evaluation tools.
std::unique_ptr<Model> load_model(const std::filesystem::path& ckpt, RunConfig* cfg_out = nullptr);

/// Moves the last `val_pairs` pairs into a second dataset.
std::pair<Dataset, Dataset> split_validation(Dataset data, std::int64_t val_pairs);

struct PretrainSummary {
  std::int64_t steps = 0;
  double first_total = 0.0;
  double last_total = 0.0;
  double best_val = 0.0;
  std::int64_t best_step = 0;
};

/// Full run: metrics.csv, last.ckpt and best.ckpt under `ckpt_dir`. Resumes
/// from last.ckpt when present.
PretrainSummary pretrain(const RunConfig& cfg, const prep::Vocabulary& vocab, const Dataset& data,
                         const std::filesystem::path& ckpt_dir,
                         const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace velvet::harness
