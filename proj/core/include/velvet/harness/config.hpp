#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace velvet::harness {

/// Loss components in logging order.
enum class Component : std::uint8_t { CmTop, CmMid, CmBot, MmMatch, MmMlm, LanMlm, VisInp, VisRot, VisCon };
inline constexpr std::size_t kNumComponents = 9;
inline constexpr std::array<std::string_view, kNumComponents> kComponentNames = {
    "cm_top", "cm_mid", "cm_bot", "mm_match", "mm_mlm", "lan_mlm", "vis_inp", "vis_rot", "vis_con"};

inline constexpr std::size_t idx(Component c) { return static_cast<std::size_t>(c); }

/// Training run settings. Serialized as one flat JSON object; model size
/// overrides of 0 (or empty lists) keep the preset value.
struct RunConfig {
  std::uint64_t seed = 0;
  std::int64_t epochs = 50;
  std::int64_t batch_size = 10;
  std::int64_t max_steps = 0;  // 0: epochs * batches per epoch

  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double weight_decay = 1e-5;
  double eps = 1e-8;

  std::string text_preset = "B";
  std::int64_t text_dim = 0;
  std::int64_t text_layers = -1;
  std::int64_t text_heads = 0;
  std::int64_t text_max_len = 0;

  std::string vision_preset = "S";
  std::int64_t vision_in_size = 0;
  std::int64_t vision_patch = 0;
  std::int64_t vision_embed_dim = 0;
  std::int64_t vision_window = 0;
  std::vector<std::int64_t> vision_depths;
  std::vector<std::int64_t> vision_heads;

  std::int64_t proj_dim = 256;
  std::int64_t mm_layers = 2;
  std::int64_t mm_heads = 0;  // 0: text heads

  std::int64_t ssl_crop = 64;
  std::int64_t ssl_block = 16;
  double ssl_drop_ratio = 0.30;
  double mask_ratio = 0.15;
  std::string negative_mode = "alternate";

  std::int64_t val_pairs = 0;
  std::int64_t eval_every = 0;
  std::int64_t checkpoint_every = 0;

  bool mixed_precision = false;
  std::int64_t data_parallel = 1;

  std::array<bool, kNumComponents> enabled{true, true, true, true, true, true, true, true, true};
  std::array<double, kNumComponents> weight{1, 1, 1, 1, 1, 1, 1, 1, 1};

  bool on(Component c) const { return enabled[idx(c)]; }
  bool any_cm() const { return on(Component::CmTop) || on(Component::CmMid) || on(Component::CmBot); }
  bool any_mm() const { return on(Component::MmMatch) || on(Component::MmMlm); }
  bool any_vis() const { return on(Component::VisInp) || on(Component::VisRot) || on(Component::VisCon); }

  /// Throws ConfigError on inconsistent values.
  void validate() const;

  /// Enables exactly the listed components.
  void enable_only(const std::vector<Component>& components);

  nlohmann::json to_json() const;
  /// Unknown keys are rejected with ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// Small model used by tests and the overfit check.
RunConfig tiny_config();

}  // namespace velvet::harness
