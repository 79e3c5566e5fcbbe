#include "velvet/harness/config.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "velvet/error.hpp"

namespace velvet::harness {

using nlohmann::json;

namespace {

template <class F>
void for_each_field(F&& f) {
  f("seed", &RunConfig::seed);
  f("epochs", &RunConfig::epochs);
  f("batch_size", &RunConfig::batch_size);
  f("max_steps", &RunConfig::max_steps);
  f("lr", &RunConfig::lr);
  f("beta1", &RunConfig::beta1);
  f("beta2", &RunConfig::beta2);
  f("weight_decay", &RunConfig::weight_decay);
  f("eps", &RunConfig::eps);
  f("text_preset", &RunConfig::text_preset);
  f("text_dim", &RunConfig::text_dim);
  f("text_layers", &RunConfig::text_layers);
  f("text_heads", &RunConfig::text_heads);
  f("text_max_len", &RunConfig::text_max_len);
  f("vision_preset", &RunConfig::vision_preset);
  f("vision_in_size", &RunConfig::vision_in_size);
  f("vision_patch", &RunConfig::vision_patch);
  f("vision_embed_dim", &RunConfig::vision_embed_dim);
  f("vision_window", &RunConfig::vision_window);
  f("vision_depths", &RunConfig::vision_depths);
  f("vision_heads", &RunConfig::vision_heads);
  f("proj_dim", &RunConfig::proj_dim);
  f("mm_layers", &RunConfig::mm_layers);
  f("mm_heads", &RunConfig::mm_heads);
  f("ssl_crop", &RunConfig::ssl_crop);
  f("ssl_block", &RunConfig::ssl_block);
  f("ssl_drop_ratio", &RunConfig::ssl_drop_ratio);
  f("mask_ratio", &RunConfig::mask_ratio);
  f("negative_mode", &RunConfig::negative_mode);
  f("val_pairs", &RunConfig::val_pairs);
  f("eval_every", &RunConfig::eval_every);
  f("checkpoint_every", &RunConfig::checkpoint_every);
  f("mixed_precision", &RunConfig::mixed_precision);
  f("data_parallel", &RunConfig::data_parallel);
}

}  // namespace

void RunConfig::validate() const {
  auto bad = [](const std::string& m) { fail(Errc::ConfigError, m); };
  if (batch_size < 2) bad("batch_size must be at least 2");
  if (epochs < 0 || max_steps < 0) bad("negative step budget");
  if (lr < 0 || weight_decay < 0 || eps <= 0) bad("invalid optimizer settings");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) bad("betas must lie in [0, 1)");
  if (proj_dim <= 0 || mm_layers < 1) bad("proj_dim and mm_layers must be positive");
  if (ssl_block <= 0 || ssl_crop <= 0) bad("ssl_block and ssl_crop must be positive");
  if (ssl_drop_ratio < 0 || ssl_drop_ratio > 1 || mask_ratio < 0 || mask_ratio > 1) bad("ratios must lie in [0, 1]");
  if (negative_mode != "alternate" && negative_mode != "both") bad("negative_mode must be 'alternate' or 'both'");
  if (val_pairs < 0 || eval_every < 0 || checkpoint_every < 0) bad("negative schedule value");
  if (mixed_precision) bad("mixed_precision is not supported; training runs in double precision");
  if (data_parallel != 1) bad("data_parallel other than 1 is not supported");
  for (double w : weight)
    if (!(w >= 0)) bad("loss weights must be non-negative");
  bool any = false;
  for (bool e : enabled) any = any || e;
  if (!any) bad("no loss component enabled");
}

void RunConfig::enable_only(const std::vector<Component>& components) {
  enabled.fill(false);
  for (auto c : components) enabled[idx(c)] = true;
}

json RunConfig::to_json() const {
  json j = json::object();
  for_each_field([&](const char* key, auto member) { j[key] = this->*member; });
  for (std::size_t i = 0; i < kNumComponents; ++i) {
    j["loss_" + std::string(kComponentNames[i])] = enabled[i];
    j["weight_" + std::string(kComponentNames[i])] = weight[i];
  }
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) fail(Errc::ConfigError, "config must be a JSON object");
  RunConfig c;
  std::set<std::string> known;
  try {
    for_each_field([&](const char* key, auto member) {
      known.insert(key);
      if (j.contains(key)) j.at(key).get_to(c.*member);
    });
    for (std::size_t i = 0; i < kNumComponents; ++i) {
      const std::string l = "loss_" + std::string(kComponentNames[i]);
      const std::string w = "weight_" + std::string(kComponentNames[i]);
      known.insert(l);
      known.insert(w);
      if (j.contains(l)) c.enabled[i] = j.at(l).get<bool>();
      if (j.contains(w)) c.weight[i] = j.at(w).get<double>();
    }
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("bad config value: ") + e.what());
  }
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) fail(Errc::ConfigError, "unknown config key '" + key + "'");
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

RunConfig tiny_config() {
  RunConfig c;
  c.batch_size = 4;
  c.epochs = 1;
  c.lr = 1e-3;
  c.text_dim = 16;
  c.text_layers = 1;
  c.text_heads = 2;
  c.text_max_len = 96;
  c.vision_in_size = 16;
  c.vision_patch = 2;
  c.vision_embed_dim = 4;
  c.vision_window = 2;
  c.vision_depths = {1, 1, 1, 1};
  c.vision_heads = {1, 1, 2, 2};
  c.proj_dim = 16;
  c.mm_layers = 1;
  c.mm_heads = 2;
  c.ssl_crop = 12;
  c.ssl_block = 4;
  return c;
}

}  // namespace velvet::harness
