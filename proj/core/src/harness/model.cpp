#include "velvet/harness/model.hpp"

namespace velvet::harness {

tribert::TriBertConfig text_config(const RunConfig& cfg, std::int64_t vocab_size) {
  auto c = tribert::TriBertConfig::preset(cfg.text_preset, vocab_size);
  if (cfg.text_dim > 0) c.feature_dim = cfg.text_dim;
  if (cfg.text_layers >= 0) c.num_layers = cfg.text_layers;
  if (cfg.text_heads > 0) c.num_heads = cfg.text_heads;
  if (cfg.text_max_len > 0) c.max_len = cfg.text_max_len;
  c.validate();
  return c;
}

vision3d::VisionConfig vision_config(const RunConfig& cfg) {
  auto c = vision3d::VisionConfig::preset(cfg.vision_preset);
  if (cfg.vision_in_size > 0) c.in_size = cfg.vision_in_size;
  if (cfg.vision_patch > 0) c.patch = cfg.vision_patch;
  if (cfg.vision_embed_dim > 0) c.embed_dim = cfg.vision_embed_dim;
  if (cfg.vision_window > 0) c.window = cfg.vision_window;
  if (!cfg.vision_depths.empty()) c.depths = cfg.vision_depths;
  if (!cfg.vision_heads.empty()) c.heads = cfg.vision_heads;
  c.validate();
  return c;
}

namespace {

Rng init_rng(const RunConfig& cfg, const char* part) { return Rng(mix_seed(cfg.seed, "init"), part); }

}  // namespace

Model::Model(const RunConfig& cfg, const prep::Vocabulary& v)
    : vocab(v), text_cfg(text_config(cfg, v.size())), vision_cfg(vision_config(cfg)) {
  // One stream per module so that resizing one leaves the others unchanged.
  Rng r_text = init_rng(cfg, "text"), r_lan = init_rng(cfg, "lan_mlm"), r_vis = init_rng(cfg, "vision"),
      r_cm = init_rng(cfg, "cm"), r_ssl = init_rng(cfg, "ssl"), r_mm = init_rng(cfg, "mm");
  const auto c_t = text_cfg.feature_dim;
  const auto vocab_size = vocab.size();
  text = tribert::TriBert(store, "text", text_cfg, r_text);
  lan_mlm = tribert::MlmHead(store, "lan_mlm", c_t, vocab_size, r_lan);
  vision = vision3d::SwinEncoder3D(store, "vision", vision_cfg, r_vis);
  cm = objectives::CrossModalHeads(store, "cm", vision.c_bot(), vision.c_mid(), vision.c_top(), c_t, cfg.proj_dim,
                                   r_cm);
  ssl = objectives::VisionSslHeads(store, "ssl", vision.c_top(), vision_cfg.stage_res(3), vision_cfg.in_size,
                                   cfg.proj_dim, r_ssl);
  objectives::MultiModalConfig mmc;
  mmc.num_layers = cfg.mm_layers;
  mmc.heads = cfg.mm_heads > 0 ? cfg.mm_heads : text_cfg.num_heads;
  mmc.ffn_mult = text_cfg.ffn_mult;
  mm = objectives::MultiModalHeads(store, "mm", c_t, vision.c_top(), vocab_size, mmc, r_mm);
}

}  // namespace velvet::harness
