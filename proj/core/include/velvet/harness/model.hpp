#pragma once

#include "velvet/harness/config.hpp"
#include "velvet/nn/layers.hpp"
#include "velvet/objectives/cm.hpp"
#include "velvet/objectives/mm.hpp"
#include "velvet/objectives/uni.hpp"
#include "velvet/prep/vocab.hpp"
#include "velvet/tribert/tribert.hpp"
#include "velvet/vision3d/swin3d.hpp"

namespace velvet::harness {

tribert::TriBertConfig text_config(const RunConfig& cfg, std::int64_t vocab_size);
vision3d::VisionConfig vision_config(const RunConfig& cfg);

/// Every trainable module of the framework over one parameter store.
/// Parameter names are stable and used as checkpoint keys.
class Model {
 public:
  Model(const RunConfig& cfg, const prep::Vocabulary& vocab);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  prep::Vocabulary vocab;
  nn::ParamStore store;
  tribert::TriBertConfig text_cfg;
  vision3d::VisionConfig vision_cfg;

  tribert::TriBert text;
  tribert::MlmHead lan_mlm;
  vision3d::SwinEncoder3D vision;
  objectives::CrossModalHeads cm;
  objectives::VisionSslHeads ssl;
  objectives::MultiModalHeads mm;
};

}  // namespace velvet::harness
