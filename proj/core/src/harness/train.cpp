#include "velvet/harness/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "velvet/error.hpp"

namespace velvet::harness {

namespace fs = std::filesystem;

StepInputs make_step_inputs(const RunConfig& cfg, const Model& model, const Dataset& data,
                            std::vector<std::int64_t> indices, std::uint64_t key) {
  StepInputs in;
  in.indices = std::move(indices);
  std::vector<prep::TokenizedReport> reports;
  for (auto i : in.indices) {
    const auto& p = data.pairs.at(static_cast<std::size_t>(i));
    reports.push_back(p.tokens);
    in.volumes.push_back(&p.volume);
  }
  in.text = tribert::build_tri_batch(reports, model.vocab, model.text_cfg);
  if (cfg.any_vis()) {
    Rng aug(key, "aug");
    objectives::SslConfig ssl;
    ssl.augment.out = model.vision_cfg.in_size;
    ssl.augment.crop = std::min(cfg.ssl_crop, model.vision_cfg.in_size);
    ssl.block = cfg.ssl_block;
    ssl.drop_ratio = cfg.ssl_drop_ratio;
    for (int view = 0; view < 2; ++view)
      for (const auto* v : in.volumes) in.views.push_back(objectives::make_ssl_view(*v, ssl, aug));
  }
  if (cfg.on(Component::LanMlm)) {
    Rng r(key, "mask_uni");
    in.uni = objectives::mask_tokens(in.text, model.vocab, cfg.mask_ratio, r);
  }
  if (cfg.on(Component::MmMlm)) {
    Rng r(key, "mask_mm");
    in.mm = objectives::mask_tokens(in.text, model.vocab, cfg.mask_ratio, r);
  }
  return in;
}

LossBundle composite_loss(const std::array<Tensor, kNumComponents>& parts, const RunConfig& cfg) {
  LossBundle b;
  for (std::size_t i = 0; i < kNumComponents; ++i) {
    if (!cfg.enabled[i]) continue;
    if (!parts[i].defined())
      fail(Errc::MissingComponent, std::string(kComponentNames[i]) + " is enabled but was not computed");
    b.parts[i] = parts[i];
    const Tensor term = cfg.weight[i] == 1.0 ? parts[i] : ag::scale(parts[i], cfg.weight[i]);
    b.total = b.total.defined() ? ag::add(b.total, term) : term;
  }
  if (!b.total.defined()) fail(Errc::MissingComponent, "no loss component enabled");
  return b;
}

namespace {

// An empty masking draw (reports too short for even one pick) contributes 0.
Tensor mlm_or_zero(const objectives::MaskedText& m, const std::function<Tensor()>& f) {
  return m.positions.empty() ? Tensor::scalar(0.0) : f();
}

}  // namespace

ForwardResult forward_losses(const Model& model, const RunConfig& cfg, const StepInputs& in, std::int64_t step,
                             Rng& mining) {
  using objectives::Pair;
  std::array<Tensor, kNumComponents> parts;
  ForwardResult out;
  const bool need_text = cfg.any_cm() || cfg.on(Component::MmMatch);
  const bool need_vision = cfg.any_cm() || cfg.any_mm();
  tribert::TextFeatureSet text;
  vision3d::VisionPyramid pyr;
  if (need_text) text = model.text.encode(in.text);
  if (need_vision) pyr = model.vision.encode(in.volumes);

  if (cfg.any_cm()) {
    const objectives::CmFlags f{cfg.on(Component::CmTop), cfg.on(Component::CmMid), cfg.on(Component::CmBot)};
    const auto l = model.cm.loss(model.cm.project(pyr, text, f), f);
    parts[idx(Component::CmTop)] = l.top;
    parts[idx(Component::CmMid)] = l.mid;
    parts[idx(Component::CmBot)] = l.bot;
  }
  if (cfg.on(Component::LanMlm)) {
    parts[idx(Component::LanMlm)] = mlm_or_zero(in.uni, [&] {
      const auto s = model.text.encode(in.text, &in.uni.input_ids).token_states;
      return objectives::loss_mlm(model.lan_mlm(ag::gather_rows(s, in.uni.positions)), in.uni.targets());
    });
  }
  if (cfg.on(Component::MmMatch)) {
    std::vector<double> sim;
    {
      ag::NoGradGuard guard;
      sim = objectives::cosine_matrix(model.cm.project_vision_top(pyr.pooled_top), model.cm.project_text_rep(text.rep));
    }
    const auto mode = cfg.negative_mode == "both" ? objectives::NegativeMode::Both : objectives::NegativeMode::Alternate;
    out.negatives = objectives::negative_pairs(sim, in.text.n, mode, step, mining);
    parts[idx(Component::MmMatch)] =
        model.mm.loss_match(text.token_states, in.text, pyr.top, pyr.tokens_top(), out.negatives);
  }
  if (cfg.on(Component::MmMlm)) {
    parts[idx(Component::MmMlm)] = mlm_or_zero(in.mm, [&] {
      const auto s = model.text.encode(in.text, &in.mm.input_ids).token_states;
      return model.mm.loss_mlm(s, in.text, pyr.top, pyr.tokens_top(), in.mm);
    });
  }
  if (cfg.any_vis()) {
    std::vector<const vision3d::Grid*> views;
    for (const auto& v : in.views) views.push_back(&v.inpainting.corrupted);
    const objectives::VisFlags f{cfg.on(Component::VisInp), cfg.on(Component::VisRot), cfg.on(Component::VisCon)};
    const auto l = model.ssl.loss(model.vision.encode(views), in.views, f);
    parts[idx(Component::VisInp)] = l.inp;
    parts[idx(Component::VisRot)] = l.rot;
    parts[idx(Component::VisCon)] = l.con;
  }
  out.bundle = composite_loss(parts, cfg);
  return out;
}

double cosine_lr(double lr0, std::int64_t step, std::int64_t total) {
  if (total <= 0 || step >= total) return 0.0;
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

void AdamW::step(nn::ParamStore& store, double lr) {
  ++t;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t));
  for (const auto& [name, p] : store.all()) {
    const auto g = p.grad();
    if (g.empty()) continue;
    auto& mo = moments[name];
    if (mo.m.empty()) {
      mo.m.assign(g.size(), 0.0);
      mo.v.assign(g.size(), 0.0);
    }
    const bool decay = p.rank() >= 2;
    auto w = store.at(name).mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      mo.m[i] = b1_ * mo.m[i] + (1.0 - b1_) * g[i];
      mo.v[i] = b2_ * mo.v[i] + (1.0 - b2_) * g[i] * g[i];
      const double upd = (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + eps_) + (decay ? wd_ * w[i] : 0.0);
      w[i] -= lr * upd;
    }
  }
}

std::string metrics_header() {
  std::string h = "step,lr";
  for (auto n : kComponentNames) h += "," + std::string(n);
  return h + ",total";
}

std::string metrics_row(const StepRecord& r) {
  char buf[64];
  std::string s = std::to_string(r.step);
  std::snprintf(buf, sizeof buf, ",%.17g", r.lr);
  s += buf;
  for (const auto& p : r.parts) {
    s += ",";
    if (p) {
      std::snprintf(buf, sizeof buf, "%.17g", *p);
      s += buf;
    }
  }
  std::snprintf(buf, sizeof buf, ",%.17g", r.total);
  return s + buf;
}

Trainer::Trainer(const RunConfig& cfg, const prep::Vocabulary& vocab, Dataset train, Dataset val)
    : cfg_(cfg),
      model_(std::make_unique<Model>(cfg, vocab)),
      train_(std::move(train)),
      val_(std::move(val)),
      opt_(cfg),
      mining_(cfg.seed, "mining") {
  cfg_.validate();
  if (train_.size() < 2) fail(Errc::BatchTooSmall, "training needs at least two pairs");
  const auto bs = std::min(cfg_.batch_size, train_.size());
  steps_per_epoch_ = train_.size() / bs;
  total_steps_ = cfg_.max_steps > 0 ? cfg_.max_steps : cfg_.epochs * steps_per_epoch_;
}

std::vector<std::int64_t> Trainer::batch_indices(std::int64_t step) const {
  const auto bs = std::min(cfg_.batch_size, train_.size());
  const auto epoch = step / steps_per_epoch_, pos = step % steps_per_epoch_;
  Rng shuffle(mix_seed(cfg_.seed, static_cast<std::uint64_t>(epoch)), "shuffle");
  const auto perm = shuffle.permutation(train_.size());
  return {perm.begin() + pos * bs, perm.begin() + (pos + 1) * bs};
}

StepRecord Trainer::step() {
  const auto key = mix_seed(cfg_.seed, static_cast<std::uint64_t>(step_));
  const auto in = make_step_inputs(cfg_, *model_, train_, batch_indices(step_), key);
  model_->store.zero_grad();
  auto fwd = forward_losses(*model_, cfg_, in, step_, mining_);
  StepRecord rec;
  rec.step = step_ + 1;
  rec.total = fwd.bundle.total.item();
  for (std::size_t i = 0; i < kNumComponents; ++i) rec.parts[i] = fwd.bundle.value(static_cast<Component>(i));
  rec.negatives = std::move(fwd.negatives);
  if (!std::isfinite(rec.total)) {
    std::ostringstream msg;
    msg << "step " << rec.step << ":";
    for (std::size_t i = 0; i < kNumComponents; ++i)
      if (rec.parts[i]) msg << ' ' << kComponentNames[i] << '=' << *rec.parts[i];
    fail(Errc::NonFiniteLoss, msg.str());
  }
  fwd.bundle.total.backward();
  rec.lr = cosine_lr(cfg_.lr, step_, total_steps_);
  opt_.step(model_->store, rec.lr);
  ++step_;
  return rec;
}

double Trainer::validation_loss() const {
  if (val_.size() < 2) fail(Errc::BatchTooSmall, "validation needs at least two pairs");
  ag::NoGradGuard guard;
  const auto bs = std::min(cfg_.batch_size, val_.size());
  Rng mining(cfg_.seed, "val_mining");
  double sum = 0;
  std::int64_t batches = 0;
  for (std::int64_t b = 0; b + bs <= val_.size(); b += bs, ++batches) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(bs));
    for (std::int64_t i = 0; i < bs; ++i) idx[static_cast<std::size_t>(i)] = b + i;
    const auto in = make_step_inputs(cfg_, *model_, val_, idx, mix_seed(mix_seed(cfg_.seed, "val"), b));
    sum += forward_losses(*model_, cfg_, in, batches, mining).bundle.total.item();
  }
  return sum / static_cast<double>(batches);
}

// Checkpoint layout: magic, u32 version, u64 payload size, payload, u32 crc32.
namespace {

class Writer {
 public:
  template <class T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void doubles(const std::vector<double>& v) {
    pod<std::uint64_t>(v.size());
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    bytes.insert(bytes.end(), p, p + v.size() * sizeof(double));
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_, sizeof v);
    p_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  std::vector<double> doubles() {
    const auto n = pod<std::uint64_t>();
    if (n > static_cast<std::uint64_t>(end_ - p_) / sizeof(double)) corrupt();
    std::vector<double> v(n);
    std::memcpy(v.data(), p_, n * sizeof(double));
    p_ += n * sizeof(double);
    return v;
  }
  bool at_end() const { return p_ == end_; }

 private:
  [[noreturn]] static void corrupt() { fail(Errc::CorruptFile, "checkpoint payload truncated"); }
  void need(std::uint64_t n) const {
    if (n > static_cast<std::uint64_t>(end_ - p_)) corrupt();
  }
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

struct CheckpointData {
  RunConfig cfg;
  std::vector<std::string> vocab;
  std::int64_t step = 0;
  std::int64_t adam_t = 0;
  std::string mining;
  struct Param {
    std::vector<std::int64_t> shape;
    std::vector<double> value;
    bool has_moments = false;
    std::vector<double> m, v;
  };
  std::map<std::string, Param> params;
};

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckpointData parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  constexpr std::size_t header = sizeof kCheckpointMagic + 4 + 8;
  if (bytes.size() < header + 4 || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    fail(Errc::CorruptFile, "not a checkpoint");
  Reader h(bytes.data() + sizeof kCheckpointMagic, 12);
  const auto version = h.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    fail(Errc::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                    std::to_string(kCheckpointVersion));
  const auto size = h.pod<std::uint64_t>();
  if (size != bytes.size() - header - 4) fail(Errc::CorruptFile, "checkpoint size does not match header");
  const std::uint8_t* payload = bytes.data() + header;
  std::uint32_t stored;
  std::memcpy(&stored, payload + size, 4);
  if (stored != crc32(0L, payload, static_cast<uInt>(size))) fail(Errc::CorruptFile, "checkpoint checksum mismatch");

  Reader r(payload, size);
  CheckpointData d;
  try {
    d.cfg = RunConfig::from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::CorruptFile, std::string("checkpoint config: ") + e.what());
  }
  const auto nv = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nv; ++i) d.vocab.push_back(r.str());
  d.step = r.pod<std::int64_t>();
  d.adam_t = r.pod<std::int64_t>();
  d.mining = r.str();
  const auto np = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < np; ++i) {
    const auto name = r.str();
    auto& p = d.params[name];
    const auto rank = r.pod<std::uint64_t>();
    for (std::uint64_t k = 0; k < rank; ++k) p.shape.push_back(r.pod<std::int64_t>());
    p.value = r.doubles();
    p.has_moments = r.pod<std::uint8_t>() != 0;
    if (p.has_moments) {
      p.m = r.doubles();
      p.v = r.doubles();
    }
  }
  if (!r.at_end()) fail(Errc::CorruptFile, "trailing bytes in checkpoint");
  return d;
}

void restore_params(Model& model, const CheckpointData& d) {
  if (d.params.size() != model.store.all().size())
    fail(Errc::CorruptFile, "checkpoint parameter set does not match the config");
  for (const auto& [name, p] : d.params) {
    if (!model.store.contains(name)) fail(Errc::CorruptFile, "unexpected parameter " + name);
    auto& t = model.store.at(name);
    if (t.shape() != p.shape || p.value.size() != static_cast<std::size_t>(t.numel()))
      fail(Errc::CorruptFile, "shape mismatch for " + name);
    std::copy(p.value.begin(), p.value.end(), t.mutable_data().begin());
  }
}

}  // namespace

std::vector<std::uint8_t> Trainer::serialize() const {
  Writer w;
  w.str(cfg_.to_json().dump());
  w.pod<std::uint64_t>(static_cast<std::uint64_t>(model_->vocab.size()));
  for (std::int64_t i = 0; i < model_->vocab.size(); ++i) w.str(model_->vocab.token(i));
  w.pod<std::int64_t>(step_);
  w.pod<std::int64_t>(opt_.t);
  w.str(mining_.serialize());
  w.pod<std::uint64_t>(model_->store.all().size());
  for (const auto& [name, t] : model_->store.all()) {
    w.str(name);
    w.pod<std::uint64_t>(t.shape().size());
    for (auto s : t.shape()) w.pod<std::int64_t>(s);
    w.doubles({t.data().begin(), t.data().end()});
    const auto it = opt_.moments.find(name);
    w.pod<std::uint8_t>(it != opt_.moments.end());
    if (it != opt_.moments.end()) {
      w.doubles(it->second.m);
      w.doubles(it->second.v);
    }
  }
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + sizeof kCheckpointMagic);
  Writer h;
  h.pod<std::uint32_t>(kCheckpointVersion);
  h.pod<std::uint64_t>(w.bytes.size());
  h.pod<std::uint32_t>(static_cast<std::uint32_t>(crc32(0L, w.bytes.data(), static_cast<uInt>(w.bytes.size()))));
  out.insert(out.end(), h.bytes.begin(), h.bytes.begin() + 12);
  out.insert(out.end(), w.bytes.begin(), w.bytes.end());
  out.insert(out.end(), h.bytes.begin() + 12, h.bytes.end());
  return out;
}

void Trainer::save(const fs::path& path) const {
  const auto bytes = serialize();
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoError, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(Errc::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::unique_ptr<Trainer> Trainer::resume(const fs::path& ckpt, Dataset train, Dataset val) {
  const auto d = parse_checkpoint(read_file(ckpt));
  auto t = std::make_unique<Trainer>(d.cfg, prep::Vocabulary::from_tokens(d.vocab), std::move(train), std::move(val));
  restore_params(*t->model_, d);
  t->step_ = d.step;
  t->opt_.t = d.adam_t;
  for (const auto& [name, p] : d.params)
    if (p.has_moments) t->opt_.moments[name] = {p.m, p.v};
  t->mining_.deserialize(d.mining);
  return t;
}

std::unique_ptr<Model> load_model(const fs::path& ckpt, RunConfig* cfg_out) {
  const auto d = parse_checkpoint(read_file(ckpt));
  auto m = std::make_unique<Model>(d.cfg, prep::Vocabulary::from_tokens(d.vocab));
  restore_params(*m, d);
  if (cfg_out) *cfg_out = d.cfg;
  return m;
}

std::pair<Dataset, Dataset> split_validation(Dataset data, std::int64_t val_pairs) {
  Dataset val;
  if (val_pairs <= 0) return {std::move(data), std::move(val)};
  if (val_pairs > data.size() - 2) fail(Errc::ConfigError, "val_pairs leaves fewer than two training pairs");
  val.pairs.assign(std::make_move_iterator(data.pairs.end() - val_pairs), std::make_move_iterator(data.pairs.end()));
  data.pairs.resize(data.pairs.size() - static_cast<std::size_t>(val_pairs));
  return {std::move(data), std::move(val)};
}

PretrainSummary pretrain(const RunConfig& cfg, const prep::Vocabulary& vocab, const Dataset& data,
                         const fs::path& ckpt_dir, const std::function<void(const StepRecord&)>& on_step) {
  fs::create_directories(ckpt_dir);
  auto [train, val] = split_validation(data, cfg.val_pairs);
  const auto last = ckpt_dir / "last.ckpt", best = ckpt_dir / "best.ckpt", metrics = ckpt_dir / "metrics.csv";
  std::unique_ptr<Trainer> t = fs::exists(last) ? Trainer::resume(last, train, val)
                                                : std::make_unique<Trainer>(cfg, vocab, train, val);
  const bool fresh_log = !fs::exists(metrics);
  std::ofstream log(metrics, std::ios::app);
  if (!log) fail(Errc::IoError, "cannot write " + metrics.string());
  if (fresh_log) log << metrics_header() << '\n';

  PretrainSummary s;
  s.best_val = INFINITY;
  const auto eval_every = cfg.eval_every > 0 ? cfg.eval_every : t->steps_per_epoch();
  bool first = true;
  while (!t->done()) {
    const auto rec = t->step();
    log << metrics_row(rec) << '\n' << std::flush;
    if (first) s.first_total = rec.total;
    first = false;
    s.last_total = rec.total;
    ++s.steps;
    if (on_step) on_step(rec);
    const bool end = t->done();
    if (cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0) t->save(last);
    if (rec.step % eval_every == 0 || end) {
      // Without a held-out split the most recent weights count as best.
      const double v = val.size() >= 2 ? t->validation_loss() : -static_cast<double>(rec.step);
      if (v < s.best_val) {
        s.best_val = v;
        s.best_step = rec.step;
        t->save(best);
      }
    }
  }
  t->save(last);
  return s;
}

}  // namespace velvet::harness
