#include "velvet/tribert/tribert.hpp"

#include <algorithm>

#include "velvet/error.hpp"

namespace velvet::tribert {

TriBertConfig TriBertConfig::preset(const std::string& name, std::int64_t vocab_size) {
  TriBertConfig c;
  c.vocab_size = vocab_size;
  if (name == "S") {
    c.num_layers = 6;
  } else if (name == "B") {
    c.num_layers = 12;
  } else {
    fail(Errc::ConfigError, "unknown text encoder preset '" + name + "'");
  }
  return c;
}

void TriBertConfig::validate() const {
  if (feature_dim <= 0 || num_heads <= 0 || feature_dim % num_heads != 0)
    fail(Errc::ConfigError, "text feature_dim must be a positive multiple of num_heads");
  if (num_layers < 0 || max_num_sent <= 0 || max_len <= 1 || vocab_size <= 0 || ffn_mult <= 0)
    fail(Errc::ConfigError, "invalid text encoder config");
}

TriBatch build_tri_batch(const std::vector<prep::TokenizedReport>& reports, const prep::Vocabulary& vocab,
                         const TriBertConfig& cfg, const prep::TextCaps& caps, std::int64_t pad_to) {
  TriBatch b;
  b.n = static_cast<std::int64_t>(reports.size());
  std::vector<std::int64_t> lengths;
  for (const auto& r : reports) {
    if (r.num_sentences() > cfg.max_num_sent || r.num_sentences() > caps.max_sentences ||
        r.num_sentences() > vocab.max_num_sent())
      fail(Errc::CapExceeded, "report has " + std::to_string(r.num_sentences()) + " sentences");
    if (r.num_words() > caps.max_words_per_report)
      fail(Errc::CapExceeded, "report has " + std::to_string(r.num_words()) + " words");
    for (const auto& s : r.sentence_spans)
      if (s.size() > caps.max_words_per_sentence)
        fail(Errc::CapExceeded, "sentence has " + std::to_string(s.size()) + " words");
    const std::int64_t l = 1 + r.num_sentences() + static_cast<std::int64_t>(r.token_ids.size());
    if (l > cfg.max_len) fail(Errc::CapExceeded, "sequence length " + std::to_string(l) + " exceeds max_len");
    lengths.push_back(l);
    b.len = std::max(b.len, l);
    b.max_sentences = std::max(b.max_sentences, r.num_sentences());
    b.max_words = std::max(b.max_words, r.num_words());
  }
  if (pad_to > b.len) {
    if (pad_to > cfg.max_len) fail(Errc::CapExceeded, "padded length exceeds max_len");
    b.len = pad_to;
  }
  const auto total = static_cast<std::size_t>(b.n * b.len);
  b.token_ids.assign(total, prep::Vocabulary::kPad);
  b.sentence_type_ids.assign(total, 0);
  b.position_ids.assign(total, 0);
  b.pad_mask.assign(total, 0);
  b.role.assign(total, Role::Pad);
  b.sent_positions.resize(reports.size());
  b.word_positions.resize(reports.size());

  for (std::int64_t i = 0; i < b.n; ++i) {
    const auto& r = reports[static_cast<std::size_t>(i)];
    std::int64_t p = 0;
    auto put = [&](std::int64_t tok, std::int64_t type, Role role) {
      const auto f = b.flat(i, p);
      b.token_ids[f] = tok;
      b.sentence_type_ids[f] = type;
      b.role[f] = role;
      b.pad_mask[f] = 1;
      ++p;
    };
    put(prep::Vocabulary::kCls, 0, Role::Cls);
    for (std::int64_t s = 0; s < r.num_sentences(); ++s) {
      const auto& ss = r.sentence_spans[static_cast<std::size_t>(s)];
      b.sent_positions[static_cast<std::size_t>(i)].push_back(p);
      put(vocab.sent_id(static_cast<int>(s + 1)), s + 1, Role::Sent);
      for (std::int64_t w = ss.begin; w < ss.end; ++w) {
        const auto& ws = r.word_spans[static_cast<std::size_t>(w)];
        const std::int64_t start = p;
        for (std::int64_t t = ws.begin; t < ws.end; ++t) put(r.token_ids[static_cast<std::size_t>(t)], s + 1, Role::Word);
        b.word_positions[static_cast<std::size_t>(i)].push_back({start, p});
      }
    }
    for (std::int64_t q = 0; q < b.len; ++q) b.position_ids[b.flat(i, q)] = q;
  }
  b.attn_mask = build_tri_mask(b);
  return b;
}

ag::AttnMaskPtr build_tri_mask(const TriBatch& batch) {
  auto m = std::make_shared<ag::AttnMask>();
  m->groups = batch.n;
  m->lq = batch.len;
  m->lk = batch.len;
  m->allowed.assign(static_cast<std::size_t>(batch.n * batch.len * batch.len), 0);
  for (std::int64_t b = 0; b < batch.n; ++b) {
    for (std::int64_t q = 0; q < batch.len; ++q) {
      const auto fq = batch.flat(b, q);
      const Role rq = batch.role[fq];
      if (rq == Role::Pad) continue;
      std::uint8_t* row = &m->allowed[static_cast<std::size_t>((b * batch.len + q) * batch.len)];
      for (std::int64_t k = 0; k < batch.len; ++k) {
        const auto fk = batch.flat(b, k);
        const Role rk = batch.role[fk];
        if (rk == Role::Pad) continue;
        if (rq != Role::Sent) {
          row[k] = 1;
        } else {
          row[k] = rk == Role::Cls || k == q ||
                   (rk == Role::Word && batch.sentence_type_ids[fk] == batch.sentence_type_ids[fq]);
        }
      }
    }
  }
  return m;
}

TextFeatureSet extract_features(const TriBatch& batch, const Tensor& states) {
  TextFeatureSet f;
  f.n = batch.n;
  f.n_sent = batch.max_sentences;
  f.n_word = batch.max_words;
  f.token_states = states;

  ag::Index cls(static_cast<std::size_t>(batch.n));
  for (std::int64_t b = 0; b < batch.n; ++b) cls[static_cast<std::size_t>(b)] = b * batch.len;
  f.rep = ag::gather_rows(states, std::move(cls));

  ag::Index sent(static_cast<std::size_t>(batch.n * f.n_sent), -1);
  f.sent_valid.assign(sent.size(), 0);
  auto words = std::make_shared<ag::Groups>();
  f.word_valid.assign(static_cast<std::size_t>(batch.n * f.n_word), 0);
  for (std::int64_t b = 0; b < batch.n; ++b) {
    const auto& sp = batch.sent_positions[static_cast<std::size_t>(b)];
    for (std::size_t s = 0; s < sp.size(); ++s) {
      const auto slot = static_cast<std::size_t>(b * f.n_sent) + s;
      sent[slot] = b * batch.len + sp[s];
      f.sent_valid[slot] = 1;
    }
    const auto& wp = batch.word_positions[static_cast<std::size_t>(b)];
    for (std::int64_t w = 0; w < f.n_word; ++w) {
      std::vector<std::int64_t> rows;
      if (w < static_cast<std::int64_t>(wp.size())) {
        for (auto t = wp[static_cast<std::size_t>(w)].begin; t < wp[static_cast<std::size_t>(w)].end; ++t)
          rows.push_back(b * batch.len + t);
        f.word_valid[static_cast<std::size_t>(b * f.n_word + w)] = 1;
      }
      words->add_group(rows);
    }
  }
  f.sent = ag::gather_rows(states, std::move(sent));
  f.word = ag::pool_rows(states, words);
  return f;
}

TransformerBlock::TransformerBlock(nn::ParamStore& store, const std::string& name, std::int64_t dim,
                                   std::int64_t heads, std::int64_t ffn_dim, Rng& rng, std::int64_t cross_kv_dim)
    : ln1_(store, name + ".ln1", dim),
      ln2_(store, name + ".ln2", dim),
      self_(store, name + ".attn", dim, heads, rng),
      ffn_(store, name + ".ffn", dim, ffn_dim, dim, rng) {
  if (cross_kv_dim > 0) {
    has_cross_ = true;
    ln_cross_ = nn::LayerNorm(store, name + ".ln_cross", dim);
    cross_ = nn::MultiHeadAttention(store, name + ".cross", dim, heads, rng, cross_kv_dim);
  }
}

Tensor TransformerBlock::operator()(const Tensor& x, std::int64_t len, const ag::AttnMaskPtr& mask,
                                    std::vector<double>* probs_out, const Tensor& ctx, std::int64_t lctx) const {
  const Tensor h = ln1_(x);
  Tensor y = ag::add(x, self_(h, len, h, len, mask, Tensor(), probs_out));
  if (has_cross_ && ctx.defined()) y = ag::add(y, cross_(ln_cross_(y), len, ctx, lctx));
  return ag::add(y, ffn_(ln2_(y)));
}

TriBert::TriBert(nn::ParamStore& store, const std::string& name, const TriBertConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto c = cfg.feature_dim;
  tok_ = store.normal(name + ".embed.token", {cfg.vocab_size, c}, rng);
  type_ = store.normal(name + ".embed.sentence_type", {cfg.max_num_sent + 1, c}, rng);
  pos_ = store.normal(name + ".embed.position", {cfg.max_len, c}, rng);
  for (std::int64_t l = 0; l < cfg.num_layers; ++l)
    blocks_.emplace_back(store, name + ".layer" + std::to_string(l), c, cfg.num_heads, c * cfg.ffn_mult, rng);
}

Tensor TriBert::embed_ids(const TriBatch& batch, const std::vector<std::int64_t>& ids) const {
  if (tok_.dim(0) != cfg_.vocab_size || tok_.dim(1) != cfg_.feature_dim)
    fail(Errc::ShapeMismatch, "token table does not match config");
  if (ids.size() != batch.token_ids.size()) fail(Errc::ShapeMismatch, "token id count differs from batch");
  if (batch.len > cfg_.max_len) fail(Errc::CapExceeded, "sequence longer than max_len");
  for (auto id : ids)
    if (id < 0 || id >= cfg_.vocab_size) fail(Errc::ShapeMismatch, "token id outside vocabulary");
  for (auto t : batch.sentence_type_ids)
    if (t > cfg_.max_num_sent) fail(Errc::CapExceeded, "sentence type beyond max_num_sent");
  return ag::add(ag::add(ag::gather_rows(tok_, ids), ag::gather_rows(type_, batch.sentence_type_ids)),
                 ag::gather_rows(pos_, batch.position_ids));
}

Tensor TriBert::embed(const TriBatch& batch) const { return embed_ids(batch, batch.token_ids); }

Tensor TriBert::run_layers(const Tensor& embeddings, const TriBatch& batch, std::vector<double>* last_attn) const {
  Tensor x = embeddings;
  for (std::size_t l = 0; l < blocks_.size(); ++l)
    x = blocks_[l](x, batch.len, batch.attn_mask, l + 1 == blocks_.size() ? last_attn : nullptr);
  return x;
}

TextFeatureSet TriBert::encode(const TriBatch& batch, const std::vector<std::int64_t>* token_ids,
                               std::vector<double>* last_attn) const {
  if (batch.n == 0 || batch.len == 0) fail(Errc::EmptyReport, "empty text batch");
  const Tensor e = embed_ids(batch, token_ids ? *token_ids : batch.token_ids);
  return extract_features(batch, run_layers(e, batch, last_attn));
}

MlmHead::MlmHead(nn::ParamStore& store, const std::string& name, std::int64_t dim, std::int64_t vocab, Rng& rng)
    : dense_(store, name + ".dense", dim, dim, rng), ln_(store, name + ".ln", dim), decoder_(store, name + ".decoder", dim, vocab, rng) {}

}  // namespace velvet::tribert
