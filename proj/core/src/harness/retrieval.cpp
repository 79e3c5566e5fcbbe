#include "velvet/harness/retrieval.hpp"

#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "velvet/error.hpp"

namespace velvet::harness {

std::int64_t rank_of(const std::vector<double>& scores, std::int64_t target) {
  const double s = scores[static_cast<std::size_t>(target)];
  std::int64_t r = 0;
  for (std::int64_t j = 0; j < static_cast<std::int64_t>(scores.size()); ++j) {
    const double v = scores[static_cast<std::size_t>(j)];
    if (v > s || (v == s && j < target)) ++r;
  }
  return r;
}

RetrievalReport recall_at_k(const Embeddings& e, const std::vector<std::int64_t>& ks) {
  if (e.n < 2) fail(Errc::BatchTooSmall, "retrieval needs at least two pairs");
  const auto n = static_cast<std::size_t>(e.n), d = static_cast<std::size_t>(e.dim);
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += e.scans[i * d + k] * e.reports[j * d + k];
      sim[i * n + j] = s;
    }
  RetrievalReport r;
  r.n = e.n;
  r.ks = ks;
  std::vector<std::int64_t> srr_rank(n), rsr_rank(n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = sim[i * n + j];
    srr_rank[i] = rank_of(row, static_cast<std::int64_t>(i));
    for (std::size_t j = 0; j < n; ++j) row[j] = sim[j * n + i];
    rsr_rank[i] = rank_of(row, static_cast<std::int64_t>(i));
  }
  for (auto k : ks) {
    double a = 0, b = 0;
    for (std::size_t i = 0; i < n; ++i) {
      a += srr_rank[i] < k;
      b += rsr_rank[i] < k;
    }
    r.srr.push_back(a / static_cast<double>(n));
    r.rsr.push_back(b / static_cast<double>(n));
  }
  // FNV-1a over the raw similarity bytes.
  std::uint64_t h = 1469598103934665603ull;
  for (double v : sim) {
    unsigned char bytes[sizeof v];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ull;
  }
  r.sim_hash = h;
  return r;
}

Embeddings embed_pairs(const Model& model, const Dataset& data, std::int64_t batch_size) {
  ag::NoGradGuard guard;
  Embeddings e;
  e.n = data.size();
  for (std::int64_t b = 0; b < e.n; b += batch_size) {
    const auto end = std::min(e.n, b + batch_size);
    std::vector<prep::TokenizedReport> reports;
    std::vector<const vision3d::Grid*> vols;
    for (auto i = b; i < end; ++i) {
      reports.push_back(data.pairs[static_cast<std::size_t>(i)].tokens);
      vols.push_back(&data.pairs[static_cast<std::size_t>(i)].volume);
    }
    const auto batch = tribert::build_tri_batch(reports, model.vocab, model.text_cfg);
    const auto t = ag::l2_normalize_rows(model.cm.project_text_rep(model.text.encode(batch).rep));
    const auto v = ag::l2_normalize_rows(model.cm.project_vision_top(model.vision.encode(vols).pooled_top));
    e.dim = t.dim(1);
    e.reports.insert(e.reports.end(), t.data().begin(), t.data().end());
    e.scans.insert(e.scans.end(), v.data().begin(), v.data().end());
  }
  return e;
}

RetrievalReport eval_retrieval(const Model& model, const Dataset& data, const std::vector<std::int64_t>& ks,
                               std::int64_t batch_size) {
  return recall_at_k(embed_pairs(model, data, batch_size), ks);
}

std::string RetrievalReport::to_json() const {
  nlohmann::json j;
  j["n"] = n;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    j["SRR"]["R@" + std::to_string(ks[i])] = srr[i];
    j["RSR"]["R@" + std::to_string(ks[i])] = rsr[i];
  }
  std::ostringstream h;
  h << std::hex << sim_hash;
  j["similarity_hash"] = h.str();
  return j.dump(2);
}

}  // namespace velvet::harness
