#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "velvet/harness/dataset.hpp"
#include "velvet/harness/model.hpp"

namespace velvet::harness {

struct RetrievalReport {
  std::int64_t n = 0;
  std::vector<std::int64_t> ks;
  std::vector<double> srr;  // scan -> report, per k
  std::vector<double> rsr;  // report -> scan, per k
  std::uint64_t sim_hash = 0;

  std::string to_json() const;
};

/// Row-major [n, dim] embeddings of paired items.
struct Embeddings {
  std::int64_t n = 0, dim = 0;
  std::vector<double> scans, reports;
};

/// 0-based rank of `target` in `scores`: higher first, ties to the lower index.
std::int64_t rank_of(const std::vector<double>& scores, std::int64_t target);

/// Recall at each k by dot product. Throws BatchTooSmall for n < 2.
RetrievalReport recall_at_k(const Embeddings& e, const std::vector<std::int64_t>& ks);

/// Unit-length projected [CLS] and pooled top-level features for every pair.
Embeddings embed_pairs(const Model& model, const Dataset& data, std::int64_t batch_size = 8);

RetrievalReport eval_retrieval(const Model& model, const Dataset& data, const std::vector<std::int64_t>& ks,
                               std::int64_t batch_size = 8);

}  // namespace velvet::harness
