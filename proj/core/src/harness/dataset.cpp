#include "velvet/harness/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <fstream>

#include "velvet/error.hpp"

namespace velvet::harness {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 3> kShapeWords = {"ellipsoid", "box", "tube"};
constexpr std::array<const char*, 3> kSizeWords = {"small", "medium", "large"};
constexpr std::array<const char*, 5> kRegionWords = {"upper left", "upper right", "lower left", "lower right",
                                                     "central"};
constexpr std::array<const char*, 4> kCountWords = {"one", "two", "three", "four"};
constexpr std::array<double, 3> kRadius = {0.07, 0.11, 0.16};

std::array<double, 2> region_center(Region r, Rng& rng) {
  auto band = [&](bool low) { return low ? rng.uniform(0.22, 0.38) : rng.uniform(0.62, 0.78); };
  switch (r) {
    case Region::UpperLeft: return {band(true), band(true)};
    case Region::UpperRight: return {band(true), band(false)};
    case Region::LowerLeft: return {band(false), band(true)};
    case Region::LowerRight: return {band(false), band(false)};
    case Region::Central: return {rng.uniform(0.42, 0.58), rng.uniform(0.42, 0.58)};
  }
  return {0.5, 0.5};
}

bool inside(const Primitive& p, double z, double y, double x) {
  const double dz = (z - p.center[0]) / p.radius[0];
  const double dy = (y - p.center[1]) / p.radius[1];
  const double dx = (x - p.center[2]) / p.radius[2];
  switch (p.shape) {
    case Shape::Ellipsoid: return dz * dz + dy * dy + dx * dx <= 1.0;
    case Shape::Box: return std::abs(dz) <= 1.0 && std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
    case Shape::Tube: return std::abs(dz) <= 2.0 && 4.0 * (dy * dy + dx * dx) <= 1.0;
  }
  return false;
}

PairSample make_pair(const std::string& id, const vision3d::VolumeRecord& rec, const std::string& text,
                     std::int64_t in_size, const prep::Vocabulary& vocab, const prep::TextCaps& caps) {
  PairSample p;
  p.id = id;
  p.volume = vision3d::resample_to_volume(rec, in_size);
  p.report = text;
  p.tokens = prep::tokenize(prep::segment_report(text), vocab, caps);
  return p;
}

}  // namespace

std::string describe(const Primitive& p) {
  return std::string("There is a ") + kSizeWords[static_cast<std::size_t>(p.size)] + (p.bright ? " bright " : " faint ") +
         kShapeWords[static_cast<std::size_t>(p.shape)] + " in the " + kRegionWords[static_cast<std::size_t>(p.region)] +
         " region.";
}

SynthSample synth_sample(const std::string& id, Rng& rng, std::int64_t size) {
  SynthSample s;
  const auto count = 1 + rng.below(4);
  for (std::int64_t i = 0; i < count; ++i) {
    Primitive p;
    p.shape = static_cast<Shape>(rng.below(3));
    p.size = static_cast<SizeClass>(rng.below(3));
    p.bright = rng.bernoulli(0.5);
    p.region = static_cast<Region>(rng.below(5));
    const auto yx = region_center(p.region, rng);
    p.center = {rng.uniform(0.35, 0.65), yx[0], yx[1]};
    const double r = kRadius[static_cast<std::size_t>(p.size)];
    for (double& a : p.radius) a = r * rng.uniform(0.85, 1.15);
    s.primitives.push_back(p);
  }

  const std::int64_t depth = 56 + rng.below(89);
  vision3d::Grid g(depth, size, size);
  for (std::int64_t z = 0; z < depth; ++z)
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        const double u = (z + 0.5) / static_cast<double>(depth), v = (y + 0.5) / static_cast<double>(size),
                     w = (x + 0.5) / static_cast<double>(size);
        double val = 0.1 + 0.05 * rng.uniform();
        for (const auto& p : s.primitives)
          if (inside(p, u, v, w)) val = std::max(val, p.bright ? 0.9 : 0.45);
        g.at(z, y, x) = static_cast<float>(val);
      }
  s.record.id = id;
  s.record.slices = std::move(g);
  s.record.spacing = {96.0 / static_cast<double>(depth), 1.0, 1.0};

  std::string text;
  for (const auto& p : s.primitives) text += describe(p) + " ";
  text += std::string("In total ") + kCountWords[static_cast<std::size_t>(count - 1)] +
          (count == 1 ? " finding is seen." : " findings are seen.");
  s.report = {id, text};
  return s;
}

std::vector<SynthSample> synth_dataset(std::int64_t n, std::uint64_t seed, std::int64_t size) {
  if (n < 2) fail(Errc::ConfigError, "synthetic dataset needs at least two pairs");
  std::vector<SynthSample> out;
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)), "synth");
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05lld", static_cast<long long>(i));
    out.push_back(synth_sample(id, rng, size));
  }
  return out;
}

void write_raw_dataset(const fs::path& dir, const std::vector<SynthSample>& samples) {
  fs::create_directories(dir / "scans");
  std::vector<prep::RawReport> reports;
  for (const auto& s : samples) {
    vision3d::write_record(dir / "scans" / s.record.id, s.record);
    reports.push_back(s.report);
  }
  prep::write_reports_jsonl(dir / "reports.jsonl", reports);
}

Dataset load_dataset(const fs::path& dir, std::int64_t in_size, const prep::Vocabulary& vocab,
                     const prep::TextCaps& caps) {
  Dataset d;
  for (const auto& r : prep::read_reports_jsonl(dir / "reports.jsonl")) {
    const auto rec = vision3d::read_record(dir / "scans" / r.id);
    d.pairs.push_back(make_pair(r.id, rec, r.text, in_size, vocab, caps));
  }
  return d;
}

Dataset to_dataset(const std::vector<SynthSample>& samples, std::int64_t in_size, const prep::Vocabulary& vocab,
                   const prep::TextCaps& caps) {
  Dataset d;
  for (const auto& s : samples) d.pairs.push_back(make_pair(s.report.id, s.record, s.report.text, in_size, vocab, caps));
  return d;
}

PrepSummary prepare_dataset(const fs::path& in, const fs::path& out, const fs::path& exclude,
                            const prep::Vocabulary& vocab) {
  const auto excluded = exclude.empty() ? std::set<std::string>{} : vision3d::read_exclusion_list(exclude);
  PrepSummary sum;
  std::vector<prep::RawReport> kept;
  std::vector<prep::TokenizedReport> tokens;
  fs::create_directories(out / "scans");
  for (const auto& r : prep::read_reports_jsonl(in / "reports.jsonl")) {
    if (excluded.count(r.id)) {
      ++sum.excluded;
      sum.log.push_back(r.id + ": excluded");
      continue;
    }
    auto rec = vision3d::read_record(in / "scans" / r.id);
    const auto verdict = vision3d::filter_record(rec);
    if (!verdict.accepted) {
      ++sum.rejected;
      sum.log.push_back(r.id + ": " + verdict.reason);
      continue;
    }
    prep::SentenceList sentences;
    try {
      sentences = prep::segment_report(r.text);
    } catch (const Error& e) {
      ++sum.rejected;
      sum.log.push_back(r.id + ": " + e.what());
      continue;
    }
    vision3d::VolumeRecord cube{rec.id, vision3d::resample_to_volume(rec), {1.0, 1.0, 1.0}};
    vision3d::write_record(out / "scans" / r.id, cube);
    std::string text;
    for (const auto& s : sentences) text += (text.empty() ? "" : " ") + s + ".";
    kept.push_back({r.id, text});
    tokens.push_back(prep::tokenize(sentences, vocab));
    ++sum.kept;
  }
  prep::write_reports_jsonl(out / "reports.jsonl", kept);
  vocab.save(out / "vocab.txt");
  if (!tokens.empty()) {
    std::ofstream csv(out / "report_stats.csv");
    csv << prep::corpus_stats(tokens).to_csv();
  }
  return sum;
}

}  // namespace velvet::harness
