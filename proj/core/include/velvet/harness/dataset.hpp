#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "velvet/prep/report_prep.hpp"
#include "velvet/prep/vocab.hpp"
#include "velvet/rng.hpp"
#include "velvet/vision3d/volume.hpp"

namespace velvet::harness {

/// One scan/report pair ready for training.
struct PairSample {
  std::string id;
  vision3d::Grid volume;  // normalized cube
  std::string report;
  prep::TokenizedReport tokens;
};

struct Dataset {
  std::vector<PairSample> pairs;
  std::int64_t size() const { return static_cast<std::int64_t>(pairs.size()); }
};

enum class Shape : std::uint8_t { Ellipsoid, Box, Tube };
enum class SizeClass : std::uint8_t { Small, Medium, Large };
enum class Region : std::uint8_t { UpperLeft, UpperRight, LowerLeft, LowerRight, Central };

struct Primitive {
  Shape shape = Shape::Ellipsoid;
  SizeClass size = SizeClass::Medium;
  bool bright = true;
  Region region = Region::Central;
  std::array<double, 3> center{};  // unit cube, (z, y, x)
  std::array<double, 3> radius{};
};

struct SynthSample {
  vision3d::VolumeRecord record;
  prep::RawReport report;
  std::vector<Primitive> primitives;
};

/// Template sentence for one primitive, e.g. "There is a small faint box in
/// the lower right region."
std::string describe(const Primitive& p);

/// One to four primitives rendered into a scan of `size` x `size` frames with
/// a random slice count, plus a templated report ending in a count sentence.
SynthSample synth_sample(const std::string& id, Rng& rng, std::int64_t size = vision3d::kDefaultVolumeSize);
/// Throws ConfigError for n < 2.
std::vector<SynthSample> synth_dataset(std::int64_t n, std::uint64_t seed,
                                       std::int64_t size = vision3d::kDefaultVolumeSize);

/// Layout: <dir>/reports.jsonl and <dir>/scans/<id>/{meta.json, volume.raw}.
void write_raw_dataset(const std::filesystem::path& dir, const std::vector<SynthSample>& samples);

/// Reads a dataset directory, resampling each scan to `in_size`.
Dataset load_dataset(const std::filesystem::path& dir, std::int64_t in_size, const prep::Vocabulary& vocab,
                     const prep::TextCaps& caps = {});

/// In-memory equivalent of write + load.
Dataset to_dataset(const std::vector<SynthSample>& samples, std::int64_t in_size, const prep::Vocabulary& vocab,
                   const prep::TextCaps& caps = {});

struct PrepSummary {
  std::int64_t kept = 0;
  std::int64_t excluded = 0;
  std::int64_t rejected = 0;
  std::vector<std::string> log;  // one line per dropped pair
};

/// Applies the exclusion list and slice filter, resamples kept scans to the
/// default cube, rewrites reports as cleaned sentences, and writes
/// `report_stats.csv` and `vocab.txt` next to them.
PrepSummary prepare_dataset(const std::filesystem::path& in, const std::filesystem::path& out,
                            const std::filesystem::path& exclude, const prep::Vocabulary& vocab);

}  // namespace velvet::harness
