#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "velvet/rng.hpp"

namespace velvet::vision3d {

/// Dense float grid indexed (z, y, x), x fastest.
struct Grid {
  std::int64_t d = 0, h = 0, w = 0;
  std::vector<float> data;

  Grid() = default;
  Grid(std::int64_t d_, std::int64_t h_, std::int64_t w_, float fill = 0.0f)
      : d(d_), h(h_), w(w_), data(static_cast<std::size_t>(d_ * h_ * w_), fill) {}

  std::int64_t size() const { return d * h * w; }
  std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return static_cast<std::size_t>((z * h + y) * w + x);
  }
  float& at(std::int64_t z, std::int64_t y, std::int64_t x) { return data[index(z, y, x)]; }
  float at(std::int64_t z, std::int64_t y, std::int64_t x) const { return data[index(z, y, x)]; }
  bool same_shape(const Grid& o) const { return d == o.d && h == o.h && w == o.w; }
  bool operator==(const Grid&) const = default;
};

/// Raw scan: `slices.d` frames of slices.h x slices.w.
struct VolumeRecord {
  std::string id;
  Grid slices;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

inline constexpr std::int64_t kDefaultVolumeSize = 96;
inline constexpr std::int64_t kMinSlices = 48;

struct FilterResult {
  bool accepted = true;
  std::string reason;
};

FilterResult filter_record(const VolumeRecord& rec, std::int64_t min_slices = kMinSlices);

/// Slice indices round(k (s - 1) / (t - 1)), k = 0 .. t - 1, for s >= t.
std::vector<std::int64_t> uniform_slice_indices(std::int64_t s, std::int64_t t);

/// Linear z-upsampling by 2 with half-voxel alignment.
Grid upsample_z2(const Grid& g);

/// Trilinear resize with half-voxel alignment; equal sizes copy exactly.
Grid resize(const Grid& g, std::int64_t d, std::int64_t h, std::int64_t w);

/// Min-max to [0, 1]; constant grids become all zero.
void minmax_normalize(Grid& g);

/// Cube of side `size`: z sampled or upsampled, x/y bilinear, min-max
/// normalized. Throws RejectedRecord for records the filter rejects.
Grid resample_to_volume(const VolumeRecord& rec, std::int64_t size = kDefaultVolumeSize,
                        std::int64_t min_slices = kMinSlices);

struct AugmentConfig {
  std::int64_t crop = 64;
  std::int64_t out = kDefaultVolumeSize;
  double p_scale = 0.5;
  double scale_lo = 0.9, scale_hi = 1.1;
  double p_shift = 0.5;
  double shift = 0.1;
  double p_flip = 0.5;
};

struct SubVolume {
  Grid grid;
  std::array<std::int64_t, 3> origin{};
  std::array<bool, 3> flipped{};
  double scale = 1.0;
  double shift = 0.0;
};

/// Random crop, zoom to `cfg.out`, intensity scale/shift, per-axis flips.
SubVolume extract_subvolume(const Grid& vol, const AugmentConfig& cfg, Rng& rng);

// Container: <dir>/meta.json + <dir>/volume.raw (little-endian f32, z, y, x).
void write_record(const std::filesystem::path& dir, const VolumeRecord& rec);
VolumeRecord read_record(const std::filesystem::path& dir);
/// One id per line; blank lines and '#' comments ignored.
std::set<std::string> read_exclusion_list(const std::filesystem::path& path);

}  // namespace velvet::vision3d
