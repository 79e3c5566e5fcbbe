#include "velvet/vision3d/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "velvet/error.hpp"

namespace velvet::vision3d {

namespace {

static_assert(std::endian::native == std::endian::little, "volume container IO assumes a little-endian host");

// Source coordinate for output index i when mapping n_in samples onto n_out.
struct Tap {
  std::int64_t i0, i1;
  double t;
};

Tap tap(std::int64_t i, std::int64_t n_in, std::int64_t n_out) {
  double s = (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
  const auto i0 = static_cast<std::int64_t>(std::floor(s));
  const std::int64_t i1 = std::min(i0 + 1, n_in - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}

}  // namespace

FilterResult filter_record(const VolumeRecord& rec, std::int64_t min_slices) {
  if (rec.slices.d < min_slices)
    return {false, "only " + std::to_string(rec.slices.d) + " slices (< " + std::to_string(min_slices) + ")"};
  if (rec.slices.h <= 0 || rec.slices.w <= 0) return {false, "empty frame"};
  return {};
}

std::vector<std::int64_t> uniform_slice_indices(std::int64_t s, std::int64_t t) {
  if (t <= 0 || s < t) fail(Errc::ShapeMismatch, "cannot sample " + std::to_string(t) + " of " + std::to_string(s));
  std::vector<std::int64_t> idx(static_cast<std::size_t>(t));
  if (t == 1) return idx;
  for (std::int64_t k = 0; k < t; ++k) {
    // round half up on the exact rational k (s - 1) / (t - 1)
    idx[static_cast<std::size_t>(k)] = (2 * k * (s - 1) + (t - 1)) / (2 * (t - 1));
  }
  return idx;
}

Grid upsample_z2(const Grid& g) {
  Grid out(2 * g.d, g.h, g.w);
  const std::int64_t plane = g.h * g.w;
  for (std::int64_t z = 0; z < out.d; ++z) {
    const Tap tz = tap(z, g.d, out.d);
    for (std::int64_t p = 0; p < plane; ++p) {
      const double a = g.data[static_cast<std::size_t>(tz.i0 * plane + p)];
      const double b = g.data[static_cast<std::size_t>(tz.i1 * plane + p)];
      out.data[static_cast<std::size_t>(z * plane + p)] = static_cast<float>(a + tz.t * (b - a));
    }
  }
  return out;
}

Grid resize(const Grid& g, std::int64_t d, std::int64_t h, std::int64_t w) {
  if (g.size() == 0) fail(Errc::ShapeMismatch, "resize of empty grid");
  if (g.d == d && g.h == h && g.w == w) return g;
  Grid out(d, h, w);
  std::vector<Tap> ty, tx;
  for (std::int64_t y = 0; y < h; ++y) ty.push_back(tap(y, g.h, h));
  for (std::int64_t x = 0; x < w; ++x) tx.push_back(tap(x, g.w, w));
  for (std::int64_t z = 0; z < d; ++z) {
    const Tap tz = tap(z, g.d, d);
    for (std::int64_t y = 0; y < h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < w; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        auto plane = [&](std::int64_t zz) {
          const double v00 = g.at(zz, a.i0, b.i0), v01 = g.at(zz, a.i0, b.i1);
          const double v10 = g.at(zz, a.i1, b.i0), v11 = g.at(zz, a.i1, b.i1);
          const double top = v00 + b.t * (v01 - v00), bot = v10 + b.t * (v11 - v10);
          return top + a.t * (bot - top);
        };
        const double p0 = plane(tz.i0);
        const double p1 = tz.t == 0.0 ? p0 : plane(tz.i1);
        out.at(z, y, x) = static_cast<float>(p0 + tz.t * (p1 - p0));
      }
    }
  }
  return out;
}

void minmax_normalize(Grid& g) {
  if (g.data.empty()) return;
  const auto [lo, hi] = std::minmax_element(g.data.begin(), g.data.end());
  const double a = *lo, b = *hi;
  if (!std::isfinite(a) || !std::isfinite(b)) fail(Errc::RejectedRecord, "non-finite voxel values");
  if (b <= a) {
    std::fill(g.data.begin(), g.data.end(), 0.0f);
    return;
  }
  for (float& v : g.data) v = static_cast<float>((v - a) / (b - a));
}

Grid resample_to_volume(const VolumeRecord& rec, std::int64_t size, std::int64_t min_slices) {
  const auto f = filter_record(rec, min_slices);
  if (!f.accepted) fail(Errc::RejectedRecord, rec.id + ": " + f.reason);
  Grid z = rec.slices;
  while (z.d < size) z = upsample_z2(z);
  if (z.d > size) {
    const auto idx = uniform_slice_indices(z.d, size);
    Grid picked(size, z.h, z.w);
    const auto plane = static_cast<std::size_t>(z.h * z.w);
    for (std::size_t k = 0; k < idx.size(); ++k)
      std::copy_n(z.data.begin() + static_cast<std::ptrdiff_t>(idx[k] * z.h * z.w), plane,
                  picked.data.begin() + static_cast<std::ptrdiff_t>(k * plane));
    z = std::move(picked);
  }
  Grid out = resize(z, size, size, size);
  minmax_normalize(out);
  return out;
}

SubVolume extract_subvolume(const Grid& vol, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.crop <= 0 || cfg.out <= 0) fail(Errc::ConfigError, "crop and output size must be positive");
  if (cfg.crop > vol.d || cfg.crop > vol.h || cfg.crop > vol.w)
    fail(Errc::CropLargerThanVolume, "crop " + std::to_string(cfg.crop) + " exceeds volume");
  SubVolume s;
  s.origin = {rng.below(vol.d - cfg.crop + 1), rng.below(vol.h - cfg.crop + 1), rng.below(vol.w - cfg.crop + 1)};
  Grid crop(cfg.crop, cfg.crop, cfg.crop);
  for (std::int64_t z = 0; z < cfg.crop; ++z)
    for (std::int64_t y = 0; y < cfg.crop; ++y)
      for (std::int64_t x = 0; x < cfg.crop; ++x)
        crop.at(z, y, x) = vol.at(s.origin[0] + z, s.origin[1] + y, s.origin[2] + x);
  s.grid = resize(crop, cfg.out, cfg.out, cfg.out);
  if (rng.bernoulli(cfg.p_scale)) s.scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  if (rng.bernoulli(cfg.p_shift)) s.shift = rng.uniform(-cfg.shift, cfg.shift);
  for (bool& f : s.flipped) f = rng.bernoulli(cfg.p_flip);
  if (s.scale != 1.0 || s.shift != 0.0)
    for (float& v : s.grid.data) v = static_cast<float>(v * s.scale + s.shift);
  Grid& g = s.grid;
  if (s.flipped[0] || s.flipped[1] || s.flipped[2]) {
    Grid f(g.d, g.h, g.w);
    for (std::int64_t z = 0; z < g.d; ++z)
      for (std::int64_t y = 0; y < g.h; ++y)
        for (std::int64_t x = 0; x < g.w; ++x)
          f.at(z, y, x) = g.at(s.flipped[0] ? g.d - 1 - z : z, s.flipped[1] ? g.h - 1 - y : y,
                               s.flipped[2] ? g.w - 1 - x : x);
    g = std::move(f);
  }
  return s;
}

void write_record(const std::filesystem::path& dir, const VolumeRecord& rec) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta = {{"id", rec.id},
                         {"shape", {rec.slices.d, rec.slices.h, rec.slices.w}},
                         {"dtype", "f32"},
                         {"spacing", rec.spacing}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  std::ofstream raw(dir / "volume.raw", std::ios::binary);
  if (!raw) fail(Errc::IoError, "cannot write " + (dir / "volume.raw").string());
  raw.write(reinterpret_cast<const char*>(rec.slices.data.data()),
            static_cast<std::streamsize>(rec.slices.data.size() * sizeof(float)));
}

VolumeRecord read_record(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "meta.json");
  if (!mf) fail(Errc::IoError, "missing " + (dir / "meta.json").string());
  VolumeRecord rec;
  try {
    const auto meta = nlohmann::json::parse(mf);
    rec.id = meta.at("id").get<std::string>();
    const auto shape = meta.at("shape").get<std::vector<std::int64_t>>();
    if (shape.size() != 3 || meta.at("dtype").get<std::string>() != "f32")
      fail(Errc::CorruptFile, (dir / "meta.json").string() + ": expected 3-d f32 shape");
    rec.slices = Grid(shape[0], shape[1], shape[2]);
    if (meta.contains("spacing")) rec.spacing = meta["spacing"].get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::CorruptFile, (dir / "meta.json").string() + ": " + e.what());
  }
  const auto raw_path = dir / "volume.raw";
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(raw_path, ec);
  if (ec) fail(Errc::IoError, "missing " + raw_path.string());
  if (bytes != rec.slices.data.size() * sizeof(float))
    fail(Errc::CorruptFile, raw_path.string() + ": size does not match meta.json shape");
  std::ifstream raw(raw_path, std::ios::binary);
  raw.read(reinterpret_cast<char*>(rec.slices.data.data()), static_cast<std::streamsize>(bytes));
  return rec;
}

std::set<std::string> read_exclusion_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open exclusion list " + path.string());
  std::set<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    ids.insert(line.substr(b, e - b + 1));
  }
  return ids;
}

}  // namespace velvet::vision3d
