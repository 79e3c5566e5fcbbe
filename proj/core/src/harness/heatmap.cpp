#include "velvet/harness/heatmap.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>

#include <png.h>

#include "velvet/error.hpp"

namespace velvet::harness {

void write_heatmap_png(const std::filesystem::path& path, const std::vector<double>& values, std::int64_t rows,
                       std::int64_t cols, std::int64_t cell) {
  if (rows <= 0 || cols <= 0 || cell <= 0 || static_cast<std::int64_t>(values.size()) != rows * cols)
    fail(Errc::ShapeMismatch, "heatmap size does not match values");
  const double hi = std::max(*std::max_element(values.begin(), values.end()), 1e-12);
  const auto width = static_cast<png_uint_32>(cols * cell), height = static_cast<png_uint_32>(rows * cell);

  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(Errc::IoError, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(Errc::IoError, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::IoError, "libpng error writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(width);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) {
      const double v = std::clamp(values[static_cast<std::size_t>(r * cols + c)] / hi, 0.0, 1.0);
      std::fill_n(row.begin() + c * cell, cell, static_cast<png_byte>(v * 255.0 + 0.5));
    }
    for (std::int64_t k = 0; k < cell; ++k) png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace velvet::harness
