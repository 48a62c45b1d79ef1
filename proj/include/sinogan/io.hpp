#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sinogan/image.hpp"

namespace sinogan::io {

using Bytes = std::vector<std::uint8_t>;

// Little-endian primitives shared by the binary formats.
void put_u32(Bytes& out, std::uint32_t v);
void put_f64(Bytes& out, double v);

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}
  std::uint32_t u32();
  double f64();
  std::string bytes(std::size_t n);
  void expect_magic(const char (&magic)[5]);
  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const;

 private:
  void need(std::size_t n) const;
  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

// IMG1: "IMG1", u32 rows, u32 cols, rows*cols f64.
Bytes encode_image(const Image& image);
Image decode_image(std::span<const std::uint8_t> data, const std::string& what = "image");
// SNG1: "SNG1", u32 views, u32 bins, f64 counts_scale, views*bins f64.
Bytes encode_sinogram(const Sinogram& sino);
Sinogram decode_sinogram(std::span<const std::uint8_t> data, const std::string& what = "sinogram");

Bytes read_file(const std::filesystem::path& path);
// Writes through a temporary sibling, then renames.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);
void write_sinogram(const std::filesystem::path& path, const Sinogram& sino);
Sinogram read_sinogram(const std::filesystem::path& path);

// 8-bit grayscale PNG, min-max windowed. Returns the (min, max) window used.
std::pair<double, double> write_png(const std::filesystem::path& path, std::span<const double> values,
                                    std::size_t rows, std::size_t cols);
// Horizontal strip of equally sized panels, each windowed independently.
void write_png_panels(const std::filesystem::path& path, const std::vector<std::vector<double>>& panels,
                      std::size_t rows, std::size_t cols);

}  // namespace sinogan::io
