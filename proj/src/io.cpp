#include "sinogan/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <memory>

#include "sinogan/errors.hpp"

namespace sinogan {

double Image::max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
double Sinogram::max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

namespace io {

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(Bytes& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void Reader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) throw FormatError(what_ + ": truncated data");
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

double Reader::f64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return std::bit_cast<double>(v);
}

std::string Reader::bytes(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void Reader::expect_magic(const char (&magic)[5]) {
  if (bytes(4) != std::string(magic, 4)) throw FormatError(what_ + ": bad magic, expected " + magic);
}

void Reader::expect_end() const {
  if (pos_ != data_.size()) throw FormatError(what_ + ": trailing bytes");
}

namespace {

void put_magic(Bytes& out, const char* magic) { out.insert(out.end(), magic, magic + 4); }

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw FormatError(std::string(what) + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

std::vector<double> read_values(Reader& r, std::size_t count) {
  if (r.remaining() / 8 < count) throw FormatError("truncated value block");
  std::vector<double> v(count);
  for (double& x : v) x = r.f64();
  return v;
}

}  // namespace

Bytes encode_image(const Image& image) {
  Bytes out;
  out.reserve(12 + image.values.size() * 8);
  put_magic(out, "IMG1");
  put_u32(out, checked_u32(image.rows, "image rows"));
  put_u32(out, checked_u32(image.cols, "image cols"));
  for (double v : image.values) put_f64(out, v);
  return out;
}

Image decode_image(std::span<const std::uint8_t> data, const std::string& what) {
  Reader r(data, what);
  r.expect_magic("IMG1");
  Image img;
  img.rows = r.u32();
  img.cols = r.u32();
  img.values = read_values(r, img.rows * img.cols);
  r.expect_end();
  return img;
}

Bytes encode_sinogram(const Sinogram& sino) {
  Bytes out;
  out.reserve(20 + sino.values.size() * 8);
  put_magic(out, "SNG1");
  put_u32(out, checked_u32(sino.views, "sinogram views"));
  put_u32(out, checked_u32(sino.bins, "sinogram bins"));
  put_f64(out, sino.counts_scale);
  for (double v : sino.values) put_f64(out, v);
  return out;
}

Sinogram decode_sinogram(std::span<const std::uint8_t> data, const std::string& what) {
  Reader r(data, what);
  r.expect_magic("SNG1");
  Sinogram s;
  s.views = r.u32();
  s.bins = r.u32();
  s.counts_scale = r.f64();
  s.values = read_values(r, s.views * s.bins);
  r.expect_end();
  return s;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

void write_image(const std::filesystem::path& path, const Image& image) { write_file(path, encode_image(image)); }
Image read_image(const std::filesystem::path& path) { return decode_image(read_file(path), path.string()); }
void write_sinogram(const std::filesystem::path& path, const Sinogram& sino) {
  write_file(path, encode_sinogram(sino));
}
Sinogram read_sinogram(const std::filesystem::path& path) { return decode_sinogram(read_file(path), path.string()); }

namespace {

std::pair<double, double> window_of(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return {*lo, *hi};
}

std::uint8_t to_gray(double v, double lo, double hi) {
  if (hi <= lo) return 0;
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(t * 255.0));
}

void write_gray_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, std::size_t rows,
                    std::size_t cols) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < rows; ++r) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * cols));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

std::pair<double, double> write_png(const std::filesystem::path& path, std::span<const double> values,
                                    std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw DimensionError("write_png: value count does not match dims");
  const auto [lo, hi] = window_of(values);
  std::vector<std::uint8_t> pixels(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) pixels[i] = to_gray(values[i], lo, hi);
  write_gray_png(path, pixels, rows, cols);
  return {lo, hi};
}

void write_png_panels(const std::filesystem::path& path, const std::vector<std::vector<double>>& panels,
                      std::size_t rows, std::size_t cols) {
  constexpr std::size_t gap = 4;
  const std::size_t n = panels.size();
  if (n == 0) throw DimensionError("write_png_panels: no panels");
  const std::size_t width = n * cols + (n - 1) * gap;
  std::vector<std::uint8_t> pixels(rows * width, 255);
  for (std::size_t p = 0; p < n; ++p) {
    if (panels[p].size() != rows * cols) throw DimensionError("write_png_panels: panel size mismatch");
    const auto [lo, hi] = window_of(panels[p]);
    const std::size_t x0 = p * (cols + gap);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) pixels[r * width + x0 + c] = to_gray(panels[p][r * cols + c], lo, hi);
    }
  }
  write_gray_png(path, pixels, rows, width);
}

}  // namespace io
}  // namespace sinogan
