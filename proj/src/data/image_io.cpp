#include "rtsmono/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <csetjmp>
#include <fstream>
#include <string>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace rtsmono {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

// libpng reports errors by longjmp; the message is kept here for the caller.
thread_local std::string png_last_error;

[[noreturn]] void png_error_handler(png_structp png, png_const_charp msg) {
  png_last_error = msg;
  png_longjmp(png, 1);
}
void png_warning_handler(png_structp, png_const_charp) {}

// Decodes into `pixels` as 8-bit RGB. Returns false on a libpng error.
bool decode_png(png_structp png, png_infop info, std::FILE* f, std::vector<unsigned char>& pixels,
                std::vector<png_bytep>& rows, png_uint_32& w, png_uint_32& h) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) {
    png_last_error = "unsupported pixel layout";
    return false;
  }
  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return true;
}

bool encode_png(png_structp png, png_infop info, std::FILE* f, std::vector<png_bytep>& rows, std::int64_t w,
                std::int64_t h, int channels) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  return true;
}

}  // namespace

Tensor<float> read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw std::runtime_error(path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  const bool ok = decode_png(png, info, f.get(), pixels, rows, w, h);
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw std::runtime_error(path.string() + ": " + png_last_error);

  Tensor<float> out({3, static_cast<std::int64_t>(h), static_cast<std::int64_t>(w)});
  const std::int64_t plane = static_cast<std::int64_t>(w) * h;
  for (std::int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) out[c * plane + i] = static_cast<float>(pixels[i * 3 + c]) / 255.0f;
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  int channels = 0;
  std::int64_t h = 0, w = 0;
  if (image.rank() == 2) {
    channels = 1;
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3)) {
    channels = static_cast<int>(image.dim(0));
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw ShapeError("write_png: expected [3,H,W], [1,H,W] or [H,W], got " + shape_string(image.shape()));
  }
  const std::int64_t plane = h * w;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(plane * channels));
  for (std::int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < channels; ++c) {
      const float v = std::clamp(image[c * plane + i], 0.0f, 1.0f);
      pixels[i * channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  }
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (std::int64_t y = 0; y < h; ++y) rows[y] = pixels.data() + y * w * channels;
  const bool ok = encode_png(png, info, f.get(), rows, w, h, channels);
  png_destroy_write_struct(&png, &info);
  if (!ok) throw std::runtime_error(path.string() + ": " + png_last_error);
}

Tensor<float> read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  long long w = 0, h = 0;
  double scale = 0;
  if (!(in >> magic >> w >> h >> scale)) throw std::runtime_error(path.string() + ": malformed PFM header");
  if (magic != "Pf") throw std::runtime_error(path.string() + ": only single-channel PFM (Pf) is supported");
  if (w <= 0 || h <= 0) throw std::runtime_error(path.string() + ": invalid PFM size");
  if (scale == 0) throw std::runtime_error(path.string() + ": PFM scale must be non-zero");
  in.get();  // single whitespace byte after the scale
  const bool little = scale < 0;
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(w * h));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(raw.size() * 4)) {
    throw std::runtime_error(path.string() + ": truncated PFM payload");
  }
  const bool host_little = std::endian::native == std::endian::little;
  Tensor<float> out({h, w});
  for (long long y = 0; y < h; ++y) {
    for (long long x = 0; x < w; ++x) {
      std::uint32_t bits = raw[static_cast<std::size_t>((h - 1 - y) * w + x)];
      if (little != host_little) bits = __builtin_bswap32(bits);
      out[y * w + x] = std::bit_cast<float>(bits);
    }
  }
  return out;
}

void write_pfm(const std::filesystem::path& path, const Tensor<float>& map) {
  if (map.rank() != 2 && !(map.rank() == 3 && map.dim(0) == 1)) {
    throw ShapeError("write_pfm: expected [H,W] or [1,H,W], got " + shape_string(map.shape()));
  }
  const std::int64_t h = map.dim(-2), w = map.dim(-1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "Pf\n" << w << ' ' << h << "\n-1.0\n";
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(w * h));
  const bool host_little = std::endian::native == std::endian::little;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(map[y * w + x]);
      if (!host_little) bits = __builtin_bswap32(bits);
      raw[static_cast<std::size_t>((h - 1 - y) * w + x)] = bits;
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace rtsmono
