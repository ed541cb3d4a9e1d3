#pragma once

// 8-bit PNG encode/decode (in memory and on disk) and tensor conversion.

#include <png.h>
#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "headfield/tensor.hpp"

namespace headfield {

/// Interleaved 8-bit image, `channels` = 1 (gray) or 3 (RGB).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const Image8&) const = default;
};

inline std::uint8_t quantize_unit(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

/// [C,H,W] planar tensor in [0,1] -> interleaved 8-bit.
template <class T>
Image8 to_image8(const Tensor<T>& t) {
  Image8 img;
  if (t.rank() == 2) {
    img.channels = 1;
    img.height = static_cast<int>(t.dim(0));
    img.width = static_cast<int>(t.dim(1));
  } else if (t.rank() == 3 && (t.dim(0) == 3 || t.dim(0) == 1)) {
    img.channels = static_cast<int>(t.dim(0));
    img.height = static_cast<int>(t.dim(1));
    img.width = static_cast<int>(t.dim(2));
  } else {
    throw DimensionError("cannot convert tensor of shape " + shape_string(t.shape()) + " to an image");
  }
  const auto plane = static_cast<std::size_t>(img.width) * img.height;
  img.pixels.resize(plane * img.channels);
  const auto& v = t.values();
  for (int c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) img.pixels[i * img.channels + c] = quantize_unit(static_cast<double>(v[c * plane + i]));
  return img;
}

/// Interleaved 8-bit -> [C,H,W] (or [H,W] when `as_plane` and single channel) in [0,1].
template <class T>
Tensor<T> from_image8(const Image8& img, bool as_plane = false) {
  const auto plane = static_cast<std::size_t>(img.width) * img.height;
  std::vector<T> v(plane * img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) v[c * plane + i] = static_cast<T>(img.pixels[i * img.channels + c]) / T(255);
  if (as_plane && img.channels == 1) return Tensor<T>::from({img.height, img.width}, std::move(v));
  return Tensor<T>::from({img.channels, img.height, img.width}, std::move(v));
}

namespace detail {

inline void png_write_to_string(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

inline void png_flush_noop(png_structp) {}

struct PngReadState {
  const std::string* bytes;
  std::size_t pos;
};

inline void png_read_from_string(png_structp png, png_bytep data, png_size_t length) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->pos + length > st->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(data, st->bytes->data() + st->pos, length);
  st->pos += length;
}

}  // namespace detail

inline std::string encode_png(const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw ParameterError("PNG encoder supports 1 or 3 channels");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to initialise PNG encoder");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed");
  }
  png_set_write_fn(png, &out, detail::png_write_to_string, detail::png_flush_noop);
  png_set_IHDR(png, info, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const auto stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y) png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline Image8 decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw IoError("not a PNG stream");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to initialise PNG decoder");
  }
  Image8 img;
  detail::PngReadState state{&bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("PNG decoding failed");
  }
  png_set_read_fn(png, &state, detail::png_read_from_string);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = static_cast<int>(png_get_channels(png, info));
  const auto stride = png_get_rowbytes(png, info);
  img.pixels.resize(stride * img.height);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path.string() + ": " + ec.message());
}

inline std::string crc32_hex(const std::string& bytes) {
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

template <class T>
void write_png(const std::filesystem::path& path, const Tensor<T>& image) {
  write_file_atomic(path, encode_png(to_image8(image)));
}

}  // namespace headfield
