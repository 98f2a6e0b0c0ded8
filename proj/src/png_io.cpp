// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <vector>

namespace facesynth {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const char* what) {
  throw std::runtime_error("png: " + std::string(what) + ": " + path.string());
}

}  // namespace

Image decode_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) fail(path, "cannot open");

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    fail(path, "not a PNG file");
  }

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "decode error");
  }

  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (bit_depth == 16) png_set_strip_16(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "unsupported channel count after expansion");
  }

  const std::size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<png_byte> data(row_bytes * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = data.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(static_cast<int>(height), static_cast<int>(width), channels);
  img.provenance = path.string();
  constexpr float kInv255 = 1.0f / 255.0f;
  for (int y = 0; y < static_cast<int>(height); ++y) {
    const png_byte* row = data.data() + static_cast<std::size_t>(y) * row_bytes;
    for (int x = 0; x < static_cast<int>(width); ++x) {
      for (int c = 0; c < channels; ++c) {
        img.planes[static_cast<std::size_t>(c)](y, x) = row[x * channels + c] * kInv255;
      }
    }
  }
  return img;
}

void encode_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw std::invalid_argument("encode_png: image must have 1 or 3 channels");
  }
  if (img.width() <= 0 || img.height() <= 0) {
    throw std::invalid_argument("encode_png: empty image");
  }
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) fail(path, "cannot open for write");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "encode error");
  }

  png_init_io(png, fp.get());
  const int color = img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  const int w = img.width();
  const int h = img.height();
  const int ch = img.channels();
  std::vector<png_byte> row(static_cast<std::size_t>(w) * ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        float v = img.planes[static_cast<std::size_t>(c)](y, x);
        v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        row[static_cast<std::size_t>(x) * ch + c] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

namespace {

constexpr char kRawMagic[4] = {'F', 'S', 'C', 'I'};

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

Image read_raw_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(path, "cannot open");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kRawMagic, 4) != 0) fail(path, "bad raw image magic");
  const std::uint32_t h = get_u32(is);
  const std::uint32_t w = get_u32(is);
  const std::uint32_t c = get_u32(is);
  if (!is || h == 0 || w == 0 || (c != 1 && c != 3)) fail(path, "bad raw image header");
  Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  img.provenance = path.string();
  for (auto& plane : img.planes) {
    // Eigen arrays are column-major; stream rows to keep the layout explicit.
    std::vector<float> buf(static_cast<std::size_t>(w));
    for (std::uint32_t y = 0; y < h; ++y) {
      is.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(sizeof(float) * w));
      for (std::uint32_t x = 0; x < w; ++x) plane(static_cast<int>(y), static_cast<int>(x)) = buf[x];
    }
  }
  if (!is) fail(path, "truncated raw image");
  return img;
}

void write_raw_image(const std::filesystem::path& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for write");
  os.write(kRawMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(img.height()));
  put_u32(os, static_cast<std::uint32_t>(img.width()));
  put_u32(os, static_cast<std::uint32_t>(img.channels()));
  std::vector<float> buf(static_cast<std::size_t>(img.width()));
  for (const auto& plane : img.planes) {
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) buf[static_cast<std::size_t>(x)] = plane(y, x);
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(sizeof(float) * buf.size()));
    }
  }
  if (!os) fail(path, "write failed");
}

}  // namespace facesynth
