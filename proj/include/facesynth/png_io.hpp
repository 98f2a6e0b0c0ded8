// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_PNG_IO_HPP
#define FACESYNTH_PNG_IO_HPP

#include <filesystem>

#include "facesynth/image.hpp"

namespace facesynth {

// 8-bit gray or RGB PNG, mapped to [0, 1]. Alpha is stripped, palettes and
// 16-bit depth are expanded/reduced on read.
Image decode_png(const std::filesystem::path& path);
void encode_png(const std::filesystem::path& path, const Image& img);

// Raw float32 cache: 16-byte header (magic "FSCI", u32 height, width,
// channels, little-endian) followed by the planes in channel order.
Image read_raw_image(const std::filesystem::path& path);
void write_raw_image(const std::filesystem::path& path, const Image& img);

}  // namespace facesynth

#endif  // FACESYNTH_PNG_IO_HPP
