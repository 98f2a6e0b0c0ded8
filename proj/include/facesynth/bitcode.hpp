// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_BITCODE_HPP
#define FACESYNTH_BITCODE_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "facesynth/parts.hpp"

namespace facesynth {

// Five-bit part-provenance mask, bit order [LE, RE, N, M, R]. Bit 0 means the
// part comes from parent i, bit 1 from parent j. The string form reads left
// to right in that order, so "10000" selects only the left eye from parent j.
class BitCode {
 public:
  BitCode() = default;
  explicit BitCode(unsigned value);
  static BitCode from_string(std::string_view bits);

  bool part_from_j(FacePart p) const {
    return (value_ >> (4 - static_cast<unsigned>(p))) & 1u;
  }
  bool rest_from_j() const { return value_ & 1u; }

  BitCode complement() const { return BitCode(~value_ & 0x1fu); }
  unsigned value() const { return value_; }
  std::string to_string() const;

  // 00000 and 11111 reproduce the parents; everything else is synthetic.
  bool is_synthetic() const { return value_ != 0u && value_ != 0x1fu; }

  bool operator==(const BitCode&) const = default;
  auto operator<=>(const BitCode&) const = default;

 private:
  unsigned value_ = 0;
};

// All synthetic codes in ascending integer order; exactly 2^5 - 2 = 30.
std::vector<BitCode> enumerate_bitcodes();

// Generic variant for a hypothetical part count: 2^num_parts - 2 codes.
std::vector<unsigned> enumerate_code_values(int num_parts);

// 30 * |S| * (|S| - 1) / 2 distinct virtual subjects for |S| real subjects.
std::int64_t count_virtual_subjects(std::int64_t num_subjects);

// 30 * n_i * (n_i - 1) / 2 intra-synthesis images for a subject with n_i images.
std::int64_t count_intra_images(std::int64_t n_i);

// Canonical, injective id for the virtual subject (i, j, c) with i != j.
// (i, j, c) and (j, i, ~c) name the same part assignment and map to the same
// id. The result is filesystem-safe (subject ids are percent-escaped).
std::string virtual_subject_id(const std::string& subject_i, const std::string& subject_j,
                               BitCode code);

}  // namespace facesynth

#endif  // FACESYNTH_BITCODE_HPP
