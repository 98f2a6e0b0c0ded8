// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/bitcode.hpp"

#include <stdexcept>

namespace facesynth {

BitCode::BitCode(unsigned value) : value_(value) {
  if (value > 0x1fu) throw std::invalid_argument("bitcode value out of range");
}

BitCode BitCode::from_string(std::string_view bits) {
  if (bits.size() != 5) throw std::invalid_argument("bitcode string must have 5 characters");
  unsigned v = 0;
  for (char ch : bits) {
    if (ch != '0' && ch != '1') throw std::invalid_argument("bitcode string must be binary");
    v = (v << 1) | static_cast<unsigned>(ch - '0');
  }
  return BitCode(v);
}

std::string BitCode::to_string() const {
  std::string s(5, '0');
  for (int k = 0; k < 5; ++k) {
    if ((value_ >> (4 - k)) & 1u) s[static_cast<std::size_t>(k)] = '1';
  }
  return s;
}

std::vector<BitCode> enumerate_bitcodes() {
  std::vector<BitCode> codes;
  codes.reserve(30);
  for (unsigned v = 1; v < 0x1fu; ++v) codes.emplace_back(v);
  return codes;
}

std::vector<unsigned> enumerate_code_values(int num_parts) {
  if (num_parts < 1 || num_parts > 30) throw std::invalid_argument("unsupported part count");
  const unsigned all = (1u << num_parts) - 1u;
  std::vector<unsigned> out;
  out.reserve(all >= 1 ? all - 1 : 0);
  for (unsigned v = 1; v < all; ++v) out.push_back(v);
  return out;
}

std::int64_t count_virtual_subjects(std::int64_t num_subjects) {
  if (num_subjects < 0) throw std::invalid_argument("negative subject count");
  return 30 * num_subjects * (num_subjects - 1) / 2;
}

std::int64_t count_intra_images(std::int64_t n_i) {
  if (n_i < 0) throw std::invalid_argument("negative image count");
  return 30 * n_i * (n_i - 1) / 2;
}

namespace {

bool is_plain(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
         c == '-' || c == '_';
}

// Percent-escape everything outside [A-Za-z0-9_-]; '.' then never occurs in
// an escaped id and can separate the fields unambiguously.
std::string escape_id(const std::string& s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (is_plain(c)) {
      out.push_back(c);
    } else {
      const auto u = static_cast<unsigned char>(c);
      out.push_back('%');
      out.push_back(hex[u >> 4]);
      out.push_back(hex[u & 0xf]);
    }
  }
  return out;
}

}  // namespace

std::string virtual_subject_id(const std::string& subject_i, const std::string& subject_j,
                               BitCode code) {
  if (subject_i == subject_j) {
    throw std::invalid_argument("virtual subject requires two distinct subjects");
  }
  const std::string* a = &subject_i;
  const std::string* b = &subject_j;
  BitCode c = code;
  if (*b < *a) {
    std::swap(a, b);
    c = c.complement();
  }
  return escape_id(*a) + "." + escape_id(*b) + "." + c.to_string();
}

}  // namespace facesynth
