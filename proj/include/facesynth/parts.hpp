// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_PARTS_HPP
#define FACESYNTH_PARTS_HPP

#include <array>

#include "facesynth/image.hpp"
#include "facesynth/manifest.hpp"

namespace facesynth {

// The four organ parts; "the rest" is everything outside these boxes and is
// supplied by the base image during synthesis.
enum class FacePart { LeftEye = 0, RightEye = 1, Nose = 2, Mouth = 3 };

inline constexpr std::array<FacePart, 4> kAllParts = {
    FacePart::LeftEye, FacePart::RightEye, FacePart::Nose, FacePart::Mouth};

struct PartLayout {
  Rect left_eye;
  Rect right_eye;
  Rect nose;
  Rect mouth;

  const Rect& rect(FacePart p) const {
    switch (p) {
      case FacePart::LeftEye: return left_eye;
      case FacePart::RightEye: return right_eye;
      case FacePart::Nose: return nose;
      default: return mouth;
    }
  }
  bool operator==(const PartLayout&) const = default;
};

// Proportional box rules, with d the interocular distance:
//   eye boxes 0.55d x 0.40d centered on each eye,
//   nose box  0.50d x 0.55d centered on the nose tip,
//   mouth box 0.80d x 0.40d centered on the mouth center,
// rounded to integers and clipped to the frame. Throws if a box degenerates
// after clipping or the eye boxes overlap.
PartLayout derive_part_layout(const std::array<Landmark, 4>& canonical_landmarks,
                              int frame = kCanonicalSize);

// Layout of the horizontally mirrored image: LE/RE swap roles, every box
// reflects across the vertical axis.
PartLayout mirrored(const PartLayout& layout, int frame = kCanonicalSize);

}  // namespace facesynth

#endif  // FACESYNTH_PARTS_HPP
