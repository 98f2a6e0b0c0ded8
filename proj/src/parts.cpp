// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/parts.hpp"

#include <cmath>
#include <stdexcept>

namespace facesynth {

namespace {

Rect part_box(const Landmark& center, double w, double h, int frame, const char* name) {
  const Rect r = Rect::from_center(center.x, center.y, w, h).clipped(frame, frame);
  if (r.empty()) {
    throw std::invalid_argument(std::string("part rectangle degenerates after clipping: ") + name);
  }
  return r;
}

}  // namespace

PartLayout derive_part_layout(const std::array<Landmark, 4>& lms, int frame) {
  const double d = std::hypot(lms[kRightEye].x - lms[kLeftEye].x,
                              lms[kRightEye].y - lms[kLeftEye].y);
  if (!(d > 0.0)) throw std::invalid_argument("coincident eye landmarks");

  PartLayout layout;
  layout.left_eye = part_box(lms[kLeftEye], 0.55 * d, 0.40 * d, frame, "left eye");
  layout.right_eye = part_box(lms[kRightEye], 0.55 * d, 0.40 * d, frame, "right eye");
  layout.nose = part_box(lms[kNoseTip], 0.50 * d, 0.55 * d, frame, "nose");
  layout.mouth = part_box(lms[kMouthCenter], 0.80 * d, 0.40 * d, frame, "mouth");

  if (layout.left_eye.intersects(layout.right_eye)) {
    throw std::invalid_argument("eye rectangles overlap");
  }
  return layout;
}

PartLayout mirrored(const PartLayout& layout, int frame) {
  PartLayout out;
  out.left_eye = layout.right_eye.mirrored(frame);
  out.right_eye = layout.left_eye.mirrored(frame);
  out.nose = layout.nose.mirrored(frame);
  out.mouth = layout.mouth.mirrored(frame);
  return out;
}

}  // namespace facesynth
