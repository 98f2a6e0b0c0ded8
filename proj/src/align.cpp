// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/align.hpp"

#include <Eigen/LU>

#include <cmath>
#include <stdexcept>

namespace facesynth {

Landmark SimilarityTransform::operator()(const Landmark& lm) const {
  const Eigen::Vector2d q = (*this)(Eigen::Vector2d(lm.x, lm.y));
  return Landmark{q.x(), q.y()};
}

SimilarityTransform SimilarityTransform::inverse() const {
  SimilarityTransform inv;
  inv.linear = linear.inverse();
  inv.offset = -(inv.linear * offset);
  return inv;
}

SimilarityTransform eye_alignment(const Landmark& left_eye, const Landmark& right_eye) {
  const double dx = right_eye.x - left_eye.x;
  const double dy = right_eye.y - left_eye.y;
  const double dist = std::hypot(dx, dy);
  if (!(dist >= 2.0)) {
    throw std::invalid_argument("degenerate landmarks: eye distance below 2 pixels");
  }
  // Complex ratio (target eye vector) / (source eye vector) gives the scaled
  // rotation mapping one eye segment onto the other.
  const double tx = kCanonicalRightEye.x - kCanonicalLeftEye.x;
  const double ty = kCanonicalRightEye.y - kCanonicalLeftEye.y;
  const double denom = dx * dx + dy * dy;
  const double a = (tx * dx + ty * dy) / denom;
  const double b = (ty * dx - tx * dy) / denom;

  SimilarityTransform t;
  t.linear << a, -b, b, a;
  t.offset = Eigen::Vector2d(kCanonicalLeftEye.x, kCanonicalLeftEye.y) -
             t.linear * Eigen::Vector2d(left_eye.x, left_eye.y);
  return t;
}

Image warp_to_canonical(const Image& raw, const SimilarityTransform& to_canonical) {
  const SimilarityTransform inv = to_canonical.inverse();
  Image out(kCanonicalSize, kCanonicalSize, raw.channels());
  out.provenance = raw.provenance;
  for (int y = 0; y < kCanonicalSize; ++y) {
    for (int x = 0; x < kCanonicalSize; ++x) {
      const Eigen::Vector2d src = inv(Eigen::Vector2d(x, y));
      for (int c = 0; c < raw.channels(); ++c) {
        out.planes[static_cast<std::size_t>(c)](y, x) =
            bilinear_sample(raw.planes[static_cast<std::size_t>(c)], src.x(), src.y());
      }
    }
  }
  return out;
}

AlignedFace align_and_crop(const FaceRecord& rec, const Image& raw) {
  for (const auto& lm : rec.landmarks) {
    if (lm.x < 0.0 || lm.y < 0.0 || lm.x > raw.width() - 1 || lm.y > raw.height() - 1) {
      throw std::invalid_argument("landmark outside image bounds in record '" + rec.image_id + "'");
    }
  }
  const SimilarityTransform t =
      eye_alignment(rec.landmarks[kLeftEye], rec.landmarks[kRightEye]);
  AlignedFace out;
  out.image = warp_to_canonical(raw, t);
  out.image.provenance = rec.image_id;
  for (std::size_t k = 0; k < 4; ++k) out.landmarks[k] = t(rec.landmarks[k]);
  return out;
}

std::array<Landmark, 4> mirrored_landmarks(const std::array<Landmark, 4>& lms, int frame_w) {
  const auto reflect = [frame_w](const Landmark& lm) {
    return Landmark{static_cast<double>(frame_w - 1) - lm.x, lm.y};
  };
  return {reflect(lms[kRightEye]), reflect(lms[kLeftEye]), reflect(lms[kNoseTip]),
          reflect(lms[kMouthCenter])};
}

}  // namespace facesynth
