// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_ALIGN_HPP
#define FACESYNTH_ALIGN_HPP

#include <Eigen/Core>

#include <array>

#include "facesynth/image.hpp"
#include "facesynth/manifest.hpp"

namespace facesynth {

// Eye centers every face is aligned to on the 100x100 canonical grid.
inline constexpr Landmark kCanonicalLeftEye{30.0, 40.0};
inline constexpr Landmark kCanonicalRightEye{70.0, 40.0};

// p -> linear * p + offset, with linear a scaled rotation.
struct SimilarityTransform {
  Eigen::Matrix2d linear = Eigen::Matrix2d::Identity();
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();

  Eigen::Vector2d operator()(const Eigen::Vector2d& p) const { return linear * p + offset; }
  Landmark operator()(const Landmark& lm) const;
  SimilarityTransform inverse() const;
};

// The similarity transform taking the source eye centers onto the canonical
// ones. Throws if the eyes are closer than 2 source pixels.
SimilarityTransform eye_alignment(const Landmark& left_eye, const Landmark& right_eye);

struct AlignedFace {
  Image image;                        // exactly kCanonicalSize^2
  std::array<Landmark, 4> landmarks;  // the record's landmarks in canonical coords
};

// Warp `raw` into the canonical frame (border replication outside the source)
// and carry the landmarks along. Landmarks must lie inside the raw image.
AlignedFace align_and_crop(const FaceRecord& rec, const Image& raw);

// Warp with a given transform; exposed for reuse by the toy-face renderer.
Image warp_to_canonical(const Image& raw, const SimilarityTransform& to_canonical);

// Landmarks of the horizontally mirrored canonical face: eyes swap roles and
// every x reflects across the pixel grid.
std::array<Landmark, 4> mirrored_landmarks(const std::array<Landmark, 4>& lms,
                                           int frame_w = kCanonicalSize);

}  // namespace facesynth

#endif  // FACESYNTH_ALIGN_HPP
