// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_TOYFACES_HPP
#define FACESYNTH_TOYFACES_HPP

#include <cstdint>
#include <filesystem>

#include "facesynth/image.hpp"
#include "facesynth/manifest.hpp"

namespace facesynth {

// Procedural face-like images with exact landmark ground truth, standing in
// for real face datasets at desk scale. Identity lives in part geometry (eye
// size/shape, nose width/length, mouth width/curvature, brows); nuisances are
// a similarity jitter, illumination gain and ramp, and pixel noise.
struct ToyFaceSpec {
  int num_identities = 20;
  int images_per_identity = 3;
  int test_images_per_identity = 6;

  double gain_min = 0.7;
  double gain_max = 1.25;
  double ramp_strength = 0.35;     // max relative amplitude of the light ramp
  double jitter_rotation = 0.10;   // radians
  double jitter_scale = 0.10;      // relative
  double jitter_translate = 3.0;   // pixels
  double noise_sigma = 0.03;

  // Distinct identities must differ by at least this much (in normalized
  // parameter units) in at least two part parameters.
  double identity_margin = 0.25;

  // Render an additional NIR-tagged copy of every image with its own
  // illumination statistics (darker, strongly ramped).
  bool cross_modality = false;
  double nir_gain = 0.55;
  double nir_ramp = 0.8;

  void validate() const;
};

struct ToyBenchmark {
  DatasetManifest train;
  DatasetManifest test;
};

// Images are written under out_dir/train and out_dir/test along with
// manifest.tsv files. Identity parameters depend only on (seed, identity), so
// train and test sets show the same people under fresh nuisances. Byte
// deterministic per (spec, seed).
ToyBenchmark generate_toy_faces(const ToyFaceSpec& spec, std::uint64_t seed,
                                const std::filesystem::path& out_dir);

// One rendered face, exposed for tests: identity from (seed, identity index),
// nuisances from (seed, identity, image index, nir flag).
struct ToyRender {
  Image image;
  std::array<Landmark, 4> landmarks;
};
ToyRender render_toy_face(const ToyFaceSpec& spec, std::uint64_t seed, int identity,
                          int image_index, bool nir);

}  // namespace facesynth

#endif  // FACESYNTH_TOYFACES_HPP
