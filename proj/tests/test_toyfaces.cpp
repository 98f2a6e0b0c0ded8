// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "facesynth/align.hpp"
#include "facesynth/features.hpp"
#include "facesynth/png_io.hpp"
#include "facesynth/toyfaces.hpp"

using namespace facesynth;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("toy generation is byte-deterministic per seed") {
  const auto dir = std::filesystem::temp_directory_path() / "fs_toy_det";
  std::filesystem::remove_all(dir);
  ToyFaceSpec spec;
  spec.num_identities = 4;
  spec.images_per_identity = 2;
  spec.test_images_per_identity = 1;
  generate_toy_faces(spec, 1, dir / "a");
  generate_toy_faces(spec, 1, dir / "b");
  generate_toy_faces(spec, 2, dir / "c");

  int files = 0;
  bool any_difference_vs_c = false;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = std::filesystem::relative(e.path(), dir / "a");
    CHECK(slurp(e.path()) == slurp(dir / "b" / rel));
    if (slurp(e.path()) != slurp(dir / "c" / rel)) any_difference_vs_c = true;
  }
  CHECK(files == 4 * 3 + 2);  // images + two manifests
  CHECK(any_difference_vs_c);
  std::filesystem::remove_all(dir);
}

TEST_CASE("toy landmarks align back to the canonical grid") {
  ToyFaceSpec spec;
  spec.num_identities = 3;
  spec.images_per_identity = 2;
  for (int identity = 0; identity < 3; ++identity) {
    const ToyRender render = render_toy_face(spec, 7, identity, 0, false);
    FaceRecord rec;
    rec.image_id = "t";
    rec.subject_id = "s";
    rec.landmarks = render.landmarks;
    const AlignedFace aligned = align_and_crop(rec, render.image);
    CHECK(aligned.landmarks[kLeftEye].x == doctest::Approx(30.0).epsilon(1e-6));
    CHECK(aligned.landmarks[kLeftEye].y == doctest::Approx(40.0).epsilon(1e-6));
    CHECK(aligned.landmarks[kRightEye].x == doctest::Approx(70.0).epsilon(1e-6));
    // The renderer puts nose and mouth on the face axis.
    CHECK(aligned.landmarks[kNoseTip].x == doctest::Approx(49.5).epsilon(1e-4));
    CHECK(aligned.landmarks[kMouthCenter].x == doctest::Approx(49.5).epsilon(1e-4));
    CHECK(aligned.landmarks[kMouthCenter].y == doctest::Approx(75.0).epsilon(1e-4));
  }
}

TEST_CASE("distinct identities render distinct faces; nearest centroid beats chance") {
  const auto dir = std::filesystem::temp_directory_path() / "fs_toy_nc";
  std::filesystem::remove_all(dir);
  ToyFaceSpec spec;
  spec.num_identities = 10;
  spec.images_per_identity = 4;
  spec.test_images_per_identity = 2;
  const ToyBenchmark bench = generate_toy_faces(spec, 3, dir);

  // Aligned pixels, one column per image.
  const auto columns = [](const DatasetManifest& m) {
    Eigen::MatrixXf data(kCanonicalSize * kCanonicalSize, static_cast<long>(m.records.size()));
    std::vector<int> labels;
    for (std::size_t k = 0; k < m.records.size(); ++k) {
      const FaceRecord& rec = m.records[k];
      const AlignedFace aligned = align_and_crop(rec, decode_png(m.resolve_path(rec)));
      data.col(static_cast<long>(k)) = image_to_column(aligned.image);
      labels.push_back(std::stoi(rec.subject_id.substr(2)));
    }
    return std::make_pair(data, labels);
  };
  const auto [train, train_labels] = columns(bench.train);
  const auto [test, test_labels] = columns(bench.test);

  Eigen::MatrixXf centroids = Eigen::MatrixXf::Zero(train.rows(), 10);
  Eigen::VectorXf counts = Eigen::VectorXf::Zero(10);
  for (long k = 0; k < train.cols(); ++k) {
    centroids.col(train_labels[static_cast<std::size_t>(k)]) += train.col(k);
    counts[train_labels[static_cast<std::size_t>(k)]] += 1.0f;
  }
  for (int c = 0; c < 10; ++c) centroids.col(c) /= counts[c];

  int correct = 0;
  for (long k = 0; k < test.cols(); ++k) {
    int best = 0;
    float best_dist = (test.col(k) - centroids.col(0)).squaredNorm();
    for (int c = 1; c < 10; ++c) {
      const float d = (test.col(k) - centroids.col(c)).squaredNorm();
      if (d < best_dist) {
        best_dist = d;
        best = c;
      }
    }
    correct += best == test_labels[static_cast<std::size_t>(k)];
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(test.cols());
  CHECK(accuracy > 0.1);  // strictly better than chance on 10 ids
  CHECK(accuracy >= 0.3);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cross-modality spec doubles the record count with NIR tags") {
  const auto dir = std::filesystem::temp_directory_path() / "fs_toy_nir";
  std::filesystem::remove_all(dir);
  ToyFaceSpec spec;
  spec.num_identities = 3;
  spec.images_per_identity = 2;
  spec.test_images_per_identity = 1;
  spec.cross_modality = true;
  const ToyBenchmark bench = generate_toy_faces(spec, 5, dir);
  CHECK(bench.train.records.size() == 3 * 2 * 2);
  int nir = 0;
  for (const auto& rec : bench.train.records) nir += rec.modality == Modality::NIR;
  CHECK(nir == 6);
  std::filesystem::remove_all(dir);
}

TEST_CASE("unsatisfiable identity margins are rejected") {
  ToyFaceSpec spec;
  spec.num_identities = 200;
  spec.identity_margin = 0.9;  // essentially impossible for 200 ids
  CHECK_THROWS_AS(render_toy_face(spec, 1, 0, 0, false), std::runtime_error);
}
