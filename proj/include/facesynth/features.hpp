// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_FEATURES_HPP
#define FACESYNTH_FEATURES_HPP

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "facesynth/net.hpp"
#include "facesynth/synthesis.hpp"

namespace facesynth {

// Flatten a canonical image to a network input column, channel-major.
Eigen::VectorXf image_to_column(const Image& img);

// Assembled training data: one column per image, labels indexing class_names.
struct TrainingSet {
  Eigen::MatrixXf data;
  std::vector<int> labels;
  std::vector<std::string> class_names;  // sorted subject ids
};

// Load every record of the given manifests (all must be canonical 100x100),
// convert to `channels` channels, and label by subject id across the union.
TrainingSet build_training_set(const std::vector<const DatasetManifest*>& manifests,
                               int channels = 1, int threads = 1);

// Features for a set of images, one column per image. L2-normalized unless
// told otherwise. With self-synthesis averaging the 32 variants of each face
// are rendered, extracted, and averaged before normalization.
struct FeatureSet {
  std::vector<std::string> ids;
  Eigen::MatrixXf features;  // dim x n
  std::unordered_map<std::string, int> index;

  int dim() const { return static_cast<int>(features.rows()); }
  long size() const { return features.cols(); }
  void add(const std::string& id, const Eigen::VectorXf& v);
  const Eigen::VectorXf col_of(const std::string& id) const;
};

Eigen::VectorXf extract_feature(const NetworkT<float>& net, const CanonicalFace& face,
                                bool self_syn_avg, bool l2_normalize = true);

FeatureSet extract_features(const NetworkT<float>& net, const DatasetManifest& m,
                            bool self_syn_avg, int threads = 1, bool l2_normalize = true,
                            const ImageLoader& loader = {});

// Binary feature file: magic "FSFT", version, dim, count, then per entry
// id length, id bytes, dim float32 values.
void save_features(const FeatureSet& fs, const std::filesystem::path& path);
FeatureSet load_features(const std::filesystem::path& path);

Eigen::VectorXf l2_normalized(const Eigen::VectorXf& v);

}  // namespace facesynth

#endif  // FACESYNTH_FEATURES_HPP
