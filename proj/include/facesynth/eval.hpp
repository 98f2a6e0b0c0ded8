// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_EVAL_HPP
#define FACESYNTH_EVAL_HPP

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "facesynth/features.hpp"
#include "facesynth/manifest.hpp"
#include "facesynth/metric.hpp"

namespace facesynth {

struct VerificationPair {
  int fold = 0;
  std::string image_a;
  std::string image_b;
  bool same = false;
};

struct VerificationFolds {
  std::vector<VerificationPair> pairs;
  int num_folds() const;
};

struct IdentificationEntry {
  int fold = 0;
  bool gallery = false;
  std::string image_id;
  std::string subject_id;
};

struct IdentificationFolds {
  std::vector<IdentificationEntry> entries;
  int num_folds() const;
};

// Fold files: one line per pair/entry, tab-separated, '#' comments.
//   verification:   fold  image_a  image_b  same|diff
//   identification: fold  gallery|probe  image_id  subject_id
VerificationFolds load_verification_folds(const std::filesystem::path& path);
void save_verification_folds(const VerificationFolds& folds, const std::filesystem::path& path);
IdentificationFolds load_identification_folds(const std::filesystem::path& path);
void save_identification_folds(const IdentificationFolds& folds,
                               const std::filesystem::path& path);

struct EvalReport {
  std::string task;               // "verification" or "identification"
  std::vector<double> per_fold;   // accuracy or rank-1 rate, fold order
  std::vector<double> thresholds; // per fold; empty for identification
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over folds
  double runtime_seconds = 0.0;
};

// Recompute mean/stddev from per_fold (sum in fold order, then sqrt of the
// n-1 normalized variance).
void finalize_report(EvalReport& report);

// Pair similarity, higher = more likely the same identity. A null model
// gives cosine similarity; LDA projects first and then uses cosine;
// Mahalanobis scores by negative distance; JB by its log-likelihood ratio.
using PairScorer = std::function<double(const Eigen::VectorXf&, const Eigen::VectorXf&)>;
PairScorer make_pair_scorer(const MetricModel* model);

// Ten-fold verification: for each fold the threshold maximizing accuracy on
// the other folds' pairs is chosen among all midpoints of adjacent distinct
// sorted training scores (plus the two outer sentinels), then applied to the
// held-out fold with the score >= threshold decision rule.
EvalReport verify_10fold(const FeatureSet& features, const VerificationFolds& folds,
                         const PairScorer& scorer);

// Rank-1 identification per fold: every probe is matched to the gallery
// entry with the best score; ties break to the lowest gallery index.
EvalReport identify_rank1(const FeatureSet& features, const IdentificationFolds& folds,
                          const PairScorer& scorer);

// Element-wise average of the L2-normalized streams, re-normalized. Requires
// equal dimension and identical image order.
FeatureSet fuse_features(const FeatureSet& a, const FeatureSet& b);

// CSV with one row per fold plus a summary row; byte-deterministic.
void emit_report(const EvalReport& report, const std::filesystem::path& path);

// Plot-data file "x,y" sorted by x; byte-deterministic.
void write_curve(const std::vector<std::pair<double, double>>& points,
                 const std::filesystem::path& path);

// Toy-benchmark protocol builders.
// Verification: balanced same/diff pairs, folds disjoint by identity when
// the subject count allows (>= 2 per fold), otherwise disjoint by pair.
VerificationFolds make_verification_folds(const DatasetManifest& m, int num_folds,
                                          int pairs_per_fold, std::uint64_t seed);
// Identification: the gallery holds one VIS image per subject (shared across
// folds); NIR probe images are split disjointly across folds.
IdentificationFolds make_identification_folds(const DatasetManifest& m, int num_folds,
                                              std::uint64_t seed);

}  // namespace facesynth

#endif  // FACESYNTH_EVAL_HPP
