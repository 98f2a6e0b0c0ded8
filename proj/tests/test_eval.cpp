// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "facesynth/eval.hpp"
#include "facesynth/rng.hpp"

using namespace facesynth;

namespace {

// A feature set where every image id maps to a chosen 1-D value; with the
// "first-coordinate" scorer below, pair scores are fully scripted.
FeatureSet scripted_features(const std::vector<std::pair<std::string, float>>& entries) {
  FeatureSet fs;
  for (const auto& [id, value] : entries) {
    Eigen::VectorXf v(2);
    v << value, 1.0f;
    fs.add(id, v);
  }
  return fs;
}

PairScorer product_scorer() {
  return [](const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
    return static_cast<double>(a[0]) * static_cast<double>(b[0]);
  };
}

}  // namespace

TEST_CASE("perfectly separated pairs give accuracy 1.0 +- 0.0") {
  FeatureSet fs;
  VerificationFolds folds;
  int next_id = 0;
  CounterRng gen(1);
  for (int f = 0; f < 10; ++f) {
    for (int k = 0; k < 6; ++k) {
      const std::string a = "i" + std::to_string(next_id++);
      const std::string b = "i" + std::to_string(next_id++);
      const bool same = k % 2 == 0;
      Eigen::VectorXf va(2), vb(2);
      // Same pairs share a direction; different pairs are orthogonal.
      if (same) {
        va << 1.0f, 0.0f;
        vb << 1.0f, 0.0f;
      } else {
        va << 1.0f, 0.0f;
        vb << 0.0f, 1.0f;
      }
      fs.add(a, va);
      fs.add(b, vb);
      folds.pairs.push_back(VerificationPair{f, a, b, same});
    }
  }
  const EvalReport report = verify_10fold(fs, folds, make_pair_scorer(nullptr));
  CHECK(report.mean == 1.0);
  CHECK(report.stddev == 0.0);
  for (double v : report.per_fold) CHECK(v == 1.0);
}

TEST_CASE("hand-built fold accuracies reproduce the hand-computed mean and std") {
  // Train pairs are perfectly separated (same -> score 1, diff -> score 0);
  // fold f contains f deliberately contradicting pairs out of 20, so fold f
  // scores exactly (20 - f) / 20 while the training corruption stays well
  // below half and the learned threshold sits between the two score levels.
  FeatureSet fs;
  VerificationFolds folds;
  int next_id = 0;
  const auto add_pair = [&](int fold, bool same, bool contradicts) {
    const std::string a = "i" + std::to_string(next_id++);
    const std::string b = "i" + std::to_string(next_id++);
    Eigen::VectorXf va(2), vb(2);
    const bool looks_same = contradicts ? !same : same;
    if (looks_same) {
      va << 1.0f, 0.0f;
      vb << 1.0f, 0.0f;
    } else {
      va << 1.0f, 0.0f;
      vb << 0.0f, 1.0f;
    }
    fs.add(a, va);
    fs.add(b, vb);
    folds.pairs.push_back(VerificationPair{fold, a, b, same});
  };
  for (int f = 0; f < 10; ++f) {
    for (int k = 0; k < 20; ++k) {
      add_pair(f, k % 2 == 0, k < f);
    }
  }
  const EvalReport report = verify_10fold(fs, folds, make_pair_scorer(nullptr));

  // Independent hand computation of the expected summary.
  double sum = 0.0;
  for (int f = 0; f < 10; ++f) {
    CHECK(report.per_fold[static_cast<std::size_t>(f)] == (20.0 - f) / 20.0);
    sum += (20.0 - f) / 20.0;
  }
  const double mean = sum / 10.0;
  double ss = 0.0;
  for (int f = 0; f < 10; ++f) {
    const double d = (20.0 - f) / 20.0 - mean;
    ss += d * d;
  }
  const double stddev = std::sqrt(ss / 9.0);
  CHECK(report.mean == mean);
  CHECK(report.stddev == stddev);
}

TEST_CASE("random balanced scores sit near chance accuracy") {
  FeatureSet fs;
  VerificationFolds folds;
  CounterRng gen(7);
  int next_id = 0;
  for (int f = 0; f < 10; ++f) {
    for (int k = 0; k < 600; ++k) {
      const std::string a = "i" + std::to_string(next_id++);
      const std::string b = "i" + std::to_string(next_id++);
      Eigen::VectorXf va(2), vb(2);
      va << static_cast<float>(gen.next_normal()), 1.0f;
      vb << static_cast<float>(gen.next_normal()), 1.0f;
      fs.add(a, va);
      fs.add(b, vb);
      folds.pairs.push_back(VerificationPair{f, a, b, k % 2 == 0});
    }
  }
  const EvalReport report = verify_10fold(fs, folds, product_scorer());
  CHECK(std::abs(report.mean - 0.5) <= 0.06);
}

TEST_CASE("fold evaluation ignores pair order") {
  FeatureSet fs = scripted_features({{"a", 1.0f}, {"b", 0.9f}, {"c", -1.0f}, {"d", 0.8f},
                                     {"e", -0.7f}, {"f", 0.95f}});
  VerificationFolds folds;
  folds.pairs = {
      VerificationPair{0, "a", "b", true},  VerificationPair{0, "a", "c", false},
      VerificationPair{1, "a", "d", true},  VerificationPair{1, "a", "e", false},
      VerificationPair{2, "a", "f", true},  VerificationPair{2, "b", "e", false},
  };
  const EvalReport r1 = verify_10fold(fs, folds, product_scorer());
  std::reverse(folds.pairs.begin(), folds.pairs.end());
  const EvalReport r2 = verify_10fold(fs, folds, product_scorer());
  CHECK(r1.per_fold == r2.per_fold);
  CHECK(r1.mean == r2.mean);
}

TEST_CASE("missing features are reported") {
  FeatureSet fs = scripted_features({{"a", 1.0f}});
  VerificationFolds folds;
  folds.pairs = {VerificationPair{0, "a", "zz", true}, VerificationPair{1, "a", "a", true}};
  CHECK_THROWS_AS(verify_10fold(fs, folds, product_scorer()), std::out_of_range);
}

TEST_CASE("decisions are invariant to global feature scaling") {
  CounterRng gen(8);
  FeatureSet fs, fs_scaled;
  VerificationFolds folds;
  int next_id = 0;
  for (int f = 0; f < 4; ++f) {
    for (int k = 0; k < 30; ++k) {
      const std::string a = "i" + std::to_string(next_id++);
      const std::string b = "i" + std::to_string(next_id++);
      Eigen::VectorXf va(3), vb(3);
      for (int j = 0; j < 3; ++j) {
        va[j] = static_cast<float>(gen.next_normal());
        vb[j] = static_cast<float>(gen.next_normal());
      }
      const bool same = k % 2 == 0;
      if (same) vb = va + 0.3f * vb;
      fs.add(a, va);
      fs.add(b, vb);
      fs_scaled.add(a, 7.5f * va);
      fs_scaled.add(b, 7.5f * vb);
      folds.pairs.push_back(VerificationPair{f, a, b, same});
    }
  }
  // Mahalanobis distances scale by 56.25; thresholds refit per fold, so the
  // decisions and accuracies match exactly.
  MetricModel model;
  model.kind = MetricKind::Mahalanobis;
  model.a = Eigen::MatrixXd::Identity(3, 3);
  const PairScorer scorer = make_pair_scorer(&model);
  const EvalReport r1 = verify_10fold(fs, folds, scorer);
  const EvalReport r2 = verify_10fold(fs_scaled, folds, scorer);
  CHECK(r1.per_fold == r2.per_fold);
}

TEST_CASE("rank-1: probe equal to gallery is always right") {
  FeatureSet fs;
  IdentificationFolds folds;
  CounterRng gen(9);
  for (int s = 0; s < 8; ++s) {
    Eigen::VectorXf v(4);
    for (int j = 0; j < 4; ++j) v[j] = static_cast<float>(gen.next_normal());
    const std::string gid = "g" + std::to_string(s);
    fs.add(gid, v);
    folds.entries.push_back(IdentificationEntry{0, true, gid, "s" + std::to_string(s)});
    folds.entries.push_back(IdentificationEntry{0, false, gid, "s" + std::to_string(s)});
  }
  const EvalReport report = identify_rank1(fs, folds, make_pair_scorer(nullptr));
  CHECK(report.mean == 1.0);
}

TEST_CASE("rank-1: orthogonal gallery with low-noise probes is perfect") {
  FeatureSet fs;
  IdentificationFolds folds;
  CounterRng gen(10);
  for (int s = 0; s < 6; ++s) {
    Eigen::VectorXf g = Eigen::VectorXf::Zero(6);
    g[s] = 1.0f;
    fs.add("g" + std::to_string(s), g);
    Eigen::VectorXf p = g;
    for (int j = 0; j < 6; ++j) p[j] += 0.05f * static_cast<float>(gen.next_normal());
    fs.add("p" + std::to_string(s), p);
    folds.entries.push_back(
        IdentificationEntry{0, true, "g" + std::to_string(s), "s" + std::to_string(s)});
    folds.entries.push_back(
        IdentificationEntry{0, false, "p" + std::to_string(s), "s" + std::to_string(s)});
  }
  CHECK(identify_rank1(fs, folds, make_pair_scorer(nullptr)).mean == 1.0);
}

TEST_CASE("rank-1: adversarial fixture scores zero") {
  FeatureSet fs;
  IdentificationFolds folds;
  const int n = 5;
  for (int s = 0; s < n; ++s) {
    Eigen::VectorXf g = Eigen::VectorXf::Zero(n);
    g[s] = 1.0f;
    fs.add("g" + std::to_string(s), g);
    // Probe s points at gallery s+1.
    Eigen::VectorXf p = Eigen::VectorXf::Zero(n);
    p[(s + 1) % n] = 1.0f;
    fs.add("p" + std::to_string(s), p);
    folds.entries.push_back(
        IdentificationEntry{0, true, "g" + std::to_string(s), "s" + std::to_string(s)});
    folds.entries.push_back(
        IdentificationEntry{0, false, "p" + std::to_string(s), "s" + std::to_string(s)});
  }
  CHECK(identify_rank1(fs, folds, make_pair_scorer(nullptr)).mean == 0.0);
}

TEST_CASE("rank-1 validates gallery uniqueness and emptiness") {
  FeatureSet fs = scripted_features({{"g0", 1.0f}, {"g1", 0.5f}, {"p0", 0.9f}});
  IdentificationFolds folds;
  folds.entries = {IdentificationEntry{0, true, "g0", "s0"},
                   IdentificationEntry{0, true, "g1", "s0"},
                   IdentificationEntry{0, false, "p0", "s0"}};
  CHECK_THROWS_AS(identify_rank1(fs, folds, product_scorer()), std::invalid_argument);

  IdentificationFolds empty_gallery;
  empty_gallery.entries = {IdentificationEntry{0, false, "p0", "s0"}};
  CHECK_THROWS_AS(identify_rank1(fs, empty_gallery, product_scorer()), std::invalid_argument);
}

TEST_CASE("fusion algebra") {
  FeatureSet a, b;
  Eigen::VectorXf u = Eigen::VectorXf::Zero(4), v = Eigen::VectorXf::Zero(4);
  u[0] = 2.0f;  // normalizes to e0
  v[1] = 3.0f;  // normalizes to e1
  a.add("x", u);
  b.add("x", v);

  const FeatureSet same = fuse_features(a, a);
  CHECK((same.features.col(0) - u / u.norm()).norm() <= 1e-6f);

  const FeatureSet ab = fuse_features(a, b);
  const FeatureSet ba = fuse_features(b, a);
  CHECK((ab.features.col(0) - ba.features.col(0)).norm() <= 1e-7f);
  CHECK(ab.features.col(0).norm() == doctest::Approx(1.0).epsilon(1e-6));
  // Orthogonal unit inputs fuse to the normalized diagonal.
  Eigen::VectorXf want = Eigen::VectorXf::Zero(4);
  want[0] = want[1] = static_cast<float>(1.0 / std::sqrt(2.0));
  CHECK((ab.features.col(0) - want).norm() <= 1e-6f);

  FeatureSet mismatch;
  mismatch.add("y", u);
  CHECK_THROWS_AS(fuse_features(a, mismatch), std::invalid_argument);
}

TEST_CASE("reports serialize deterministically with 11 data rows") {
  EvalReport report;
  report.task = "verification";
  report.per_fold = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
  report.thresholds.assign(10, 0.5);
  finalize_report(report);

  const auto dir = std::filesystem::temp_directory_path() / "fs_report";
  std::filesystem::create_directories(dir);
  emit_report(report, dir / "r.csv");
  emit_report(report, dir / "r2.csv");

  std::ifstream f1(dir / "r.csv", std::ios::binary), f2(dir / "r2.csv", std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  int data_rows = 0;
  std::ifstream in(dir / "r.csv");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("fold,", 0) == 0) continue;
    ++data_rows;
  }
  CHECK(data_rows == 11);
  std::filesystem::remove_all(dir);
}

TEST_CASE("curve files sort by x") {
  const auto dir = std::filesystem::temp_directory_path() / "fs_curve";
  std::filesystem::create_directories(dir);
  write_curve({{1000000.0, 0.9}, {500000.0, 0.8}, {2000000.0, 0.95}}, dir / "c.csv");
  std::ifstream in(dir / "c.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "x,y");
  double prev = -1;
  while (std::getline(in, line)) {
    const double x = std::stod(line.substr(0, line.find(',')));
    CHECK(x > prev);
    prev = x;
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("summary is recomputable from the per-fold values") {
  EvalReport report;
  report.per_fold = {0.91, 0.87, 0.95, 0.9, 0.84, 0.88, 0.93, 0.89, 0.92, 0.86};
  finalize_report(report);
  double sum = 0;
  for (double v : report.per_fold) sum += v;
  const double mean = sum / 10.0;
  double ss = 0;
  for (double v : report.per_fold) ss += (v - mean) * (v - mean);
  CHECK(std::abs(report.mean - mean) <= 1e-12);
  CHECK(std::abs(report.stddev - std::sqrt(ss / 9.0)) <= 1e-12);
}

TEST_CASE("fold specs round-trip through their files") {
  const auto dir = std::filesystem::temp_directory_path() / "fs_folds";
  std::filesystem::create_directories(dir);

  VerificationFolds vf;
  vf.pairs = {VerificationPair{0, "a", "b", true}, VerificationPair{1, "c", "d", false}};
  save_verification_folds(vf, dir / "v.tsv");
  const VerificationFolds vf2 = load_verification_folds(dir / "v.tsv");
  REQUIRE(vf2.pairs.size() == 2);
  CHECK(vf2.pairs[0].same);
  CHECK_FALSE(vf2.pairs[1].same);
  CHECK(vf2.num_folds() == 2);

  IdentificationFolds idf;
  idf.entries = {IdentificationEntry{0, true, "g", "s"}, IdentificationEntry{0, false, "p", "s"}};
  save_identification_folds(idf, dir / "i.tsv");
  const IdentificationFolds idf2 = load_identification_folds(dir / "i.tsv");
  REQUIRE(idf2.entries.size() == 2);
  CHECK(idf2.entries[0].gallery);
  CHECK_FALSE(idf2.entries[1].gallery);

  std::filesystem::remove_all(dir);
}
