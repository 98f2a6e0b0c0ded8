// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "facesynth/rng.hpp"

namespace facesynth {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open fold file: " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      fn(split_tabs(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
}

int max_fold(int acc, int fold) { return std::max(acc, fold + 1); }

}  // namespace

int VerificationFolds::num_folds() const {
  int n = 0;
  for (const auto& p : pairs) n = max_fold(n, p.fold);
  return n;
}

int IdentificationFolds::num_folds() const {
  int n = 0;
  for (const auto& e : entries) n = max_fold(n, e.fold);
  return n;
}

VerificationFolds load_verification_folds(const std::filesystem::path& path) {
  VerificationFolds folds;
  for_each_line(path, [&](const std::vector<std::string>& f) {
    if (f.size() != 4) throw std::invalid_argument("expected 4 fields");
    VerificationPair p;
    p.fold = std::stoi(f[0]);
    p.image_a = f[1];
    p.image_b = f[2];
    if (f[3] == "same") {
      p.same = true;
    } else if (f[3] == "diff") {
      p.same = false;
    } else {
      throw std::invalid_argument("label must be same or diff");
    }
    folds.pairs.push_back(std::move(p));
  });
  return folds;
}

void save_verification_folds(const VerificationFolds& folds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write fold file: " + path.string());
  for (const auto& p : folds.pairs) {
    out << p.fold << '\t' << p.image_a << '\t' << p.image_b << '\t' << (p.same ? "same" : "diff")
        << '\n';
  }
}

IdentificationFolds load_identification_folds(const std::filesystem::path& path) {
  IdentificationFolds folds;
  for_each_line(path, [&](const std::vector<std::string>& f) {
    if (f.size() != 4) throw std::invalid_argument("expected 4 fields");
    IdentificationEntry e;
    e.fold = std::stoi(f[0]);
    if (f[1] == "gallery") {
      e.gallery = true;
    } else if (f[1] == "probe") {
      e.gallery = false;
    } else {
      throw std::invalid_argument("role must be gallery or probe");
    }
    e.image_id = f[2];
    e.subject_id = f[3];
    folds.entries.push_back(std::move(e));
  });
  return folds;
}

void save_identification_folds(const IdentificationFolds& folds,
                               const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write fold file: " + path.string());
  for (const auto& e : folds.entries) {
    out << e.fold << '\t' << (e.gallery ? "gallery" : "probe") << '\t' << e.image_id << '\t'
        << e.subject_id << '\n';
  }
}

void finalize_report(EvalReport& report) {
  const auto n = static_cast<double>(report.per_fold.size());
  double sum = 0.0;
  for (double v : report.per_fold) sum += v;
  report.mean = n > 0 ? sum / n : 0.0;
  double ss = 0.0;
  for (double v : report.per_fold) ss += (v - report.mean) * (v - report.mean);
  report.stddev = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

PairScorer make_pair_scorer(const MetricModel* model) {
  if (!model) {
    return [](const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
      const double na = a.norm();
      const double nb = b.norm();
      if (na <= 0.0 || nb <= 0.0) return 0.0;
      return static_cast<double>(a.dot(b)) / (na * nb);
    };
  }
  switch (model->kind) {
    case MetricKind::Mahalanobis: {
      const Eigen::MatrixXd a = model->a;
      return [a](const Eigen::VectorXf& x, const Eigen::VectorXf& y) {
        return -mahalanobis_distance(x.cast<double>(), y.cast<double>(), a);
      };
    }
    case MetricKind::Bilinear: {
      const Eigen::MatrixXd b = model->b;
      return [b](const Eigen::VectorXf& x, const Eigen::VectorXf& y) {
        return bilinear_score(x.cast<double>(), y.cast<double>(), b);
      };
    }
    case MetricKind::LDA: {
      const Eigen::MatrixXd p = model->lda_projection.transpose();
      return [p](const Eigen::VectorXf& x, const Eigen::VectorXf& y) {
        const Eigen::VectorXd px = p * x.cast<double>();
        const Eigen::VectorXd py = p * y.cast<double>();
        const double n = px.norm() * py.norm();
        return n > 0.0 ? px.dot(py) / n : 0.0;
      };
    }
    default: {
      const JointBayesianModel jb = model->jb;
      return [jb](const Eigen::VectorXf& x, const Eigen::VectorXf& y) {
        return jb.score(x.cast<double>(), y.cast<double>());
      };
    }
  }
}

namespace {

struct ScoredPair {
  double score = 0.0;
  bool same = false;
};

// Exact accuracy-maximizing threshold for the score >= threshold rule:
// sweep every cut between distinct sorted scores plus both sentinels.
double best_threshold(std::vector<ScoredPair> train) {
  if (train.empty()) throw std::invalid_argument("no training pairs for threshold");
  std::sort(train.begin(), train.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.score < b.score; });
  const auto m = static_cast<long>(train.size());
  long same_total = 0;
  for (const auto& p : train) same_total += p.same ? 1 : 0;

  // Cut k predicts the first k entries "diff" and the rest "same".
  long diff_seen = 0;
  long best_correct = same_total;  // k = 0
  double best_thr = train.front().score - 1.0;
  long same_seen = 0;
  for (long k = 1; k <= m; ++k) {
    const auto& prev = train[static_cast<std::size_t>(k - 1)];
    diff_seen += prev.same ? 0 : 1;
    same_seen += prev.same ? 1 : 0;
    const long correct = diff_seen + (same_total - same_seen);
    double thr;
    if (k == m) {
      thr = train.back().score + 1.0;
    } else {
      const double lo = prev.score;
      const double hi = train[static_cast<std::size_t>(k)].score;
      if (!(lo < hi)) continue;  // cut not realizable between equal scores
      thr = lo + 0.5 * (hi - lo);
    }
    if (correct > best_correct) {
      best_correct = correct;
      best_thr = thr;
    }
  }
  return best_thr;
}

}  // namespace

EvalReport verify_10fold(const FeatureSet& features, const VerificationFolds& folds,
                         const PairScorer& scorer) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n_folds = folds.num_folds();
  if (n_folds < 2) throw std::invalid_argument("verification needs at least 2 folds");

  std::vector<ScoredPair> scored(folds.pairs.size());
  std::vector<int> fold_of(folds.pairs.size());
  for (std::size_t k = 0; k < folds.pairs.size(); ++k) {
    const auto& p = folds.pairs[k];
    scored[k].score = scorer(features.col_of(p.image_a), features.col_of(p.image_b));
    scored[k].same = p.same;
    fold_of[k] = p.fold;
  }

  EvalReport report;
  report.task = "verification";
  report.per_fold.resize(static_cast<std::size_t>(n_folds), 0.0);
  report.thresholds.resize(static_cast<std::size_t>(n_folds), 0.0);
  for (int f = 0; f < n_folds; ++f) {
    std::vector<ScoredPair> train;
    long test_total = 0, test_correct = 0;
    train.reserve(scored.size());
    for (std::size_t k = 0; k < scored.size(); ++k) {
      if (fold_of[k] != f) train.push_back(scored[k]);
    }
    const double thr = best_threshold(std::move(train));
    for (std::size_t k = 0; k < scored.size(); ++k) {
      if (fold_of[k] != f) continue;
      ++test_total;
      const bool predicted_same = scored[k].score >= thr;
      if (predicted_same == scored[k].same) ++test_correct;
    }
    if (test_total == 0) throw std::invalid_argument("fold " + std::to_string(f) + " has no pairs");
    report.per_fold[static_cast<std::size_t>(f)] =
        static_cast<double>(test_correct) / static_cast<double>(test_total);
    report.thresholds[static_cast<std::size_t>(f)] = thr;
  }
  finalize_report(report);
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

EvalReport identify_rank1(const FeatureSet& features, const IdentificationFolds& folds,
                          const PairScorer& scorer) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n_folds = folds.num_folds();
  if (n_folds < 1) throw std::invalid_argument("identification needs at least 1 fold");

  EvalReport report;
  report.task = "identification";
  report.per_fold.resize(static_cast<std::size_t>(n_folds), 0.0);
  for (int f = 0; f < n_folds; ++f) {
    std::vector<const IdentificationEntry*> gallery, probes;
    for (const auto& e : folds.entries) {
      if (e.fold != f) continue;
      (e.gallery ? gallery : probes).push_back(&e);
    }
    if (gallery.empty()) throw std::invalid_argument("fold " + std::to_string(f) + ": empty gallery");
    if (probes.empty()) throw std::invalid_argument("fold " + std::to_string(f) + ": no probes");
    {
      std::set<std::string> ids;
      for (const auto* e : gallery) {
        if (!ids.insert(e->subject_id).second) {
          throw std::invalid_argument("fold " + std::to_string(f) +
                                      ": duplicate gallery identity '" + e->subject_id + "'");
        }
      }
    }
    long correct = 0;
    for (const auto* probe : probes) {
      const auto pf = features.col_of(probe->image_id);
      double best = -std::numeric_limits<double>::infinity();
      std::size_t best_idx = 0;
      for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
        const double s = scorer(pf, features.col_of(gallery[gi]->image_id));
        if (s > best) {  // strict: ties keep the lowest gallery index
          best = s;
          best_idx = gi;
        }
      }
      if (gallery[best_idx]->subject_id == probe->subject_id) ++correct;
    }
    report.per_fold[static_cast<std::size_t>(f)] =
        static_cast<double>(correct) / static_cast<double>(probes.size());
  }
  finalize_report(report);
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

FeatureSet fuse_features(const FeatureSet& a, const FeatureSet& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("fuse: feature dimension mismatch");
  if (a.ids != b.ids) throw std::invalid_argument("fuse: image order mismatch");
  FeatureSet out;
  out.ids = a.ids;
  out.index = a.index;
  out.features.resize(a.dim(), a.features.cols());
  for (long k = 0; k < a.features.cols(); ++k) {
    const Eigen::VectorXf fa = l2_normalized(a.features.col(k));
    const Eigen::VectorXf fb = l2_normalized(b.features.col(k));
    out.features.col(k) = l2_normalized(((fa + fb) * 0.5f).eval());
  }
  return out;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report: " + path.string());
  out << "# facesynth report v1 task=" << report.task << "\n";
  out << "fold,value,aux\n";  // aux: per-fold threshold; stddev on the summary row
  char buf[96];
  for (std::size_t f = 0; f < report.per_fold.size(); ++f) {
    const double aux = f < report.thresholds.size() ? report.thresholds[f] : 0.0;
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", f, report.per_fold[f], aux);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "summary,%.17g,%.17g\n", report.mean, report.stddev);
  out << buf;
}

void write_curve(const std::vector<std::pair<double, double>>& points,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write curve: " + path.string());
  auto sorted = points;
  std::sort(sorted.begin(), sorted.end());
  out << "x,y\n";
  char buf[80];
  for (const auto& [x, y] : sorted) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", x, y);
    out << buf;
  }
}

VerificationFolds make_verification_folds(const DatasetManifest& m, int num_folds,
                                          int pairs_per_fold, std::uint64_t seed) {
  if (num_folds < 2) throw std::invalid_argument("need at least 2 folds");
  const auto n_subjects = static_cast<int>(m.subjects.size());
  if (n_subjects < 2) throw std::invalid_argument("need at least 2 subjects");

  std::vector<const std::string*> subjects;
  subjects.reserve(m.subjects.size());
  for (const auto& [name, imgs] : m.subjects) subjects.push_back(&name);

  CounterRng gen(seed, 0xf01d);
  // Identity-disjoint folds when every fold can hold two subjects.
  const bool disjoint = n_subjects >= 2 * num_folds;
  std::vector<std::vector<int>> fold_subjects(static_cast<std::size_t>(num_folds));
  if (disjoint) {
    std::vector<int> order(subjects.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t k = order.size(); k > 1; --k) {
      std::swap(order[k - 1], order[gen.next_below(k)]);
    }
    for (std::size_t k = 0; k < order.size(); ++k) {
      fold_subjects[k % static_cast<std::size_t>(num_folds)].push_back(order[k]);
    }
  } else {
    for (auto& fs : fold_subjects) {
      fs.resize(subjects.size());
      std::iota(fs.begin(), fs.end(), 0);
    }
  }

  VerificationFolds folds;
  const int same_target = pairs_per_fold / 2;
  const int diff_target = pairs_per_fold - same_target;
  for (int f = 0; f < num_folds; ++f) {
    const auto& fs = fold_subjects[static_cast<std::size_t>(f)];
    // Same pairs: all (subject, image pair) combinations, then a seeded
    // shuffle and truncation.
    std::vector<VerificationPair> same_pool;
    for (int si : fs) {
      const auto& imgs = m.images_of(*subjects[static_cast<std::size_t>(si)]);
      for (std::size_t a = 0; a < imgs.size(); ++a) {
        for (std::size_t b = a + 1; b < imgs.size(); ++b) {
          VerificationPair p;
          p.fold = f;
          p.image_a = m.records[static_cast<std::size_t>(imgs[a])].image_id;
          p.image_b = m.records[static_cast<std::size_t>(imgs[b])].image_id;
          p.same = true;
          same_pool.push_back(std::move(p));
        }
      }
    }
    std::vector<VerificationPair> diff_pool;
    for (std::size_t x = 0; x < fs.size(); ++x) {
      for (std::size_t y = x + 1; y < fs.size(); ++y) {
        const auto& ia = m.images_of(*subjects[static_cast<std::size_t>(fs[x])]);
        const auto& ib = m.images_of(*subjects[static_cast<std::size_t>(fs[y])]);
        for (int ra : ia) {
          for (int rb : ib) {
            VerificationPair p;
            p.fold = f;
            p.image_a = m.records[static_cast<std::size_t>(ra)].image_id;
            p.image_b = m.records[static_cast<std::size_t>(rb)].image_id;
            p.same = false;
            diff_pool.push_back(std::move(p));
          }
        }
      }
    }
    const auto shuffle_truncate = [&gen](std::vector<VerificationPair>& pool, int target) {
      for (std::size_t k = pool.size(); k > 1; --k) {
        std::swap(pool[k - 1], pool[gen.next_below(k)]);
      }
      if (static_cast<int>(pool.size()) > target) pool.resize(static_cast<std::size_t>(target));
    };
    shuffle_truncate(same_pool, same_target);
    shuffle_truncate(diff_pool, diff_target);
    if (same_pool.empty() || diff_pool.empty()) {
      throw std::runtime_error("fold " + std::to_string(f) +
                               ": not enough images for both pair kinds");
    }
    folds.pairs.insert(folds.pairs.end(), same_pool.begin(), same_pool.end());
    folds.pairs.insert(folds.pairs.end(), diff_pool.begin(), diff_pool.end());
  }
  return folds;
}

IdentificationFolds make_identification_folds(const DatasetManifest& m, int num_folds,
                                              std::uint64_t seed) {
  if (num_folds < 1) throw std::invalid_argument("need at least 1 fold");
  CounterRng gen(seed, 0x1de2);

  IdentificationFolds folds;
  std::vector<int> probe_records;
  for (const auto& [subject, imgs] : m.subjects) {
    std::vector<int> vis;
    for (int r : imgs) {
      if (m.records[static_cast<std::size_t>(r)].modality == Modality::VIS) {
        vis.push_back(r);
      } else {
        probe_records.push_back(r);
      }
    }
    if (vis.empty()) {
      throw std::runtime_error("subject '" + subject + "' has no VIS image for the gallery");
    }
    const int pick = vis[static_cast<std::size_t>(gen.next_below(vis.size()))];
    for (int f = 0; f < num_folds; ++f) {
      IdentificationEntry e;
      e.fold = f;
      e.gallery = true;
      e.image_id = m.records[static_cast<std::size_t>(pick)].image_id;
      e.subject_id = subject;
      folds.entries.push_back(std::move(e));
    }
  }
  if (probe_records.empty()) throw std::runtime_error("no NIR probe images");
  for (std::size_t k = probe_records.size(); k > 1; --k) {
    std::swap(probe_records[k - 1], probe_records[gen.next_below(k)]);
  }
  for (std::size_t k = 0; k < probe_records.size(); ++k) {
    const auto& rec = m.records[static_cast<std::size_t>(probe_records[k])];
    IdentificationEntry e;
    e.fold = static_cast<int>(k % static_cast<std::size_t>(num_folds));
    e.gallery = false;
    e.image_id = rec.image_id;
    e.subject_id = rec.subject_id;
    folds.entries.push_back(std::move(e));
  }
  return folds;
}

}  // namespace facesynth
