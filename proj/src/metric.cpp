// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/metric.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <stdexcept>

#include "facesynth/binio.hpp"

namespace facesynth {

double mahalanobis_distance(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                            const Eigen::MatrixXd& a) {
  if (x.size() != y.size() || a.rows() != x.size() || a.cols() != x.size()) {
    throw std::invalid_argument("mahalanobis: dimension mismatch");
  }
  const Eigen::VectorXd d = x - y;
  return d.dot(a * d);
}

double bilinear_score(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                      const Eigen::MatrixXd& b) {
  if (x.size() != y.size() || b.rows() != x.size() || b.cols() != x.size()) {
    throw std::invalid_argument("bilinear: dimension mismatch");
  }
  return x.dot(b * y);
}

std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::Mahalanobis: return "mahalanobis";
    case MetricKind::Bilinear: return "bilinear";
    case MetricKind::LDA: return "lda";
    default: return "jb";
  }
}

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "mahalanobis") return MetricKind::Mahalanobis;
  if (s == "bilinear") return MetricKind::Bilinear;
  if (s == "lda") return MetricKind::LDA;
  if (s == "jb") return MetricKind::JointBayesian;
  throw std::invalid_argument("unknown metric kind '" + s + "'");
}

namespace {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// Clip negative eigenvalues; floor keeps the matrix invertible when > 0.
Eigen::MatrixXd psd_projected(const Eigen::MatrixXd& m, double floor = 0.0) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrized(m));
  Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

double logdet_spd(const Eigen::MatrixXd& m) {
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("matrix not positive definite in logdet");
  }
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

struct GroupedData {
  // subject -> columns of its images
  std::vector<std::vector<int>> groups;
  int dim = 0;
  long total = 0;
};

GroupedData group_by_label(const Eigen::MatrixXd& features, const std::vector<int>& labels) {
  if (features.cols() != static_cast<long>(labels.size())) {
    throw std::invalid_argument("feature/label count mismatch");
  }
  if (features.cols() == 0) throw std::invalid_argument("empty feature set");
  std::map<int, std::vector<int>> by_label;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    by_label[labels[k]].push_back(static_cast<int>(k));
  }
  GroupedData g;
  g.dim = static_cast<int>(features.rows());
  g.total = features.cols();
  g.groups.reserve(by_label.size());
  for (auto& [label, cols] : by_label) g.groups.push_back(std::move(cols));
  return g;
}

}  // namespace

MetricModel fit_lda(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                    int out_dim) {
  const GroupedData g = group_by_label(features, labels);
  const auto classes = static_cast<int>(g.groups.size());
  if (classes < 2) throw std::invalid_argument("LDA needs at least 2 classes");
  if (out_dim < 1 || out_dim > classes - 1) {
    throw std::invalid_argument("LDA out_dim must be in [1, classes-1]");
  }
  if (out_dim > g.dim) throw std::invalid_argument("LDA out_dim exceeds feature dim");

  const Eigen::VectorXd global_mean = features.rowwise().mean();
  Eigen::MatrixXd s_w = Eigen::MatrixXd::Zero(g.dim, g.dim);
  Eigen::MatrixXd s_b = Eigen::MatrixXd::Zero(g.dim, g.dim);
  for (const auto& cols : g.groups) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(g.dim);
    for (int c : cols) mean += features.col(c);
    mean /= static_cast<double>(cols.size());
    for (int c : cols) {
      const Eigen::VectorXd d = features.col(c) - mean;
      s_w.noalias() += d * d.transpose();
    }
    const Eigen::VectorXd d = mean - global_mean;
    s_b.noalias() += static_cast<double>(cols.size()) * d * d.transpose();
  }

  double gamma = 1e-4 * s_w.trace() / g.dim;
  if (!(gamma > 0.0)) {
    std::cerr << "fit_lda: singular within-class scatter, regularizing against S_b\n";
    gamma = std::max(1e-12, 1e-4 * s_b.trace() / g.dim);
  }
  s_w.diagonal().array() += gamma;

  const Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrized(s_b),
                                                                      symmetrized(s_w));
  if (eig.info() != Eigen::Success) throw std::runtime_error("LDA eigensolver failed");

  MetricModel model;
  model.kind = MetricKind::LDA;
  model.lda_projection.resize(g.dim, out_dim);
  const long total = eig.eigenvalues().size();
  for (int k = 0; k < out_dim; ++k) {
    model.lda_projection.col(k) = eig.eigenvectors().col(total - 1 - k);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Joint Bayesian
// ---------------------------------------------------------------------------

double jb_log_likelihood(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                         const Eigen::MatrixXd& s_mu, const Eigen::MatrixXd& s_eps) {
  const GroupedData g = group_by_label(x, labels);
  const double d = static_cast<double>(g.dim);
  const Eigen::LLT<Eigen::MatrixXd> eps_llt(s_eps);
  if (eps_llt.info() != Eigen::Success) {
    throw std::runtime_error("S_eps not positive definite");
  }
  const double logdet_eps = logdet_spd(s_eps);
  const Eigen::MatrixXd t = eps_llt.solve(Eigen::MatrixXd::Identity(g.dim, g.dim));

  // Per distinct group size n: logdet(S_eps + n S_mu) and the posterior
  // covariance Q_n = (S_mu^-1 + n S_eps^-1)^-1 = S_mu - S_mu (S_eps/n + S_mu)^-1 S_mu.
  std::map<std::size_t, std::pair<double, Eigen::MatrixXd>> per_n;
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double loglik = 0.0;
  for (const auto& cols : g.groups) {
    const std::size_t n = cols.size();
    auto it = per_n.find(n);
    if (it == per_n.end()) {
      const Eigen::MatrixXd c = s_eps + static_cast<double>(n) * s_mu;
      const double logdet_c = logdet_spd(c);
      // Q_n via the Woodbury-free form, no S_mu inverse needed.
      const Eigen::MatrixXd q =
          s_mu - s_mu * Eigen::LLT<Eigen::MatrixXd>(c).solve((static_cast<double>(n) * s_mu).eval());
      it = per_n.emplace(n, std::make_pair(logdet_c, q)).first;
    }
    const double logdet_c = it->second.first;
    const Eigen::MatrixXd& q = it->second.second;

    Eigen::VectorXd s = Eigen::VectorXd::Zero(g.dim);
    double quad = 0.0;
    for (int c : cols) {
      const Eigen::VectorXd tx = t * x.col(c);
      quad += x.col(c).dot(tx);
      s += tx;
    }
    quad -= s.dot(q * s);
    const double logdet = (static_cast<double>(n) - 1.0) * logdet_eps + logdet_c;
    loglik += -0.5 * (static_cast<double>(n) * d * log2pi + logdet + quad);
  }
  return loglik;
}

MetricModel fit_joint_bayesian(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                               const JointBayesianOptions& options) {
  const GroupedData g = group_by_label(features, labels);
  const int d = g.dim;

  bool any_repeat = false;
  for (const auto& cols : g.groups) {
    if (cols.size() >= 2) any_repeat = true;
  }
  if (!any_repeat) {
    throw std::invalid_argument(
        "joint Bayesian needs at least one subject with two or more images");
  }

  const Eigen::VectorXd global_mean = features.rowwise().mean();
  Eigen::MatrixXd x = features.colwise() - global_mean;

  // Degenerate-data check: a direction with zero total variance cannot carry
  // a full-rank within-person covariance.
  {
    const Eigen::VectorXd var = x.array().square().rowwise().mean();
    if ((var.array() <= 1e-15).any()) {
      throw std::invalid_argument("joint Bayesian: zero-variance feature dimension");
    }
  }

  // Warm start from labeled scatters.
  Eigen::MatrixXd s_mu = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd s_eps = Eigen::MatrixXd::Zero(d, d);
  {
    long n_within = 0;
    for (const auto& cols : g.groups) {
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
      for (int c : cols) mean += x.col(c);
      mean /= static_cast<double>(cols.size());
      s_mu.noalias() += mean * mean.transpose();
      for (int c : cols) {
        const Eigen::VectorXd dd = x.col(c) - mean;
        s_eps.noalias() += dd * dd.transpose();
        ++n_within;
      }
    }
    s_mu /= static_cast<double>(g.groups.size());
    s_eps /= std::max<double>(1.0, static_cast<double>(n_within));
    const double ridge = 1e-6 * (s_mu.trace() + s_eps.trace()) / d;
    s_mu = psd_projected(s_mu, ridge);
    s_eps = psd_projected(s_eps, ridge);
  }

  MetricModel model;
  model.kind = MetricKind::JointBayesian;
  auto& jb = model.jb;
  jb.log_likelihood.clear();

  const double floor_scale = 1e-12;
  for (int iter = 0; iter < options.max_em_iterations; ++iter) {
    jb.log_likelihood.push_back(jb_log_likelihood(x, labels, s_mu, s_eps));

    // E-step quantities shared by groups of equal size.
    const Eigen::LLT<Eigen::MatrixXd> eps_llt(s_eps);
    if (eps_llt.info() != Eigen::Success) {
      throw std::runtime_error("joint Bayesian: S_eps lost positive definiteness");
    }
    const Eigen::MatrixXd t = eps_llt.solve(Eigen::MatrixXd::Identity(d, d));
    std::map<std::size_t, Eigen::MatrixXd> q_by_n;  // posterior covariance
    const auto posterior_cov = [&](std::size_t n) -> const Eigen::MatrixXd& {
      auto it = q_by_n.find(n);
      if (it == q_by_n.end()) {
        const Eigen::MatrixXd c = s_eps + static_cast<double>(n) * s_mu;
        const Eigen::MatrixXd q =
            s_mu -
            s_mu * Eigen::LLT<Eigen::MatrixXd>(c).solve((static_cast<double>(n) * s_mu).eval());
        it = q_by_n.emplace(n, symmetrized(q)).first;
      }
      return it->second;
    };

    Eigen::MatrixXd new_mu = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd new_eps = Eigen::MatrixXd::Zero(d, d);
    for (const auto& cols : g.groups) {
      const std::size_t n = cols.size();
      const Eigen::MatrixXd& q = posterior_cov(n);
      Eigen::VectorXd s = Eigen::VectorXd::Zero(d);
      for (int c : cols) s += x.col(c);
      const Eigen::VectorXd m = q * (t * s);
      new_mu.noalias() += m * m.transpose();
      new_mu += q;
      for (int c : cols) {
        const Eigen::VectorXd r = x.col(c) - m;
        new_eps.noalias() += r * r.transpose();
      }
      new_eps += static_cast<double>(n) * q;
    }
    new_mu /= static_cast<double>(g.groups.size());
    new_eps /= static_cast<double>(g.total);

    const double floor = floor_scale * (new_mu.trace() + new_eps.trace()) / d;
    new_mu = psd_projected(new_mu, 0.0);
    new_eps = psd_projected(new_eps, floor);

    const double change = ((new_mu - s_mu).norm() + (new_eps - s_eps).norm()) /
                          std::max(1e-12, s_mu.norm() + s_eps.norm());
    s_mu = std::move(new_mu);
    s_eps = std::move(new_eps);
    jb.iterations = iter + 1;
    if (change < options.tolerance) {
      jb.converged = true;
      break;
    }
  }
  jb.log_likelihood.push_back(jb_log_likelihood(x, labels, s_mu, s_eps));

  jb.s_mu = s_mu;
  jb.s_eps = s_eps;

  // Closed-form score matrices:
  //   same-pair covariance [[St, Smu],[Smu, St]], different [[St, 0],[0, St]],
  //   with St = Smu + Seps. Block inversion gives E and F with
  //   score = x'Gx + y'Gy + 2x'Hy + const, G = -(E - St^-1)/2, H = -F/2.
  const Eigen::MatrixXd s_t = s_mu + s_eps;
  const Eigen::LLT<Eigen::MatrixXd> st_llt(s_t);
  if (st_llt.info() != Eigen::Success) {
    throw std::runtime_error("joint Bayesian: total covariance not positive definite");
  }
  const Eigen::MatrixXd st_inv = st_llt.solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd schur = s_t - s_mu * st_inv * s_mu;
  const Eigen::MatrixXd e = Eigen::LLT<Eigen::MatrixXd>(symmetrized(schur))
                                .solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd f = -st_inv * s_mu * e;
  jb.g = symmetrized(-0.5 * (e - st_inv));
  jb.h = symmetrized(-0.5 * f);
  const double logdet_same = logdet_spd(s_eps + 2.0 * s_mu) + logdet_spd(s_eps);
  const double logdet_diff = 2.0 * logdet_spd(s_t);
  jb.constant = -0.5 * (logdet_same - logdet_diff);
  return model;
}

double JointBayesianModel::score(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
  return x.dot(g * x) + y.dot(g * y) + 2.0 * x.dot(h * y) + constant;
}

double jb_verification_score(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                             const JointBayesianModel& jb) {
  if (x.size() != y.size() || jb.g.rows() != x.size()) {
    throw std::invalid_argument("jb score: dimension mismatch");
  }
  return jb.score(x, y);
}

PcaResult pca_project(const Eigen::MatrixXd& features, int out_dim) {
  const long n = features.cols();
  const long d = features.rows();
  if (out_dim < 1 || out_dim > d) throw std::invalid_argument("pca out_dim out of range");
  if (n < out_dim) throw std::invalid_argument("pca needs at least out_dim samples");

  PcaResult result;
  result.mean = features.rowwise().mean();
  const Eigen::MatrixXd centered = features.colwise() - result.mean;
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const Eigen::MatrixXd cov = centered * centered.transpose() / denom;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  result.basis.resize(d, out_dim);
  result.variances.resize(out_dim);
  for (int k = 0; k < out_dim; ++k) {
    result.basis.col(k) = eig.eigenvectors().col(d - 1 - k);
    result.variances[k] = std::max(0.0, eig.eigenvalues()[d - 1 - k]);
  }
  result.projected = result.basis.transpose() * centered;
  return result;
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

namespace {

void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  binio::put_u32(os, static_cast<std::uint32_t>(m.rows()));
  binio::put_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (long c = 0; c < m.cols(); ++c) {
    for (long r = 0; r < m.rows(); ++r) binio::put_f64(os, m(r, c));
  }
}

Eigen::MatrixXd get_matrix(std::istream& is) {
  const auto rows = static_cast<long>(binio::get_u32(is));
  const auto cols = static_cast<long>(binio::get_u32(is));
  Eigen::MatrixXd m(rows, cols);
  for (long c = 0; c < cols; ++c) {
    for (long r = 0; r < rows; ++r) m(r, c) = binio::get_f64(is);
  }
  return m;
}

}  // namespace

void save_metric_model(const MetricModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write metric model: " + path.string());
  os.write("FSMM", 4);
  binio::put_u32(os, 1);
  binio::put_u32(os, static_cast<std::uint32_t>(model.kind));
  switch (model.kind) {
    case MetricKind::Mahalanobis: put_matrix(os, model.a); break;
    case MetricKind::Bilinear: put_matrix(os, model.b); break;
    case MetricKind::LDA: put_matrix(os, model.lda_projection); break;
    case MetricKind::JointBayesian:
      put_matrix(os, model.jb.s_mu);
      put_matrix(os, model.jb.s_eps);
      put_matrix(os, model.jb.g);
      put_matrix(os, model.jb.h);
      binio::put_f64(os, model.jb.constant);
      break;
  }
  if (!os) throw std::runtime_error("metric model write failed: " + path.string());
}

MetricModel load_metric_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open metric model: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FSMM", 4) != 0) {
    throw std::runtime_error("bad metric model magic: " + path.string());
  }
  if (binio::get_u32(is) != 1) throw std::runtime_error("unsupported metric model version");
  MetricModel model;
  model.kind = static_cast<MetricKind>(binio::get_u32(is));
  switch (model.kind) {
    case MetricKind::Mahalanobis: model.a = get_matrix(is); break;
    case MetricKind::Bilinear: model.b = get_matrix(is); break;
    case MetricKind::LDA: model.lda_projection = get_matrix(is); break;
    case MetricKind::JointBayesian:
      model.jb.s_mu = get_matrix(is);
      model.jb.s_eps = get_matrix(is);
      model.jb.g = get_matrix(is);
      model.jb.h = get_matrix(is);
      model.jb.constant = binio::get_f64(is);
      break;
  }
  if (!is) throw std::runtime_error("truncated metric model: " + path.string());
  return model;
}

}  // namespace facesynth
