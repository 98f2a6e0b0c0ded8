// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_METRIC_HPP
#define FACESYNTH_METRIC_HPP

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace facesynth {

// d^2_A(x, y) = (x - y)^T A (x - y) with A symmetric PSD.
double mahalanobis_distance(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                            const Eigen::MatrixXd& a);

// x^T B y; symmetric in its arguments when B is.
double bilinear_score(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                      const Eigen::MatrixXd& b);

enum class MetricKind { Mahalanobis, Bilinear, LDA, JointBayesian };

std::string to_string(MetricKind k);
MetricKind metric_kind_from_string(const std::string& s);

// Joint Bayesian parameters: identity covariance S_mu and within-person
// covariance S_eps, plus the derived score form
//   score(x, y) = x^T G x + y^T G y + 2 x^T H y + const
// equal to log P(x,y | same) - log P(x,y | different).
struct JointBayesianModel {
  Eigen::MatrixXd s_mu;
  Eigen::MatrixXd s_eps;
  Eigen::MatrixXd g;
  Eigen::MatrixXd h;
  double constant = 0.0;
  std::vector<double> log_likelihood;  // per EM iteration
  int iterations = 0;
  bool converged = false;

  double score(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
};

struct MetricModel {
  MetricKind kind = MetricKind::LDA;
  Eigen::MatrixXd a;               // Mahalanobis
  Eigen::MatrixXd b;               // bilinear
  Eigen::MatrixXd lda_projection;  // d x k
  JointBayesianModel jb;
};

// Fisher LDA via the generalized eigenproblem S_b w = lambda S_w w, with
// S_w regularized by gamma*I, gamma = 1e-4 * trace(S_w)/d. Projection
// columns are ordered by decreasing eigenvalue. out_dim <= classes - 1.
MetricModel fit_lda(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                    int out_dim);

struct JointBayesianOptions {
  int max_em_iterations = 100;
  double tolerance = 1e-6;  // relative parameter change
};

// EM for the joint Bayesian model x = mu + eps. Requires at least one
// subject with >= 2 images. Data are centered internally; both covariances
// are symmetrized and PSD-projected every step.
MetricModel fit_joint_bayesian(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                               const JointBayesianOptions& options = {});

// Log-likelihood of labeled data under (S_mu, S_eps); the EM objective.
double jb_log_likelihood(const Eigen::MatrixXd& centered_features, const std::vector<int>& labels,
                         const Eigen::MatrixXd& s_mu, const Eigen::MatrixXd& s_eps);

double jb_verification_score(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                             const JointBayesianModel& jb);

struct PcaResult {
  Eigen::MatrixXd basis;       // d x out_dim, orthonormal columns
  Eigen::VectorXd mean;        // d
  Eigen::VectorXd variances;   // out_dim, decreasing
  Eigen::MatrixXd projected;   // out_dim x n
};

// Project centered data onto the top principal components.
PcaResult pca_project(const Eigen::MatrixXd& features, int out_dim);

// Versioned binary model file (little-endian float64 matrices).
void save_metric_model(const MetricModel& model, const std::filesystem::path& path);
MetricModel load_metric_model(const std::filesystem::path& path);

}  // namespace facesynth

#endif  // FACESYNTH_METRIC_HPP
