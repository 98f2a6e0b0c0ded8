// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_BLENDING_HPP
#define FACESYNTH_BLENDING_HPP

#include <Eigen/Core>

#include <stdexcept>
#include <vector>

#include "facesynth/image.hpp"

namespace facesynth {

// Replace the rect content of base_plane with patch (patch already resampled
// to rect size). This is the default seam treatment and deliberately keeps
// hard boundaries.
template <typename Scalar>
void hard_paste_plane(PlaneT<Scalar>& base_plane, const PlaneT<Scalar>& patch, const Rect& rect) {
  if (rect.empty()) throw std::invalid_argument("hard_paste: degenerate rectangle");
  if (rect.x0 < 0 || rect.y0 < 0 || rect.x1 > base_plane.cols() || rect.y1 > base_plane.rows()) {
    throw std::invalid_argument("hard_paste: rectangle outside frame");
  }
  if (patch.cols() != rect.width() || patch.rows() != rect.height()) {
    throw std::invalid_argument("hard_paste: patch size does not match rectangle");
  }
  base_plane.block(rect.y0, rect.x0, rect.height(), rect.width()) = patch;
}

template <typename Scalar>
void hard_paste(ImageT<Scalar>& base, const ImageT<Scalar>& patch, const Rect& rect) {
  if (patch.channels() != base.channels()) {
    throw std::invalid_argument("hard_paste: channel mismatch");
  }
  for (int c = 0; c < base.channels(); ++c) {
    hard_paste_plane(base.planes[static_cast<std::size_t>(c)],
                     patch.planes[static_cast<std::size_t>(c)], rect);
  }
}

struct PoissonReport {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = true;
  // True residual recomputed at every conjugate-gradient restart.
  std::vector<double> restart_residuals;

  PoissonReport& merge(const PoissonReport& o) {
    iterations += o.iterations;
    relative_residual = std::max(relative_residual, o.relative_residual);
    converged = converged && o.converged;
    return *this;
  }
};

// Gradient-domain paste: the rect interior solves the discrete Poisson
// equation (5-point Laplacian) with the patch's Laplacian as guidance and the
// base pixels on the rect's outer ring as Dirichlet boundary. Conjugate
// gradient, restarted every `restart_interval` iterations with an exact
// residual recomputation; the initial guess is the patch interior, so a patch
// whose ring already matches the base solves in zero iterations.
template <typename Scalar>
PoissonReport poisson_blend_plane(PlaneT<Scalar>& base_plane, const PlaneT<Scalar>& patch,
                                  const Rect& rect, double tolerance = 1e-6,
                                  long max_iterations = -1, int restart_interval = 32) {
  using Arr = Eigen::ArrayXd;
  if (rect.width() < 3 || rect.height() < 3) {
    throw std::invalid_argument("poisson_blend: rectangle interior is empty");
  }
  if (rect.x0 < 0 || rect.y0 < 0 || rect.x1 > base_plane.cols() || rect.y1 > base_plane.rows()) {
    throw std::invalid_argument("poisson_blend: rectangle outside frame");
  }
  if (patch.cols() != rect.width() || patch.rows() != rect.height()) {
    throw std::invalid_argument("poisson_blend: patch size does not match rectangle");
  }
  if (!(tolerance > 0.0)) throw std::invalid_argument("poisson_blend: tolerance must be positive");

  const int iw = rect.width() - 2;   // interior width
  const int ih = rect.height() - 2;  // interior height
  const long n = static_cast<long>(iw) * ih;
  if (max_iterations < 0) max_iterations = 10 * n;

  const auto idx = [iw](int yi, int xi) { return static_cast<long>(yi) * iw + xi; };

  // Boundary ring: base values already at rect's outermost pixels.
  const auto ring = [&](int yi, int xi) -> double {
    return static_cast<double>(base_plane(rect.y0 + 1 + yi, rect.x0 + 1 + xi));
  };
  const auto g = [&](int yi, int xi) -> double {
    return static_cast<double>(patch(1 + yi, 1 + xi));
  };

  // b = Laplacian of the patch on the interior, plus Dirichlet contributions.
  Arr b(n);
  for (int yi = 0; yi < ih; ++yi) {
    for (int xi = 0; xi < iw; ++xi) {
      double v = 4.0 * g(yi, xi) - g(yi - 1, xi) - g(yi + 1, xi) - g(yi, xi - 1) - g(yi, xi + 1);
      if (yi == 0) v += ring(-1, xi);
      if (yi == ih - 1) v += ring(ih, xi);
      if (xi == 0) v += ring(yi, -1);
      if (xi == iw - 1) v += ring(yi, iw);
      b[idx(yi, xi)] = v;
    }
  }

  // A = 4I - adjacency on the interior grid (symmetric positive definite).
  const auto apply_laplacian = [&](const Arr& u, Arr& out) {
    for (int yi = 0; yi < ih; ++yi) {
      for (int xi = 0; xi < iw; ++xi) {
        double v = 4.0 * u[idx(yi, xi)];
        if (yi > 0) v -= u[idx(yi - 1, xi)];
        if (yi < ih - 1) v -= u[idx(yi + 1, xi)];
        if (xi > 0) v -= u[idx(yi, xi - 1)];
        if (xi < iw - 1) v -= u[idx(yi, xi + 1)];
        out[idx(yi, xi)] = v;
      }
    }
  };

  Arr u(n);
  for (int yi = 0; yi < ih; ++yi) {
    for (int xi = 0; xi < iw; ++xi) u[idx(yi, xi)] = g(yi, xi);
  }

  const double b_norm = std::sqrt((b * b).sum());
  PoissonReport report;
  Arr r(n), p(n), ap(n);

  const auto residual_norm = [&]() {
    apply_laplacian(u, ap);
    r = b - ap;
    return std::sqrt((r * r).sum());
  };

  double rnorm = residual_norm();
  const double denom = b_norm > 0.0 ? b_norm : 1.0;
  report.restart_residuals.push_back(rnorm / denom);

  long iter = 0;
  while (rnorm / denom > tolerance && iter < max_iterations) {
    // One restarted CG sweep from the exact residual.
    p = r;
    double rr = (r * r).sum();
    for (int k = 0; k < restart_interval && iter < max_iterations; ++k, ++iter) {
      apply_laplacian(p, ap);
      const double pap = (p * ap).sum();
      if (!(pap > 0.0)) break;
      const double alpha = rr / pap;
      u += alpha * p;
      r -= alpha * ap;
      const double rr_new = (r * r).sum();
      if (std::sqrt(rr_new) / denom <= tolerance) {
        rr = rr_new;
        break;
      }
      p = r + (rr_new / rr) * p;
      rr = rr_new;
    }
    rnorm = residual_norm();
    report.restart_residuals.push_back(rnorm / denom);
  }

  report.iterations = static_cast<int>(iter);
  report.relative_residual = rnorm / denom;
  report.converged = report.relative_residual <= tolerance;

  // Outer ring keeps base values by construction; write the solved interior.
  for (int yi = 0; yi < ih; ++yi) {
    for (int xi = 0; xi < iw; ++xi) {
      base_plane(rect.y0 + 1 + yi, rect.x0 + 1 + xi) = static_cast<Scalar>(u[idx(yi, xi)]);
    }
  }
  // The ring itself takes the base boundary values (they are the Dirichlet
  // data), which the base already holds: nothing to write there.
  return report;
}

template <typename Scalar>
PoissonReport poisson_blend(ImageT<Scalar>& base, const ImageT<Scalar>& patch, const Rect& rect,
                            double tolerance = 1e-6, long max_iterations = -1) {
  if (patch.channels() != base.channels()) {
    throw std::invalid_argument("poisson_blend: channel mismatch");
  }
  PoissonReport report;
  for (int c = 0; c < base.channels(); ++c) {
    PoissonReport r = poisson_blend_plane(base.planes[static_cast<std::size_t>(c)],
                                          patch.planes[static_cast<std::size_t>(c)], rect,
                                          tolerance, max_iterations);
    if (c == 0) {
      report = std::move(r);
    } else {
      report.merge(r);
    }
  }
  return report;
}

}  // namespace facesynth

#endif  // FACESYNTH_BLENDING_HPP
