// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <Eigen/Dense>

#include "facesynth/blending.hpp"
#include "facesynth/rng.hpp"

using namespace facesynth;

namespace {

PlaneT<double> random_plane(int h, int w, std::uint64_t seed) {
  PlaneT<double> p(h, w);
  CounterRng gen(seed);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) p(y, x) = gen.next_double();
  }
  return p;
}

// Dense direct-solve oracle: assemble the interior Poisson system row by row
// (5-point Laplacian, Dirichlet values from the base's outer rect ring,
// guidance from the patch Laplacian) and eliminate with a dense LU. Built
// independently of the conjugate-gradient path it checks.
PlaneT<double> dense_poisson_oracle(const PlaneT<double>& base, const PlaneT<double>& patch,
                                    const Rect& rect) {
  const int iw = rect.width() - 2;
  const int ih = rect.height() - 2;
  const int n = iw * ih;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  const auto id = [iw](int yi, int xi) { return yi * iw + xi; };
  for (int yi = 0; yi < ih; ++yi) {
    for (int xi = 0; xi < iw; ++xi) {
      const int row = id(yi, xi);
      a(row, row) = 4.0;
      const double g = patch(1 + yi, 1 + xi);
      double rhs = 4.0 * g - patch(yi, 1 + xi) - patch(2 + yi, 1 + xi) - patch(1 + yi, xi) -
                   patch(1 + yi, 2 + xi);
      // Neighbours: interior unknowns go into A, ring pixels into b.
      const int dy[4] = {-1, 1, 0, 0};
      const int dx[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const int ny = yi + dy[k];
        const int nx = xi + dx[k];
        if (ny >= 0 && ny < ih && nx >= 0 && nx < iw) {
          a(row, id(ny, nx)) = -1.0;
        } else {
          rhs += base(rect.y0 + 1 + ny, rect.x0 + 1 + nx);
        }
      }
      b(row) = rhs;
    }
  }
  const Eigen::VectorXd u = a.partialPivLu().solve(b);
  PlaneT<double> out = base;
  for (int yi = 0; yi < ih; ++yi) {
    for (int xi = 0; xi < iw; ++xi) {
      out(rect.y0 + 1 + yi, rect.x0 + 1 + xi) = u(id(yi, xi));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("hard paste replaces exactly the rectangle") {
  ImageT<double> base(16, 16, 1, 0.0);
  ImageT<double> patch(6, 5, 1, 1.0);
  const Rect rect{3, 4, 8, 10};
  hard_paste(base, patch, rect);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const bool inside = x >= 3 && x < 8 && y >= 4 && y < 10;
      CHECK(base.planes[0](y, x) == (inside ? 1.0 : 0.0));
    }
  }
}

TEST_CASE("hard paste of identical content is a no-op") {
  ImageT<double> base;
  base.planes.push_back(random_plane(12, 12, 1));
  const Rect rect{2, 3, 9, 10};
  ImageT<double> patch;
  patch.planes.push_back(base.planes[0].block(rect.y0, rect.x0, rect.height(), rect.width()));
  ImageT<double> out = base;
  hard_paste(out, patch, rect);
  CHECK((out.planes[0] == base.planes[0]).all());
}

TEST_CASE("hard paste errors on bad geometry") {
  ImageT<double> base(8, 8, 1, 0.0);
  ImageT<double> patch(4, 4, 1, 0.0);
  CHECK_THROWS_AS(hard_paste(base, patch, Rect{6, 6, 10, 10}), std::invalid_argument);
  CHECK_THROWS_AS(hard_paste(base, patch, Rect{2, 2, 2, 6}), std::invalid_argument);
  CHECK_THROWS_AS(hard_paste(base, patch, Rect{0, 0, 5, 4}), std::invalid_argument);
}

TEST_CASE("poisson blend with matching content returns the base") {
  PlaneT<double> base = random_plane(14, 14, 2);
  const Rect rect{3, 3, 11, 11};
  const PlaneT<double> patch = base.block(rect.y0, rect.x0, rect.height(), rect.width());
  PlaneT<double> out = base;
  const PoissonReport rep = poisson_blend_plane(out, patch, rect, 1e-6);
  CHECK(rep.converged);
  CHECK((out - base).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("zero-guidance patch with constant boundary solves to the constant") {
  PlaneT<double> base = PlaneT<double>::Constant(12, 12, 0.37);
  const Rect rect{2, 2, 10, 10};
  const PlaneT<double> patch = PlaneT<double>::Constant(8, 8, 0.9);  // constant, zero gradient
  PlaneT<double> out = base;
  const PoissonReport rep = poisson_blend_plane(out, patch, rect, 1e-8);
  CHECK(rep.converged);
  CHECK((out - 0.37).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("random 8x8 problems match the dense direct-solve oracle") {
  for (int trial = 0; trial < 50; ++trial) {
    const PlaneT<double> base = random_plane(12, 12, 100 + static_cast<std::uint64_t>(trial));
    const PlaneT<double> patch = random_plane(8, 8, 500 + static_cast<std::uint64_t>(trial));
    const Rect rect{2, 2, 10, 10};
    PlaneT<double> got = base;
    const PoissonReport rep = poisson_blend_plane(got, patch, rect, 1e-10);
    CHECK(rep.converged);
    const PlaneT<double> want = dense_poisson_oracle(base, patch, rect);
    CHECK((got - want).abs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("harmonic patch with matching ring equals hard paste") {
  // A linear ramp is discrete-harmonic; base equals the same ramp, so the
  // solution is the patch itself and no iterations are needed.
  PlaneT<double> base(12, 12);
  for (int y = 0; y < 12; ++y) {
    for (int x = 0; x < 12; ++x) base(y, x) = 0.03 * x + 0.05 * y + 0.1;
  }
  const Rect rect{2, 3, 10, 11};
  const PlaneT<double> patch = base.block(rect.y0, rect.x0, rect.height(), rect.width());
  PlaneT<double> blended = base;
  const PoissonReport rep = poisson_blend_plane(blended, patch, rect, 1e-9);
  PlaneT<double> pasted = base;
  hard_paste_plane(pasted, patch, rect);
  CHECK(rep.iterations == 0);
  CHECK((blended - pasted).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("blend is linear in a joint scaling of base and patch") {
  const PlaneT<double> base = random_plane(12, 12, 7);
  const PlaneT<double> patch = random_plane(8, 8, 8);
  const Rect rect{2, 2, 10, 10};
  const double k = 3.5;

  PlaneT<double> out1 = base;
  poisson_blend_plane(out1, patch, rect, 1e-11);
  PlaneT<double> outk = (k * base).eval();
  poisson_blend_plane(outk, (k * patch).eval(), rect, 1e-11);
  CHECK((outk - k * out1).abs().maxCoeff() <= 1e-5);
}

TEST_CASE("restart residuals decrease monotonically") {
  for (int trial = 0; trial < 10; ++trial) {
    const PlaneT<double> base = random_plane(20, 20, 900 + static_cast<std::uint64_t>(trial));
    const PlaneT<double> patch = random_plane(16, 16, 950 + static_cast<std::uint64_t>(trial));
    const Rect rect{2, 2, 18, 18};
    PlaneT<double> out = base;
    const PoissonReport rep = poisson_blend_plane(out, patch, rect, 1e-10);
    REQUIRE(rep.restart_residuals.size() >= 1);
    for (std::size_t k = 1; k < rep.restart_residuals.size(); ++k) {
      CHECK(rep.restart_residuals[k] <= rep.restart_residuals[k - 1] + 1e-12);
    }
    CHECK(rep.relative_residual <= 1e-10);
  }
}

TEST_CASE("non-convergence is reported, result still returned") {
  const PlaneT<double> base = random_plane(20, 20, 33);
  const PlaneT<double> patch = random_plane(16, 16, 34);
  const Rect rect{2, 2, 18, 18};
  PlaneT<double> out = base;
  const PoissonReport rep = poisson_blend_plane(out, patch, rect, 1e-14, 3);
  CHECK_FALSE(rep.converged);
  CHECK(rep.iterations == 3);
  CHECK(out.allFinite());
}

TEST_CASE("degenerate poisson rectangles are rejected") {
  PlaneT<double> base = random_plane(10, 10, 35);
  const PlaneT<double> patch = random_plane(2, 2, 36);
  CHECK_THROWS_AS(poisson_blend_plane(base, patch, Rect{1, 1, 3, 3}, 1e-6),
                  std::invalid_argument);
}
