// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "facesynth/illum.hpp"
#include "facesynth/rng.hpp"

using namespace facesynth;

namespace {

Image random_gray(int h, int w, std::uint64_t seed, float lo = 0.2f, float hi = 0.9f) {
  Image img(h, w, 1);
  CounterRng gen(seed);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.planes[0](y, x) = lo + (hi - lo) * static_cast<float>(gen.next_double());
    }
  }
  return img;
}

Image scaled(const Image& img, float k) {
  Image out = img;
  for (auto& p : out.planes) p = p * k;
  return out;
}

double pearson(const Plane& a, const Plane& b) {
  const double n = static_cast<double>(a.size());
  const double ma = a.cast<double>().sum() / n;
  const double mb = b.cast<double>().sum() / n;
  const auto da = (a.cast<double>() - ma).eval();
  const auto db = (b.cast<double>() - mb).eval();
  const double cov = (da * db).sum();
  const double va = (da * da).sum();
  const double vb = (db * db).sum();
  if (va <= 0 || vb <= 0) return 0.0;
  return cov / std::sqrt(va * vb);
}

// Fixed identity pattern under a smooth multiplicative illumination ramp.
struct RampFixture {
  Image pattern;  // the identity signal
  Image lit;      // ramp * pattern
};

RampFixture make_ramp_fixture(std::uint64_t seed) {
  RampFixture f;
  f.pattern = Image(64, 64, 1);
  CounterRng gen(seed);
  // Blocky pattern with structure at the 8-pixel scale.
  for (int by = 0; by < 8; ++by) {
    for (int bx = 0; bx < 8; ++bx) {
      const auto v = static_cast<float>(0.3 + 0.5 * gen.next_double());
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) f.pattern.planes[0](by * 8 + y, bx * 8 + x) = v;
      }
    }
  }
  f.lit = f.pattern;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      const float ramp = 0.35f + 1.3f * (static_cast<float>(x + y) / 126.0f);
      f.lit.planes[0](y, x) = f.pattern.planes[0](y, x) * ramp;
    }
  }
  return f;
}

}  // namespace

TEST_CASE("gaussian blur: impulse response matches the numeric kernel value") {
  Plane impulse = Plane::Zero(33, 33);
  impulse(16, 16) = 1.0f;
  const double sigma1 = 1.0, sigma2 = 2.0;
  const Plane response = gaussian_blur(impulse, sigma1) - gaussian_blur(impulse, sigma2);

  // Truncated-normalized kernel center weight, evaluated independently.
  const auto center_weight = [](double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) sum += std::exp(-0.5 * k * k / (sigma * sigma));
    const double w0 = 1.0 / sum;
    return w0 * w0;  // separable: squared for the 2-D center
  };
  const double want = center_weight(sigma1) - center_weight(sigma2);
  CHECK(static_cast<double>(response(16, 16)) == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("gaussian blur preserves constants") {
  const Plane in = Plane::Constant(20, 20, 0.6f);
  const Plane out = gaussian_blur(in, 2.5);
  CHECK((out - 0.6f).abs().maxCoeff() <= 1e-6f);
}

TEST_CASE("box mean matches a naive window average at borders") {
  const Image img = random_gray(11, 13, 5);
  const Plane got = box_mean(img.planes[0], 2);
  for (int y = 0; y < 11; ++y) {
    for (int x = 0; x < 13; ++x) {
      double acc = 0.0;
      int count = 0;
      for (int yy = std::max(0, y - 2); yy <= std::min(10, y + 2); ++yy) {
        for (int xx = std::max(0, x - 2); xx <= std::min(12, x + 2); ++xx) {
          acc += img.planes[0](yy, xx);
          ++count;
        }
      }
      CHECK(static_cast<double>(got(y, x)) == doctest::Approx(acc / count).epsilon(1e-5));
    }
  }
}

TEST_CASE("flat input maps to the guarded midpoint or a constant") {
  Image flat(32, 32, 1);
  flat.planes[0].setConstant(0.42f);
  FilterConfig cfg;

  const Image dog = dog_normalize(flat, cfg);
  CHECK((dog.planes[0] - 0.5f).abs().maxCoeff() <= 1e-6f);

  const Image ssr = ssr_normalize(flat, cfg);
  const float s0 = ssr.planes[0](0, 0);
  CHECK((ssr.planes[0] - s0).abs().maxCoeff() <= 1e-6f);

  cfg.method = FilterMethod::LSSF;
  const Image lssf = lssf_normalize(flat, cfg);
  const float l0 = lssf.planes[0](0, 0);
  CHECK((lssf.planes[0] - l0).abs().maxCoeff() <= 1e-6f);
}

TEST_CASE("DOG and SSR are invariant to global gain") {
  const Image img = random_gray(48, 48, 6, 0.25f, 0.85f);
  FilterConfig cfg;
  for (float k : {0.5f, 2.0f}) {
    const Image a = dog_normalize(img, cfg);
    const Image b = dog_normalize(scaled(img, k), cfg);
    CHECK((a.planes[0] - b.planes[0]).abs().maxCoeff() <= 1e-3f);

    const Image c = ssr_normalize(img, cfg);
    const Image d = ssr_normalize(scaled(img, k), cfg);
    CHECK((c.planes[0] - d.planes[0]).abs().maxCoeff() <= 1e-3f);
  }
}

TEST_CASE("LSSF gain invariance within 1e-2") {
  const Image img = random_gray(48, 48, 7, 0.3f, 0.9f);
  FilterConfig cfg;
  const Image a = lssf_normalize(img, cfg);
  const Image b = lssf_normalize(scaled(img, 1.8f), cfg);
  CHECK((a.planes[0] - b.planes[0]).abs().maxCoeff() <= 1e-2f);
}

TEST_CASE("filters commute with horizontal mirroring") {
  const Image img = random_gray(40, 40, 8);
  FilterConfig cfg;
  const auto check_commute = [&](auto&& filter) {
    const Image a = filter(mirrored(img), cfg);
    const Image b = mirrored(filter(img, cfg));
    CHECK((a.planes[0] - b.planes[0]).abs().maxCoeff() <= 1e-5f);
  };
  check_commute([](const Image& i, const FilterConfig& c) { return dog_normalize(i, c); });
  check_commute([](const Image& i, const FilterConfig& c) { return ssr_normalize(i, c); });
  check_commute([](const Image& i, const FilterConfig& c) { return lssf_normalize(i, c); });
}

TEST_CASE("SSR raises pattern correlation on the ramp fixture") {
  const RampFixture f = make_ramp_fixture(9);
  FilterConfig cfg;
  const Image out = ssr_normalize(f.lit, cfg);
  const double raw_corr = pearson(f.lit.planes[0], f.pattern.planes[0]);
  const double ssr_corr = pearson(out.planes[0], f.pattern.planes[0]);
  CHECK(ssr_corr >= raw_corr);
}

TEST_CASE("LSSF beats DOG on the ramp-fixture identity correlation") {
  const RampFixture f = make_ramp_fixture(10);
  FilterConfig cfg;
  const double dog_corr = pearson(dog_normalize(f.lit, cfg).planes[0], f.pattern.planes[0]);
  const double lssf_corr = pearson(lssf_normalize(f.lit, cfg).planes[0], f.pattern.planes[0]);
  CHECK(lssf_corr >= dog_corr);
}

TEST_CASE("all filters emit finite [0,1] images of the input size") {
  const Image img = random_gray(37, 41, 11, 0.0f, 1.0f);
  FilterConfig cfg;
  for (auto method : {FilterMethod::DOG, FilterMethod::SSR, FilterMethod::LSSF}) {
    cfg.method = method;
    const Image out = normalize_illumination(img, cfg);
    CHECK(out.channels() == 1);
    CHECK(out.height() == 37);
    CHECK(out.width() == 41);
    CHECK(out.planes[0].allFinite());
    CHECK(out.planes[0].minCoeff() >= 0.0f);
    CHECK(out.planes[0].maxCoeff() <= 1.0f);
  }
}

TEST_CASE("RGB input is reduced by luminance") {
  Image rgb(16, 16, 3);
  rgb.planes[0].setConstant(0.8f);
  rgb.planes[1].setConstant(0.4f);
  rgb.planes[2].setConstant(0.1f);
  FilterConfig cfg;
  const Image out = dog_normalize(rgb, cfg);
  CHECK(out.channels() == 1);
}

TEST_CASE("config validation") {
  FilterConfig cfg;
  cfg.dog_sigma1 = 3.0;
  cfg.dog_sigma2 = 2.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.dog_sigma1 = 1.0;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
