// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/illum.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace facesynth {

std::string to_string(FilterMethod m) {
  switch (m) {
    case FilterMethod::DOG: return "dog";
    case FilterMethod::SSR: return "ssr";
    default: return "lssf";
  }
}

FilterMethod filter_method_from_string(const std::string& s) {
  if (s == "dog") return FilterMethod::DOG;
  if (s == "ssr") return FilterMethod::SSR;
  if (s == "lssf") return FilterMethod::LSSF;
  throw std::invalid_argument("unknown filter method '" + s + "'");
}

void FilterConfig::validate() const {
  if (!(dog_sigma1 > 0.0) || !(dog_sigma2 > 0.0) || !(ssr_sigma > 0.0)) {
    throw std::invalid_argument("filter sigmas must be positive");
  }
  if (!(dog_sigma1 < dog_sigma2)) {
    throw std::invalid_argument("dog_sigma1 must be smaller than dog_sigma2");
  }
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (!(lssf_lambda > 0.0) || lssf_radius < 1) {
    throw std::invalid_argument("invalid LSSF smoothing parameters");
  }
}

Plane gaussian_blur(const Plane& in, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_blur: sigma must be positive");
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    const double v = std::exp(-0.5 * (k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = static_cast<float>(v);
    sum += v;
  }
  for (auto& v : kernel) v = static_cast<float>(v / sum);

  const int h = static_cast<int>(in.rows());
  const int w = static_cast<int>(in.cols());
  Plane tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int k = -radius; k <= radius; ++k) {
        const int xx = std::clamp(x + k, 0, w - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * in(y, xx);
      }
      tmp(y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int k = -radius; k <= radius; ++k) {
        const int yy = std::clamp(y + k, 0, h - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp(yy, x);
      }
      out(y, x) = acc;
    }
  }
  return out;
}

Plane box_mean(const Plane& in, int radius) {
  if (radius < 0) throw std::invalid_argument("box_mean: negative radius");
  const int h = static_cast<int>(in.rows());
  const int w = static_cast<int>(in.cols());
  // Running sums along rows, then columns, normalized by the true window size.
  Eigen::ArrayXXd row(h, w);
  for (int y = 0; y < h; ++y) {
    double acc = 0.0;
    for (int x = 0; x <= std::min(radius, w - 1); ++x) acc += in(y, x);
    for (int x = 0; x < w; ++x) {
      if (x > 0) {
        const int add = x + radius;
        const int del = x - radius - 1;
        if (add < w) acc += in(y, add);
        if (del >= 0) acc -= in(y, del);
      }
      row(y, x) = acc;
    }
  }
  Plane out(h, w);
  for (int x = 0; x < w; ++x) {
    double acc = 0.0;
    for (int y = 0; y <= std::min(radius, h - 1); ++y) acc += row(y, x);
    for (int y = 0; y < h; ++y) {
      if (y > 0) {
        const int add = y + radius;
        const int del = y - radius - 1;
        if (add < h) acc += row(add, x);
        if (del >= 0) acc -= row(del, x);
      }
      out(y, x) = static_cast<float>(acc);
    }
  }
  // Normalize by the exact per-pixel window area.
  for (int y = 0; y < h; ++y) {
    const int wy = std::min(y + radius, h - 1) - std::max(y - radius, 0) + 1;
    for (int x = 0; x < w; ++x) {
      const int wx = std::min(x + radius, w - 1) - std::max(x - radius, 0) + 1;
      out(y, x) = static_cast<float>(out(y, x) / (static_cast<double>(wx) * wy));
    }
  }
  return out;
}

Plane guided_smooth(const Plane& in, int radius, double eps) {
  const Plane mean_i = box_mean(in, radius);
  const Plane corr_i = box_mean((in * in).eval(), radius);
  Plane var_i = corr_i - mean_i * mean_i;
  var_i = var_i.max(0.0f);
  const Plane a = var_i / (var_i + static_cast<float>(eps));
  const Plane b = mean_i - a * mean_i;
  const Plane mean_a = box_mean(a, radius);
  const Plane mean_b = box_mean(b, radius);
  return mean_a * in + mean_b;
}

namespace {

Plane gray_plane(const Image& img) { return to_gray(img).planes[0]; }

Image wrap_plane(Plane p, const std::string& provenance) {
  Image out;
  out.provenance = provenance;
  out.planes.push_back(std::move(p));
  return out;
}

// Zero mean, unit variance, then affine onto [0, 1]; a (near-)flat signal
// maps to constant 0.5.
Plane standardize_to_unit(const Plane& p) {
  constexpr float kTiny = 1e-12f;
  const auto n = static_cast<float>(p.size());
  const float mean = p.sum() / n;
  const float var = ((p - mean) * (p - mean)).sum() / n;
  if (var < kTiny) return Plane::Constant(p.rows(), p.cols(), 0.5f);
  const Plane z = (p - mean) / std::sqrt(var);
  const float lo = z.minCoeff();
  const float hi = z.maxCoeff();
  if (hi - lo < kTiny) return Plane::Constant(p.rows(), p.cols(), 0.5f);
  return (z - lo) / (hi - lo);
}

// Affine map fixed by the 1st/99th percentiles, clamped to [0, 1]. A range
// below 1e-5 log units is filter rounding noise on a flat image, not
// contrast, and maps to the midpoint instead of being amplified.
Plane percentile_rescale(const Plane& p) {
  std::vector<float> values(p.data(), p.data() + p.size());
  const auto n = values.size();
  const auto rank = [&](double q) {
    auto k = static_cast<std::size_t>(q * static_cast<double>(n - 1));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
  };
  const float lo = rank(0.01);
  const float hi = rank(0.99);
  if (hi - lo < 1e-5f) return Plane::Constant(p.rows(), p.cols(), 0.5f);
  return ((p - lo) / (hi - lo)).min(1.0f).max(0.0f);
}

}  // namespace

Image dog_normalize(const Image& img, const FilterConfig& cfg) {
  cfg.validate();
  const Plane gray = gray_plane(img);
  const Plane response = gaussian_blur(gray, cfg.dog_sigma1) - gaussian_blur(gray, cfg.dog_sigma2);
  return wrap_plane(standardize_to_unit(response), img.provenance);
}

// The log-domain offset scales with the mean intensity, so a global gain
// moves the offset with it and the log difference cancels exactly.
static float scaled_epsilon(const Plane& gray, double epsilon) {
  const double mean = gray.cast<double>().sum() / static_cast<double>(gray.size());
  return static_cast<float>(epsilon * mean + 1e-12);
}

Image ssr_normalize(const Image& img, const FilterConfig& cfg) {
  cfg.validate();
  const Plane gray = gray_plane(img);
  const float eps = scaled_epsilon(gray, cfg.epsilon);
  const Plane blurred = gaussian_blur(gray, cfg.ssr_sigma);
  const Plane response = (gray + eps).log() - (blurred + eps).log();
  return wrap_plane(percentile_rescale(response), img.provenance);
}

Image lssf_normalize(const Image& img, const FilterConfig& cfg) {
  cfg.validate();
  const Plane gray = gray_plane(img);
  const float eps = scaled_epsilon(gray, cfg.epsilon);
  const Plane log_i = (gray + eps).log();
  // Large-scale layer in the log domain; the residual is the small-scale
  // layer and carries the identity detail untouched.
  const Plane large = guided_smooth(log_i, cfg.lssf_radius, cfg.lssf_lambda);
  const Plane small = log_i - large;
  // Retinex step on the large-scale layer removes slow illumination fields.
  const Plane large_norm = large - gaussian_blur(large, cfg.ssr_sigma);
  return wrap_plane(percentile_rescale(large_norm + small), img.provenance);
}

Image normalize_illumination(const Image& img, const FilterConfig& cfg) {
  switch (cfg.method) {
    case FilterMethod::DOG: return dog_normalize(img, cfg);
    case FilterMethod::SSR: return ssr_normalize(img, cfg);
    default: return lssf_normalize(img, cfg);
  }
}

}  // namespace facesynth
