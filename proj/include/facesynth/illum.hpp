// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_ILLUM_HPP
#define FACESYNTH_ILLUM_HPP

#include <string>

#include "facesynth/image.hpp"

namespace facesynth {

enum class FilterMethod { DOG, SSR, LSSF };

std::string to_string(FilterMethod m);
FilterMethod filter_method_from_string(const std::string& s);

struct FilterConfig {
  FilterMethod method = FilterMethod::DOG;
  double dog_sigma1 = 1.0;
  double dog_sigma2 = 2.0;
  double ssr_sigma = 15.0;
  // Edge-preserving smoothing strength of the large-scale layer (guided
  // filter regularization in log-intensity variance units) and its radius.
  double lssf_lambda = 0.1;
  int lssf_radius = 8;
  double epsilon = 0.01;  // log-domain offset

  void validate() const;
};

// Separable Gaussian convolution, border replication, kernel radius 3*sigma.
Plane gaussian_blur(const Plane& in, double sigma);

// Border-aware box mean over a (2r+1)^2 window.
Plane box_mean(const Plane& in, int radius);

// Guided filter with the input as its own guide; eps is the smoothing
// strength (larger = smoother).
Plane guided_smooth(const Plane& in, int radius, double eps);

// All three filters take gray or RGB input (RGB is reduced by luminance),
// return a single-channel image in [0, 1], and are invariant to global
// multiplicative gain up to the epsilon offset.

// Band-pass G(s1)*I - G(s2)*I, standardized then affinely mapped to [0, 1];
// a flat response maps to 0.5.
Image dog_normalize(const Image& img, const FilterConfig& cfg);

// Single-scale retinex log(I + eps) - log(G(s)*I + eps), rescaled by the
// 1st/99th percentiles.
Image ssr_normalize(const Image& img, const FilterConfig& cfg);

// Large/small-scale decomposition: the large-scale layer (edge-preserving
// smoothing of log intensity) is re-normalized by a retinex step and
// recombined with the untouched small-scale layer.
Image lssf_normalize(const Image& img, const FilterConfig& cfg);

Image normalize_illumination(const Image& img, const FilterConfig& cfg);

}  // namespace facesynth

#endif  // FACESYNTH_ILLUM_HPP
