// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_IMAGE_HPP
#define FACESYNTH_IMAGE_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace facesynth {

// Side of the canonical face frame; every aligned image is exactly this size.
inline constexpr int kCanonicalSize = 100;

// Axis-aligned integer rectangle, half-open on both axes.
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  bool empty() const { return width() <= 0 || height() <= 0; }

  bool operator==(const Rect&) const = default;

  static Rect from_center(double cx, double cy, double w, double h) {
    return Rect{static_cast<int>(std::lround(cx - w / 2.0)),
                static_cast<int>(std::lround(cy - h / 2.0)),
                static_cast<int>(std::lround(cx + w / 2.0)),
                static_cast<int>(std::lround(cy + h / 2.0))};
  }

  Rect clipped(int frame_w, int frame_h) const {
    return Rect{std::clamp(x0, 0, frame_w), std::clamp(y0, 0, frame_h),
                std::clamp(x1, 0, frame_w), std::clamp(y1, 0, frame_h)};
  }

  // Reflection across the vertical axis of a frame_w-wide grid (pixel column
  // x maps to frame_w-1-x, so the half-open span flips ends).
  Rect mirrored(int frame_w) const {
    return Rect{frame_w - x1, y0, frame_w - x0, y1};
  }

  bool intersects(const Rect& o) const {
    return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
};

template <typename Scalar>
using PlaneT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// An intensity grid with 1 or 3 channel planes, values nominally in [0, 1].
// Plane indexing is (row, col) = (y, x).
template <typename Scalar>
struct ImageT {
  std::vector<PlaneT<Scalar>> planes;
  std::string provenance;

  ImageT() = default;
  ImageT(int height, int width, int channels, Scalar fill = Scalar(0)) {
    planes.assign(static_cast<std::size_t>(channels),
                  PlaneT<Scalar>::Constant(height, width, fill));
  }

  int channels() const { return static_cast<int>(planes.size()); }
  int height() const { return planes.empty() ? 0 : static_cast<int>(planes[0].rows()); }
  int width() const { return planes.empty() ? 0 : static_cast<int>(planes[0].cols()); }

  Scalar& at(int c, int y, int x) { return planes[static_cast<std::size_t>(c)](y, x); }
  Scalar at(int c, int y, int x) const { return planes[static_cast<std::size_t>(c)](y, x); }
};

using Plane = PlaneT<float>;
using Image = ImageT<float>;

template <typename Scalar>
bool same_shape(const ImageT<Scalar>& a, const ImageT<Scalar>& b) {
  return a.channels() == b.channels() && a.height() == b.height() &&
         a.width() == b.width();
}

template <typename Scalar>
bool pixels_equal(const ImageT<Scalar>& a, const ImageT<Scalar>& b) {
  if (!same_shape(a, b)) return false;
  for (int c = 0; c < a.channels(); ++c) {
    if (!(a.planes[static_cast<std::size_t>(c)] == b.planes[static_cast<std::size_t>(c)]).all()) {
      return false;
    }
  }
  return true;
}

// Horizontal flip. mirrored(mirrored(x)) == x exactly.
template <typename Scalar>
ImageT<Scalar> mirrored(const ImageT<Scalar>& img) {
  ImageT<Scalar> out;
  out.provenance = img.provenance;
  out.planes.reserve(img.planes.size());
  for (const auto& p : img.planes) out.planes.push_back(p.rowwise().reverse());
  return out;
}

// Rec.601 luma; single-channel images pass through unchanged.
template <typename Scalar>
ImageT<Scalar> to_gray(const ImageT<Scalar>& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3) throw std::invalid_argument("to_gray: expected 1 or 3 channels");
  ImageT<Scalar> out;
  out.provenance = img.provenance;
  out.planes.push_back(Scalar(0.299) * img.planes[0] + Scalar(0.587) * img.planes[1] +
                       Scalar(0.114) * img.planes[2]);
  return out;
}

// Bilinear sample with border replication (coordinates clamped to the grid).
template <typename Scalar>
Scalar bilinear_sample(const PlaneT<Scalar>& p, double x, double y) {
  const int w = static_cast<int>(p.cols());
  const int h = static_cast<int>(p.rows());
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(x), w - 2 >= 0 ? w - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), h - 2 >= 0 ? h - 2 : 0);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double v00 = static_cast<double>(p(y0, x0));
  const double v01 = static_cast<double>(p(y0, x1));
  const double v10 = static_cast<double>(p(y1, x0));
  const double v11 = static_cast<double>(p(y1, x1));
  const double top = v00 + fx * (v01 - v00);
  const double bot = v10 + fx * (v11 - v10);
  return static_cast<Scalar>(top + fy * (bot - top));
}

// Resample the content of src_rect in src to an out_w x out_h patch, bilinear,
// pixel-center convention. Sample positions are clamped inside src_rect, and
// an equal-size rect reproduces the source pixels exactly.
template <typename Scalar>
PlaneT<Scalar> resample_rect(const PlaneT<Scalar>& src, const Rect& src_rect,
                             int out_w, int out_h) {
  if (src_rect.empty() || out_w <= 0 || out_h <= 0) {
    throw std::invalid_argument("resample_rect: degenerate rectangle");
  }
  PlaneT<Scalar> out(out_h, out_w);
  const double sx = static_cast<double>(src_rect.width()) / out_w;
  const double sy = static_cast<double>(src_rect.height()) / out_h;
  const double xlo = src_rect.x0;
  const double xhi = src_rect.x1 - 1;
  const double ylo = src_rect.y0;
  const double yhi = src_rect.y1 - 1;
  for (int y = 0; y < out_h; ++y) {
    const double src_y = std::clamp(ylo + (y + 0.5) * sy - 0.5, ylo, yhi);
    for (int x = 0; x < out_w; ++x) {
      const double src_x = std::clamp(xlo + (x + 0.5) * sx - 0.5, xlo, xhi);
      out(y, x) = bilinear_sample(src, src_x, src_y);
    }
  }
  return out;
}

template <typename Scalar>
ImageT<Scalar> clamped01(const ImageT<Scalar>& img) {
  ImageT<Scalar> out = img;
  for (auto& p : out.planes) p = p.min(Scalar(1)).max(Scalar(0));
  return out;
}

}  // namespace facesynth

#endif  // FACESYNTH_IMAGE_HPP
