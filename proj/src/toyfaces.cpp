// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/toyfaces.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "facesynth/png_io.hpp"
#include "facesynth/rng.hpp"

namespace facesynth {

void ToyFaceSpec::validate() const {
  if (num_identities < 1 || images_per_identity < 1) {
    throw std::invalid_argument("toy spec: need at least one identity and image");
  }
  if (!(gain_min > 0.0) || !(gain_max >= gain_min)) {
    throw std::invalid_argument("toy spec: bad gain range");
  }
  if (identity_margin <= 0.0 || identity_margin > 0.9) {
    throw std::invalid_argument("toy spec: identity margin out of range");
  }
}

namespace {

constexpr int kNumIdentityParams = 7;

struct IdentityParams {
  // All normalized to [0, 1]; mapped to geometry below.
  double raw[kNumIdentityParams];

  double eye_radius() const { return 3.5 + 3.0 * raw[0]; }
  double eye_aspect() const { return 0.55 + 0.45 * raw[1]; }  // height/width
  double nose_half_width() const { return 4.0 + 6.0 * raw[2]; }
  double nose_length() const { return 12.0 + 10.0 * raw[3]; }
  double mouth_half_width() const { return 8.0 + 9.0 * raw[4]; }
  double mouth_curve() const { return -4.0 + 8.0 * raw[5]; }  // px bend, +down
  double brow_drop() const { return 6.0 + 5.0 * raw[6]; }     // px above eyes
};

// Identities are rejection-sampled so each pair differs by at least the
// margin in two or more parameters.
std::vector<IdentityParams> sample_identities(const ToyFaceSpec& spec, std::uint64_t seed) {
  std::vector<IdentityParams> out;
  out.reserve(static_cast<std::size_t>(spec.num_identities));
  CounterRng gen(seed, 0x1d5);
  long attempts = 0;
  const long cap = 20000L * spec.num_identities + 10000;
  while (static_cast<int>(out.size()) < spec.num_identities) {
    if (++attempts > cap) {
      throw std::runtime_error("unsatisfiable identity-margin constraint");
    }
    IdentityParams cand{};
    for (double& v : cand.raw) v = gen.next_double();
    bool ok = true;
    for (const auto& other : out) {
      int distinct = 0;
      for (int k = 0; k < kNumIdentityParams; ++k) {
        if (std::abs(cand.raw[k] - other.raw[k]) >= spec.identity_margin) ++distinct;
      }
      if (distinct < 2) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(cand);
  }
  return out;
}

struct Nuisance {
  double gain = 1.0;
  double ramp_amp = 0.0;
  double ramp_angle = 0.0;
  double rot = 0.0;
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

Nuisance sample_nuisance(const ToyFaceSpec& spec, std::uint64_t seed, int identity,
                         int image_index, bool nir) {
  const std::uint64_t stream =
      0xa11ce + 2ull * (static_cast<std::uint64_t>(identity) * 4096 +
                        static_cast<std::uint64_t>(image_index) * 2 + (nir ? 1 : 0));
  CounterRng gen(seed, stream);
  Nuisance n;
  n.gain = gen.next_range(spec.gain_min, spec.gain_max);
  n.ramp_amp = gen.next_range(0.0, spec.ramp_strength);
  n.ramp_angle = gen.next_range(0.0, 6.283185307179586);
  n.rot = gen.next_range(-spec.jitter_rotation, spec.jitter_rotation);
  n.scale = gen.next_range(1.0 - spec.jitter_scale, 1.0 + spec.jitter_scale);
  n.tx = gen.next_range(-spec.jitter_translate, spec.jitter_translate);
  n.ty = gen.next_range(-spec.jitter_translate, spec.jitter_translate);
  if (nir) {
    n.gain *= spec.nir_gain;
    n.ramp_amp = gen.next_range(0.5 * spec.nir_ramp, spec.nir_ramp);
  }
  return n;
}

double smoothstep(double lo, double hi, double v) {
  if (v <= lo) return 0.0;
  if (v >= hi) return 1.0;
  const double t = (v - lo) / (hi - lo);
  return t * t * (3.0 - 2.0 * t);
}

// Signed "inside-ness" of an axis-aligned ellipse, ~1 inside, 0 outside,
// with a soft one-pixel edge.
double ellipse_mask(double x, double y, double cx, double cy, double rx, double ry) {
  const double dx = (x - cx) / rx;
  const double dy = (y - cy) / ry;
  const double d = std::sqrt(dx * dx + dy * dy);
  const double edge = 1.0 / std::min(rx, ry);
  return 1.0 - smoothstep(1.0 - edge, 1.0 + edge, d);
}

// Face intensity at canonical coordinates (eyes fixed at (30,40)/(70,40)).
double face_intensity(const IdentityParams& id, double x, double y) {
  constexpr double kSkin = 0.72;
  constexpr double kBackground = 0.18;

  double v = kBackground;
  const double head = ellipse_mask(x, y, 49.5, 53.0, 35.0, 43.0);
  v = v + (kSkin - v) * head;
  if (head <= 0.0) return v;

  const double er = id.eye_radius();
  const double ea = id.eye_aspect();
  for (const double ex : {30.0, 70.0}) {
    const double sclera = ellipse_mask(x, y, ex, 40.0, er, er * ea);
    v = v + (0.95 - v) * sclera;
    const double pupil = ellipse_mask(x, y, ex, 40.0, 0.45 * er, 0.45 * er * ea);
    v = v + (0.08 - v) * pupil;
    const double brow = ellipse_mask(x, y, ex, 40.0 - er * ea - id.brow_drop(),
                                     er + 2.5, 1.6);
    v = v + (0.22 - v) * brow;
  }

  // Nose: a darker wedge from the eye line down to the tip, with a bright
  // ridge; the tip sits at the nose landmark.
  const double tip_y = 42.0 + id.nose_length();
  if (y >= 42.0 && y <= tip_y + 2.0) {
    const double t = (y - 42.0) / (tip_y - 42.0);
    const double half_w = id.nose_half_width() * std::min(1.0, std::max(0.15, t));
    const double dx = std::abs(x - 49.5);
    const double inside = 1.0 - smoothstep(half_w - 1.0, half_w + 1.0, dx);
    const double below_tip = smoothstep(tip_y, tip_y + 2.0, y);
    const double shade = inside * (1.0 - below_tip);
    v = v + (0.52 - v) * 0.8 * shade;
    const double ridge = (1.0 - smoothstep(0.8, 1.8, dx)) * (1.0 - below_tip);
    v = v + (0.88 - v) * 0.5 * ridge;
  }

  // Mouth: curved dark band centered on the mouth landmark.
  {
    const double mw = id.mouth_half_width();
    const double dx = (x - 49.5) / mw;
    if (dx >= -1.15 && dx <= 1.15) {
      const double curve_y = 75.0 + id.mouth_curve() * (dx * dx);
      const double dy = std::abs(y - curve_y);
      const double band = (1.0 - smoothstep(1.6, 2.8, dy)) *
                          (1.0 - smoothstep(1.0, 1.15, std::abs(dx)));
      v = v + (0.25 - v) * band;
    }
  }
  return v;
}

}  // namespace

ToyRender render_toy_face(const ToyFaceSpec& spec, std::uint64_t seed, int identity,
                          int image_index, bool nir) {
  spec.validate();
  const auto identities = sample_identities(spec, seed);
  if (identity < 0 || identity >= static_cast<int>(identities.size())) {
    throw std::out_of_range("identity index out of range");
  }
  const IdentityParams& id = identities[static_cast<std::size_t>(identity)];
  const Nuisance n = sample_nuisance(spec, seed, identity, image_index, nir);

  // Jitter maps canonical face coordinates to image coordinates about the
  // frame center; shapes are evaluated at the inverse-mapped position.
  const double cosr = std::cos(n.rot) * n.scale;
  const double sinr = std::sin(n.rot) * n.scale;
  const double cx = 49.5, cy = 49.5;
  const auto to_image = [&](double fx, double fy) {
    const double rx = fx - cx, ry = fy - cy;
    return std::pair<double, double>(cx + cosr * rx - sinr * ry + n.tx,
                                     cy + sinr * rx + cosr * ry + n.ty);
  };
  const double det = cosr * cosr + sinr * sinr;
  const auto to_face = [&](double ix, double iy) {
    const double rx = ix - cx - n.tx, ry = iy - cy - n.ty;
    return std::pair<double, double>(cx + (cosr * rx + sinr * ry) / det,
                                     cy + (-sinr * rx + cosr * ry) / det);
  };

  ToyRender out;
  out.image = Image(kCanonicalSize, kCanonicalSize, 1);
  Plane& plane = out.image.planes[0];
  const double ramp_dx = std::cos(n.ramp_angle);
  const double ramp_dy = std::sin(n.ramp_angle);
  CounterRng noise(seed, 0x4015e + (static_cast<std::uint64_t>(identity) << 20) +
                             (static_cast<std::uint64_t>(image_index) << 2) + (nir ? 1 : 0));
  for (int y = 0; y < kCanonicalSize; ++y) {
    for (int x = 0; x < kCanonicalSize; ++x) {
      const auto [fx, fy] = to_face(x, y);
      double v = face_intensity(id, fx, fy);
      const double along = ((x - cx) * ramp_dx + (y - cy) * ramp_dy) / 50.0;  // [-~1, ~1]
      v *= n.gain * (1.0 + n.ramp_amp * along);
      v += spec.noise_sigma * noise.next_normal();
      plane(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  const double tip_y = 42.0 + id.nose_length();
  const std::array<Landmark, 4> canon = {Landmark{30.0, 40.0}, Landmark{70.0, 40.0},
                                         Landmark{49.5, tip_y}, Landmark{49.5, 75.0}};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto [ix, iy] = to_image(canon[k].x, canon[k].y);
    out.landmarks[k] = Landmark{ix, iy};
  }
  return out;
}

namespace {

void emit_set(const ToyFaceSpec& spec, std::uint64_t seed,
              const std::filesystem::path& dir, int first_image, int count,
              const std::string& suffix, DatasetManifest& manifest) {
  std::filesystem::create_directories(dir);
  char name[64];
  for (int identity = 0; identity < spec.num_identities; ++identity) {
    for (int k = 0; k < count; ++k) {
      const int image_index = first_image + k;
      for (int pass = 0; pass < (spec.cross_modality ? 2 : 1); ++pass) {
        const bool nir = pass == 1;
        const ToyRender render = render_toy_face(spec, seed, identity, image_index, nir);
        std::snprintf(name, sizeof(name), "id%03d_%s%02d%s", identity, suffix.c_str(), k,
                      nir ? "n" : "");
        const std::string stem = name;
        encode_png(dir / (stem + ".png"), render.image);
        FaceRecord rec;
        rec.image_id = stem;
        std::snprintf(name, sizeof(name), "id%03d", identity);
        rec.subject_id = name;
        rec.modality = nir ? Modality::NIR : Modality::VIS;
        rec.path = stem + ".png";
        rec.landmarks = render.landmarks;
        manifest.append(std::move(rec));
      }
    }
  }
  manifest.base_dir = dir;
  save_manifest(manifest, dir / "manifest.tsv");
}

}  // namespace

ToyBenchmark generate_toy_faces(const ToyFaceSpec& spec, std::uint64_t seed,
                                const std::filesystem::path& out_dir) {
  spec.validate();
  ToyBenchmark bench;
  emit_set(spec, seed, out_dir / "train", 0, spec.images_per_identity, "", bench.train);
  emit_set(spec, seed, out_dir / "test", spec.images_per_identity,
           spec.test_images_per_identity, "t", bench.test);
  return bench;
}

}  // namespace facesynth
