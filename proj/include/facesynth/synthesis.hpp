// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_SYNTHESIS_HPP
#define FACESYNTH_SYNTHESIS_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "facesynth/align.hpp"
#include "facesynth/bitcode.hpp"
#include "facesynth/blending.hpp"
#include "facesynth/image.hpp"
#include "facesynth/manifest.hpp"
#include "facesynth/parts.hpp"

namespace facesynth {

enum class BlendMode { HardPaste, Poisson };

std::string to_string(BlendMode m);
BlendMode blend_mode_from_string(const std::string& s);

// One synthetic image, fully determined: parents are image_s of subject_i and
// image_t of subject_j (each optionally mirrored), parts assigned by `code`.
struct SynthesisRecipe {
  std::string subject_i;
  std::string subject_j;
  BitCode code;
  int image_s = 0;  // index into subject_i's images, manifest order
  int image_t = 0;  // index into subject_j's images
  bool mirror_i = false;
  bool mirror_j = false;
  BlendMode blend = BlendMode::HardPaste;

  bool operator==(const SynthesisRecipe&) const = default;
};

// (i,j,c,s,t) and (j,i,~c,t,s) select identical part assignments; the
// canonical form orders the parents so equality testing and deduplication see
// through the symmetry.
SynthesisRecipe canonical_recipe(const SynthesisRecipe& r);

// Subject label carried by the rendered image: the virtual-subject id when
// the parents are distinct subjects, the real subject id otherwise.
std::string recipe_label(const SynthesisRecipe& r);

enum class Strategy { Inter, Intra, Self, CrossModality };

struct PlanCounts {
  std::int64_t inter = 0;
  std::int64_t intra = 0;
  std::int64_t self = 0;
  std::int64_t cross_modality = 0;
  std::int64_t total() const { return inter + intra + self + cross_modality; }
};

struct PlanTargets {
  std::int64_t inter = 0;
  std::int64_t intra = 0;
  std::int64_t self = 0;
  std::int64_t cross_modality = 0;
  // When positive, inter recipes are drawn from this many distinct virtual
  // subjects, filled round-robin; mirrors the fixed images-per-id counts the
  // synthesis tables use. 0 samples the whole space uniformly.
  std::int64_t inter_virtual_subjects = 0;
  BlendMode blend = BlendMode::HardPaste;
};

struct SynthesisPlan {
  std::vector<SynthesisRecipe> recipes;
  std::vector<Strategy> strategies;  // parallel to recipes
  std::uint64_t seed = 0;
  PlanCounts counts;
};

// Number of distinct recipes available per strategy (mirror flags are not
// used to enlarge the inter/intra/cross spaces, matching the counting rules).
struct RecipeSpace {
  std::int64_t inter = 0;
  std::int64_t intra = 0;
  std::int64_t self = 0;
  std::int64_t cross_modality = 0;
};
RecipeSpace recipe_space(const DatasetManifest& m);

// Deterministic function of (manifest, targets, seed). Recipes are sampled
// uniformly from the valid space with duplicates rejected; throws if a target
// exceeds the distinct-recipe space.
SynthesisPlan plan_dataset(const DatasetManifest& m, const PlanTargets& targets,
                           std::uint64_t seed);

// The 32 self-synthesis recipes of one image: parents are the image and its
// mirror, codes 0..31 (00000 reproduces the input, 11111 the full mirror).
std::vector<SynthesisRecipe> self_synthesis_recipes(const std::string& subject_id,
                                                    int image_index,
                                                    BlendMode blend = BlendMode::HardPaste);

// Composite: start from a copy of base; for every organ part whose code bit
// selects the injection, resample the injection's rectangle to the base's
// rectangle and paste (order N, LE, RE, M). The code must assign R to the
// base (rest_from_j() == false); callers with the opposite orientation swap
// the parents and complement the code first. Under Poisson blending a
// rectangle too small to have an interior is left unchanged.
Image compose(const Image& base, const PartLayout& base_layout, const Image& injection,
              const PartLayout& injection_layout, BitCode code, BlendMode blend,
              PoissonReport* blend_report = nullptr);

// A canonical image with its landmarks and derived part layout.
struct CanonicalFace {
  Image image;
  std::array<Landmark, 4> landmarks;
  PartLayout layout;
};

CanonicalFace make_canonical_face(Image image, const std::array<Landmark, 4>& landmarks);
CanonicalFace mirrored(const CanonicalFace& face);

using ImageLoader = std::function<Image(const FaceRecord&)>;
ImageLoader png_loader(const DatasetManifest& m);

// Decoded canonical images for a manifest, loaded once up front; readers may
// share it across threads afterwards.
class CanonicalCache {
 public:
  CanonicalCache(const DatasetManifest& m, ImageLoader loader = {});
  void preload(const std::vector<int>& record_indices);
  const CanonicalFace& get(int record_index) const;
  const DatasetManifest& manifest() const { return *manifest_; }

 private:
  const DatasetManifest* manifest_;
  ImageLoader loader_;
  std::vector<std::optional<CanonicalFace>> faces_;
  std::unordered_map<int, std::string> errors_;  // per-record load failures
};

struct RecipeRender {
  Image image;
  std::array<Landmark, 4> base_landmarks;  // of the (possibly mirrored) base parent
  Modality modality = Modality::VIS;
  std::string label;  // subject id for the synthetic record
  std::string dir;    // filesystem-safe directory name for the label
};

RecipeRender render_recipe(const SynthesisRecipe& r, const CanonicalCache& cache);

// All 32 self-synthesis variants of one canonical face, code order 0..31.
std::vector<Image> self_synthesis_variants(const CanonicalFace& face,
                                           BlendMode blend = BlendMode::HardPaste);

struct ExecuteOptions {
  std::filesystem::path out_dir;
  int threads = 1;
  ImageLoader loader;  // defaults to PNG decoding via the manifest
};

struct SynthesisFailure {
  std::size_t recipe_index = 0;
  std::string message;
};

struct SynthesisReport {
  std::int64_t succeeded = 0;
  std::vector<SynthesisFailure> failures;
  double wall_seconds = 0.0;
  PlanCounts counts;
  DatasetManifest output_manifest;  // synthetic records, plan order, successes only
};

// Render every recipe and write out_dir/<label_dir>/<seq>.png plus a manifest
// (written to out_dir/manifest.tsv). Output bytes are independent of the
// thread count; per-recipe failures are reported, not fatal.
SynthesisReport execute_plan(const SynthesisPlan& plan, const DatasetManifest& m,
                             const ExecuteOptions& options);

// Recipe wire format: subject_i, subject_j, code bitstring, s, t, mirror_i,
// mirror_j, blend -- tab-separated, one per line, '#' comments.
void save_recipes(const std::vector<SynthesisRecipe>& recipes, const std::filesystem::path& path);
std::vector<SynthesisRecipe> load_recipes(const std::filesystem::path& path);

// Rebuild a plan around externally supplied recipes (strategies classified
// against the manifest; cross-modality wins over inter/intra when parent
// modalities differ).
SynthesisPlan plan_from_recipes(std::vector<SynthesisRecipe> recipes, const DatasetManifest& m,
                                std::uint64_t seed);

}  // namespace facesynth

#endif  // FACESYNTH_SYNTHESIS_HPP
