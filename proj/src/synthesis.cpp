// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/synthesis.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>
#include <unordered_set>

#include "facesynth/png_io.hpp"
#include "facesynth/rng.hpp"

namespace facesynth {

std::string to_string(BlendMode m) { return m == BlendMode::HardPaste ? "hard" : "poisson"; }

BlendMode blend_mode_from_string(const std::string& s) {
  if (s == "hard") return BlendMode::HardPaste;
  if (s == "poisson") return BlendMode::Poisson;
  throw std::invalid_argument("unknown blend mode '" + s + "' (expected hard or poisson)");
}

SynthesisRecipe canonical_recipe(const SynthesisRecipe& r) {
  const auto left = std::tie(r.subject_i, r.image_s, r.mirror_i);
  const auto right = std::tie(r.subject_j, r.image_t, r.mirror_j);
  if (right < left) {
    SynthesisRecipe out = r;
    std::swap(out.subject_i, out.subject_j);
    std::swap(out.image_s, out.image_t);
    std::swap(out.mirror_i, out.mirror_j);
    out.code = r.code.complement();
    return out;
  }
  return r;
}

std::string recipe_label(const SynthesisRecipe& r) {
  if (r.subject_i != r.subject_j) {
    return virtual_subject_id(r.subject_i, r.subject_j, r.code);
  }
  return r.subject_i;
}

namespace {

bool is_plain_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
         c == '-' || c == '_';
}

std::string escape_dir(const std::string& s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (char c : s) {
    if (is_plain_char(c)) {
      out.push_back(c);
    } else {
      const auto u = static_cast<unsigned char>(c);
      out.push_back('%');
      out.push_back(hex[u >> 4]);
      out.push_back(hex[u & 0xf]);
    }
  }
  return out;
}

// Virtual-subject ids contain '.' separators and are already escaped; real
// subject ids are escaped here and never contain '.', so the two families of
// directory names cannot collide.
std::string label_dir(const SynthesisRecipe& r, const std::string& label) {
  if (r.subject_i != r.subject_j) return label;
  return escape_dir(label);
}

}  // namespace

std::vector<SynthesisRecipe> self_synthesis_recipes(const std::string& subject_id,
                                                    int image_index, BlendMode blend) {
  std::vector<SynthesisRecipe> out;
  out.reserve(32);
  for (unsigned v = 0; v < 32; ++v) {
    SynthesisRecipe r;
    r.subject_i = subject_id;
    r.subject_j = subject_id;
    r.code = BitCode(v);
    r.image_s = image_index;
    r.image_t = image_index;
    r.mirror_i = false;
    r.mirror_j = true;
    r.blend = blend;
    out.push_back(std::move(r));
  }
  return out;
}

Image compose(const Image& base, const PartLayout& base_layout, const Image& injection,
              const PartLayout& injection_layout, BitCode code, BlendMode blend,
              PoissonReport* blend_report) {
  if (code.rest_from_j()) {
    throw std::invalid_argument("compose: code must assign R to the base parent");
  }
  if (base.channels() != injection.channels()) {
    throw std::invalid_argument("compose: channel mismatch between parents");
  }
  Image out = base;
  // N first so the eyes and mouth win where boxes overlap.
  constexpr std::array<FacePart, 4> kPasteOrder = {FacePart::Nose, FacePart::LeftEye,
                                                   FacePart::RightEye, FacePart::Mouth};
  for (FacePart part : kPasteOrder) {
    if (!code.part_from_j(part)) continue;
    const Rect& dst = base_layout.rect(part);
    const Rect& src = injection_layout.rect(part);
    if (dst.empty() || src.empty()) {
      throw std::invalid_argument("compose: degenerate part rectangle");
    }
    Image patch;
    patch.planes.reserve(injection.planes.size());
    for (const auto& plane : injection.planes) {
      patch.planes.push_back(resample_rect(plane, src, dst.width(), dst.height()));
    }
    if (blend == BlendMode::HardPaste) {
      hard_paste(out, patch, dst);
    } else {
      if (dst.width() < 3 || dst.height() < 3) continue;  // no interior to solve
      PoissonReport r = poisson_blend(out, patch, dst);
      if (blend_report) blend_report->merge(r);
    }
  }
  return out;
}

CanonicalFace make_canonical_face(Image image, const std::array<Landmark, 4>& landmarks) {
  CanonicalFace face;
  face.layout = derive_part_layout(landmarks, image.width());
  face.image = std::move(image);
  face.landmarks = landmarks;
  return face;
}

CanonicalFace mirrored(const CanonicalFace& face) {
  CanonicalFace out;
  out.image = mirrored(face.image);
  out.landmarks = mirrored_landmarks(face.landmarks, face.image.width());
  out.layout = mirrored(face.layout, face.image.width());
  return out;
}

ImageLoader png_loader(const DatasetManifest& m) {
  return [&m](const FaceRecord& rec) { return decode_png(m.resolve_path(rec)); };
}

CanonicalCache::CanonicalCache(const DatasetManifest& m, ImageLoader loader)
    : manifest_(&m), loader_(loader ? std::move(loader) : png_loader(m)) {
  faces_.resize(m.records.size());
}

void CanonicalCache::preload(const std::vector<int>& record_indices) {
  for (int idx : record_indices) {
    auto& slot = faces_.at(static_cast<std::size_t>(idx));
    if (slot.has_value()) continue;
    const FaceRecord& rec = manifest_->records[static_cast<std::size_t>(idx)];
    try {
      Image img = loader_(rec);
      if (img.width() != kCanonicalSize || img.height() != kCanonicalSize) {
        throw std::runtime_error("record '" + rec.image_id +
                                 "' is not canonical 100x100; align it first");
      }
      slot = make_canonical_face(std::move(img), rec.landmarks);
    } catch (const std::exception& e) {
      errors_[idx] = e.what();
    }
  }
}

const CanonicalFace& CanonicalCache::get(int record_index) const {
  const auto& slot = faces_.at(static_cast<std::size_t>(record_index));
  if (!slot.has_value()) {
    const auto it = errors_.find(record_index);
    if (it != errors_.end()) throw std::runtime_error(it->second);
    throw std::logic_error("record not preloaded");
  }
  return *slot;
}

namespace {

int record_index_of(const DatasetManifest& m, const std::string& subject, int image_index,
                    const char* side) {
  const auto& images = m.images_of(subject);
  if (image_index < 0 || image_index >= static_cast<int>(images.size())) {
    throw std::out_of_range(std::string("recipe image index out of range for subject '") +
                            subject + "' (" + side + ")");
  }
  return images[static_cast<std::size_t>(image_index)];
}

}  // namespace

RecipeRender render_recipe(const SynthesisRecipe& r, const CanonicalCache& cache) {
  const DatasetManifest& m = cache.manifest();
  const int idx_i = record_index_of(m, r.subject_i, r.image_s, "i");
  const int idx_j = record_index_of(m, r.subject_j, r.image_t, "j");
  if (r.subject_i == r.subject_j && r.image_s == r.image_t && r.mirror_i == r.mirror_j) {
    throw std::invalid_argument("recipe uses one image twice without mirroring");
  }

  CanonicalFace side_i = cache.get(idx_i);
  CanonicalFace side_j = cache.get(idx_j);
  if (r.mirror_i) side_i = mirrored(side_i);
  if (r.mirror_j) side_j = mirrored(side_j);
  if (side_i.image.channels() != side_j.image.channels()) {
    // Cross-modality parents may mix gray and RGB; composite in gray.
    side_i.image = to_gray(side_i.image);
    side_j.image = to_gray(side_j.image);
  }

  const bool base_is_i = !r.code.rest_from_j();
  const CanonicalFace& base = base_is_i ? side_i : side_j;
  const CanonicalFace& inj = base_is_i ? side_j : side_i;
  const BitCode code = base_is_i ? r.code : r.code.complement();

  RecipeRender out;
  out.image = compose(base.image, base.layout, inj.image, inj.layout, code, r.blend);
  out.base_landmarks = base.landmarks;
  const FaceRecord& base_rec =
      m.records[static_cast<std::size_t>(base_is_i ? idx_i : idx_j)];
  out.modality = base_rec.modality;
  out.label = recipe_label(r);
  out.dir = label_dir(r, out.label);
  return out;
}

std::vector<Image> self_synthesis_variants(const CanonicalFace& face, BlendMode blend) {
  const CanonicalFace mirror = mirrored(face);
  std::vector<Image> out;
  out.reserve(32);
  for (unsigned v = 0; v < 32; ++v) {
    const BitCode code(v);
    if (!code.rest_from_j()) {
      out.push_back(compose(face.image, face.layout, mirror.image, mirror.layout, code, blend));
    } else {
      out.push_back(
          compose(mirror.image, mirror.layout, face.image, face.layout, code.complement(), blend));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

namespace {

struct SubjectTable {
  std::vector<const std::string*> names;          // ordered (map order)
  std::vector<const std::vector<int>*> images;    // parallel
  std::unordered_map<std::string, int> index_of;  // subject -> position
};

SubjectTable subject_table(const DatasetManifest& m) {
  SubjectTable t;
  t.names.reserve(m.subjects.size());
  for (const auto& [name, imgs] : m.subjects) {
    t.index_of.emplace(name, static_cast<int>(t.names.size()));
    t.names.push_back(&name);
    t.images.push_back(&imgs);
  }
  return t;
}

struct RecipeKey {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;
  bool operator==(const RecipeKey&) const = default;
};

struct RecipeKeyHash {
  std::size_t operator()(const RecipeKey& k) const {
    return static_cast<std::size_t>(rng::mix(k.hi ^ rng::mix(k.lo)));
  }
};

RecipeKey recipe_key(const SynthesisRecipe& r, const SubjectTable& t) {
  const SynthesisRecipe c = canonical_recipe(r);
  const auto i = static_cast<std::uint64_t>(t.index_of.at(c.subject_i));
  const auto j = static_cast<std::uint64_t>(t.index_of.at(c.subject_j));
  RecipeKey key;
  key.hi = (i << 32) | j;
  // Image indices stay well below 2^28 at any realistic scale.
  key.lo = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.image_s)) << 36) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.image_t)) << 8) |
           (static_cast<std::uint64_t>(c.code.value()) << 3) |
           (static_cast<std::uint64_t>(c.mirror_i) << 2) |
           (static_cast<std::uint64_t>(c.mirror_j) << 1);
  return key;
}

struct RecordRef {
  int subject = 0;      // SubjectTable position
  int image_index = 0;  // within the subject
};

std::vector<RecordRef> record_refs(const DatasetManifest& m, const SubjectTable& t) {
  std::vector<RecordRef> refs(m.records.size());
  for (std::size_t s = 0; s < t.images.size(); ++s) {
    const auto& imgs = *t.images[s];
    for (std::size_t k = 0; k < imgs.size(); ++k) {
      refs[static_cast<std::size_t>(imgs[k])] =
          RecordRef{static_cast<int>(s), static_cast<int>(k)};
    }
  }
  return refs;
}

[[noreturn]] void exhausted(const char* strategy) {
  throw std::runtime_error(std::string("synthesis target exceeds the distinct recipe space (") +
                           strategy + ")");
}

}  // namespace

RecipeSpace recipe_space(const DatasetManifest& m) {
  RecipeSpace space;
  std::int64_t total = 0, sum_sq = 0, n_vis = 0, n_nir = 0;
  for (const auto& [name, imgs] : m.subjects) {
    const auto n = static_cast<std::int64_t>(imgs.size());
    total += n;
    sum_sq += n * n;
    space.intra += count_intra_images(n);
  }
  space.inter = 30 * (total * total - sum_sq) / 2;
  space.self = 30 * total;
  for (const auto& rec : m.records) {
    (rec.modality == Modality::VIS ? n_vis : n_nir) += 1;
  }
  space.cross_modality = 30 * n_vis * n_nir;
  return space;
}

SynthesisPlan plan_dataset(const DatasetManifest& m, const PlanTargets& targets,
                           std::uint64_t seed) {
  if (targets.inter < 0 || targets.intra < 0 || targets.self < 0 ||
      targets.cross_modality < 0) {
    throw std::invalid_argument("negative synthesis target");
  }
  const RecipeSpace space = recipe_space(m);
  if (targets.inter > space.inter) exhausted("inter");
  if (targets.intra > space.intra) exhausted("intra");
  if (targets.self > space.self) exhausted("self");
  if (targets.cross_modality > space.cross_modality) exhausted("cross-modality");
  if (targets.inter > 0 && m.subjects.size() < 2) {
    throw std::runtime_error("inter-synthesis needs at least 2 subjects");
  }

  const SubjectTable table = subject_table(m);
  const auto refs = record_refs(m, table);
  const auto codes = enumerate_bitcodes();
  const auto n_records = static_cast<std::int64_t>(m.records.size());

  SynthesisPlan plan;
  plan.seed = seed;
  plan.recipes.reserve(static_cast<std::size_t>(targets.inter + targets.intra + targets.self +
                                                targets.cross_modality));
  std::unordered_set<RecipeKey, RecipeKeyHash> used;

  const auto push = [&](SynthesisRecipe r, Strategy s) -> bool {
    if (!used.insert(recipe_key(r, table)).second) return false;
    plan.recipes.push_back(std::move(r));
    plan.strategies.push_back(s);
    return true;
  };

  const auto make_recipe = [&](int subj_a, int img_a, int subj_b, int img_b,
                               const BitCode& code) {
    SynthesisRecipe r;
    r.subject_i = *table.names[static_cast<std::size_t>(subj_a)];
    r.subject_j = *table.names[static_cast<std::size_t>(subj_b)];
    r.code = code;
    r.image_s = img_a;
    r.image_t = img_b;
    r.blend = targets.blend;
    return canonical_recipe(r);
  };

  // --- Inter-synthesis ---
  if (targets.inter > 0) {
    CounterRng gen(seed, 1);
    std::int64_t accepted = 0;
    if (targets.inter_virtual_subjects > 0) {
      // Stage 1: a fixed roster of virtual subjects (pair + code), sampled by
      // record pairs so image-rich subjects are favoured the way the tables'
      // per-id counts imply.
      struct Vid {
        int subj_a, subj_b;
        BitCode code;
      };
      std::vector<Vid> roster;
      std::unordered_set<std::uint64_t> vid_seen;
      const std::int64_t vid_space = count_virtual_subjects(
          static_cast<std::int64_t>(m.subjects.size()));
      const std::int64_t want =
          std::min<std::int64_t>(targets.inter_virtual_subjects, vid_space);
      std::int64_t attempts = 0;
      while (static_cast<std::int64_t>(roster.size()) < want) {
        if (++attempts > 200 * want + 10000) exhausted("inter virtual subjects");
        const auto& u = refs[gen.next_below(static_cast<std::uint64_t>(n_records))];
        const auto& v = refs[gen.next_below(static_cast<std::uint64_t>(n_records))];
        if (u.subject == v.subject) continue;
        BitCode code = codes[gen.next_below(30)];
        int a = u.subject, b = v.subject;
        if (*table.names[static_cast<std::size_t>(b)] < *table.names[static_cast<std::size_t>(a)]) {
          std::swap(a, b);
          code = code.complement();
        }
        const std::uint64_t key = (static_cast<std::uint64_t>(a) << 37) ^
                                  (static_cast<std::uint64_t>(b) << 5) ^ code.value();
        if (!vid_seen.insert(key).second) continue;
        roster.push_back(Vid{a, b, code});
      }
      // Stage 2: per virtual subject, a seeded shuffle of its (s, t) grid,
      // consumed round-robin until the target is met.
      std::vector<std::vector<std::pair<int, int>>> pools(roster.size());
      for (std::size_t r = 0; r < roster.size(); ++r) {
        const auto na = static_cast<int>(table.images[static_cast<std::size_t>(roster[r].subj_a)]->size());
        const auto nb = static_cast<int>(table.images[static_cast<std::size_t>(roster[r].subj_b)]->size());
        auto& pool = pools[r];
        pool.reserve(static_cast<std::size_t>(na) * static_cast<std::size_t>(nb));
        for (int s = 0; s < na; ++s) {
          for (int t = 0; t < nb; ++t) pool.emplace_back(s, t);
        }
        CounterRng shuffle_gen(seed, 1000 + r);
        for (std::size_t k = pool.size(); k > 1; --k) {
          std::swap(pool[k - 1], pool[shuffle_gen.next_below(k)]);
        }
      }
      std::vector<std::size_t> cursor(roster.size(), 0);
      bool progressed = true;
      while (accepted < targets.inter && progressed) {
        progressed = false;
        for (std::size_t r = 0; r < roster.size() && accepted < targets.inter; ++r) {
          if (cursor[r] >= pools[r].size()) continue;
          const auto [s, t] = pools[r][cursor[r]++];
          progressed = true;
          if (push(make_recipe(roster[r].subj_a, s, roster[r].subj_b, t, roster[r].code),
                   Strategy::Inter)) {
            ++accepted;
          }
        }
      }
      if (accepted < targets.inter) exhausted("inter (virtual-subject quota)");
    } else {
      std::int64_t attempts = 0;
      while (accepted < targets.inter) {
        if (++attempts > 100 * targets.inter + 10000) exhausted("inter");
        const auto& u = refs[gen.next_below(static_cast<std::uint64_t>(n_records))];
        const auto& v = refs[gen.next_below(static_cast<std::uint64_t>(n_records))];
        if (u.subject == v.subject) continue;
        const BitCode code = codes[gen.next_below(30)];
        if (push(make_recipe(u.subject, u.image_index, v.subject, v.image_index, code),
                 Strategy::Inter)) {
          ++accepted;
        }
      }
    }
    plan.counts.inter = accepted;
  }

  // --- Intra-synthesis: subjects weighted by their pair counts ---
  if (targets.intra > 0) {
    CounterRng gen(seed, 2);
    std::vector<std::int64_t> cum;
    cum.reserve(table.names.size());
    std::int64_t total_pairs = 0;
    for (const auto* imgs : table.images) {
      const auto n = static_cast<std::int64_t>(imgs->size());
      total_pairs += n * (n - 1) / 2;
      cum.push_back(total_pairs);
    }
    std::int64_t accepted = 0, attempts = 0;
    while (accepted < targets.intra) {
      if (++attempts > 100 * targets.intra + 10000) exhausted("intra");
      const auto pick = static_cast<std::int64_t>(
          gen.next_below(static_cast<std::uint64_t>(total_pairs)));
      const auto it = std::upper_bound(cum.begin(), cum.end(), pick);
      const auto subj = static_cast<int>(it - cum.begin());
      const auto n = static_cast<int>(table.images[static_cast<std::size_t>(subj)]->size());
      int s = static_cast<int>(gen.next_below(static_cast<std::uint64_t>(n)));
      int t = static_cast<int>(gen.next_below(static_cast<std::uint64_t>(n)));
      if (s == t) continue;
      const BitCode code = codes[gen.next_below(30)];
      if (push(make_recipe(subj, s, subj, t, code), Strategy::Intra)) ++accepted;
    }
    plan.counts.intra = accepted;
  }

  // --- Self-synthesis: an image and its mirror ---
  if (targets.self > 0) {
    CounterRng gen(seed, 3);
    std::int64_t accepted = 0, attempts = 0;
    while (accepted < targets.self) {
      if (++attempts > 100 * targets.self + 10000) exhausted("self");
      const auto& u = refs[gen.next_below(static_cast<std::uint64_t>(n_records))];
      const BitCode code = codes[gen.next_below(30)];
      SynthesisRecipe r;
      r.subject_i = *table.names[static_cast<std::size_t>(u.subject)];
      r.subject_j = r.subject_i;
      r.code = code;
      r.image_s = u.image_index;
      r.image_t = u.image_index;
      r.mirror_i = false;
      r.mirror_j = true;
      r.blend = targets.blend;
      if (push(canonical_recipe(r), Strategy::Self)) ++accepted;
    }
    plan.counts.self = accepted;
  }

  // --- Cross-modality synthesis ---
  if (targets.cross_modality > 0) {
    CounterRng gen(seed, 4);
    std::vector<int> vis, nir;
    for (std::size_t k = 0; k < m.records.size(); ++k) {
      (m.records[k].modality == Modality::VIS ? vis : nir).push_back(static_cast<int>(k));
    }
    std::int64_t accepted = 0, attempts = 0;
    while (accepted < targets.cross_modality) {
      if (++attempts > 100 * targets.cross_modality + 10000) exhausted("cross-modality");
      const auto& u = refs[static_cast<std::size_t>(vis[gen.next_below(vis.size())])];
      const auto& v = refs[static_cast<std::size_t>(nir[gen.next_below(nir.size())])];
      if (u.subject == v.subject && u.image_index == v.image_index) continue;
      const BitCode code = codes[gen.next_below(30)];
      if (push(make_recipe(u.subject, u.image_index, v.subject, v.image_index, code),
               Strategy::CrossModality)) {
        ++accepted;
      }
    }
    plan.counts.cross_modality = accepted;
  }

  return plan;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

SynthesisReport execute_plan(const SynthesisPlan& plan, const DatasetManifest& m,
                             const ExecuteOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(options.out_dir);

  CanonicalCache cache(m, options.loader);
  std::vector<std::string> invalid(plan.recipes.size());
  {
    std::vector<int> needed;
    needed.reserve(plan.recipes.size() * 2);
    for (std::size_t k = 0; k < plan.recipes.size(); ++k) {
      const auto& r = plan.recipes[k];
      try {
        needed.push_back(record_index_of(m, r.subject_i, r.image_s, "i"));
        needed.push_back(record_index_of(m, r.subject_j, r.image_t, "j"));
      } catch (const std::exception& e) {
        invalid[k] = e.what();
      }
    }
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    cache.preload(needed);
  }

  // Names and directories are assigned up front so output is independent of
  // scheduling; a failed recipe leaves a gap in its label's sequence.
  struct Slot {
    std::string dir;
    std::string file;  // "<dir>/<seq>.png"
    std::string image_id;
  };
  std::vector<Slot> slots(plan.recipes.size());
  {
    std::unordered_map<std::string, int> seq;
    for (std::size_t k = 0; k < plan.recipes.size(); ++k) {
      const std::string label = recipe_label(plan.recipes[k]);
      const std::string dir = label_dir(plan.recipes[k], label);
      char name[16];
      std::snprintf(name, sizeof(name), "%06d", seq[dir]++);
      slots[k].dir = dir;
      slots[k].file = dir + "/" + name + ".png";
      slots[k].image_id = dir + "/" + name;
      std::filesystem::create_directories(options.out_dir / dir);
    }
  }

  struct Result {
    bool ok = false;
    std::string message;
    std::array<Landmark, 4> landmarks{};
    Modality modality = Modality::VIS;
    std::string label;
  };
  std::vector<Result> results(plan.recipes.size());

  std::atomic<std::size_t> next{0};
  const auto worker = [&]() {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= plan.recipes.size()) break;
      if (!invalid[k].empty()) {
        results[k].message = invalid[k];
        continue;
      }
      try {
        RecipeRender render = render_recipe(plan.recipes[k], cache);
        encode_png(options.out_dir / slots[k].file, render.image);
        results[k].ok = true;
        results[k].landmarks = render.base_landmarks;
        results[k].modality = render.modality;
        results[k].label = render.label;
      } catch (const std::exception& e) {
        results[k].message = e.what();
      }
    }
  };

  const int n_threads = std::max(1, options.threads);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  SynthesisReport report;
  report.counts = plan.counts;
  report.output_manifest.base_dir = options.out_dir;
  for (std::size_t k = 0; k < plan.recipes.size(); ++k) {
    if (!results[k].ok) {
      report.failures.push_back(SynthesisFailure{k, results[k].message});
      continue;
    }
    ++report.succeeded;
    FaceRecord rec;
    rec.image_id = slots[k].image_id;
    rec.subject_id = results[k].label;
    rec.modality = results[k].modality;
    rec.path = slots[k].file;
    rec.landmarks = results[k].landmarks;
    report.output_manifest.append(std::move(rec));
  }
  save_manifest(report.output_manifest, options.out_dir / "manifest.tsv");

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// Recipe files
// ---------------------------------------------------------------------------

void save_recipes(const std::vector<SynthesisRecipe>& recipes,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write recipes: " + path.string());
  for (const auto& r : recipes) {
    out << r.subject_i << '\t' << r.subject_j << '\t' << r.code.to_string() << '\t' << r.image_s
        << '\t' << r.image_t << '\t' << (r.mirror_i ? 1 : 0) << '\t' << (r.mirror_j ? 1 : 0)
        << '\t' << to_string(r.blend) << '\n';
  }
}

std::vector<SynthesisRecipe> load_recipes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open recipes: " + path.string());
  std::vector<SynthesisRecipe> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find('\t', start);
      if (pos == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    try {
      if (fields.size() != 8) throw std::invalid_argument("expected 8 fields");
      SynthesisRecipe r;
      r.subject_i = fields[0];
      r.subject_j = fields[1];
      r.code = BitCode::from_string(fields[2]);
      r.image_s = std::stoi(fields[3]);
      r.image_t = std::stoi(fields[4]);
      r.mirror_i = fields[5] == "1";
      r.mirror_j = fields[6] == "1";
      r.blend = blend_mode_from_string(fields[7]);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error("recipes line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

SynthesisPlan plan_from_recipes(std::vector<SynthesisRecipe> recipes, const DatasetManifest& m,
                                std::uint64_t seed) {
  SynthesisPlan plan;
  plan.seed = seed;
  plan.strategies.reserve(recipes.size());
  for (const auto& r : recipes) {
    const int idx_i = record_index_of(m, r.subject_i, r.image_s, "i");
    const int idx_j = record_index_of(m, r.subject_j, r.image_t, "j");
    const bool cross = m.records[static_cast<std::size_t>(idx_i)].modality !=
                       m.records[static_cast<std::size_t>(idx_j)].modality;
    Strategy s;
    if (cross) {
      s = Strategy::CrossModality;
      plan.counts.cross_modality++;
    } else if (r.subject_i != r.subject_j) {
      s = Strategy::Inter;
      plan.counts.inter++;
    } else if (r.image_s == r.image_t) {
      s = Strategy::Self;
      plan.counts.self++;
    } else {
      s = Strategy::Intra;
      plan.counts.intra++;
    }
    plan.strategies.push_back(s);
  }
  plan.recipes = std::move(recipes);
  return plan;
}

}  // namespace facesynth
