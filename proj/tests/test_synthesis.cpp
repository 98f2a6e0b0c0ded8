// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "facesynth/bitcode.hpp"
#include "facesynth/png_io.hpp"
#include "facesynth/rng.hpp"
#include "facesynth/synthesis.hpp"

using namespace facesynth;

namespace {

const std::array<Landmark, 4> kCanonLms = {Landmark{30, 40}, Landmark{70, 40}, Landmark{50, 58},
                                           Landmark{50, 75}};

// Landmarks symmetric about the pixel-grid axis x = 49.5, so mirrored part
// boxes land exactly on the originals.
const std::array<Landmark, 4> kSymmetricLms = {Landmark{29.5, 40}, Landmark{69.5, 40},
                                               Landmark{49.5, 58}, Landmark{49.5, 75}};

Image random_canonical(std::uint64_t seed) {
  Image img(kCanonicalSize, kCanonicalSize, 1);
  CounterRng gen(seed);
  for (int y = 0; y < kCanonicalSize; ++y) {
    for (int x = 0; x < kCanonicalSize; ++x) {
      img.planes[0](y, x) = static_cast<float>(gen.next_double());
    }
  }
  return img;
}

Image symmetric_canonical(std::uint64_t seed) {
  Image img = random_canonical(seed);
  for (int y = 0; y < kCanonicalSize; ++y) {
    for (int x = 0; x < 50; ++x) img.planes[0](y, 99 - x) = img.planes[0](y, x);
  }
  return img;
}

// Manifest of in-memory images keyed by image_id; the loader ignores paths.
struct FakeDataset {
  DatasetManifest manifest;
  std::map<std::string, Image> images;

  void add(const std::string& image_id, const std::string& subject, Image img,
           Modality modality = Modality::VIS,
           const std::array<Landmark, 4>& lms = kCanonLms) {
    FaceRecord rec;
    rec.image_id = image_id;
    rec.subject_id = subject;
    rec.modality = modality;
    rec.path = image_id + ".png";
    rec.landmarks = lms;
    manifest.append(std::move(rec));
    images.emplace(image_id, std::move(img));
  }

  ImageLoader loader() const {
    return [this](const FaceRecord& rec) { return images.at(rec.image_id); };
  }

  CanonicalCache cache() const { return CanonicalCache(manifest, loader()); }
};

}  // namespace

TEST_CASE("thirty bitcodes, ascending, excluding the originals") {
  const auto codes = enumerate_bitcodes();
  REQUIRE(codes.size() == 30);
  std::set<unsigned> values;
  for (const auto& c : codes) values.insert(c.value());
  CHECK(values.size() == 30);
  CHECK(values.count(0) == 0);
  CHECK(values.count(31) == 0);
  for (std::size_t k = 1; k < codes.size(); ++k) CHECK(codes[k - 1].value() < codes[k].value());
  for (const auto& c : codes) CHECK(c.is_synthetic());
}

TEST_CASE("two-part code variant has 2^2 - 2 entries") {
  CHECK(enumerate_code_values(2).size() == 2);
  CHECK(enumerate_code_values(3).size() == 6);
}

TEST_CASE("bitcode strings and bit accessors") {
  const BitCode c = BitCode::from_string("10010");
  CHECK(c.part_from_j(FacePart::LeftEye));
  CHECK_FALSE(c.part_from_j(FacePart::RightEye));
  CHECK_FALSE(c.part_from_j(FacePart::Nose));
  CHECK(c.part_from_j(FacePart::Mouth));
  CHECK_FALSE(c.rest_from_j());
  CHECK(c.to_string() == "10010");
  CHECK(c.complement().to_string() == "01101");
  CHECK(BitCode(0).to_string() == "00000");
  CHECK_THROWS_AS(BitCode::from_string("102"), std::invalid_argument);
  CHECK_THROWS_AS(BitCode(32), std::invalid_argument);
}

TEST_CASE("counting formulas match exhaustive enumeration") {
  for (std::int64_t s = 0; s <= 6; ++s) {
    std::int64_t brute = 0;
    for (std::int64_t i = 0; i < s; ++i) {
      for (std::int64_t j = i + 1; j < s; ++j) brute += 30;
    }
    CHECK(count_virtual_subjects(s) == brute);
  }
  for (std::int64_t n = 0; n <= 4; ++n) {
    std::int64_t brute = 0;
    for (std::int64_t s = 0; s < n; ++s) {
      for (std::int64_t t = s + 1; t < n; ++t) brute += 30;
    }
    CHECK(count_intra_images(n) == brute);
  }
  CHECK(count_virtual_subjects(2) == 30);
  CHECK(count_virtual_subjects(5) == 300);
  CHECK(count_intra_images(2) == 30);
  CHECK(count_intra_images(5) == 300);
  CHECK(count_intra_images(1) == 0);
}

TEST_CASE("virtual subject ids identify (i,j,c) with (j,i,~c)") {
  const BitCode c = BitCode::from_string("01101");
  CHECK(virtual_subject_id("alice", "bob", c) ==
        virtual_subject_id("bob", "alice", c.complement()));
  CHECK(virtual_subject_id("alice", "bob", c) != virtual_subject_id("alice", "bob", c.complement()));
  CHECK(virtual_subject_id("a", "b", c) != virtual_subject_id("a", "c", c));
  CHECK_THROWS_AS(virtual_subject_id("a", "a", c), std::invalid_argument);
  // Escaping keeps ids filesystem-safe and injective.
  const std::string weird = virtual_subject_id("a/b", "c.d", c);
  CHECK(weird.find('/') == std::string::npos);
  CHECK(virtual_subject_id("a/b", "c.d", c) != virtual_subject_id("a_b", "c_d", c));
}

TEST_CASE("self-synthesis yields exactly 32 recipes spanning all codes") {
  const auto recipes = self_synthesis_recipes("subj", 2);
  REQUIRE(recipes.size() == 32);
  std::set<unsigned> codes;
  for (const auto& r : recipes) {
    codes.insert(r.code.value());
    CHECK(r.subject_i == "subj");
    CHECK(r.subject_j == "subj");
    CHECK(r.image_s == 2);
    CHECK(r.image_t == 2);
    CHECK_FALSE(r.mirror_i);
    CHECK(r.mirror_j);
  }
  CHECK(codes.size() == 32);
}

TEST_CASE("compose with no injected organ bits copies the base") {
  const CanonicalFace base = make_canonical_face(random_canonical(1), kCanonLms);
  const CanonicalFace inj = make_canonical_face(random_canonical(2), kCanonLms);
  const Image out = compose(base.image, base.layout, inj.image, inj.layout,
                            BitCode::from_string("00000"), BlendMode::HardPaste);
  CHECK(pixels_equal(out, base.image));
}

TEST_CASE("self-paste is the identity for any code") {
  const CanonicalFace face = make_canonical_face(random_canonical(3), kCanonLms);
  for (unsigned v : {2u, 14u, 30u}) {  // R bit clear
    const Image out =
        compose(face.image, face.layout, face.image, face.layout, BitCode(v), BlendMode::HardPaste);
    CHECK(pixels_equal(out, face.image));
  }
}

TEST_CASE("compose rejects codes that give R to the injection") {
  const CanonicalFace face = make_canonical_face(random_canonical(4), kCanonLms);
  CHECK_THROWS_AS(compose(face.image, face.layout, face.image, face.layout,
                          BitCode::from_string("00001"), BlendMode::HardPaste),
                  std::invalid_argument);
}

TEST_CASE("composed organ content is the resampled injection rectangle") {
  const CanonicalFace base = make_canonical_face(random_canonical(5), kCanonLms);
  // A different nose landmark gives the injection a different nose box.
  std::array<Landmark, 4> lms2 = kCanonLms;
  lms2[kNoseTip] = Landmark{52, 56};
  const CanonicalFace inj = make_canonical_face(random_canonical(6), lms2);

  const Image out = compose(base.image, base.layout, inj.image, inj.layout,
                            BitCode::from_string("00100"), BlendMode::HardPaste);
  const Rect& dst = base.layout.nose;
  const Plane want = resample_rect(inj.image.planes[0], inj.layout.nose, dst.width(), dst.height());
  CHECK((out.planes[0].block(dst.y0, dst.x0, dst.height(), dst.width()) == want).all());
  // Outside the nose box the base is untouched.
  Image probe = out;
  probe.planes[0].block(dst.y0, dst.x0, dst.height(), dst.width()) =
      base.image.planes[0].block(dst.y0, dst.x0, dst.height(), dst.width());
  CHECK(pixels_equal(probe, base.image));
}

TEST_CASE("hard-paste composition is idempotent in the base") {
  const CanonicalFace base = make_canonical_face(random_canonical(7), kCanonLms);
  const CanonicalFace inj = make_canonical_face(random_canonical(8), kCanonLms);
  const BitCode code = BitCode::from_string("11010");
  const Image once = compose(base.image, base.layout, inj.image, inj.layout, code,
                             BlendMode::HardPaste);
  const CanonicalFace again = make_canonical_face(once, kCanonLms);
  const Image twice =
      compose(again.image, again.layout, inj.image, inj.layout, code, BlendMode::HardPaste);
  CHECK(pixels_equal(once, twice));
}

TEST_CASE("recipe symmetry renders identical pixels and labels") {
  FakeDataset data;
  data.add("a0", "alice", random_canonical(10));
  data.add("a1", "alice", random_canonical(11));
  data.add("b0", "bob", random_canonical(12));
  CanonicalCache cache = data.cache();
  cache.preload({0, 1, 2});

  CounterRng gen(99);
  for (int trial = 0; trial < 20; ++trial) {
    SynthesisRecipe r;
    r.subject_i = "alice";
    r.subject_j = "bob";
    r.code = enumerate_bitcodes()[gen.next_below(30)];
    r.image_s = static_cast<int>(gen.next_below(2));
    r.image_t = 0;

    SynthesisRecipe flipped;
    flipped.subject_i = "bob";
    flipped.subject_j = "alice";
    flipped.code = r.code.complement();
    flipped.image_s = r.image_t;
    flipped.image_t = r.image_s;

    const RecipeRender x = render_recipe(r, cache);
    const RecipeRender y = render_recipe(flipped, cache);
    CHECK(pixels_equal(x.image, y.image));
    CHECK(x.label == y.label);
    CHECK(canonical_recipe(r) == canonical_recipe(flipped));
  }
}

TEST_CASE("self-synthesis of a perfectly symmetric face collapses to one image") {
  FakeDataset data;
  data.add("s0", "subj", symmetric_canonical(42), Modality::VIS, kSymmetricLms);
  CanonicalCache cache = data.cache();
  cache.preload({0});
  const CanonicalFace& face = cache.get(0);

  const auto variants = self_synthesis_variants(face);
  REQUIRE(variants.size() == 32);
  for (const auto& v : variants) CHECK(pixels_equal(v, face.image));
}

TEST_CASE("self-synthesis code 00000 reproduces the input exactly") {
  FakeDataset data;
  data.add("s0", "subj", random_canonical(55));
  CanonicalCache cache = data.cache();
  cache.preload({0});
  const auto variants = self_synthesis_variants(cache.get(0));
  CHECK(pixels_equal(variants[0], cache.get(0).image));
  // 11111 is the full mirror.
  CHECK(pixels_equal(variants[31], mirrored(cache.get(0).image)));
}

TEST_CASE("plans are deterministic in (manifest, targets, seed)") {
  FakeDataset data;
  data.add("a0", "alice", random_canonical(20));
  data.add("a1", "alice", random_canonical(21));
  data.add("b0", "bob", random_canonical(22));
  data.add("b1", "bob", random_canonical(23));

  PlanTargets targets;
  targets.inter = 4;
  targets.intra = 2;
  const SynthesisPlan p1 = plan_dataset(data.manifest, targets, 7);
  const SynthesisPlan p2 = plan_dataset(data.manifest, targets, 7);
  CHECK(p1.recipes == p2.recipes);
  CHECK(p1.counts.inter == 4);
  CHECK(p1.counts.intra == 2);

  const SynthesisPlan p3 = plan_dataset(data.manifest, targets, 8);
  CHECK(p1.recipes != p3.recipes);

  for (std::size_t k = 0; k < p1.recipes.size(); ++k) {
    const auto& r = p1.recipes[k];
    CHECK(r.code.is_synthetic());
    if (p1.strategies[k] == Strategy::Inter) {
      CHECK(r.subject_i != r.subject_j);
    } else {
      CHECK(r.subject_i == r.subject_j);
      CHECK(r.image_s != r.image_t);
    }
  }
}

TEST_CASE("plan errors: impossible targets") {
  FakeDataset data;
  data.add("a0", "alice", random_canonical(30));
  CHECK_THROWS_AS(plan_dataset(data.manifest, PlanTargets{.inter = 1}, 1), std::runtime_error);
  CHECK_THROWS_AS(plan_dataset(data.manifest, PlanTargets{.intra = 1}, 1), std::runtime_error);
  // Self space for one image is exactly 30.
  CHECK_THROWS_AS(plan_dataset(data.manifest, PlanTargets{.self = 31}, 1), std::runtime_error);
  CHECK(plan_dataset(data.manifest, PlanTargets{.self = 30}, 1).recipes.size() == 30);
}

TEST_CASE("cross-modality recipes mix modalities") {
  FakeDataset data;
  data.add("a0", "alice", random_canonical(31), Modality::VIS);
  data.add("a1", "alice", random_canonical(32), Modality::NIR);
  data.add("b0", "bob", random_canonical(33), Modality::NIR);
  PlanTargets targets;
  targets.cross_modality = 10;
  const SynthesisPlan plan = plan_dataset(data.manifest, targets, 3);
  CHECK(plan.recipes.size() == 10);
  for (const auto& r : plan.recipes) {
    const auto& ri = data.manifest.records[static_cast<std::size_t>(
        data.manifest.images_of(r.subject_i)[static_cast<std::size_t>(r.image_s)])];
    const auto& rj = data.manifest.records[static_cast<std::size_t>(
        data.manifest.images_of(r.subject_j)[static_cast<std::size_t>(r.image_t)])];
    CHECK(ri.modality != rj.modality);
  }
}

TEST_CASE("recipe space arithmetic") {
  FakeDataset data;
  data.add("a0", "alice", random_canonical(40), Modality::VIS);
  data.add("a1", "alice", random_canonical(41), Modality::VIS);
  data.add("b0", "bob", random_canonical(42), Modality::NIR);
  const RecipeSpace space = recipe_space(data.manifest);
  CHECK(space.inter == 30 * 2);      // 2 cross-subject record pairs
  CHECK(space.intra == 30 * 1);      // one within-subject pair
  CHECK(space.self == 30 * 3);
  CHECK(space.cross_modality == 30 * 2);  // 2 VIS x 1 NIR
}

TEST_CASE("recipe files round-trip") {
  std::vector<SynthesisRecipe> recipes;
  SynthesisRecipe r;
  r.subject_i = "alice";
  r.subject_j = "bob";
  r.code = BitCode::from_string("01100");
  r.image_s = 1;
  r.image_t = 0;
  r.mirror_j = true;
  r.blend = BlendMode::Poisson;
  recipes.push_back(r);
  r.subject_j = "alice";
  r.image_t = 2;
  r.mirror_j = false;
  r.blend = BlendMode::HardPaste;
  recipes.push_back(r);

  const auto dir = std::filesystem::temp_directory_path() / "fs_recipes";
  std::filesystem::create_directories(dir);
  save_recipes(recipes, dir / "r.tsv");
  const auto back = load_recipes(dir / "r.tsv");
  CHECK(back == recipes);
  std::filesystem::remove_all(dir);
}

TEST_CASE("execute_plan output is independent of thread count and tolerates failures") {
  const auto dir = std::filesystem::temp_directory_path() / "fs_exec";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "src");

  // Real PNG-backed manifest: 3 subjects x 2 images.
  DatasetManifest m;
  m.base_dir = dir / "src";
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < 2; ++i) {
      const std::string id = "s" + std::to_string(s) + "_" + std::to_string(i);
      encode_png(dir / "src" / (id + ".png"),
                 random_canonical(100 + static_cast<std::uint64_t>(s * 2 + i)));
      FaceRecord rec;
      rec.image_id = id;
      rec.subject_id = "s" + std::to_string(s);
      rec.path = id + ".png";
      rec.landmarks = kCanonLms;
      m.append(std::move(rec));
    }
  }

  PlanTargets targets;
  targets.inter = 60;
  targets.intra = 20;
  targets.self = 20;
  const SynthesisPlan plan = plan_dataset(m, targets, 5);

  ExecuteOptions o1;
  o1.out_dir = dir / "out1";
  o1.threads = 1;
  const SynthesisReport rep1 = execute_plan(plan, m, o1);
  ExecuteOptions o8;
  o8.out_dir = dir / "out8";
  o8.threads = 8;
  const SynthesisReport rep8 = execute_plan(plan, m, o8);

  CHECK(rep1.succeeded == 100);
  CHECK(rep8.succeeded == 100);
  CHECK(rep1.failures.empty());

  // Byte-identical trees.
  std::vector<std::filesystem::path> files1;
  for (const auto& e : std::filesystem::recursive_directory_iterator(o1.out_dir)) {
    if (e.is_regular_file()) files1.push_back(std::filesystem::relative(e.path(), o1.out_dir));
  }
  std::sort(files1.begin(), files1.end());
  CHECK(files1.size() == 101);  // 100 images + manifest
  for (const auto& rel : files1) {
    std::ifstream f1(o1.out_dir / rel, std::ios::binary);
    std::ifstream f8(o8.out_dir / rel, std::ios::binary);
    REQUIRE(f8.good());
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b8((std::istreambuf_iterator<char>(f8)), std::istreambuf_iterator<char>());
    CHECK(b1 == b8);
  }

  // Corrupt one source image: that recipe fails, everything else succeeds.
  std::filesystem::remove(dir / "src" / "s0_0.png");
  std::ofstream(dir / "src" / "s0_0.png") << "not a png";
  ExecuteOptions o_fail;
  o_fail.out_dir = dir / "out_fail";
  const SynthesisReport rep_fail = execute_plan(plan, m, o_fail);
  CHECK(rep_fail.failures.size() > 0);
  CHECK(rep_fail.succeeded + static_cast<std::int64_t>(rep_fail.failures.size()) == 100);

  std::filesystem::remove_all(dir);
}

TEST_CASE("virtual-subject quota planning fills ids evenly") {
  FakeDataset data;
  for (int s = 0; s < 12; ++s) {
    for (int i = 0; i < 12; ++i) {
      data.add("s" + std::to_string(s) + "_" + std::to_string(i), "s" + std::to_string(s),
               random_canonical(static_cast<std::uint64_t>(200 + s * 12 + i)));
    }
  }
  PlanTargets targets;
  targets.inter = 1000;
  targets.intra = 500;
  targets.inter_virtual_subjects = 10;
  const SynthesisPlan plan = plan_dataset(data.manifest, targets, 11);
  CHECK(plan.recipes.size() == 1500);

  std::set<std::string> inter_labels;
  for (std::size_t k = 0; k < plan.recipes.size(); ++k) {
    if (plan.strategies[k] == Strategy::Inter) {
      inter_labels.insert(recipe_label(plan.recipes[k]));
    }
  }
  CHECK(inter_labels.size() == 10);  // 1000 images over 10 virtual subjects
}

TEST_CASE("table-scale plan: 5K subjects and 1.5M recipes" * doctest::timeout(120)) {
  // Skewed image counts: most subjects have one image, a hundred have many,
  // giving an intra space comfortably above the 0.5M target.
  DatasetManifest m;
  for (int s = 0; s < 5000; ++s) {
    const int n = s < 100 ? 51 : 1;
    for (int i = 0; i < n; ++i) {
      FaceRecord rec;
      rec.image_id = "r" + std::to_string(s) + "_" + std::to_string(i);
      rec.subject_id = "s" + std::to_string(s);
      rec.path = rec.image_id + ".png";
      rec.landmarks = kCanonLms;
      m.append(std::move(rec));
    }
  }
  CHECK(m.records.size() == 10000);
  PlanTargets targets;
  targets.inter = 1000000;
  targets.intra = 500000;
  const SynthesisPlan plan = plan_dataset(m, targets, 123);
  CHECK(plan.recipes.size() == 1500000);
  CHECK(plan.counts.inter == 1000000);
  CHECK(plan.counts.intra == 500000);
}
