// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <iostream>

#include "facesynth/eval.hpp"
#include "facesynth/features.hpp"
#include "facesynth/illum.hpp"
#include "facesynth/metric.hpp"
#include "facesynth/net.hpp"
#include "facesynth/pipeline.hpp"
#include "facesynth/png_io.hpp"
#include "facesynth/synthesis.hpp"
#include "facesynth/toyfaces.hpp"

namespace fs = std::filesystem;
using namespace facesynth;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 1;
  int threads = 1;
  bool deterministic = false;
};

void add_align(CLI::App& app, const GlobalOpts& g) {
  auto* cmd = app.add_subcommand("align", "align faces to the canonical 100x100 frame");
  auto manifest = std::make_shared<std::string>();
  auto out_dir = std::make_shared<std::string>();
  auto raw_cache = std::make_shared<bool>(false);
  cmd->add_option("--manifest", *manifest, "input manifest")->required();
  cmd->add_option("--out", *out_dir, "output directory")->required();
  cmd->add_flag("--raw-cache", *raw_cache, "additionally cache raw float32 images");
  cmd->callback([manifest, out_dir, raw_cache, &g]() {
    (void)g;
    const DatasetManifest in = load_manifest(*manifest);
    fs::create_directories(*out_dir);
    DatasetManifest out;
    out.base_dir = *out_dir;
    for (const auto& rec : in.records) {
      const Image raw = decode_png(in.resolve_path(rec));
      const AlignedFace aligned = align_and_crop(rec, raw);
      FaceRecord out_rec = rec;
      out_rec.path = rec.image_id + ".png";
      out_rec.landmarks = aligned.landmarks;
      encode_png(fs::path(*out_dir) / out_rec.path, aligned.image);
      if (*raw_cache) {
        write_raw_image(fs::path(*out_dir) / (rec.image_id + ".fsci"), aligned.image);
      }
      out.append(std::move(out_rec));
    }
    save_manifest(out, fs::path(*out_dir) / "manifest.tsv");
    std::cout << "aligned " << out.records.size() << " images -> " << *out_dir << "\n";
  });
}

void add_synthesize(CLI::App& app, const GlobalOpts& g) {
  auto* cmd = app.add_subcommand("synthesize", "plan and render synthetic faces");
  struct Opts {
    std::string manifest, out_dir, recipes_in, recipes_out, blend = "hard";
    std::int64_t inter = 0, intra = 0, self = 0, cross = 0, virtual_subjects = 0;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--manifest", o->manifest, "aligned manifest")->required();
  cmd->add_option("--out", o->out_dir, "output directory")->required();
  cmd->add_option("--inter", o->inter, "inter-synthesis target");
  cmd->add_option("--intra", o->intra, "intra-synthesis target");
  cmd->add_option("--self", o->self, "self-synthesis target");
  cmd->add_option("--cross", o->cross, "cross-modality target");
  cmd->add_option("--virtual-subjects", o->virtual_subjects,
                  "cap inter synthesis to this many virtual subjects");
  cmd->add_option("--blend", o->blend, "hard|poisson");
  cmd->add_option("--recipes", o->recipes_in, "render these recipes instead of planning");
  cmd->add_option("--save-recipes", o->recipes_out, "write the planned recipes here");
  cmd->callback([o, &g]() {
    const DatasetManifest m = load_manifest(o->manifest);
    SynthesisPlan plan;
    if (!o->recipes_in.empty()) {
      plan = plan_from_recipes(load_recipes(o->recipes_in), m, g.seed);
    } else {
      PlanTargets targets;
      targets.inter = o->inter;
      targets.intra = o->intra;
      targets.self = o->self;
      targets.cross_modality = o->cross;
      targets.inter_virtual_subjects = o->virtual_subjects;
      targets.blend = blend_mode_from_string(o->blend);
      plan = plan_dataset(m, targets, g.seed);
    }
    if (!o->recipes_out.empty()) save_recipes(plan.recipes, o->recipes_out);
    ExecuteOptions opts;
    opts.out_dir = o->out_dir;
    opts.threads = g.threads;
    const SynthesisReport report = execute_plan(plan, m, opts);
    std::cout << "rendered " << report.succeeded << " of " << plan.recipes.size()
              << " recipes in " << report.wall_seconds << "s";
    if (!report.failures.empty()) std::cout << " (" << report.failures.size() << " failures)";
    std::cout << "\n";
    for (const auto& f : report.failures) {
      std::cerr << "recipe " << f.recipe_index << ": " << f.message << "\n";
    }
  });
}

void add_normalize(CLI::App& app, const GlobalOpts& g) {
  auto* cmd = app.add_subcommand("normalize", "illumination-normalize a manifest tree");
  struct Opts {
    std::string manifest, out_dir, method = "dog";
    FilterConfig fcfg;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--manifest", o->manifest)->required();
  cmd->add_option("--out", o->out_dir)->required();
  cmd->add_option("--method", o->method, "dog|ssr|lssf")->required();
  cmd->add_option("--dog-sigma1", o->fcfg.dog_sigma1);
  cmd->add_option("--dog-sigma2", o->fcfg.dog_sigma2);
  cmd->add_option("--ssr-sigma", o->fcfg.ssr_sigma);
  cmd->add_option("--lssf-lambda", o->fcfg.lssf_lambda);
  cmd->callback([o, &g]() {
    (void)g;
    o->fcfg.method = filter_method_from_string(o->method);
    const DatasetManifest in = load_manifest(o->manifest);
    fs::create_directories(o->out_dir);
    DatasetManifest out;
    out.base_dir = o->out_dir;
    for (const auto& rec : in.records) {
      const Image norm = normalize_illumination(decode_png(in.resolve_path(rec)), o->fcfg);
      FaceRecord out_rec = rec;
      std::string stem = rec.image_id;
      for (char& c : stem) {
        if (c == '/' || c == '\\') c = '_';
      }
      out_rec.path = stem + ".png";
      encode_png(fs::path(o->out_dir) / out_rec.path, norm);
      out.append(std::move(out_rec));
    }
    save_manifest(out, fs::path(o->out_dir) / "manifest.tsv");
    std::cout << "normalized " << out.records.size() << " images (" << o->method << ")\n";
  });
}

void add_train(CLI::App& app, const GlobalOpts& g) {
  auto* cmd = app.add_subcommand("train", "train a network on one or more manifests");
  struct Opts {
    std::vector<std::string> manifests;
    std::string arch = "cnn-s", preset, out, trace;
    double lr = -1;
    long lr_step = -1, max_iters = -1;
    int batch = 128;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--manifest", o->manifests, "training manifest(s)")->required();
  cmd->add_option("--arch", o->arch, "cnn-s | cnn-l | layer string");
  cmd->add_option("--preset", o->preset, "cnn-s | cnn-l-nirvis | cnn-l-lfw");
  cmd->add_option("--out", o->out, "checkpoint path")->required();
  cmd->add_option("--loss-trace", o->trace, "loss trace CSV path");
  cmd->add_option("--lr", o->lr, "override base learning rate");
  cmd->add_option("--lr-step", o->lr_step, "override decimation interval");
  cmd->add_option("--max-iters", o->max_iters, "override iteration count");
  cmd->add_option("--batch", o->batch, "batch size");
  cmd->callback([o, &g]() {
    std::vector<DatasetManifest> manifests;
    for (const auto& p : o->manifests) manifests.push_back(load_manifest(p));
    std::vector<const DatasetManifest*> refs;
    for (const auto& m : manifests) refs.push_back(&m);
    const TrainingSet set = build_training_set(refs, 1, g.threads);
    const auto classes = static_cast<int>(set.class_names.size());

    NetConfig cfg;
    if (o->arch == "cnn-s") {
      cfg = NetConfig::cnn_s(classes);
    } else if (o->arch == "cnn-l") {
      cfg = NetConfig::cnn_l(classes);
    } else {
      cfg = NetConfig::from_arch_string(o->arch, classes);
    }
    NetworkT<float> net(cfg, g.seed);

    TrainConfig tcfg;
    if (o->preset == "cnn-l-nirvis") {
      tcfg.schedule = LrSchedule::cnn_l_nirvis_preset();
    } else if (o->preset == "cnn-l-lfw") {
      tcfg.schedule = LrSchedule::cnn_l_lfw_preset();
    } else {
      tcfg.schedule = LrSchedule::cnn_s_preset();
    }
    if (o->lr > 0) tcfg.schedule.base_lr = o->lr;
    if (o->lr_step > 0) tcfg.schedule.step_iterations = o->lr_step;
    if (o->max_iters >= 0) tcfg.schedule.max_iterations = o->max_iters;
    tcfg.batch_size = o->batch;
    tcfg.seed = g.seed;
    tcfg.prefetch = !g.deterministic && g.threads > 1;
    const TrainResult result = train(net, set.data, set.labels, tcfg);
    net.save(o->out);
    if (!o->trace.empty()) save_loss_trace(result.trace, o->trace);
    std::cout << "trained " << o->arch << " on " << set.data.cols() << " images, " << classes
              << " classes; final loss "
              << (result.trace.empty() ? 0.0 : result.trace.back().loss) << "\n";
  });
}

void add_extract(CLI::App& app, const GlobalOpts& g) {
  auto* cmd = app.add_subcommand("extract", "extract features for a manifest");
  struct Opts {
    std::string model, manifest, out;
    bool self_syn_avg = false;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--model", o->model)->required();
  cmd->add_option("--manifest", o->manifest)->required();
  cmd->add_option("--out", o->out)->required();
  cmd->add_flag("--self-syn-avg", o->self_syn_avg, "average the 32 self-synthesis variants");
  cmd->callback([o, &g]() {
    const NetworkT<float> net = NetworkT<float>::load(o->model);
    const DatasetManifest m = load_manifest(o->manifest);
    const FeatureSet feats = extract_features(net, m, o->self_syn_avg, g.threads);
    save_features(feats, o->out);
    std::cout << "extracted " << feats.size() << " features of dim " << feats.dim() << "\n";
  });
}

void add_learn_metric(CLI::App& app, const GlobalOpts& g) {
  auto* cmd = app.add_subcommand("learn-metric", "fit LDA or joint Bayesian on features");
  struct Opts {
    std::string features, manifest, out, kind = "lda";
    int dim = -1;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--features", o->features)->required();
  cmd->add_option("--manifest", o->manifest, "manifest supplying subject labels")->required();
  cmd->add_option("--out", o->out)->required();
  cmd->add_option("--kind", o->kind, "lda|jb");
  cmd->add_option("--dim", o->dim, "LDA output dimension");
  cmd->callback([o, &g]() {
    (void)g;
    const FeatureSet feats = load_features(o->features);
    const DatasetManifest m = load_manifest(o->manifest);
    std::map<std::string, int> class_of;
    for (const auto& [subject, imgs] : m.subjects) {
      class_of.emplace(subject, static_cast<int>(class_of.size()));
    }
    Eigen::MatrixXd features(feats.dim(), feats.size());
    std::vector<int> labels;
    for (long k = 0; k < feats.size(); ++k) {
      features.col(k) = feats.features.col(k).cast<double>();
      const FaceRecord* rec = m.find(feats.ids[static_cast<std::size_t>(k)]);
      if (!rec) throw std::runtime_error("feature id not in manifest: " + feats.ids[k]);
      labels.push_back(class_of.at(rec->subject_id));
    }
    MetricModel model;
    if (o->kind == "lda") {
      const auto classes = static_cast<int>(class_of.size());
      const int dim = o->dim > 0 ? o->dim : classes - 1;
      model = fit_lda(features, labels, dim);
    } else if (o->kind == "jb") {
      model = fit_joint_bayesian(features, labels);
    } else {
      throw std::runtime_error("unknown metric kind '" + o->kind + "'");
    }
    save_metric_model(model, o->out);
    std::cout << "fitted " << o->kind << " on " << feats.size() << " features\n";
  });
}

void add_evaluate(CLI::App& app, const GlobalOpts& g) {
  auto* cmd = app.add_subcommand("evaluate", "run the verification or identification protocol");
  struct Opts {
    std::string features, features_b, folds, metric, out, task = "verify";
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--features", o->features)->required();
  cmd->add_option("--fuse", o->features_b, "second feature stream to fuse in");
  cmd->add_option("--folds", o->folds)->required();
  cmd->add_option("--metric", o->metric, "metric model file");
  cmd->add_option("--task", o->task, "verify|identify");
  cmd->add_option("--out", o->out, "report CSV path")->required();
  cmd->callback([o, &g]() {
    (void)g;
    FeatureSet feats = load_features(o->features);
    if (!o->features_b.empty()) {
      feats = fuse_features(feats, load_features(o->features_b));
    }
    MetricModel model;
    const MetricModel* model_ptr = nullptr;
    if (!o->metric.empty()) {
      model = load_metric_model(o->metric);
      model_ptr = &model;
    }
    const PairScorer scorer = make_pair_scorer(model_ptr);
    EvalReport report;
    if (o->task == "verify") {
      report = verify_10fold(feats, load_verification_folds(o->folds), scorer);
    } else if (o->task == "identify") {
      report = identify_rank1(feats, load_identification_folds(o->folds), scorer);
    } else {
      throw std::runtime_error("unknown task '" + o->task + "'");
    }
    emit_report(report, o->out);
    std::cout << report.task << ": mean " << report.mean << " +- " << report.stddev << " over "
              << report.per_fold.size() << " folds -> " << o->out << "\n";
  });
}

void add_toyfaces(CLI::App& app, const GlobalOpts& g) {
  auto* cmd = app.add_subcommand("toyfaces", "generate the procedural toy benchmark");
  struct Opts {
    std::string out_dir;
    ToyFaceSpec spec;
    int folds = 10;
    int pairs_per_fold = 60;
  };
  auto o = std::make_shared<Opts>();
  cmd->add_option("--out", o->out_dir)->required();
  cmd->add_option("--ids", o->spec.num_identities);
  cmd->add_option("--images-per-id", o->spec.images_per_identity);
  cmd->add_option("--test-images-per-id", o->spec.test_images_per_identity);
  cmd->add_option("--noise", o->spec.noise_sigma);
  cmd->add_flag("--cross-modality", o->spec.cross_modality);
  cmd->add_option("--folds", o->folds);
  cmd->add_option("--pairs-per-fold", o->pairs_per_fold);
  cmd->callback([o, &g]() {
    const ToyBenchmark bench = generate_toy_faces(o->spec, g.seed, o->out_dir);
    const auto folds =
        make_verification_folds(bench.test, o->folds, o->pairs_per_fold, g.seed);
    save_verification_folds(folds, fs::path(o->out_dir) / "verification_folds.tsv");
    if (o->spec.cross_modality) {
      const auto id_folds = make_identification_folds(bench.test, o->folds, g.seed);
      save_identification_folds(id_folds, fs::path(o->out_dir) / "identification_folds.tsv");
    }
    std::cout << "toy benchmark: " << bench.train.records.size() << " train / "
              << bench.test.records.size() << " test images -> " << o->out_dir << "\n";
  });
}

void add_run(CLI::App& app, const GlobalOpts& g) {
  auto* cmd = app.add_subcommand("run", "run the full pipeline from a config file");
  auto config_path = std::make_shared<std::string>();
  cmd->add_option("--config", *config_path, "pipeline config file")->required();
  cmd->callback([config_path, &g]() {
    PipelineConfig cfg = PipelineConfig::load(*config_path);
    if (!cfg.has("seed")) cfg.values["seed"] = std::to_string(g.seed);
    if (!cfg.has("threads")) cfg.values["threads"] = std::to_string(g.threads);
    if (g.deterministic) cfg.values["deterministic"] = "1";
    const PipelineResult result = run_pipeline(cfg);
    std::cout << "pipeline complete: mean " << result.mean << " +- " << result.stddev << " ("
              << result.report_path.string() << ")\n";
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"face dataset expansion by part compositing, with a small-CNN "
               "recognition pipeline"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "global random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->capture_default_str();
  app.add_flag("--deterministic", g.deterministic, "force single-threaded training");

  add_align(app, g);
  add_synthesize(app, g);
  add_normalize(app, g);
  add_train(app, g);
  add_extract(app, g);
  add_learn_metric(app, g);
  add_evaluate(app, g);
  add_toyfaces(app, g);
  add_run(app, g);

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
