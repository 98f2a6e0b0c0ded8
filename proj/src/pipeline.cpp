// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/pipeline.hpp"

#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "facesynth/eval.hpp"
#include "facesynth/features.hpp"
#include "facesynth/illum.hpp"
#include "facesynth/metric.hpp"
#include "facesynth/net.hpp"
#include "facesynth/png_io.hpp"
#include "facesynth/rng.hpp"
#include "facesynth/synthesis.hpp"

namespace facesynth {

namespace {

std::string trimmed(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

}  // namespace

PipelineConfig PipelineConfig::parse(std::istream& in, const std::filesystem::path& config_dir) {
  PipelineConfig cfg;
  cfg.config_dir = config_dir;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trimmed(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trimmed(t.substr(0, eq));
    const std::string value = trimmed(t.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
    }
    cfg.values[key] = value;
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path.string());
  return parse(in, path.parent_path());
}

std::string PipelineConfig::get(const std::string& key, const std::string& fallback) const {
  const auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}

long PipelineConfig::get_long(const std::string& key, long fallback) const {
  const auto it = values.find(key);
  return it == values.end() ? fallback : std::stol(it->second);
}

double PipelineConfig::get_double(const std::string& key, double fallback) const {
  const auto it = values.find(key);
  return it == values.end() ? fallback : std::stod(it->second);
}

std::filesystem::path PipelineConfig::get_path(const std::string& key) const {
  const auto it = values.find(key);
  if (it == values.end()) return {};
  std::filesystem::path p(it->second);
  if (p.is_absolute() || config_dir.empty()) return p;
  return config_dir / p;
}

namespace {

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_string(const std::string& s, std::uint64_t h) {
  return fnv1a(s.data(), s.size(), h);
}

std::uint64_t hash_file(const std::filesystem::path& path, std::uint64_t h) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot hash missing file: " + path.string());
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    h = fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// A stage is skipped when its stored hash matches and its outputs exist.
class StageRunner {
 public:
  StageRunner(const std::filesystem::path& workdir, std::vector<StageStatus>& log)
      : workdir_(workdir), log_(log) {}

  template <typename Fn>
  void run(const std::string& name, std::uint64_t input_hash,
           const std::vector<std::filesystem::path>& outputs, Fn&& body) {
    last_hash_ = rng::mix(input_hash ^ last_hash_);
    const auto hash_path = workdir_ / (name + ".hash");
    const std::string want = hex64(last_hash_);
    bool fresh = false;
    {
      std::ifstream is(hash_path);
      std::string have;
      if (is && std::getline(is, have) && have == want) {
        fresh = true;
        for (const auto& out : outputs) {
          if (!std::filesystem::exists(out)) fresh = false;
        }
      }
    }
    if (fresh) {
      log_.push_back(StageStatus{name, true, "cached"});
      std::cout << "[" << name << "] skip (cached)\n";
      return;
    }
    try {
      body();
    } catch (const std::exception& e) {
      throw std::runtime_error("stage '" + name + "' failed: " + e.what());
    }
    std::ofstream os(hash_path, std::ios::binary);
    os << want << "\n";
    log_.push_back(StageStatus{name, false, "ran"});
    std::cout << "[" << name << "] done\n";
  }

  std::uint64_t chain() const { return last_hash_; }

 private:
  std::filesystem::path workdir_;
  std::vector<StageStatus>& log_;
  std::uint64_t last_hash_ = 0x5eedull;
};

DatasetManifest align_manifest_tree(const DatasetManifest& in,
                                    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  DatasetManifest out;
  out.base_dir = out_dir;
  for (const auto& rec : in.records) {
    const Image raw = decode_png(in.resolve_path(rec));
    const AlignedFace aligned = align_and_crop(rec, raw);
    FaceRecord out_rec = rec;
    out_rec.path = rec.image_id + ".png";
    out_rec.landmarks = aligned.landmarks;
    encode_png(out_dir / out_rec.path, aligned.image);
    out.append(std::move(out_rec));
  }
  save_manifest(out, out_dir / "manifest.tsv");
  return out;
}

DatasetManifest normalize_manifest_tree(const DatasetManifest& in, const FilterConfig& cfg,
                                        const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  DatasetManifest out;
  out.base_dir = out_dir;
  for (const auto& rec : in.records) {
    const Image img = decode_png(in.resolve_path(rec));
    const Image norm = normalize_illumination(img, cfg);
    FaceRecord out_rec = rec;
    // Image ids are reused; files are flattened by replacing separators.
    std::string stem = rec.image_id;
    for (char& c : stem) {
      if (c == '/' || c == '\\') c = '_';
    }
    out_rec.path = stem + ".png";
    encode_png(out_dir / out_rec.path, norm);
    out.append(std::move(out_rec));
  }
  save_manifest(out, out_dir / "manifest.tsv");
  return out;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config) {
  PipelineResult result;
  const std::filesystem::path workdir = config.get_path("workdir");
  if (workdir.empty()) throw std::runtime_error("config missing 'workdir'");
  std::filesystem::create_directories(workdir);

  const auto seed = static_cast<std::uint64_t>(config.get_long("seed", 1));
  const int threads = static_cast<int>(config.get_long("threads", 1));
  const bool deterministic = config.get_long("deterministic", 1) != 0;

  StageRunner runner(workdir, result.stages);

  // --- align ---
  const std::filesystem::path train_manifest_path = config.get_path("train_manifest");
  const std::filesystem::path eval_manifest_path = config.get_path("eval_manifest");
  const auto aligned_train_dir = workdir / "aligned_train";
  const auto aligned_eval_dir = workdir / "aligned_eval";
  {
    std::uint64_t h = hash_string("align", 0xcbf29ce484222325ull);
    if (train_manifest_path.empty() || !std::filesystem::exists(train_manifest_path)) {
      throw std::runtime_error("stage 'align' failed: missing train_manifest '" +
                               train_manifest_path.string() + "'");
    }
    if (eval_manifest_path.empty() || !std::filesystem::exists(eval_manifest_path)) {
      throw std::runtime_error("stage 'align' failed: missing eval_manifest '" +
                               eval_manifest_path.string() + "'");
    }
    h = hash_file(train_manifest_path, h);
    h = hash_file(eval_manifest_path, h);
    h = hash_string(config.get("align.enabled", "1"), h);
    runner.run("align", h,
               {aligned_train_dir / "manifest.tsv", aligned_eval_dir / "manifest.tsv"}, [&]() {
                 const DatasetManifest train_in = load_manifest(train_manifest_path);
                 const DatasetManifest eval_in = load_manifest(eval_manifest_path);
                 if (config.get("align.enabled", "1") != "0") {
                   align_manifest_tree(train_in, aligned_train_dir);
                   align_manifest_tree(eval_in, aligned_eval_dir);
                 } else {
                   // Pass-through copy keeps downstream paths uniform.
                   std::filesystem::create_directories(aligned_train_dir);
                   std::filesystem::create_directories(aligned_eval_dir);
                   save_manifest(train_in, aligned_train_dir / "manifest.tsv");
                   save_manifest(eval_in, aligned_eval_dir / "manifest.tsv");
                 }
               });
  }

  // --- synthesize ---
  const auto synth_dir = workdir / "synthetic";
  PlanTargets targets;
  targets.inter = config.get_long("synthesize.inter", 0);
  targets.intra = config.get_long("synthesize.intra", 0);
  targets.self = config.get_long("synthesize.self", 0);
  targets.cross_modality = config.get_long("synthesize.cross", 0);
  targets.inter_virtual_subjects = config.get_long("synthesize.virtual_subjects", 0);
  targets.blend = blend_mode_from_string(config.get("synthesize.blend", "hard"));
  const bool synthesize_on =
      targets.inter + targets.intra + targets.self + targets.cross_modality > 0;
  if (synthesize_on) {
    std::uint64_t h = hash_string("synthesize", 0x1000193ull);
    h = hash_file(aligned_train_dir / "manifest.tsv", h);
    h = hash_string(std::to_string(targets.inter) + "/" + std::to_string(targets.intra) + "/" +
                        std::to_string(targets.self) + "/" + std::to_string(targets.cross_modality) +
                        "/" + std::to_string(targets.inter_virtual_subjects) + "/" +
                        to_string(targets.blend) + "/" + std::to_string(seed),
                    h);
    runner.run("synthesize", h, {synth_dir / "manifest.tsv"}, [&]() {
      const DatasetManifest aligned = load_manifest(aligned_train_dir / "manifest.tsv");
      const SynthesisPlan plan = plan_dataset(aligned, targets, seed);
      ExecuteOptions opts;
      opts.out_dir = synth_dir;
      opts.threads = threads;
      const SynthesisReport report = execute_plan(plan, aligned, opts);
      save_recipes(plan.recipes, synth_dir / "recipes.tsv");
      if (!report.failures.empty()) {
        std::cout << "[synthesize] " << report.failures.size() << " recipe failures\n";
      }
    });
  }

  // --- normalize ---
  const std::string norm_method = config.get("normalize.method", "none");
  auto train_dirs = std::vector<std::filesystem::path>{aligned_train_dir};
  if (synthesize_on) train_dirs.push_back(synth_dir);
  auto eval_dir = aligned_eval_dir;
  if (norm_method != "none") {
    FilterConfig fcfg;
    fcfg.method = filter_method_from_string(norm_method);
    fcfg.dog_sigma1 = config.get_double("normalize.dog_sigma1", fcfg.dog_sigma1);
    fcfg.dog_sigma2 = config.get_double("normalize.dog_sigma2", fcfg.dog_sigma2);
    fcfg.ssr_sigma = config.get_double("normalize.ssr_sigma", fcfg.ssr_sigma);
    fcfg.lssf_lambda = config.get_double("normalize.lssf_lambda", fcfg.lssf_lambda);
    std::uint64_t h = hash_string("normalize:" + norm_method, 0x9dc5ull);
    for (const auto& d : train_dirs) h = hash_file(d / "manifest.tsv", h);
    h = hash_file(eval_dir / "manifest.tsv", h);
    std::vector<std::filesystem::path> norm_train_dirs;
    for (std::size_t k = 0; k < train_dirs.size(); ++k) {
      norm_train_dirs.push_back(workdir / ("norm_train_" + std::to_string(k)));
    }
    const auto norm_eval_dir = workdir / "norm_eval";
    std::vector<std::filesystem::path> outputs;
    for (const auto& d : norm_train_dirs) outputs.push_back(d / "manifest.tsv");
    outputs.push_back(norm_eval_dir / "manifest.tsv");
    runner.run("normalize", h, outputs, [&]() {
      for (std::size_t k = 0; k < train_dirs.size(); ++k) {
        normalize_manifest_tree(load_manifest(train_dirs[k] / "manifest.tsv"), fcfg,
                                norm_train_dirs[k]);
      }
      normalize_manifest_tree(load_manifest(eval_dir / "manifest.tsv"), fcfg, norm_eval_dir);
    });
    train_dirs = norm_train_dirs;
    eval_dir = norm_eval_dir;
  }

  // --- train ---
  const auto model_path = workdir / "model.bin";
  const std::string arch = config.get("train.arch", "cnn-s");
  {
    std::uint64_t h = hash_string("train:" + arch, 0x811cull);
    for (const auto& d : train_dirs) h = hash_file(d / "manifest.tsv", h);
    h = hash_string(std::to_string(config.get_double("train.lr", -1)) + "/" +
                        std::to_string(config.get_long("train.lr_step", -1)) + "/" +
                        std::to_string(config.get_long("train.max_iters", -1)) + "/" +
                        std::to_string(config.get_long("train.batch", 128)) + "/" +
                        std::to_string(seed) + "/" + std::to_string(deterministic),
                    h);
    runner.run("train", h, {model_path}, [&]() {
      std::vector<DatasetManifest> manifests;
      manifests.reserve(train_dirs.size());
      for (const auto& d : train_dirs) manifests.push_back(load_manifest(d / "manifest.tsv"));
      std::vector<const DatasetManifest*> refs;
      for (const auto& m : manifests) refs.push_back(&m);
      const TrainingSet set = build_training_set(refs, 1, threads);

      NetConfig net_cfg;
      const auto classes = static_cast<int>(set.class_names.size());
      if (arch == "cnn-s") {
        net_cfg = NetConfig::cnn_s(classes);
      } else if (arch == "cnn-l") {
        net_cfg = NetConfig::cnn_l(classes);
      } else {
        net_cfg = NetConfig::from_arch_string(arch, classes);
      }
      NetworkT<float> net(net_cfg, seed);

      TrainConfig tcfg;
      tcfg.schedule = arch == "cnn-l" ? LrSchedule::cnn_l_lfw_preset() : LrSchedule::cnn_s_preset();
      if (config.has("train.lr")) tcfg.schedule.base_lr = config.get_double("train.lr", 0.001);
      if (config.has("train.lr_step")) {
        tcfg.schedule.step_iterations = config.get_long("train.lr_step", 4000);
      }
      if (config.has("train.max_iters")) {
        tcfg.schedule.max_iterations = config.get_long("train.max_iters", 10000);
      }
      tcfg.batch_size = static_cast<int>(config.get_long("train.batch", 128));
      tcfg.seed = seed;
      tcfg.prefetch = !deterministic && threads > 1;
      const TrainResult tr = train(net, set.data, set.labels, tcfg);
      net.save(model_path);
      save_loss_trace(tr.trace, workdir / "loss_trace.csv");
    });
  }

  // --- extract (training features for the metric, eval features for scoring) ---
  const auto eval_features_path = workdir / "eval_features.bin";
  const auto train_features_path = workdir / "train_features.bin";
  const bool self_syn_avg = config.get_long("extract.self_syn_avg", 0) != 0;
  const std::string metric_kind = config.get("metric.kind", "none");
  {
    std::uint64_t h = hash_string("extract", 0x777ull);
    h = hash_file(eval_dir / "manifest.tsv", h);
    h = hash_string(std::to_string(self_syn_avg), h);
    h = hash_string(metric_kind, h);
    std::vector<std::filesystem::path> outputs{eval_features_path};
    if (metric_kind != "none") outputs.push_back(train_features_path);
    runner.run("extract", h, outputs, [&]() {
      const NetworkT<float> net = NetworkT<float>::load(model_path);
      const DatasetManifest eval_m = load_manifest(eval_dir / "manifest.tsv");
      save_features(extract_features(net, eval_m, self_syn_avg, threads), eval_features_path);
      if (metric_kind != "none") {
        // Metric models are fit on the (non-synthetic) training stream.
        const DatasetManifest train_m = load_manifest(train_dirs.front() / "manifest.tsv");
        save_features(extract_features(net, train_m, self_syn_avg, threads),
                      train_features_path);
      }
    });
  }

  // --- learn-metric ---
  const auto metric_path = workdir / "metric.bin";
  if (metric_kind != "none") {
    std::uint64_t h = hash_string("learn-metric:" + metric_kind, 0xabcull);
    h = hash_file(train_features_path, h);
    h = hash_string(std::to_string(config.get_long("metric.dim", -1)), h);
    runner.run("learn-metric", h, {metric_path}, [&]() {
      const FeatureSet fs = load_features(train_features_path);
      const DatasetManifest train_m = load_manifest(train_dirs.front() / "manifest.tsv");
      std::vector<int> labels;
      std::map<std::string, int> class_of;
      for (const auto& [subject, imgs] : train_m.subjects) {
        class_of.emplace(subject, static_cast<int>(class_of.size()));
      }
      Eigen::MatrixXd features(fs.dim(), fs.size());
      labels.reserve(static_cast<std::size_t>(fs.size()));
      for (long k = 0; k < fs.size(); ++k) {
        features.col(k) = fs.features.col(k).cast<double>();
        const FaceRecord* rec = train_m.find(fs.ids[static_cast<std::size_t>(k)]);
        if (!rec) throw std::runtime_error("feature id missing from manifest");
        labels.push_back(class_of.at(rec->subject_id));
      }
      MetricModel model;
      if (metric_kind == "lda") {
        const auto classes = static_cast<int>(class_of.size());
        const int want = static_cast<int>(config.get_long("metric.dim", classes - 1));
        model = fit_lda(features, labels, std::min(want, classes - 1));
      } else if (metric_kind == "jb") {
        model = fit_joint_bayesian(features, labels);
      } else {
        throw std::runtime_error("unknown metric.kind '" + metric_kind + "'");
      }
      save_metric_model(model, metric_path);
    });
  }

  // --- evaluate + emit ---
  const auto report_path = workdir / "report.csv";
  const std::string task = config.get("evaluate.task", "verify");
  const std::filesystem::path folds_path = config.get_path("evaluate.folds");
  {
    if (folds_path.empty() || !std::filesystem::exists(folds_path)) {
      throw std::runtime_error("stage 'evaluate' failed: missing evaluate.folds '" +
                               folds_path.string() + "'");
    }
    std::uint64_t h = hash_string("evaluate:" + task, 0xef1ull);
    h = hash_file(eval_features_path, h);
    h = hash_file(folds_path, h);
    if (metric_kind != "none") h = hash_file(metric_path, h);
    runner.run("evaluate", h, {report_path}, [&]() {
      const FeatureSet fs = load_features(eval_features_path);
      MetricModel model;
      const MetricModel* model_ptr = nullptr;
      if (metric_kind != "none") {
        model = load_metric_model(metric_path);
        model_ptr = &model;
      }
      const PairScorer scorer = make_pair_scorer(model_ptr);
      EvalReport report;
      if (task == "verify") {
        report = verify_10fold(fs, load_verification_folds(folds_path), scorer);
      } else if (task == "identify") {
        report = identify_rank1(fs, load_identification_folds(folds_path), scorer);
      } else {
        throw std::runtime_error("unknown evaluate.task '" + task + "'");
      }
      emit_report(report, report_path);
    });
  }

  // Read back the summary for the caller.
  {
    std::ifstream is(report_path);
    std::string line;
    while (std::getline(is, line)) {
      if (line.rfind("summary,", 0) == 0) {
        std::stringstream ss(line.substr(8));
        std::string mean_s, std_s;
        std::getline(ss, mean_s, ',');
        std::getline(ss, std_s, ',');
        result.mean = std::stod(mean_s);
        result.stddev = std::stod(std_s);
      }
    }
  }
  result.report_path = report_path;
  return result;
}

}  // namespace facesynth
