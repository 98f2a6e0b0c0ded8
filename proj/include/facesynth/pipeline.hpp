// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_PIPELINE_HPP
#define FACESYNTH_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace facesynth {

// Flat key = value configuration with stage-scoped prefixes, '#' comments.
// Recognized keys:
//   seed, threads, deterministic, workdir
//   train_manifest, eval_manifest
//   align.enabled (default 1)
//   synthesize.inter/.intra/.self/.cross/.virtual_subjects/.blend
//   normalize.method = none|dog|ssr|lssf
//   train.arch (cnn-s | cnn-l | explicit layer string), train.lr,
//   train.lr_step, train.max_iters, train.batch
//   extract.self_syn_avg (0/1)
//   metric.kind = none|lda|jb, metric.dim
//   evaluate.task = verify|identify, evaluate.folds
struct PipelineConfig {
  std::map<std::string, std::string> values;
  std::filesystem::path config_dir;  // relative paths resolve against this

  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig parse(std::istream& in, const std::filesystem::path& config_dir);

  bool has(const std::string& key) const { return values.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback = "") const;
  long get_long(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::filesystem::path get_path(const std::string& key) const;  // resolved
};

struct StageStatus {
  std::string name;
  bool skipped = false;  // cached output reused, nothing recomputed
  std::string detail;
};

struct PipelineResult {
  std::vector<StageStatus> stages;
  std::filesystem::path report_path;
  double mean = 0.0;
  double stddev = 0.0;
};

// Run align -> synthesize -> normalize -> train -> extract -> learn-metric ->
// evaluate -> emit. Stage outputs live under workdir and are keyed by a
// content hash of (stage config, input files, upstream hashes); a rerun with
// unchanged inputs skips the stage. Failures throw with the stage name.
PipelineResult run_pipeline(const PipelineConfig& config);

}  // namespace facesynth

#endif  // FACESYNTH_PIPELINE_HPP
