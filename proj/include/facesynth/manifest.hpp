// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_MANIFEST_HPP
#define FACESYNTH_MANIFEST_HPP

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace facesynth {

enum class Modality { VIS, NIR };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct Landmark {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Landmark&) const = default;
};

// Landmark order in every record: left eye, right eye, nose tip, mouth
// center. "Left" is the image-left (viewer-left) eye.
enum LandmarkIndex { kLeftEye = 0, kRightEye = 1, kNoseTip = 2, kMouthCenter = 3 };

struct FaceRecord {
  std::string image_id;
  std::string subject_id;
  Modality modality = Modality::VIS;
  std::string path;  // as written in the manifest, resolved against its directory
  std::array<Landmark, 4> landmarks{};
};

// One dataset: the ordered record list plus a subject index. Records are
// immutable after load; n_i for subject i is images_of(i).size().
struct DatasetManifest {
  std::vector<FaceRecord> records;
  std::map<std::string, std::vector<int>> subjects;  // subject_id -> record indices
  std::unordered_map<std::string, int> by_image_id;
  std::filesystem::path base_dir;

  std::size_t num_subjects() const { return subjects.size(); }
  const std::vector<int>& images_of(const std::string& subject_id) const;
  const FaceRecord* find(const std::string& image_id) const;
  std::filesystem::path resolve_path(const FaceRecord& rec) const;

  void append(FaceRecord rec);  // validates and indexes one record
};

// Wire format: one record per line, 12 tab-separated fields
//   image_id  subject_id  modality  path  x1 y1 x2 y2 x3 y3 x4 y4
// Lines starting with '#' are comments. Throws with the 1-based line number
// on malformed input or duplicate image ids.
DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir);
void serialize_manifest(const DatasetManifest& m, std::ostream& out);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);

}  // namespace facesynth

#endif  // FACESYNTH_MANIFEST_HPP
