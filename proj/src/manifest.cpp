// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/manifest.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace facesynth {

std::string to_string(Modality m) { return m == Modality::VIS ? "VIS" : "NIR"; }

Modality modality_from_string(const std::string& s) {
  if (s == "VIS") return Modality::VIS;
  if (s == "NIR") return Modality::NIR;
  throw std::invalid_argument("unknown modality '" + s + "' (expected VIS or NIR)");
}

const std::vector<int>& DatasetManifest::images_of(const std::string& subject_id) const {
  auto it = subjects.find(subject_id);
  if (it == subjects.end()) {
    throw std::out_of_range("unknown subject '" + subject_id + "'");
  }
  return it->second;
}

const FaceRecord* DatasetManifest::find(const std::string& image_id) const {
  auto it = by_image_id.find(image_id);
  return it == by_image_id.end() ? nullptr : &records[static_cast<std::size_t>(it->second)];
}

std::filesystem::path DatasetManifest::resolve_path(const FaceRecord& rec) const {
  std::filesystem::path p(rec.path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

void DatasetManifest::append(FaceRecord rec) {
  if (rec.subject_id.empty()) throw std::invalid_argument("empty subject_id");
  if (rec.image_id.empty()) throw std::invalid_argument("empty image_id");
  for (const auto& lm : rec.landmarks) {
    if (!std::isfinite(lm.x) || !std::isfinite(lm.y)) {
      throw std::invalid_argument("non-finite landmark in record '" + rec.image_id + "'");
    }
  }
  if (by_image_id.count(rec.image_id)) {
    throw std::invalid_argument("duplicate image_id '" + rec.image_id + "'");
  }
  const int idx = static_cast<int>(records.size());
  by_image_id.emplace(rec.image_id, idx);
  subjects[rec.subject_id].push_back(idx);
  records.push_back(std::move(rec));
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& s, int line_no) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw std::runtime_error("manifest line " + std::to_string(line_no) +
                             ": bad number '" + s + "'");
  }
  return v;
}

// Shortest round-trip representation, so serialize(load(x)) is a fixed point.
std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 12) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected 12 fields, got " +
                               std::to_string(fields.size()));
    }
    FaceRecord rec;
    rec.image_id = fields[0];
    rec.subject_id = fields[1];
    try {
      rec.modality = modality_from_string(fields[2]);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    rec.path = fields[3];
    for (int k = 0; k < 4; ++k) {
      rec.landmarks[static_cast<std::size_t>(k)] =
          Landmark{parse_double(fields[static_cast<std::size_t>(4 + 2 * k)], line_no),
                   parse_double(fields[static_cast<std::size_t>(5 + 2 * k)], line_no)};
    }
    try {
      m.append(std::move(rec));
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path.string());
  return parse_manifest(in, path.parent_path());
}

void serialize_manifest(const DatasetManifest& m, std::ostream& out) {
  for (const auto& rec : m.records) {
    out << rec.image_id << '\t' << rec.subject_id << '\t' << to_string(rec.modality) << '\t'
        << rec.path;
    for (const auto& lm : rec.landmarks) {
      out << '\t' << format_double(lm.x) << '\t' << format_double(lm.y);
    }
    out << '\n';
  }
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  serialize_manifest(m, out);
}

}  // namespace facesynth
