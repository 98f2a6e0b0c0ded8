// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#include "facesynth/features.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace facesynth {

Eigen::VectorXf image_to_column(const Image& img) {
  const long hw = static_cast<long>(img.height()) * img.width();
  Eigen::VectorXf col(hw * img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    const auto& plane = img.planes[static_cast<std::size_t>(c)];
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        col[c * hw + static_cast<long>(y) * img.width() + x] = plane(y, x);
      }
    }
  }
  return col;
}

namespace {

Image to_channels(const Image& img, int channels) {
  if (img.channels() == channels) return img;
  if (channels == 1) return to_gray(img);
  Image out;
  out.provenance = img.provenance;
  const Plane& p = to_gray(img).planes[0];
  out.planes.assign(3, p);
  return out;
}

}  // namespace

TrainingSet build_training_set(const std::vector<const DatasetManifest*>& manifests,
                               int channels, int threads) {
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("training set channels must be 1 or 3");
  }
  TrainingSet set;
  std::map<std::string, int> class_index;
  for (const auto* m : manifests) {
    for (const auto& [subject, imgs] : m->subjects) class_index.emplace(subject, 0);
  }
  set.class_names.reserve(class_index.size());
  for (auto& [subject, idx] : class_index) {
    idx = static_cast<int>(set.class_names.size());
    set.class_names.push_back(subject);
  }

  long total = 0;
  for (const auto* m : manifests) total += static_cast<long>(m->records.size());
  const long dim = static_cast<long>(kCanonicalSize) * kCanonicalSize * channels;
  set.data.resize(dim, total);
  set.labels.resize(static_cast<std::size_t>(total));

  struct Item {
    const DatasetManifest* manifest;
    int record;
    long column;
  };
  std::vector<Item> items;
  items.reserve(static_cast<std::size_t>(total));
  long col = 0;
  for (const auto* m : manifests) {
    for (std::size_t k = 0; k < m->records.size(); ++k) {
      items.push_back(Item{m, static_cast<int>(k), col});
      set.labels[static_cast<std::size_t>(col)] =
          class_index.at(m->records[k].subject_id);
      ++col;
    }
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string error_message;
  std::mutex error_mutex;
  const auto worker = [&]() {
    while (!failed.load()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= items.size()) break;
      const Item& item = items[k];
      const FaceRecord& rec = item.manifest->records[static_cast<std::size_t>(item.record)];
      try {
        const ImageLoader loader = png_loader(*item.manifest);
        Image img = to_channels(loader(rec), channels);
        if (img.width() != kCanonicalSize || img.height() != kCanonicalSize) {
          throw std::runtime_error("record '" + rec.image_id + "' is not canonical 100x100");
        }
        set.data.col(item.column) = image_to_column(img);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        error_message = e.what();
        failed.store(true);
      }
    }
  };
  const int n_threads = std::max(1, threads);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw std::runtime_error("build_training_set: " + error_message);
  return set;
}

Eigen::VectorXf l2_normalized(const Eigen::VectorXf& v) {
  const float n = v.norm();
  if (n <= 0.0f) return v;
  return v / n;
}

void FeatureSet::add(const std::string& id, const Eigen::VectorXf& v) {
  if (features.cols() == 0) {
    features.resize(v.size(), 0);
  } else if (features.rows() != v.size()) {
    throw std::invalid_argument("feature dimension mismatch");
  }
  features.conservativeResize(Eigen::NoChange, features.cols() + 1);
  features.col(features.cols() - 1) = v;
  index.emplace(id, static_cast<int>(ids.size()));
  ids.push_back(id);
}

const Eigen::VectorXf FeatureSet::col_of(const std::string& id) const {
  const auto it = index.find(id);
  if (it == index.end()) throw std::out_of_range("no feature for image '" + id + "'");
  return features.col(it->second);
}

Eigen::VectorXf extract_feature(const NetworkT<float>& net, const CanonicalFace& face,
                                bool self_syn_avg, bool l2_normalize) {
  Eigen::VectorXf feature;
  if (!self_syn_avg) {
    feature = net.features(image_to_column(face.image));
  } else {
    const auto variants = self_synthesis_variants(face);
    Eigen::MatrixXf batch(net.input_dim(), static_cast<long>(variants.size()));
    for (std::size_t k = 0; k < variants.size(); ++k) {
      batch.col(static_cast<long>(k)) = image_to_column(variants[k]);
    }
    feature = net.features(batch).rowwise().mean();
  }
  return l2_normalize ? l2_normalized(feature) : feature;
}

FeatureSet extract_features(const NetworkT<float>& net, const DatasetManifest& m,
                            bool self_syn_avg, int threads, bool l2_normalize,
                            const ImageLoader& loader) {
  CanonicalCache cache(m, loader);
  std::vector<int> all(m.records.size());
  std::iota(all.begin(), all.end(), 0);
  cache.preload(all);

  FeatureSet fs;
  fs.features.resize(net.feature_dim(), static_cast<long>(m.records.size()));
  fs.ids.resize(m.records.size());

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string error_message;
  std::mutex error_mutex;
  const auto worker = [&]() {
    while (!failed.load()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= m.records.size()) break;
      try {
        fs.features.col(static_cast<long>(k)) =
            extract_feature(net, cache.get(static_cast<int>(k)), self_syn_avg, l2_normalize);
        fs.ids[k] = m.records[k].image_id;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        error_message = e.what();
        failed.store(true);
      }
    }
  };
  const int n_threads = std::max(1, threads);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw std::runtime_error("extract_features: " + error_message);
  for (std::size_t k = 0; k < fs.ids.size(); ++k) {
    fs.index.emplace(fs.ids[k], static_cast<int>(k));
  }
  return fs;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_features(const FeatureSet& fs, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write features: " + path.string());
  os.write("FSFT", 4);
  put_u32(os, 1);
  put_u32(os, static_cast<std::uint32_t>(fs.features.rows()));
  put_u32(os, static_cast<std::uint32_t>(fs.features.cols()));
  for (long k = 0; k < fs.features.cols(); ++k) {
    const std::string& id = fs.ids[static_cast<std::size_t>(k)];
    put_u32(os, static_cast<std::uint32_t>(id.size()));
    os.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (long r = 0; r < fs.features.rows(); ++r) {
      const float v = fs.features(r, k);
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(os, bits);
    }
  }
  if (!os) throw std::runtime_error("feature write failed: " + path.string());
}

FeatureSet load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open features: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FSFT", 4) != 0) {
    throw std::runtime_error("bad feature file magic: " + path.string());
  }
  if (get_u32(is) != 1) throw std::runtime_error("unsupported feature file version");
  const auto dim = static_cast<long>(get_u32(is));
  const auto count = static_cast<long>(get_u32(is));
  FeatureSet fs;
  fs.features.resize(dim, count);
  fs.ids.resize(static_cast<std::size_t>(count));
  for (long k = 0; k < count; ++k) {
    const auto len = get_u32(is);
    std::string id(len, '\0');
    is.read(id.data(), len);
    for (long r = 0; r < dim; ++r) {
      const std::uint32_t bits = get_u32(is);
      float v;
      std::memcpy(&v, &bits, 4);
      fs.features(r, k) = v;
    }
    fs.index.emplace(id, static_cast<int>(k));
    fs.ids[static_cast<std::size_t>(k)] = std::move(id);
  }
  if (!is) throw std::runtime_error("truncated feature file: " + path.string());
  return fs;
}

}  // namespace facesynth
