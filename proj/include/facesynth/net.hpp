// Copyright Contributors to the facesynth project.
// SPDX-License-Identifier: Apache-2.0

#ifndef FACESYNTH_NET_HPP
#define FACESYNTH_NET_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "facesynth/rng.hpp"

namespace facesynth {

enum class LayerKind { Conv3x3, MaxPool2, AvgPool, FullyConnected, Dropout };

struct LayerSpec {
  LayerKind kind = LayerKind::Conv3x3;
  int units = 0;      // conv out channels / fc out dim
  int window = 0;     // avgpool window
  double rate = 0.0;  // dropout rate
  bool relu = true;   // conv and fc activation
};

struct LayerShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  long flat() const { return static_cast<long>(channels) * height * width; }
};

// Architecture string grammar: comma-separated tokens
//   conv:<channels> | pool | avgpool:<window> | fc:<dim> | dropout:<rate>
// Convolutions are 3x3 stride 1 with same padding; pooling is 2x2 stride 2
// with ceil-mode output sizes. The softmax classifier over num_classes is
// appended implicitly.
struct NetConfig {
  int input_size = 100;
  int input_channels = 1;
  int num_classes = 0;
  std::vector<LayerSpec> layers;

  static NetConfig from_arch_string(const std::string& arch, int num_classes,
                                    int input_size = 100, int input_channels = 1);
  std::string arch_string() const;

  // Table-sized presets. CNN-S: three conv blocks (16,16 / 32 / 48) and a
  // 160-d fully connected feature. CNN-L: five conv blocks up to 320 channels
  // with a 7x7 average pool giving the 320-d feature, dropout 0.4 on it.
  static NetConfig cnn_s(int num_classes, int input_size = 100, int input_channels = 1);
  static NetConfig cnn_l(int num_classes, int input_size = 100, int input_channels = 1);
};

struct LrSchedule {
  double base_lr = 0.001;
  long step_iterations = 4000;  // learning rate divides by 10 every this many
  long max_iterations = 10000;

  double lr_at(long iter) const {
    return base_lr * std::pow(10.0, -static_cast<double>(iter / step_iterations));
  }

  static LrSchedule cnn_s_preset() { return {0.001, 4000, 10000}; }
  static LrSchedule cnn_l_nirvis_preset() { return {0.01, 8000, 20000}; }
  static LrSchedule cnn_l_lfw_preset() { return {0.01, 120000, 200000}; }
};

namespace detail {

inline std::uint64_t dropout_threshold(double keep_prob) {
  const double scaled = keep_prob * 18446744073709551616.0;  // 2^64
  if (scaled >= 18446744073709551615.0) return ~0ull;
  return static_cast<std::uint64_t>(scaled);
}

}  // namespace detail

template <typename Scalar>
class NetworkT {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  struct ForwardState {
    Matrix input;
    std::vector<Matrix> activations;          // per layer, classifier included
    std::vector<Eigen::MatrixXi> pool_argmax; // parallel; empty unless maxpool
    std::vector<Matrix> dropout_mask;         // parallel; empty unless dropout
    Matrix probs;                             // softmax of the classifier output
  };

  struct Gradients {
    std::vector<Matrix> weights;  // parallel to parameter layers
    std::vector<Vector> biases;
  };

  NetworkT(NetConfig config, std::uint64_t seed);

  const NetConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  int feature_dim() const { return static_cast<int>(shapes_[shapes_.size() - 2].flat()); }
  long input_dim() const { return shapes_.front().flat(); }
  int num_classes() const { return config_.num_classes; }

  // Forward through every layer. Dropout is active only in train mode and is
  // a pure function of (seed, dropout_counter, element), so training is
  // reproducible. Returns the mean softmax cross-entropy when labels given.
  double forward(const Matrix& batch, const std::vector<int>* labels, bool train_mode,
                 std::uint64_t dropout_counter, ForwardState& state) const;

  // Eval-mode features: output of the last layer before the classifier,
  // one column per sample.
  Matrix features(const Matrix& batch) const;

  // Eval-mode class scores (pre-softmax), one column per sample.
  Matrix logits(const Matrix& batch) const;

  void backward(const ForwardState& state, const std::vector<int>& labels,
                Gradients& grads) const;

  Gradients zero_gradients() const;

  std::vector<Matrix>& weights() { return weights_; }
  std::vector<Vector>& biases() { return biases_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  const std::vector<Vector>& biases() const { return biases_; }

  void save(const std::filesystem::path& path) const;
  static NetworkT load(const std::filesystem::path& path);

 private:
  NetConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<LayerSpec> layers_;   // config layers + implicit classifier fc
  std::vector<LayerShape> shapes_;  // shapes_[0] = input, shapes_[k+1] = after layer k
  // One (possibly empty) weight/bias per layer, index-aligned with layers_.
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;

  void conv_forward(std::size_t layer, const Matrix& in, Matrix& out) const;
  void conv_backward(std::size_t layer, const Matrix& in, const Matrix& out,
                     Matrix& d_out, Matrix& d_in, Matrix& d_w, Vector& d_b) const;
  void im2col(std::size_t layer, const Scalar* in_col, Matrix& k) const;
};

// SGD with momentum and weight decay:
//   v <- momentum * v - lr * (grad + decay * param);  param <- param + v
template <typename T, typename Scalar>
void sgd_update(std::vector<T>& params, const std::vector<T>& grads, std::vector<T>& velocity,
                Scalar lr, Scalar momentum, Scalar weight_decay) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() == 0) continue;
    velocity[k] = momentum * velocity[k] - lr * (grads[k] + weight_decay * params[k]);
    params[k] += velocity[k];
  }
}

struct TrainConfig {
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 128;
  long max_iterations = -1;  // -1: schedule.max_iterations
  std::uint64_t seed = 0;
  bool prefetch = false;  // assemble the next batch on a helper thread
};

struct LossTracePoint {
  long iteration = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossTracePoint> trace;
};

template <typename Scalar>
TrainResult train(NetworkT<Scalar>& net,
                  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& data,
                  const std::vector<int>& labels, const TrainConfig& cfg);

// Analytic vs central-difference gradients on sampled parameters (dropout
// never participates). Returns the max relative error.
template <typename Scalar>
double gradient_check(NetworkT<Scalar>& net,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& batch,
                      const std::vector<int>& labels, int samples_per_layer = 5,
                      double h = 1e-3, std::uint64_t seed = 42);

void save_loss_trace(const std::vector<LossTracePoint>& trace, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Implementation
// ---------------------------------------------------------------------------

inline NetConfig NetConfig::from_arch_string(const std::string& arch, int num_classes,
                                             int input_size, int input_channels) {
  NetConfig cfg;
  cfg.input_size = input_size;
  cfg.input_channels = input_channels;
  cfg.num_classes = num_classes;
  std::stringstream ss(arch);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    LayerSpec spec;
    const auto colon = token.find(':');
    const std::string head = token.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : token.substr(colon + 1);
    if (head == "conv") {
      spec.kind = LayerKind::Conv3x3;
      spec.units = std::stoi(arg);
      if (spec.units < 1) throw std::invalid_argument("conv needs positive channels");
    } else if (head == "pool") {
      spec.kind = LayerKind::MaxPool2;
    } else if (head == "avgpool") {
      spec.kind = LayerKind::AvgPool;
      spec.window = std::stoi(arg);
      if (spec.window < 1) throw std::invalid_argument("avgpool needs a positive window");
    } else if (head == "fc" || head == "linear") {
      spec.kind = LayerKind::FullyConnected;
      spec.units = std::stoi(arg);
      spec.relu = head == "fc";
      if (spec.units < 1) throw std::invalid_argument("fc needs a positive dimension");
    } else if (head == "dropout") {
      spec.kind = LayerKind::Dropout;
      spec.rate = std::stod(arg);
      if (spec.rate < 0.0 || spec.rate >= 1.0) {
        throw std::invalid_argument("dropout rate must be in [0, 1)");
      }
    } else {
      throw std::invalid_argument("unknown layer token '" + token + "'");
    }
    cfg.layers.push_back(spec);
  }
  if (cfg.layers.empty()) throw std::invalid_argument("empty architecture string");
  return cfg;
}

inline std::string NetConfig::arch_string() const {
  std::string out;
  for (const auto& spec : layers) {
    if (!out.empty()) out += ',';
    switch (spec.kind) {
      case LayerKind::Conv3x3: out += "conv:" + std::to_string(spec.units); break;
      case LayerKind::MaxPool2: out += "pool"; break;
      case LayerKind::AvgPool: out += "avgpool:" + std::to_string(spec.window); break;
      case LayerKind::FullyConnected:
        out += (spec.relu ? "fc:" : "linear:") + std::to_string(spec.units);
        break;
      case LayerKind::Dropout: {
        std::ostringstream ss;
        ss << "dropout:" << spec.rate;
        out += ss.str();
        break;
      }
    }
  }
  return out;
}

inline NetConfig NetConfig::cnn_s(int num_classes, int input_size, int input_channels) {
  return from_arch_string("conv:16,conv:16,pool,conv:32,pool,conv:48,pool,fc:160",
                          num_classes, input_size, input_channels);
}

inline NetConfig NetConfig::cnn_l(int num_classes, int input_size, int input_channels) {
  return from_arch_string(
      "conv:32,conv:64,pool,conv:64,conv:128,pool,conv:96,conv:192,pool,"
      "conv:128,conv:256,pool,conv:160,conv:320,avgpool:7,dropout:0.4",
      num_classes, input_size, input_channels);
}

template <typename Scalar>
NetworkT<Scalar>::NetworkT(NetConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed) {
  if (config_.num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  layers_ = config_.layers;
  LayerSpec classifier;
  classifier.kind = LayerKind::FullyConnected;
  classifier.units = config_.num_classes;
  classifier.relu = false;
  layers_.push_back(classifier);

  shapes_.push_back(LayerShape{config_.input_channels, config_.input_size, config_.input_size});
  for (const auto& spec : layers_) {
    const LayerShape in = shapes_.back();
    LayerShape out = in;
    switch (spec.kind) {
      case LayerKind::Conv3x3:
        if (spec.units <= 0) throw std::invalid_argument("conv needs positive channels");
        out.channels = spec.units;
        break;
      case LayerKind::MaxPool2:
        out.height = (in.height + 1) / 2;  // ceil mode
        out.width = (in.width + 1) / 2;
        break;
      case LayerKind::AvgPool:
        if (spec.window <= 0 || spec.window > in.height || spec.window > in.width) {
          throw std::invalid_argument("avgpool window does not fit its input");
        }
        out.height = in.height - spec.window + 1;
        out.width = in.width - spec.window + 1;
        break;
      case LayerKind::FullyConnected:
        if (spec.units <= 0) throw std::invalid_argument("fc needs positive dim");
        out = LayerShape{spec.units, 1, 1};
        break;
      case LayerKind::Dropout:
        if (spec.rate < 0.0 || spec.rate >= 1.0) {
          throw std::invalid_argument("dropout rate must be in [0, 1)");
        }
        break;
    }
    if (out.height <= 0 || out.width <= 0) {
      throw std::invalid_argument("layer shrinks spatial size to zero");
    }
    shapes_.push_back(out);
  }

  // He fan-in initialization for hidden layers, small normal for the
  // classifier so the initial softmax is near-uniform.
  weights_.resize(layers_.size());
  biases_.resize(layers_.size());
  CounterRng gen(seed_, 0xface);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& spec = layers_[k];
    const LayerShape& in = shapes_[k];
    if (spec.kind == LayerKind::Conv3x3) {
      const long fan_in = 9L * in.channels;
      const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
      weights_[k].resize(spec.units, fan_in);
      for (long c = 0; c < weights_[k].cols(); ++c) {
        for (long r = 0; r < weights_[k].rows(); ++r) {
          weights_[k](r, c) = static_cast<Scalar>(std_dev * gen.next_normal());
        }
      }
      biases_[k] = Vector::Zero(spec.units);
    } else if (spec.kind == LayerKind::FullyConnected) {
      const long fan_in = in.flat();
      const bool classifier_layer = k + 1 == layers_.size();
      const double std_dev =
          classifier_layer ? 0.01 : std::sqrt(2.0 / static_cast<double>(fan_in));
      weights_[k].resize(spec.units, fan_in);
      for (long c = 0; c < weights_[k].cols(); ++c) {
        for (long r = 0; r < weights_[k].rows(); ++r) {
          weights_[k](r, c) = static_cast<Scalar>(std_dev * gen.next_normal());
        }
      }
      biases_[k] = Vector::Zero(spec.units);
    }
  }
}

template <typename Scalar>
void NetworkT<Scalar>::im2col(std::size_t layer, const Scalar* in_col, Matrix& k) const {
  const LayerShape& in = shapes_[layer];
  const int h = in.height;
  const int w = in.width;
  const long hw = static_cast<long>(h) * w;
  k.resize(hw, 9L * in.channels);
  for (int ci = 0; ci < in.channels; ++ci) {
    const Scalar* plane = in_col + static_cast<long>(ci) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const long col = static_cast<long>(ci) * 9 + ky * 3 + kx;
        Scalar* dst = k.data() + col * hw;
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int y = 0; y < h; ++y) {
          Scalar* row_dst = dst + static_cast<long>(y) * w;
          const int yy = y + dy;
          if (yy < 0 || yy >= h) {
            std::fill(row_dst, row_dst + w, Scalar(0));
            continue;
          }
          const Scalar* row_src = plane + static_cast<long>(yy) * w;
          const int x_lo = std::max(0, -dx);
          const int x_hi = std::min(w, w - dx);
          if (x_lo > 0) std::fill(row_dst, row_dst + x_lo, Scalar(0));
          if (x_hi > x_lo) std::copy(row_src + x_lo + dx, row_src + x_hi + dx, row_dst + x_lo);
          if (x_hi < w) std::fill(row_dst + x_hi, row_dst + w, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void NetworkT<Scalar>::conv_forward(std::size_t layer, const Matrix& in, Matrix& out) const {
  const LayerShape& sin = shapes_[layer];
  const LayerShape& sout = shapes_[layer + 1];
  const long hw = static_cast<long>(sin.height) * sin.width;
  const long batch = in.cols();
  out.resize(sout.flat(), batch);
  Matrix k;
  for (long s = 0; s < batch; ++s) {
    im2col(layer, in.col(s).data(), k);
    Eigen::Map<Matrix> out_map(out.col(s).data(), hw, sout.channels);
    out_map.noalias() = k * weights_[layer].transpose();
    out_map.rowwise() += biases_[layer].transpose();
  }
  if (layers_[layer].relu) out = out.cwiseMax(Scalar(0));
}

template <typename Scalar>
void NetworkT<Scalar>::conv_backward(std::size_t layer, const Matrix& in, const Matrix& out,
                                     Matrix& d_out, Matrix& d_in, Matrix& d_w,
                                     Vector& d_b) const {
  const LayerShape& sin = shapes_[layer];
  const LayerShape& sout = shapes_[layer + 1];
  const long hw = static_cast<long>(sin.height) * sin.width;
  const long batch = in.cols();
  if (layers_[layer].relu) {
    d_out.array() *= (out.array() > Scalar(0)).template cast<Scalar>();
  }
  d_in.setZero(sin.flat(), batch);
  d_w.setZero(weights_[layer].rows(), weights_[layer].cols());
  d_b.setZero(biases_[layer].size());
  Matrix k, dk;
  const int h = sin.height;
  const int w = sin.width;
  for (long s = 0; s < batch; ++s) {
    im2col(layer, in.col(s).data(), k);
    Eigen::Map<const Matrix> dout_map(d_out.col(s).data(), hw, sout.channels);
    d_w.noalias() += dout_map.transpose() * k;
    d_b.noalias() += dout_map.colwise().sum().transpose();
    dk.noalias() = dout_map * weights_[layer];
    // col2im: scatter-add each shifted column back into the input gradient.
    Scalar* din_col = d_in.col(s).data();
    for (int ci = 0; ci < sin.channels; ++ci) {
      Scalar* plane = din_col + static_cast<long>(ci) * hw;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const long col = static_cast<long>(ci) * 9 + ky * 3 + kx;
          const Scalar* src = dk.data() + col * hw;
          const int dy = ky - 1;
          const int dx = kx - 1;
          for (int y = 0; y < h; ++y) {
            const int yy = y + dy;
            if (yy < 0 || yy >= h) continue;
            const int x_lo = std::max(0, -dx);
            const int x_hi = std::min(w, w - dx);
            const Scalar* src_row = src + static_cast<long>(y) * w;
            Scalar* dst_row = plane + static_cast<long>(yy) * w + dx;
            for (int x = x_lo; x < x_hi; ++x) dst_row[x] += src_row[x];
          }
        }
      }
    }
  }
}

template <typename Scalar>
double NetworkT<Scalar>::forward(const Matrix& batch, const std::vector<int>* labels,
                                 bool train_mode, std::uint64_t dropout_counter,
                                 ForwardState& state) const {
  if (batch.rows() != input_dim()) {
    throw std::invalid_argument("forward: input dimension mismatch");
  }
  const long bsz = batch.cols();
  state.input = batch;
  state.activations.assign(layers_.size(), Matrix());
  state.pool_argmax.assign(layers_.size(), Eigen::MatrixXi());
  state.dropout_mask.assign(layers_.size(), Matrix());

  const Matrix* cur = &state.input;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& spec = layers_[k];
    const LayerShape& sin = shapes_[k];
    const LayerShape& sout = shapes_[k + 1];
    Matrix& out = state.activations[k];
    switch (spec.kind) {
      case LayerKind::Conv3x3:
        conv_forward(k, *cur, out);
        break;
      case LayerKind::MaxPool2: {
        const int h = sin.height, w = sin.width;
        const int oh = sout.height, ow = sout.width;
        const long ihw = static_cast<long>(h) * w;
        const long ohw = static_cast<long>(oh) * ow;
        out.resize(sout.flat(), bsz);
        auto& amax = state.pool_argmax[k];
        amax.resize(sout.flat(), bsz);
        for (long s = 0; s < bsz; ++s) {
          const Scalar* in_col = cur->col(s).data();
          Scalar* out_col = out.col(s).data();
          int* amax_col = amax.col(s).data();
          for (int c = 0; c < sin.channels; ++c) {
            const Scalar* plane = in_col + c * ihw;
            Scalar* oplane = out_col + c * ohw;
            int* aplane = amax_col + c * ohw;
            for (int oy = 0; oy < oh; ++oy) {
              const int y0 = 2 * oy;
              const int y1 = std::min(y0 + 2, h);
              for (int ox = 0; ox < ow; ++ox) {
                const int x0 = 2 * ox;
                const int x1 = std::min(x0 + 2, w);
                Scalar best = plane[static_cast<long>(y0) * w + x0];
                int best_idx = y0 * w + x0;
                for (int y = y0; y < y1; ++y) {
                  for (int x = x0; x < x1; ++x) {
                    const Scalar v = plane[static_cast<long>(y) * w + x];
                    if (v > best) {
                      best = v;
                      best_idx = y * w + x;
                    }
                  }
                }
                oplane[static_cast<long>(oy) * ow + ox] = best;
                aplane[static_cast<long>(oy) * ow + ox] = best_idx;
              }
            }
          }
        }
        break;
      }
      case LayerKind::AvgPool: {
        const int h = sin.height, w = sin.width;
        const int oh = sout.height, ow = sout.width;
        const int win = spec.window;
        const Scalar inv = Scalar(1) / static_cast<Scalar>(win * win);
        const long ihw = static_cast<long>(h) * w;
        const long ohw = static_cast<long>(oh) * ow;
        out.resize(sout.flat(), bsz);
        for (long s = 0; s < bsz; ++s) {
          const Scalar* in_col = cur->col(s).data();
          Scalar* out_col = out.col(s).data();
          for (int c = 0; c < sin.channels; ++c) {
            const Scalar* plane = in_col + c * ihw;
            Scalar* oplane = out_col + c * ohw;
            for (int oy = 0; oy < oh; ++oy) {
              for (int ox = 0; ox < ow; ++ox) {
                Scalar acc = 0;
                for (int y = oy; y < oy + win; ++y) {
                  for (int x = ox; x < ox + win; ++x) acc += plane[static_cast<long>(y) * w + x];
                }
                oplane[static_cast<long>(oy) * ow + ox] = acc * inv;
              }
            }
          }
        }
        break;
      }
      case LayerKind::FullyConnected:
        out.noalias() = weights_[k] * (*cur);
        out.colwise() += biases_[k];
        if (spec.relu) out = out.cwiseMax(Scalar(0));
        break;
      case LayerKind::Dropout: {
        out = *cur;
        if (train_mode && spec.rate > 0.0) {
          auto& mask = state.dropout_mask[k];
          mask.resize(out.rows(), out.cols());
          const double keep = 1.0 - spec.rate;
          const std::uint64_t threshold = detail::dropout_threshold(keep);
          const auto scale = static_cast<Scalar>(1.0 / keep);
          const std::uint64_t stream = 0xd70u + static_cast<std::uint64_t>(k);
          for (long c = 0; c < out.cols(); ++c) {
            for (long r = 0; r < out.rows(); ++r) {
              const std::uint64_t key = rng::hash(
                  seed_ ^ stream, dropout_counter,
                  static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(out.rows()) +
                      static_cast<std::uint64_t>(r));
              mask(r, c) = key < threshold ? scale : Scalar(0);
            }
          }
          out.array() *= mask.array();
        }
        break;
      }
    }
    cur = &out;
  }

  if (!labels) return 0.0;
  if (static_cast<long>(labels->size()) != bsz) {
    throw std::invalid_argument("forward: label count does not match batch");
  }
  const Matrix& logits_out = state.activations.back();
  state.probs.resize(logits_out.rows(), logits_out.cols());
  double loss = 0.0;
  for (long s = 0; s < bsz; ++s) {
    const int label = (*labels)[static_cast<std::size_t>(s)];
    if (label < 0 || label >= config_.num_classes) {
      throw std::invalid_argument("label out of range");
    }
    const auto col = logits_out.col(s);
    const double maxv = static_cast<double>(col.maxCoeff());
    double denom = 0.0;
    for (long r = 0; r < col.size(); ++r) denom += std::exp(static_cast<double>(col(r)) - maxv);
    for (long r = 0; r < col.size(); ++r) {
      state.probs(r, s) =
          static_cast<Scalar>(std::exp(static_cast<double>(col(r)) - maxv) / denom);
    }
    loss -= std::log(static_cast<double>(state.probs(label, s)) + 1e-300);
  }
  return loss / static_cast<double>(bsz);
}

template <typename Scalar>
typename NetworkT<Scalar>::Matrix NetworkT<Scalar>::features(const Matrix& batch) const {
  ForwardState state;
  forward(batch, nullptr, false, 0, state);
  return state.activations[state.activations.size() - 2];
}

template <typename Scalar>
typename NetworkT<Scalar>::Matrix NetworkT<Scalar>::logits(const Matrix& batch) const {
  ForwardState state;
  forward(batch, nullptr, false, 0, state);
  return state.activations.back();
}

template <typename Scalar>
typename NetworkT<Scalar>::Gradients NetworkT<Scalar>::zero_gradients() const {
  Gradients g;
  g.weights.resize(layers_.size());
  g.biases.resize(layers_.size());
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    if (weights_[k].size() > 0) {
      g.weights[k] = Matrix::Zero(weights_[k].rows(), weights_[k].cols());
      g.biases[k] = Vector::Zero(biases_[k].size());
    }
  }
  return g;
}

template <typename Scalar>
void NetworkT<Scalar>::backward(const ForwardState& state, const std::vector<int>& labels,
                                Gradients& grads) const {
  const long bsz = state.input.cols();
  const auto inv_b = static_cast<Scalar>(1.0 / static_cast<double>(bsz));

  // d(mean CE)/d(logits) = (softmax - onehot) / batch
  Matrix delta = state.probs * inv_b;
  for (long s = 0; s < bsz; ++s) {
    delta(labels[static_cast<std::size_t>(s)], s) -= inv_b;
  }

  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& spec = layers_[k];
    const Matrix& in = k == 0 ? state.input : state.activations[k - 1];
    const Matrix& out = state.activations[k];
    const LayerShape& sin = shapes_[k];
    const LayerShape& sout = shapes_[k + 1];
    Matrix next_delta;
    switch (spec.kind) {
      case LayerKind::Conv3x3:
        conv_backward(k, in, out, delta, next_delta, grads.weights[k], grads.biases[k]);
        break;
      case LayerKind::MaxPool2: {
        next_delta.setZero(sin.flat(), bsz);
        const auto& amax = state.pool_argmax[k];
        const long ohw = static_cast<long>(sout.height) * sout.width;
        const long ihw = static_cast<long>(sin.height) * sin.width;
        for (long s = 0; s < bsz; ++s) {
          const Scalar* dcol = delta.col(s).data();
          const int* acol = amax.col(s).data();
          Scalar* ncol = next_delta.col(s).data();
          for (int c = 0; c < sin.channels; ++c) {
            for (long p = 0; p < ohw; ++p) {
              ncol[c * ihw + acol[c * ohw + p]] += dcol[c * ohw + p];
            }
          }
        }
        break;
      }
      case LayerKind::AvgPool: {
        next_delta.setZero(sin.flat(), bsz);
        const int win = spec.window;
        const auto inv = Scalar(1) / static_cast<Scalar>(win * win);
        const long ohw = static_cast<long>(sout.height) * sout.width;
        const long ihw = static_cast<long>(sin.height) * sin.width;
        const int ow = sout.width;
        const int w = sin.width;
        for (long s = 0; s < bsz; ++s) {
          const Scalar* dcol = delta.col(s).data();
          Scalar* ncol = next_delta.col(s).data();
          for (int c = 0; c < sin.channels; ++c) {
            for (int oy = 0; oy < sout.height; ++oy) {
              for (int ox = 0; ox < ow; ++ox) {
                const Scalar g = dcol[c * ohw + static_cast<long>(oy) * ow + ox] * inv;
                for (int y = oy; y < oy + win; ++y) {
                  for (int x = ox; x < ox + win; ++x) {
                    ncol[c * ihw + static_cast<long>(y) * w + x] += g;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::FullyConnected: {
        Matrix d = delta;
        if (spec.relu) {
          d.array() *= (out.array() > Scalar(0)).template cast<Scalar>();
        }
        grads.weights[k].noalias() = d * in.transpose();
        grads.biases[k].noalias() = d.rowwise().sum();
        next_delta.noalias() = weights_[k].transpose() * d;
        break;
      }
      case LayerKind::Dropout: {
        next_delta = delta;
        if (state.dropout_mask[k].size() > 0) {
          next_delta.array() *= state.dropout_mask[k].array();
        }
        break;
      }
    }
    delta = std::move(next_delta);
  }
}

template <typename Scalar>
TrainResult train(NetworkT<Scalar>& net,
                  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& data,
                  const std::vector<int>& labels, const TrainConfig& cfg) {
  using Matrix = typename NetworkT<Scalar>::Matrix;
  if (data.cols() != static_cast<long>(labels.size())) {
    throw std::invalid_argument("train: data/label count mismatch");
  }
  if (data.cols() == 0) throw std::invalid_argument("train: empty dataset");
  for (int label : labels) {
    if (label < 0 || label >= net.num_classes()) {
      throw std::invalid_argument("train: label out of range");
    }
  }
  const long n = data.cols();
  const long max_iters =
      cfg.max_iterations >= 0 ? cfg.max_iterations : cfg.schedule.max_iterations;
  const long bsz = std::min<long>(cfg.batch_size, n);

  // Seeded epoch shuffles; batch composition is independent of threading.
  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  long cursor = 0;
  std::uint64_t epoch = 0;
  const auto reshuffle = [&]() {
    CounterRng gen(cfg.seed, 0xe90c + epoch);
    for (std::size_t k = order.size(); k > 1; --k) {
      std::swap(order[k - 1], order[gen.next_below(k)]);
    }
    ++epoch;
    cursor = 0;
  };
  reshuffle();

  const auto assemble = [&](Matrix& batch, std::vector<int>& batch_labels) {
    batch.resize(data.rows(), bsz);
    batch_labels.resize(static_cast<std::size_t>(bsz));
    for (long s = 0; s < bsz; ++s) {
      if (cursor >= n) reshuffle();
      const long idx = order[static_cast<std::size_t>(cursor++)];
      batch.col(s) = data.col(idx);
      batch_labels[static_cast<std::size_t>(s)] = labels[static_cast<std::size_t>(idx)];
    }
  };

  TrainResult result;
  result.trace.reserve(static_cast<std::size_t>(max_iters));

  auto grads = net.zero_gradients();
  std::vector<Matrix> velocity_w(net.weights().size());
  std::vector<typename NetworkT<Scalar>::Vector> velocity_b(net.biases().size());
  for (std::size_t k = 0; k < net.weights().size(); ++k) {
    if (net.weights()[k].size() > 0) {
      velocity_w[k].setZero(net.weights()[k].rows(), net.weights()[k].cols());
      velocity_b[k].setZero(net.biases()[k].size());
    }
  }

  typename NetworkT<Scalar>::ForwardState state;
  Matrix batch, batch_next;
  std::vector<int> batch_labels, batch_labels_next;
  assemble(batch, batch_labels);

  for (long iter = 0; iter < max_iters; ++iter) {
    const double lr = cfg.schedule.lr_at(iter);
    const double loss =
        net.forward(batch, &batch_labels, true, static_cast<std::uint64_t>(iter), state);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("training diverged (non-finite loss) at iteration " +
                               std::to_string(iter));
    }
    result.trace.push_back(LossTracePoint{iter, lr, loss});

    std::thread prefetcher;
    if (cfg.prefetch && iter + 1 < max_iters) {
      prefetcher = std::thread([&]() { assemble(batch_next, batch_labels_next); });
    }

    net.backward(state, batch_labels, grads);
    sgd_update(net.weights(), grads.weights, velocity_w, static_cast<Scalar>(lr),
               static_cast<Scalar>(cfg.momentum), static_cast<Scalar>(cfg.weight_decay));
    sgd_update(net.biases(), grads.biases, velocity_b, static_cast<Scalar>(lr),
               static_cast<Scalar>(cfg.momentum), static_cast<Scalar>(cfg.weight_decay));

    if (prefetcher.joinable()) {
      prefetcher.join();
      std::swap(batch, batch_next);
      std::swap(batch_labels, batch_labels_next);
    } else if (iter + 1 < max_iters) {
      assemble(batch, batch_labels);
    }
  }
  return result;
}

template <typename Scalar>
double gradient_check(NetworkT<Scalar>& net,
                      const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& batch,
                      const std::vector<int>& labels, int samples_per_layer, double h,
                      std::uint64_t seed) {
  typename NetworkT<Scalar>::ForwardState state;
  auto grads = net.zero_gradients();
  net.forward(batch, &labels, false, 0, state);
  net.backward(state, labels, grads);

  const auto loss_at = [&]() {
    typename NetworkT<Scalar>::ForwardState s;
    return net.forward(batch, &labels, false, 0, s);
  };

  CounterRng gen(seed, 0x9cad);
  double max_rel = 0.0;
  const auto probe = [&](Scalar& param, double analytic) {
    const Scalar saved = param;
    param = saved + static_cast<Scalar>(h);
    const double up = loss_at();
    param = saved - static_cast<Scalar>(h);
    const double down = loss_at();
    param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-8);
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
  };

  for (std::size_t k = 0; k < net.weights().size(); ++k) {
    auto& w = net.weights()[k];
    if (w.size() == 0) continue;
    for (int s = 0; s < samples_per_layer; ++s) {
      const long idx = static_cast<long>(gen.next_below(static_cast<std::uint64_t>(w.size())));
      probe(w.data()[idx], static_cast<double>(grads.weights[k].data()[idx]));
    }
    auto& b = net.biases()[k];
    for (int s = 0; s < std::min<int>(samples_per_layer, static_cast<int>(b.size())); ++s) {
      const long idx = static_cast<long>(gen.next_below(static_cast<std::uint64_t>(b.size())));
      probe(b.data()[idx], static_cast<double>(grads.biases[k].data()[idx]));
    }
  }
  return max_rel;
}

inline void save_loss_trace(const std::vector<LossTracePoint>& trace,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write loss trace: " + path.string());
  out << "iteration,lr,loss\n";
  char buf[96];
  for (const auto& p : trace) {
    std::snprintf(buf, sizeof(buf), "%ld,%.10g,%.10g\n", p.iteration, p.lr, p.loss);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, dims, arch string, float32 parameter blobs.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v & 0xffffffffull));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

}  // namespace detail

template <typename Scalar>
void NetworkT<Scalar>::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path.string());
  os.write("FSNT", 4);
  detail::put_u32(os, 1);  // version
  detail::put_u64(os, seed_);
  detail::put_u32(os, static_cast<std::uint32_t>(config_.input_size));
  detail::put_u32(os, static_cast<std::uint32_t>(config_.input_channels));
  detail::put_u32(os, static_cast<std::uint32_t>(config_.num_classes));
  const std::string arch = config_.arch_string();
  detail::put_u32(os, static_cast<std::uint32_t>(arch.size()));
  os.write(arch.data(), static_cast<std::streamsize>(arch.size()));
  std::uint32_t blobs = 0;
  for (const auto& w : weights_) {
    if (w.size() > 0) blobs += 2;
  }
  detail::put_u32(os, blobs);
  const auto write_blob = [&os](const Scalar* data, long n) {
    for (long i = 0; i < n; ++i) {
      const auto v = static_cast<float>(data[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(os, bits);
    }
  };
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    if (weights_[k].size() == 0) continue;
    detail::put_u32(os, static_cast<std::uint32_t>(weights_[k].rows()));
    detail::put_u32(os, static_cast<std::uint32_t>(weights_[k].cols()));
    write_blob(weights_[k].data(), weights_[k].size());
    detail::put_u32(os, static_cast<std::uint32_t>(biases_[k].size()));
    detail::put_u32(os, 1);
    write_blob(biases_[k].data(), biases_[k].size());
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
}

template <typename Scalar>
NetworkT<Scalar> NetworkT<Scalar>::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FSNT", 4) != 0) {
    throw std::runtime_error("bad checkpoint magic: " + path.string());
  }
  const std::uint32_t version = detail::get_u32(is);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  const std::uint64_t seed = detail::get_u64(is);
  const auto input_size = static_cast<int>(detail::get_u32(is));
  const auto input_channels = static_cast<int>(detail::get_u32(is));
  const auto num_classes = static_cast<int>(detail::get_u32(is));
  const std::uint32_t arch_len = detail::get_u32(is);
  std::string arch(arch_len, '\0');
  is.read(arch.data(), arch_len);
  NetConfig cfg = NetConfig::from_arch_string(arch, num_classes, input_size, input_channels);
  NetworkT net(cfg, seed);
  const std::uint32_t blobs = detail::get_u32(is);
  std::uint32_t consumed = 0;
  const auto read_blob = [&is](Scalar* data, long n) {
    for (long i = 0; i < n; ++i) {
      const std::uint32_t bits = detail::get_u32(is);
      float v;
      std::memcpy(&v, &bits, 4);
      data[i] = static_cast<Scalar>(v);
    }
  };
  for (std::size_t k = 0; k < net.weights_.size(); ++k) {
    if (net.weights_[k].size() == 0) continue;
    const auto rows = static_cast<long>(detail::get_u32(is));
    const auto cols = static_cast<long>(detail::get_u32(is));
    if (rows != net.weights_[k].rows() || cols != net.weights_[k].cols()) {
      throw std::runtime_error("checkpoint weight shape mismatch");
    }
    read_blob(net.weights_[k].data(), net.weights_[k].size());
    const auto brows = static_cast<long>(detail::get_u32(is));
    const auto bcols = static_cast<long>(detail::get_u32(is));
    if (brows != net.biases_[k].size() || bcols != 1) {
      throw std::runtime_error("checkpoint bias shape mismatch");
    }
    read_blob(net.biases_[k].data(), net.biases_[k].size());
    consumed += 2;
  }
  if (consumed != blobs || !is) throw std::runtime_error("truncated checkpoint");
  return net;
}

}  // namespace facesynth

#endif  // FACESYNTH_NET_HPP
