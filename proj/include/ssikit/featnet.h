// include/ssikit/featnet.h

// Copyright 2026  The ssikit Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssikit/core.h"
#include "ssikit/corpus.h"

namespace ssikit::featnet {

// conv -> ReLU -> pool -> conv -> ReLU -> pool -> flatten -> batchnorm ->
// 4 hidden FC + ReLU -> FC(n_classes). Valid convolutions, floor pooling.
struct FeatNetConfig {
  int channels = 7;
  int height = 64;
  int width = 128;
  int conv_kernel = 10;
  std::array<int, 2> conv_filters = {64, 128};
  int pool = 2;
  std::array<int, 4> fc_dims = {1024, 512, 128, 512};
  int n_classes = 49;
  double lr = 0.001;
  int epochs = 30;
  int batch_size = 256;
  double l2_weight = 0.1;
  std::uint64_t seed = 0;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;
  int max_samples_per_epoch = 0;   // 0: all
  int max_validation_samples = 0;  // 0: all

  static FeatNetConfig Full();
  /// 7x16x32 input, 3x3 kernels, narrow layers, 16-wide bottleneck.
  static FeatNetConfig Desk();

  void Validate() const;
  int input_size() const { return channels * height * width; }
  int bottleneck_dim() const { return fc_dims[2]; }

  // Spatial sizes after each conv (c) and pool (p) stage.
  int conv1_h() const { return height - conv_kernel + 1; }
  int conv1_w() const { return width - conv_kernel + 1; }
  int pool1_h() const { return conv1_h() / pool; }
  int pool1_w() const { return conv1_w() / pool; }
  int conv2_h() const { return pool1_h() - conv_kernel + 1; }
  int conv2_w() const { return pool1_w() - conv_kernel + 1; }
  int pool2_h() const { return conv2_h() / pool; }
  int pool2_w() const { return conv2_w() / pool; }
  int flat_size() const { return conv_filters[1] * pool2_h() * pool2_w(); }

  nlohmann::json ToJson() const;
  static FeatNetConfig FromJson(const nlohmann::json& j);
};

template <typename Scalar>
using Tensor = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Tensor slots, in checkpoint order.
enum TensorIndex : int {
  kConv1W = 0,  // filters x (channels * k * k)
  kConv1B,      // filters x 1
  kConv2W,
  kConv2B,
  kBnGamma,     // flat x 1
  kBnBeta,
  kBnMean,
  kBnVar,
  kFcBegin,     // then W (out x in), b (out x 1) for 5 layers
};
inline constexpr int kNumFc = 5;
inline constexpr int kNumTensors = kFcBegin + 2 * kNumFc;
constexpr int FcW(int layer) { return kFcBegin + 2 * layer; }
constexpr int FcB(int layer) { return kFcBegin + 2 * layer + 1; }

std::string TensorName(int index);
bool IsTrainable(int index);
bool IsWeight(int index);  // subject to L2

template <typename Scalar>
struct FeatNetParams {
  FeatNetConfig config;
  std::vector<Tensor<Scalar>> tensors;  // kNumTensors
  corpus::Normalizer normalizer;

  /// Throws DataError on shape mismatch or non-positive running variance.
  void Validate() const;
  std::size_t num_trainable() const;

  template <typename To>
  FeatNetParams<To> Cast() const {
    FeatNetParams<To> out;
    out.config = config;
    out.normalizer = normalizer;
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<To>());
    return out;
  }
};

/// He-style: weights N(0, 2 / fan_in), zero biases, unit batch-norm scale.
template <typename Scalar>
FeatNetParams<Scalar> InitParams(const FeatNetConfig& config, std::uint64_t seed);

template <typename Scalar>
struct ForwardOutput {
  Tensor<Scalar> logits;      // batch x n_classes
  Tensor<Scalar> bottleneck;  // batch x fc_dims[2]
};

/// Rows of `batch` are samples laid out channel-major (c, row, col).
/// Train mode uses batch statistics and updates the running moments.
template <typename Scalar>
ForwardOutput<Scalar> Forward(FeatNetParams<Scalar>& params, const Tensor<Scalar>& batch,
                              bool train_mode);
template <typename Scalar>
ForwardOutput<Scalar> Infer(const FeatNetParams<Scalar>& params, const Tensor<Scalar>& batch);

/// Row-wise softmax.
template <typename Scalar>
Tensor<Scalar> Softmax(const Tensor<Scalar>& logits);

struct LossOptions {
  bool update_running = true;
  std::uint64_t* activation_pattern = nullptr;  // hash of ReLU signs and pool choices
};

/// Mean cross-entropy plus l2_weight / 2 * sum of squared weights, in train
/// mode. Fills `grads` (one tensor per slot; zero for running moments).
template <typename Scalar>
Scalar LossAndGradient(FeatNetParams<Scalar>& params, const Tensor<Scalar>& batch,
                       const std::vector<int>& labels, std::vector<Tensor<Scalar>>* grads,
                       const LossOptions& options = {});

/// Plain SGD step on one minibatch; returns the loss before the step.
template <typename Scalar>
Scalar SgdStep(FeatNetParams<Scalar>& params, const Tensor<Scalar>& batch,
               const std::vector<int>& labels);

template <typename Scalar>
struct SampleSet {
  std::vector<int> labels;
  std::function<void(std::size_t, Scalar*)> fill;  // writes one input row

  std::size_t size() const { return labels.size(); }
};

template <typename Scalar>
SampleSet<Scalar> MatrixSamples(Tensor<Scalar> inputs, std::vector<int> labels);

/// One sample per labelled frame; windows are clamped at sequence edges and
/// pixels normalised on the fly.
template <typename Scalar>
SampleSet<Scalar> WindowedSamples(
    std::vector<std::shared_ptr<const corpus::FrameSequence>> sequences,
    const std::vector<std::vector<std::uint16_t>>& labels, const corpus::Normalizer& norm);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_accuracy = 0.0;
};

template <typename Scalar>
struct TrainResult {
  FeatNetParams<Scalar> best;
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
};

/// Minibatch SGD; keeps the epoch with the highest validation accuracy
/// (earliest on ties). Throws NumericError on a non-finite loss.
template <typename Scalar>
TrainResult<Scalar> TrainSgd(FeatNetParams<Scalar> params, const SampleSet<Scalar>& train,
                             const SampleSet<Scalar>& validation);

template <typename Scalar>
double Accuracy(const FeatNetParams<Scalar>& params, const SampleSet<Scalar>& samples,
                std::size_t limit = 0);

/// One bottleneck vector per frame. The sequence must already match the
/// configured frame size; normalisation is applied here.
template <typename Scalar>
FeatureMatrix ExtractBottleneck(const FeatNetParams<Scalar>& params,
                                const corpus::FrameSequence& seq, int batch_size = 256);

struct GradientCheckOptions {
  double epsilon = 1e-3;
  int coordinates = 256;
  std::uint64_t seed = 0;
  int corrupt_tensor = -1;       // scale this slot's analytic gradient
  double corrupt_factor = 1.01;
};

struct GradientCheckResult {
  double max_relative_error = 0.0;
  int checked = 0;
  int skipped = 0;  // perturbation crossed a ReLU or pooling switch
};

/// Central differences (fourth-order stencil) on randomly drawn trainable
/// coordinates; probes whose perturbation flips a ReLU or pooling choice are
/// skipped. Relative error is |a - n| / max(|a| + |n|, 1e-8).
GradientCheckResult GradientCheck(FeatNetParams<double> params, const Tensor<double>& batch,
                                  const std::vector<int>& labels,
                                  const GradientCheckOptions& options = {});

/// "FNET", u32 header length, JSON header, f32 tensors in slot order.
template <typename Scalar>
void SaveCheckpoint(const std::filesystem::path& path, const FeatNetParams<Scalar>& params);
template <typename Scalar>
FeatNetParams<Scalar> LoadCheckpoint(const std::filesystem::path& path);

}  // namespace ssikit::featnet
