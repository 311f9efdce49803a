// src/featnet.cc

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

#include "ssikit/featnet.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace ssikit::featnet {

namespace fs = std::filesystem;

// ---- config --------------------------------------------------------------------

FeatNetConfig FeatNetConfig::Full() { return {}; }

FeatNetConfig FeatNetConfig::Desk() {
  FeatNetConfig c;
  c.height = 16;
  c.width = 32;
  c.conv_kernel = 3;
  c.conv_filters = {8, 16};
  c.fc_dims = {128, 64, 16, 64};
  c.n_classes = 8;
  c.lr = 0.05;
  c.epochs = 8;
  c.batch_size = 64;
  c.l2_weight = 1e-4;
  c.max_samples_per_epoch = 12000;
  c.max_validation_samples = 4000;
  return c;
}

void FeatNetConfig::Validate() const {
  if (channels < 1 || height < 1 || width < 1)
    throw DataError("featnet: input shape must be positive");
  if (conv_kernel < 1 || pool < 1) throw DataError("featnet: kernel and pool must be >= 1");
  for (int f : conv_filters)
    if (f < 1) throw DataError("featnet: conv filter counts must be >= 1");
  for (int d : fc_dims)
    if (d < 1) throw DataError("featnet: fc widths must be >= 1");
  if (n_classes < 2) throw DataError("featnet: need at least 2 classes");
  if (conv1_h() < 1 || conv1_w() < 1 || pool1_h() < 1 || pool1_w() < 1 || conv2_h() < 1 ||
      conv2_w() < 1 || pool2_h() < 1 || pool2_w() < 1)
    throw DataError("featnet: input " + std::to_string(height) + "x" + std::to_string(width) +
                    " too small for kernel " + std::to_string(conv_kernel) + " and pool " +
                    std::to_string(pool));
  if (!(lr >= 0) || epochs < 0 || batch_size < 1 || !(l2_weight >= 0))
    throw DataError("featnet: invalid training hyperparameters");
  if (!(bn_epsilon > 0) || !(bn_momentum >= 0 && bn_momentum <= 1))
    throw DataError("featnet: invalid batch-norm settings");
}

nlohmann::json FeatNetConfig::ToJson() const {
  return {{"channels", channels},
          {"height", height},
          {"width", width},
          {"conv_kernel", conv_kernel},
          {"conv_filters", conv_filters},
          {"pool", pool},
          {"fc_dims", fc_dims},
          {"n_classes", n_classes},
          {"lr", lr},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"l2_weight", l2_weight},
          {"seed", seed},
          {"bn_epsilon", bn_epsilon},
          {"bn_momentum", bn_momentum},
          {"max_samples_per_epoch", max_samples_per_epoch},
          {"max_validation_samples", max_validation_samples}};
}

FeatNetConfig FeatNetConfig::FromJson(const nlohmann::json& j) {
  FeatNetConfig c;
  try {
    c.channels = j.value("channels", c.channels);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
    c.conv_filters = j.value("conv_filters", c.conv_filters);
    c.pool = j.value("pool", c.pool);
    c.fc_dims = j.value("fc_dims", c.fc_dims);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.l2_weight = j.value("l2_weight", c.l2_weight);
    c.seed = j.value("seed", c.seed);
    c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.max_samples_per_epoch = j.value("max_samples_per_epoch", c.max_samples_per_epoch);
    c.max_validation_samples = j.value("max_validation_samples", c.max_validation_samples);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("featnet config: ") + e.what());
  }
  c.Validate();
  return c;
}

// ---- tensor slots --------------------------------------------------------------

std::string TensorName(int index) {
  static const char* kFixed[] = {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias",
                                 "bn.gamma",     "bn.beta",    "bn.running_mean",
                                 "bn.running_var"};
  if (index < 0 || index >= kNumTensors) throw UsageError("featnet: bad tensor index");
  if (index < kFcBegin) return kFixed[index];
  const int layer = (index - kFcBegin) / 2;
  return "fc" + std::to_string(layer) + ((index - kFcBegin) % 2 ? ".bias" : ".weight");
}

bool IsTrainable(int index) { return index != kBnMean && index != kBnVar; }

bool IsWeight(int index) {
  return index == kConv1W || index == kConv2W ||
         (index >= kFcBegin && (index - kFcBegin) % 2 == 0);
}

namespace {

std::vector<std::pair<int, int>> ExpectedShapes(const FeatNetConfig& c) {
  const int k2 = c.conv_kernel * c.conv_kernel;
  const int n = c.flat_size();
  std::vector<std::pair<int, int>> s = {
      {c.conv_filters[0], c.channels * k2}, {c.conv_filters[0], 1},
      {c.conv_filters[1], c.conv_filters[0] * k2}, {c.conv_filters[1], 1},
      {n, 1}, {n, 1}, {n, 1}, {n, 1}};
  int in = n;
  for (int l = 0; l < kNumFc; ++l) {
    const int out = l < 4 ? c.fc_dims[std::size_t(l)] : c.n_classes;
    s.emplace_back(out, in);
    s.emplace_back(out, 1);
    in = out;
  }
  return s;
}

}  // namespace

template <typename Scalar>
void FeatNetParams<Scalar>::Validate() const {
  config.Validate();
  const auto shapes = ExpectedShapes(config);
  if (tensors.size() != shapes.size()) throw DataError("featnet: wrong number of tensors");
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (tensors[i].rows() != shapes[i].first || tensors[i].cols() != shapes[i].second)
      throw DataError("featnet: tensor " + TensorName(int(i)) + " has shape " +
                      std::to_string(tensors[i].rows()) + "x" +
                      std::to_string(tensors[i].cols()) + ", expected " +
                      std::to_string(shapes[i].first) + "x" + std::to_string(shapes[i].second));
  if (!(tensors[kBnVar].array() > Scalar(0)).all())
    throw DataError("featnet: batch-norm running variance must be positive");
}

template <typename Scalar>
std::size_t FeatNetParams<Scalar>::num_trainable() const {
  std::size_t n = 0;
  for (int i = 0; i < kNumTensors; ++i)
    if (IsTrainable(i)) n += std::size_t(tensors[std::size_t(i)].size());
  return n;
}

template <typename Scalar>
FeatNetParams<Scalar> InitParams(const FeatNetConfig& config, std::uint64_t seed) {
  config.Validate();
  FeatNetParams<Scalar> p;
  p.config = config;
  Rng rng(MixSeed(seed, "featnet-init"));
  for (const auto& [r, c] : ExpectedShapes(config)) p.tensors.emplace_back(r, c);
  for (int i = 0; i < kNumTensors; ++i) {
    auto& t = p.tensors[std::size_t(i)];
    if (IsWeight(i)) {
      const double sd = std::sqrt(2.0 / double(t.cols()));
      for (Eigen::Index j = 0; j < t.size(); ++j) t.data()[j] = Scalar(sd * StdNormal(rng));
    } else if (i == kBnGamma || i == kBnVar) {
      t.setOnes();
    } else {
      t.setZero();
    }
  }
  return p;
}

// ---- forward / backward --------------------------------------------------------

namespace {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
void Im2Col(const Scalar* x, int C, int H, int W, int k, Tensor<Scalar>& cols) {
  const int Ho = H - k + 1, Wo = W - k + 1;
  cols.resize(C * k * k, Ho * Wo);
  for (int c = 0; c < C; ++c)
    for (int di = 0; di < k; ++di)
      for (int dj = 0; dj < k; ++dj) {
        Scalar* dst = cols.row((c * k + di) * k + dj).data();
        for (int oi = 0; oi < Ho; ++oi)
          std::memcpy(dst + oi * Wo, x + (c * H + oi + di) * W + dj, sizeof(Scalar) * std::size_t(Wo));
      }
}

template <typename Scalar>
void Col2Im(const Tensor<Scalar>& cols, int C, int H, int W, int k, Scalar* dx) {
  const int Ho = H - k + 1, Wo = W - k + 1;
  for (int c = 0; c < C; ++c)
    for (int di = 0; di < k; ++di)
      for (int dj = 0; dj < k; ++dj) {
        const Scalar* src = cols.row((c * k + di) * k + dj).data();
        for (int oi = 0; oi < Ho; ++oi) {
          Scalar* d = dx + (c * H + oi + di) * W + dj;
          for (int oj = 0; oj < Wo; ++oj) d[oj] += src[oi * Wo + oj];
        }
      }
}

// out(f, pi * Wp + pj) = max over the p x p block; arg holds the winning
// index into the H * W plane (first maximum).
template <typename Scalar>
void MaxPool(const Tensor<Scalar>& a, int H, int W, int p, Scalar* out, int* arg) {
  const int F = int(a.rows()), Hp = H / p, Wp = W / p;
  for (int f = 0; f < F; ++f) {
    const Scalar* src = a.row(f).data();
    for (int pi = 0; pi < Hp; ++pi)
      for (int pj = 0; pj < Wp; ++pj) {
        int best = pi * p * W + pj * p;
        for (int di = 0; di < p; ++di)
          for (int dj = 0; dj < p; ++dj) {
            const int idx = (pi * p + di) * W + pj * p + dj;
            if (src[idx] > src[best]) best = idx;
          }
        const int o = (f * Hp + pi) * Wp + pj;
        out[o] = src[best];
        arg[o] = best;
      }
  }
}

inline void HashMix(std::uint64_t& h, std::uint64_t v) {
  h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
}

template <typename Scalar>
struct Cache {
  int batch = 0;
  std::vector<Tensor<Scalar>> a1, a2;  // post-ReLU conv planes per sample
  std::vector<Tensor<Scalar>> p1;      // pooled conv1 per sample
  std::vector<std::vector<int>> arg1, arg2;
  Tensor<Scalar> xhat;                 // normalised flat conv output
  Vec<Scalar> inv_std;
  std::array<Tensor<Scalar>, kNumFc> h;  // h[0] = batchnorm output, h[l] = input of fc l
  Tensor<Scalar> logits;
};

template <typename Scalar>
void ReluInPlace(Tensor<Scalar>& m) {
  m = m.cwiseMax(Scalar(0));
}

template <typename Scalar>
void CheckBatch(const FeatNetConfig& c, const Tensor<Scalar>& batch) {
  if (batch.cols() != c.input_size())
    throw DataError("featnet: sample width " + std::to_string(batch.cols()) + " != " +
                    std::to_string(c.input_size()) + " (channels x height x width)");
  if (batch.rows() == 0) throw DataError("featnet: empty batch");
}

// Shared forward pass. `params` is only modified (running moments) when
// `train` and `update_running` are both set.
template <typename Scalar>
void RunForward(const FeatNetParams<Scalar>& params, Vec<Scalar>* running_mean,
                Vec<Scalar>* running_var, const Tensor<Scalar>& batch, bool train,
                Cache<Scalar>& cache, std::uint64_t* pattern) {
  const FeatNetConfig& c = params.config;
  CheckBatch(c, batch);
  const auto& T = params.tensors;
  const int B = int(batch.rows());
  const int k = c.conv_kernel, F1 = c.conv_filters[0], F2 = c.conv_filters[1];
  const int p1n = c.pool1_h() * c.pool1_w(), p2n = c.pool2_h() * c.pool2_w();
  const int N = c.flat_size();
  cache.batch = B;
  cache.a1.resize(std::size_t(B));
  cache.a2.resize(std::size_t(B));
  cache.p1.resize(std::size_t(B));
  cache.arg1.resize(std::size_t(B));
  cache.arg2.resize(std::size_t(B));
  Tensor<Scalar> flat(B, N);
  Tensor<Scalar> cols;
  for (int s = 0; s < B; ++s) {
    const auto us = std::size_t(s);
    Im2Col(batch.row(s).data(), c.channels, c.height, c.width, k, cols);
    cache.a1[us].noalias() = T[kConv1W] * cols;
    cache.a1[us].colwise() += T[kConv1B].col(0);
    ReluInPlace(cache.a1[us]);
    cache.p1[us].resize(F1, p1n);
    cache.arg1[us].resize(std::size_t(F1 * p1n));
    MaxPool(cache.a1[us], c.conv1_h(), c.conv1_w(), c.pool, cache.p1[us].data(),
            cache.arg1[us].data());
    Im2Col(cache.p1[us].data(), F1, c.pool1_h(), c.pool1_w(), k, cols);
    cache.a2[us].noalias() = T[kConv2W] * cols;
    cache.a2[us].colwise() += T[kConv2B].col(0);
    ReluInPlace(cache.a2[us]);
    cache.arg2[us].resize(std::size_t(F2 * p2n));
    MaxPool(cache.a2[us], c.conv2_h(), c.conv2_w(), c.pool, flat.row(s).data(),
            cache.arg2[us].data());
    if (pattern) {
      for (int a : cache.arg1[us]) HashMix(*pattern, std::uint64_t(a));
      for (int a : cache.arg2[us]) HashMix(*pattern, std::uint64_t(a));
    }
  }

  const auto gamma = T[kBnGamma].col(0).transpose();
  const auto beta = T[kBnBeta].col(0).transpose();
  if (train) {
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mu = flat.colwise().mean();
    Tensor<Scalar> centered = flat.rowwise() - mu;
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> var =
        centered.array().square().colwise().mean();
    cache.inv_std = (var.array() + Scalar(c.bn_epsilon)).rsqrt().transpose();
    cache.xhat = centered.array().rowwise() * cache.inv_std.transpose().array();
    if (running_mean) {
      const Scalar m = Scalar(c.bn_momentum);
      const Scalar unbias = B > 1 ? Scalar(B) / Scalar(B - 1) : Scalar(1);
      *running_mean = (Scalar(1) - m) * *running_mean + m * mu.transpose();
      *running_var = (Scalar(1) - m) * *running_var + m * unbias * var.transpose();
    }
  } else {
    cache.inv_std = (T[kBnVar].col(0).array() + Scalar(c.bn_epsilon)).rsqrt();
    cache.xhat = (flat.rowwise() - T[kBnMean].col(0).transpose()).array().rowwise() *
                 cache.inv_std.transpose().array();
  }
  cache.h[0] = (cache.xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();

  for (int l = 0; l < kNumFc; ++l) {
    Tensor<Scalar> z = cache.h[std::size_t(l)] * T[std::size_t(FcW(l))].transpose();
    z.rowwise() += T[std::size_t(FcB(l))].col(0).transpose();
    if (l + 1 < kNumFc) {
      ReluInPlace(z);
      if (pattern)
        for (Eigen::Index i = 0; i < z.size(); ++i)
          HashMix(*pattern, z.data()[i] > Scalar(0) ? 1u : 2u);
      cache.h[std::size_t(l + 1)] = std::move(z);
    } else {
      cache.logits = std::move(z);
    }
  }
  if (pattern)
    for (const auto& a : cache.a1)
      for (Eigen::Index i = 0; i < a.size(); ++i)
        HashMix(*pattern, a.data()[i] > Scalar(0) ? 3u : 4u);
  if (pattern)
    for (const auto& a : cache.a2)
      for (Eigen::Index i = 0; i < a.size(); ++i)
        HashMix(*pattern, a.data()[i] > Scalar(0) ? 5u : 6u);
}

template <typename Scalar>
void RunBackward(const FeatNetParams<Scalar>& params, const Tensor<Scalar>& batch,
                 const Cache<Scalar>& cache, Tensor<Scalar> dz,
                 std::vector<Tensor<Scalar>>& g) {
  const FeatNetConfig& c = params.config;
  const auto& T = params.tensors;
  const int B = cache.batch;
  const int k = c.conv_kernel, F1 = c.conv_filters[0], F2 = c.conv_filters[1];
  for (int l = kNumFc - 1; l >= 0; --l) {
    const auto& in = cache.h[std::size_t(l)];
    g[std::size_t(FcW(l))].noalias() += dz.transpose() * in;
    g[std::size_t(FcB(l))].col(0) += dz.colwise().sum().transpose();
    Tensor<Scalar> dh = dz * T[std::size_t(FcW(l))];
    if (l > 0) dh = (in.array() > Scalar(0)).select(dh, Scalar(0));
    dz = std::move(dh);
  }
  // dz now holds d loss / d batchnorm output.
  const auto gamma = T[kBnGamma].col(0).transpose().array();
  g[kBnGamma].col(0) += (dz.array() * cache.xhat.array()).colwise().sum().transpose().matrix();
  g[kBnBeta].col(0) += dz.colwise().sum().transpose();
  Tensor<Scalar> dxhat = dz.array().rowwise() * gamma;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum_d = dxhat.colwise().sum();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sum_dx =
      (dxhat.array() * cache.xhat.array()).colwise().sum();
  Tensor<Scalar> dflat =
      ((Scalar(B) * dxhat.array()).rowwise() - sum_d.array() -
       cache.xhat.array().rowwise() * sum_dx.array())
          .rowwise() *
      (cache.inv_std.transpose().array() / Scalar(B));

  const int c1n = c.conv1_h() * c.conv1_w(), c2n = c.conv2_h() * c.conv2_w();
  const int p1n = c.pool1_h() * c.pool1_w(), p2n = c.pool2_h() * c.pool2_w();
  Tensor<Scalar> cols, da2(F2, c2n), da1(F1, c1n), dp1(F1, p1n);
  for (int s = 0; s < B; ++s) {
    const auto us = std::size_t(s);
    da2.setZero();
    const Scalar* dp2 = dflat.row(s).data();
    for (int f = 0; f < F2; ++f)
      for (int o = 0; o < p2n; ++o) da2(f, cache.arg2[us][std::size_t(f * p2n + o)]) += dp2[f * p2n + o];
    da2 = (cache.a2[us].array() > Scalar(0)).select(da2, Scalar(0));
    Im2Col(cache.p1[us].data(), F1, c.pool1_h(), c.pool1_w(), k, cols);
    g[kConv2W].noalias() += da2 * cols.transpose();
    g[kConv2B].col(0) += da2.rowwise().sum();
    cols.noalias() = T[kConv2W].transpose() * da2;
    dp1.setZero();
    Col2Im(cols, F1, c.pool1_h(), c.pool1_w(), k, dp1.data());
    da1.setZero();
    for (int f = 0; f < F1; ++f)
      for (int o = 0; o < p1n; ++o) da1(f, cache.arg1[us][std::size_t(f * p1n + o)]) += dp1(f, o);
    da1 = (cache.a1[us].array() > Scalar(0)).select(da1, Scalar(0));
    Im2Col(batch.row(s).data(), c.channels, c.height, c.width, k, cols);
    g[kConv1W].noalias() += da1 * cols.transpose();
    g[kConv1B].col(0) += da1.rowwise().sum();
  }
}

}  // namespace

template <typename Scalar>
ForwardOutput<Scalar> Forward(FeatNetParams<Scalar>& params, const Tensor<Scalar>& batch,
                              bool train_mode) {
  Cache<Scalar> cache;
  Vec<Scalar> rm = params.tensors[kBnMean].col(0), rv = params.tensors[kBnVar].col(0);
  RunForward<Scalar>(params, train_mode ? &rm : nullptr, train_mode ? &rv : nullptr, batch, train_mode,
             cache, nullptr);
  if (train_mode) {
    params.tensors[kBnMean].col(0) = rm;
    params.tensors[kBnVar].col(0) = rv;
  }
  return {std::move(cache.logits), std::move(cache.h[3])};
}

template <typename Scalar>
ForwardOutput<Scalar> Infer(const FeatNetParams<Scalar>& params, const Tensor<Scalar>& batch) {
  Cache<Scalar> cache;
  RunForward<Scalar>(params, nullptr, nullptr, batch, false, cache, nullptr);
  return {std::move(cache.logits), std::move(cache.h[3])};
}

template <typename Scalar>
Tensor<Scalar> Softmax(const Tensor<Scalar>& logits) {
  Tensor<Scalar> p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <typename Scalar>
Scalar LossAndGradient(FeatNetParams<Scalar>& params, const Tensor<Scalar>& batch,
                       const std::vector<int>& labels, std::vector<Tensor<Scalar>>* grads,
                       const LossOptions& options) {
  const FeatNetConfig& c = params.config;
  if (std::size_t(batch.rows()) != labels.size())
    throw DataError("featnet: label count does not match batch");
  for (int y : labels)
    if (y < 0 || y >= c.n_classes)
      throw DataError("featnet: label " + std::to_string(y) + " outside [0, " +
                      std::to_string(c.n_classes) + ")");
  Cache<Scalar> cache;
  Vec<Scalar> rm = params.tensors[kBnMean].col(0), rv = params.tensors[kBnVar].col(0);
  if (options.activation_pattern) *options.activation_pattern = 0;
  RunForward<Scalar>(params, options.update_running ? &rm : nullptr,
             options.update_running ? &rv : nullptr, batch, true, cache,
             options.activation_pattern);
  const int B = int(batch.rows());
  // Log-softmax cross-entropy.
  const Vec<Scalar> mx = cache.logits.rowwise().maxCoeff();
  Tensor<Scalar> shifted = cache.logits.colwise() - mx;
  const Vec<Scalar> lse = shifted.array().exp().rowwise().sum().log();
  double loss = 0.0;
  for (int s = 0; s < B; ++s) loss -= double(shifted(s, labels[std::size_t(s)]) - lse(s));
  loss /= double(B);
  double l2 = 0.0;
  for (int i = 0; i < kNumTensors; ++i)
    if (IsWeight(i)) l2 += double(params.tensors[std::size_t(i)].squaredNorm());
  loss += 0.5 * c.l2_weight * l2;

  if (grads) {
    grads->resize(std::size_t(kNumTensors));
    for (int i = 0; i < kNumTensors; ++i)
      (*grads)[std::size_t(i)].setZero(params.tensors[std::size_t(i)].rows(),
                                       params.tensors[std::size_t(i)].cols());
    Tensor<Scalar> dz = (shifted.colwise() - lse).array().exp();
    for (int s = 0; s < B; ++s) dz(s, labels[std::size_t(s)]) -= Scalar(1);
    dz /= Scalar(B);
    RunBackward(params, batch, cache, std::move(dz), *grads);
    for (int i = 0; i < kNumTensors; ++i)
      if (IsWeight(i))
        (*grads)[std::size_t(i)] += Scalar(c.l2_weight) * params.tensors[std::size_t(i)];
  }
  if (options.update_running) {
    params.tensors[kBnMean].col(0) = rm;
    params.tensors[kBnVar].col(0) = rv;
  }
  return Scalar(loss);
}

template <typename Scalar>
Scalar SgdStep(FeatNetParams<Scalar>& params, const Tensor<Scalar>& batch,
               const std::vector<int>& labels) {
  std::vector<Tensor<Scalar>> g;
  const Scalar loss = LossAndGradient(params, batch, labels, &g);
  if (!std::isfinite(double(loss))) throw NumericError("featnet: non-finite training loss");
  const Scalar lr = Scalar(params.config.lr);
  for (int i = 0; i < kNumTensors; ++i)
    if (IsTrainable(i)) params.tensors[std::size_t(i)] -= lr * g[std::size_t(i)];
  return loss;
}

// ---- sample sets ---------------------------------------------------------------

template <typename Scalar>
SampleSet<Scalar> MatrixSamples(Tensor<Scalar> inputs, std::vector<int> labels) {
  if (std::size_t(inputs.rows()) != labels.size())
    throw DataError("featnet: sample/label count mismatch");
  auto shared = std::make_shared<const Tensor<Scalar>>(std::move(inputs));
  SampleSet<Scalar> s;
  s.labels = std::move(labels);
  s.fill = [shared](std::size_t i, Scalar* row) {
    std::copy_n(shared->row(Eigen::Index(i)).data(), shared->cols(), row);
  };
  return s;
}

template <typename Scalar>
SampleSet<Scalar> WindowedSamples(
    std::vector<std::shared_ptr<const corpus::FrameSequence>> sequences,
    const std::vector<std::vector<std::uint16_t>>& labels, const corpus::Normalizer& norm) {
  if (sequences.size() != labels.size())
    throw DataError("featnet: sequence/label list mismatch");
  struct Item {
    std::uint32_t seq;
    corpus::WindowSample w;
  };
  auto items = std::make_shared<std::vector<Item>>();
  SampleSet<Scalar> s;
  for (std::size_t q = 0; q < sequences.size(); ++q) {
    if (sequences[q]->size() != labels[q].size())
      throw DataError("featnet: label count " + std::to_string(labels[q].size()) +
                      " != frame count " + std::to_string(sequences[q]->size()));
    for (const auto& w : corpus::WindowSamples(sequences[q]->size(), labels[q])) {
      items->push_back({std::uint32_t(q), w});
      s.labels.push_back(*w.label);
    }
  }
  auto seqs = std::make_shared<std::vector<std::shared_ptr<const corpus::FrameSequence>>>(
      std::move(sequences));
  const double mean = norm.mean, inv = 1.0 / norm.stddev;
  s.fill = [items, seqs, mean, inv](std::size_t i, Scalar* row) {
    const Item& it = (*items)[i];
    const auto& frames = (*seqs)[it.seq]->frames;
    for (std::size_t ch = 0; ch < it.w.channels.size(); ++ch) {
      const Grid& f = frames[std::size_t(it.w.channels[ch])];
      for (Eigen::Index j = 0; j < f.size(); ++j)
        *row++ = Scalar((double(f.data()[j]) - mean) * inv);
    }
  };
  return s;
}

// ---- training ------------------------------------------------------------------

namespace {

template <typename Scalar>
void FillBatch(const SampleSet<Scalar>& set, const std::vector<std::size_t>& idx,
               std::size_t begin, std::size_t end, int width, Tensor<Scalar>& batch,
               std::vector<int>& labels) {
  batch.resize(Eigen::Index(end - begin), width);
  labels.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    set.fill(idx[i], batch.row(Eigen::Index(i - begin)).data());
    labels[i - begin] = set.labels[idx[i]];
  }
}

std::vector<std::size_t> Shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[UniformIndex(rng, i)]);
  return idx;
}

}  // namespace

template <typename Scalar>
double Accuracy(const FeatNetParams<Scalar>& params, const SampleSet<Scalar>& samples,
                std::size_t limit) {
  const std::size_t n = limit ? std::min(limit, samples.size()) : samples.size();
  if (n == 0) throw DataError("featnet: empty evaluation set");
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  if (n < samples.size()) {
    Rng rng(MixSeed(params.config.seed, "featnet-eval"));
    idx = Shuffled(samples.size(), rng);
  }
  std::size_t correct = 0;
  Tensor<Scalar> batch;
  std::vector<int> labels;
  const auto bs = std::size_t(std::max(1, params.config.batch_size));
  for (std::size_t b = 0; b < n; b += bs) {
    const std::size_t e = std::min(n, b + bs);
    FillBatch(samples, idx, b, e, params.config.input_size(), batch, labels);
    const auto out = Infer(params, batch);
    for (Eigen::Index r = 0; r < out.logits.rows(); ++r) {
      Eigen::Index arg;
      out.logits.row(r).maxCoeff(&arg);
      if (int(arg) == labels[std::size_t(r)]) ++correct;
    }
  }
  return double(correct) / double(n);
}

template <typename Scalar>
TrainResult<Scalar> TrainSgd(FeatNetParams<Scalar> params, const SampleSet<Scalar>& train,
                             const SampleSet<Scalar>& validation) {
  params.Validate();
  if (train.size() == 0 || validation.size() == 0)
    throw DataError("featnet: training and validation sets must be nonempty");
  const FeatNetConfig& c = params.config;
  TrainResult<Scalar> result;
  result.best = params;
  double best_acc = -1.0;
  Rng rng(MixSeed(c.seed, "featnet-sgd"));
  Tensor<Scalar> batch;
  std::vector<int> labels;
  for (int epoch = 1; epoch <= c.epochs; ++epoch) {
    auto idx = Shuffled(train.size(), rng);
    const std::size_t n =
        c.max_samples_per_epoch > 0 ? std::min(idx.size(), std::size_t(c.max_samples_per_epoch))
                                    : idx.size();
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < n; b += std::size_t(c.batch_size)) {
      const std::size_t e = std::min(n, b + std::size_t(c.batch_size));
      FillBatch(train, idx, b, e, c.input_size(), batch, labels);
      loss_sum += double(SgdStep(params, batch, labels)) * double(e - b);
      seen += e - b;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / double(seen);
    m.validation_accuracy =
        Accuracy(params, validation, std::size_t(std::max(0, c.max_validation_samples)));
    result.epochs.push_back(m);
    LogInfo("featnet epoch " + std::to_string(epoch) + ": loss " + std::to_string(m.train_loss) +
            ", validation accuracy " + std::to_string(m.validation_accuracy));
    if (m.validation_accuracy > best_acc) {
      best_acc = m.validation_accuracy;
      result.best = params;
      result.best_epoch = epoch;
    }
  }
  return result;
}

template <typename Scalar>
FeatureMatrix ExtractBottleneck(const FeatNetParams<Scalar>& params,
                                const corpus::FrameSequence& seq, int batch_size) {
  const FeatNetConfig& c = params.config;
  if (seq.size() == 0) return FeatureMatrix(0, c.bottleneck_dim());
  if (seq.height() != c.height || seq.width() != c.width)
    throw DataError("featnet: frames are " + std::to_string(seq.height()) + "x" +
                    std::to_string(seq.width()) + ", network expects " +
                    std::to_string(c.height) + "x" + std::to_string(c.width));
  std::vector<std::shared_ptr<const corpus::FrameSequence>> one{
      std::shared_ptr<const corpus::FrameSequence>(&seq, [](const corpus::FrameSequence*) {})};
  const auto samples = WindowedSamples<Scalar>(
      one, {std::vector<std::uint16_t>(seq.size(), 0)}, params.normalizer);
  FeatureMatrix out(Eigen::Index(seq.size()), c.bottleneck_dim());
  std::vector<std::size_t> idx(seq.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  Tensor<Scalar> batch;
  std::vector<int> labels;
  const auto bs = std::size_t(std::max(1, batch_size));
  for (std::size_t b = 0; b < seq.size(); b += bs) {
    const std::size_t e = std::min(seq.size(), b + bs);
    FillBatch(samples, idx, b, e, c.input_size(), batch, labels);
    out.middleRows(Eigen::Index(b), Eigen::Index(e - b)) =
        Infer(params, batch).bottleneck.template cast<double>();
  }
  if (!out.allFinite()) throw NumericError("featnet: non-finite bottleneck features");
  return out;
}

// ---- gradient check ------------------------------------------------------------

GradientCheckResult GradientCheck(FeatNetParams<double> params, const Tensor<double>& batch,
                                  const std::vector<int>& labels,
                                  const GradientCheckOptions& options) {
  params.Validate();
  std::vector<Tensor<double>> g;
  std::uint64_t base_pattern = 0;
  LossOptions lo;
  lo.update_running = false;
  lo.activation_pattern = &base_pattern;
  LossAndGradient(params, batch, labels, &g, lo);
  if (options.corrupt_tensor >= 0)
    g.at(std::size_t(options.corrupt_tensor)) *= options.corrupt_factor;

  std::vector<std::pair<int, Eigen::Index>> coords;
  for (int i = 0; i < kNumTensors; ++i)
    if (IsTrainable(i))
      for (Eigen::Index j = 0; j < params.tensors[std::size_t(i)].size(); ++j)
        coords.emplace_back(i, j);
  Rng rng(MixSeed(options.seed, "featnet-gradcheck"));
  auto order = Shuffled(coords.size(), rng);
  // Every tensor gets at least one probe so a corrupted layer cannot hide.
  std::vector<std::size_t> picks;
  std::vector<bool> covered(std::size_t(kNumTensors), false);
  for (std::size_t o : order)
    if (!covered[std::size_t(coords[o].first)]) {
      covered[std::size_t(coords[o].first)] = true;
      picks.push_back(o);
    }
  for (std::size_t o : order) picks.push_back(o);

  GradientCheckResult r;
  for (std::size_t o : picks) {
    if (r.checked >= options.coordinates) break;
    const auto [ti, j] = coords[o];
    double& theta = params.tensors[std::size_t(ti)].data()[j];
    const double saved = theta;
    // Fourth-order central stencil at +-eps and +-2 eps.
    double f[4];
    bool kink = false;
    const double steps[4] = {2.0, 1.0, -1.0, -2.0};
    for (int q = 0; q < 4; ++q) {
      std::uint64_t pattern = 0;
      theta = saved + steps[q] * options.epsilon;
      lo.activation_pattern = &pattern;
      f[q] = LossAndGradient<double>(params, batch, labels, nullptr, lo);
      kink = kink || pattern != base_pattern;
    }
    theta = saved;
    if (kink) {
      ++r.skipped;
      continue;
    }
    const double numeric = (8.0 * (f[1] - f[2]) - (f[0] - f[3])) / (12.0 * options.epsilon);
    const double analytic = g[std::size_t(ti)].data()[j];
    const double rel =
        std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-8);
    r.max_relative_error = std::max(r.max_relative_error, rel);
    ++r.checked;
  }
  return r;
}

// ---- checkpoints ---------------------------------------------------------------

template <typename Scalar>
void SaveCheckpoint(const fs::path& path, const FeatNetParams<Scalar>& params) {
  params.Validate();
  nlohmann::json header;
  header["config"] = params.config.ToJson();
  header["normalizer"] = {{"mean", params.normalizer.mean},
                          {"stddev", params.normalizer.stddev}};
  nlohmann::json shapes = nlohmann::json::array();
  for (int i = 0; i < kNumTensors; ++i)
    shapes.push_back({{"name", TensorName(i)},
                      {"rows", params.tensors[std::size_t(i)].rows()},
                      {"cols", params.tensors[std::size_t(i)].cols()}});
  header["tensors"] = shapes;
  const std::string text = header.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write("FNET", 4);
  const auto len = std::uint32_t(text.size());
  const unsigned char lb[4] = {static_cast<unsigned char>(len & 0xff),
                               static_cast<unsigned char>((len >> 8) & 0xff),
                               static_cast<unsigned char>((len >> 16) & 0xff),
                               static_cast<unsigned char>((len >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(lb), 4);
  out.write(text.data(), std::streamsize(text.size()));
  for (const auto& t : params.tensors) {
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f =
        t.template cast<float>();
    out.write(reinterpret_cast<const char*>(f.data()),
              std::streamsize(sizeof(float) * std::size_t(f.size())));
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

template <typename Scalar>
FeatNetParams<Scalar> LoadCheckpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  char magic[4];
  unsigned char lb[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "FNET", 4) != 0)
    throw DataError("'" + path.string() + "' is not an FNET checkpoint");
  if (!in.read(reinterpret_cast<char*>(lb), 4)) throw DataError("truncated checkpoint header");
  const std::uint32_t len = std::uint32_t(lb[0]) | (std::uint32_t(lb[1]) << 8) |
                            (std::uint32_t(lb[2]) << 16) | (std::uint32_t(lb[3]) << 24);
  std::string text(len, '\0');
  if (!in.read(text.data(), std::streamsize(len))) throw DataError("truncated checkpoint header");
  FeatNetParams<Scalar> p;
  try {
    const auto header = nlohmann::json::parse(text);
    p.config = FeatNetConfig::FromJson(header.at("config"));
    p.normalizer.mean = header.at("normalizer").at("mean").get<double>();
    p.normalizer.stddev = header.at("normalizer").at("stddev").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint header: " + std::string(e.what()));
  }
  for (const auto& [r, c] : ExpectedShapes(p.config)) {
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(r, c);
    if (!in.read(reinterpret_cast<char*>(f.data()),
                 std::streamsize(sizeof(float) * std::size_t(f.size()))))
      throw DataError("truncated checkpoint '" + path.string() + "'");
    p.tensors.push_back(f.template cast<Scalar>());
  }
  p.Validate();
  return p;
}

// ---- instantiations ------------------------------------------------------------

#define SSIKIT_FEATNET_INSTANTIATE(S)                                                      \
  template struct FeatNetParams<S>;                                                        \
  template FeatNetParams<S> InitParams<S>(const FeatNetConfig&, std::uint64_t);            \
  template ForwardOutput<S> Forward<S>(FeatNetParams<S>&, const Tensor<S>&, bool);          \
  template ForwardOutput<S> Infer<S>(const FeatNetParams<S>&, const Tensor<S>&);            \
  template Tensor<S> Softmax<S>(const Tensor<S>&);                                         \
  template S LossAndGradient<S>(FeatNetParams<S>&, const Tensor<S>&,                       \
                                const std::vector<int>&, std::vector<Tensor<S>>*,          \
                                const LossOptions&);                                       \
  template S SgdStep<S>(FeatNetParams<S>&, const Tensor<S>&, const std::vector<int>&);     \
  template SampleSet<S> MatrixSamples<S>(Tensor<S>, std::vector<int>);                     \
  template SampleSet<S> WindowedSamples<S>(                                                \
      std::vector<std::shared_ptr<const corpus::FrameSequence>>,                           \
      const std::vector<std::vector<std::uint16_t>>&, const corpus::Normalizer&);          \
  template TrainResult<S> TrainSgd<S>(FeatNetParams<S>, const SampleSet<S>&,               \
                                      const SampleSet<S>&);                                \
  template double Accuracy<S>(const FeatNetParams<S>&, const SampleSet<S>&, std::size_t);  \
  template FeatureMatrix ExtractBottleneck<S>(const FeatNetParams<S>&,                     \
                                              const corpus::FrameSequence&, int);          \
  template void SaveCheckpoint<S>(const fs::path&, const FeatNetParams<S>&);               \
  template FeatNetParams<S> LoadCheckpoint<S>(const fs::path&);

SSIKIT_FEATNET_INSTANTIATE(float)
SSIKIT_FEATNET_INSTANTIATE(double)

#undef SSIKIT_FEATNET_INSTANTIATE

}  // namespace ssikit::featnet
