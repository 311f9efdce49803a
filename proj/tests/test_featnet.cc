// tests/test_featnet.cc

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

#include <doctest.h>

#include <cmath>
#include <fstream>

#include "ssikit/featnet.h"
#include "test_util.h"

using namespace ssikit;
using namespace ssikit::featnet;

namespace {

FeatNetConfig TinyConfig() {
  FeatNetConfig c;
  c.channels = 1;
  c.height = 8;
  c.width = 8;
  c.conv_kernel = 2;
  c.conv_filters = {2, 3};
  c.fc_dims = {4, 3, 2, 4};
  c.n_classes = 2;
  return c;
}

// 928-parameter net used for the gradient check.
FeatNetConfig CheckConfig() {
  FeatNetConfig c;
  c.channels = 2;
  c.height = 14;
  c.width = 14;
  c.conv_kernel = 3;
  c.conv_filters = {3, 4};
  c.fc_dims = {16, 12, 8, 12};
  c.n_classes = 3;
  return c;
}

template <typename Scalar>
Tensor<Scalar> RandomBatch(int rows, int cols, Rng& rng) {
  Tensor<Scalar> b(rows, cols);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = Scalar(StdNormal(rng));
  return b;
}

// Direct loops over the documented layout, no im2col.
std::vector<double> ReferenceLogits(const FeatNetParams<double>& p, const double* x) {
  const auto& c = p.config;
  const auto& T = p.tensors;
  const int k = c.conv_kernel;
  auto conv = [&](const std::vector<double>& in, int C, int H, int W, const Tensor<double>& w,
                  const Tensor<double>& b, int F) {
    const int Ho = H - k + 1, Wo = W - k + 1;
    std::vector<double> out(std::size_t(F * Ho * Wo));
    for (int f = 0; f < F; ++f)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double s = b(f, 0);
          for (int ch = 0; ch < C; ++ch)
            for (int di = 0; di < k; ++di)
              for (int dj = 0; dj < k; ++dj)
                s += w(f, (ch * k + di) * k + dj) * in[std::size_t((ch * H + i + di) * W + j + dj)];
          out[std::size_t((f * Ho + i) * Wo + j)] = std::max(0.0, s);
        }
    return out;
  };
  auto pool = [&](const std::vector<double>& in, int F, int H, int W) {
    const int q = c.pool, Ho = H / q, Wo = W / q;
    std::vector<double> out(std::size_t(F * Ho * Wo));
    for (int f = 0; f < F; ++f)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          double m = -1e300;
          for (int a = 0; a < q; ++a)
            for (int b = 0; b < q; ++b) m = std::max(m, in[std::size_t((f * H + i * q + a) * W + j * q + b)]);
          out[std::size_t((f * Ho + i) * Wo + j)] = m;
        }
    return out;
  };
  std::vector<double> in(x, x + c.input_size());
  auto a1 = pool(conv(in, c.channels, c.height, c.width, T[kConv1W], T[kConv1B], c.conv_filters[0]),
                 c.conv_filters[0], c.conv1_h(), c.conv1_w());
  auto h = pool(conv(a1, c.conv_filters[0], c.pool1_h(), c.pool1_w(), T[kConv2W], T[kConv2B],
                     c.conv_filters[1]),
                c.conv_filters[1], c.conv2_h(), c.conv2_w());
  for (std::size_t i = 0; i < h.size(); ++i)
    h[i] = T[kBnGamma](Eigen::Index(i), 0) * (h[i] - T[kBnMean](Eigen::Index(i), 0)) /
               std::sqrt(T[kBnVar](Eigen::Index(i), 0) + c.bn_epsilon) +
           T[kBnBeta](Eigen::Index(i), 0);
  for (int l = 0; l < kNumFc; ++l) {
    const auto& w = T[FcW(l)];
    std::vector<double> o(std::size_t(w.rows()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double s = T[FcB(l)](r, 0);
      for (Eigen::Index q = 0; q < w.cols(); ++q) s += w(r, q) * h[std::size_t(q)];
      o[std::size_t(r)] = l + 1 < kNumFc ? std::max(0.0, s) : s;
    }
    h = o;
  }
  return h;
}

bool SameParams(const FeatNetParams<float>& a, const FeatNetParams<float>& b, bool trainable_only) {
  for (int i = 0; i < kNumTensors; ++i) {
    if (trainable_only && !IsTrainable(i)) continue;
    if (a.tensors[std::size_t(i)] != b.tensors[std::size_t(i)]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("configuration") {
  auto full = FeatNetConfig::Full();
  CHECK_NOTHROW(full.Validate());
  CHECK(full.input_size() == 7 * 64 * 128);
  CHECK(full.bottleneck_dim() == 128);
  CHECK(full.fc_dims == std::array<int, 4>{1024, 512, 128, 512});
  CHECK(full.batch_size == 256);
  auto desk = FeatNetConfig::Desk();
  CHECK_NOTHROW(desk.Validate());
  CHECK(desk.channels == 7);
  auto bad = TinyConfig();
  bad.conv_kernel = 9;
  CHECK_THROWS(bad.Validate());
  CHECK(FeatNetConfig::FromJson(desk.ToJson()).ToJson() == desk.ToJson());
}

TEST_CASE("initialisation") {
  auto cfg = FeatNetConfig::Desk();
  auto a = InitParams<float>(cfg, 3);
  auto b = InitParams<float>(cfg, 3);
  auto c = InitParams<float>(cfg, 4);
  CHECK(SameParams(a, b, false));
  CHECK_FALSE(SameParams(a, c, false));
  CHECK_NOTHROW(a.Validate());
  const auto& w = a.tensors[std::size_t(FcW(0))];
  REQUIRE(w.size() >= 10000);
  const double target = std::sqrt(2.0 / double(w.cols()));
  const double mean = w.cast<double>().mean();
  const double sd = std::sqrt((w.cast<double>().array() - mean).square().mean());
  CHECK(std::abs(sd / target - 1) < 0.2);
  CHECK(a.tensors[kConv1B].cwiseAbs().maxCoeff() == 0);
  CHECK(a.tensors[kBnVar].minCoeff() > 0);
}

TEST_CASE("forward pass") {
  SUBCASE("zero input gives zero bottleneck") {
    auto p = InitParams<double>(TinyConfig(), 1);
    Tensor<double> zero = Tensor<double>::Zero(3, p.config.input_size());
    auto out = Infer(p, zero);
    CHECK(out.bottleneck.cwiseAbs().maxCoeff() == 0);
    CHECK(out.bottleneck.cols() == p.config.bottleneck_dim());
  }
  SUBCASE("matches direct loops on a tiny net") {
    Rng rng(6);
    auto p = InitParams<double>(TinyConfig(), 2);
    for (int i = 0; i < kNumTensors; ++i)
      if (IsTrainable(i))
        for (Eigen::Index j = 0; j < p.tensors[std::size_t(i)].size(); ++j)
          p.tensors[std::size_t(i)].data()[j] = 0.5 * StdNormal(rng);
    p.tensors[kBnMean].setConstant(0.2);
    p.tensors[kBnVar].setConstant(1.7);
    auto batch = RandomBatch<double>(5, p.config.input_size(), rng);
    auto out = Infer(p, batch);
    double worst = 0;
    for (int s = 0; s < 5; ++s) {
      auto ref = ReferenceLogits(p, batch.row(s).data());
      for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(ref[std::size_t(k)] - out.logits(s, k)));
    }
    CHECK(worst < 1e-6);
    auto sm = Softmax(out.logits);
    for (int s = 0; s < 5; ++s) CHECK(sm.row(s).sum() == doctest::Approx(1.0));
  }
}

TEST_CASE("SGD training") {
  SUBCASE("linearly separable toy set") {
    auto cfg = TinyConfig();
    cfg.lr = 0.05;
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.l2_weight = 1e-4;
    Rng rng(10);
    auto make = [&](int n) {
      Tensor<float> x(n, cfg.input_size());
      std::vector<int> y(std::size_t(n), 0);
      for (int i = 0; i < n; ++i) {
        y[std::size_t(i)] = i % 2;
        for (int j = 0; j < cfg.input_size(); ++j)
          x(i, j) = float(0.3 * StdNormal(rng) + ((j % 8 < 4) == (i % 2 == 0) ? 1.0 : -1.0));
      }
      return MatrixSamples<float>(x, y);
    };
    auto res = TrainSgd(InitParams<float>(cfg, 1), make(400), make(200));
    CHECK(res.epochs.size() <= 30);
    double best = 0;
    for (const auto& e : res.epochs) best = std::max(best, e.validation_accuracy);
    CHECK(best >= 0.95);
    CHECK(res.epochs[std::size_t(res.best_epoch - 1)].validation_accuracy == best);
    for (const auto& e : res.epochs)
      if (e.validation_accuracy == best) {
        CHECK(e.epoch == res.best_epoch);  // earliest maximum
        break;
      }
  }
  SUBCASE("zero learning rate leaves trainable parameters unchanged") {
    auto cfg = TinyConfig();
    cfg.lr = 0;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    Rng rng(11);
    auto x = RandomBatch<float>(40, cfg.input_size(), rng);
    std::vector<int> y(40);
    for (int i = 0; i < 40; ++i) y[std::size_t(i)] = i % 2;
    auto init = InitParams<float>(cfg, 5);
    auto res = TrainSgd(init, MatrixSamples<float>(x, y), MatrixSamples<float>(x, y));
    CHECK(SameParams(res.best, init, true));
  }
}

TEST_CASE("bottleneck extraction") {
  auto cfg = TinyConfig();
  cfg.channels = 7;
  auto p = InitParams<float>(cfg, 7);
  p.normalizer = {0.5, 0.25};
  Rng rng(2);
  corpus::FrameSequence seq;
  for (int i = 0; i < 30; ++i) {
    Grid g(8, 8);
    for (Eigen::Index j = 0; j < g.size(); ++j) g.data()[j] = float(Uniform01(rng));
    seq.frames.push_back(g);
  }
  auto f = ExtractBottleneck(p, seq);
  CHECK(f.rows() == 30);
  CHECK(f.cols() == cfg.bottleneck_dim());
  CHECK(f.allFinite());
  CHECK(ExtractBottleneck(p, seq) == f);
  CHECK((ExtractBottleneck(p, seq, 1) - f).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((ExtractBottleneck(p, seq, 7) - f).cwiseAbs().maxCoeff() < 1e-6);

  corpus::FrameSequence flat;
  flat.frames.assign(12, Grid::Constant(8, 8, 0.8f));
  auto g = ExtractBottleneck(p, flat);
  for (Eigen::Index r = 1; r < g.rows(); ++r) CHECK(g.row(r) == g.row(0));

  corpus::FrameSequence wrong;
  wrong.frames.assign(3, Grid::Zero(9, 8));
  CHECK_THROWS_AS(ExtractBottleneck(p, wrong), DataError);
}

TEST_CASE("gradient check") {
  Rng rng(4);
  auto p = InitParams<double>(CheckConfig(), 4);
  auto batch = RandomBatch<double>(16, p.config.input_size(), rng);
  std::vector<int> labels(16);
  for (auto& l : labels) l = int(UniformIndex(rng, 3));

  // Conditioning precondition: no batch-norm input with a near-zero batch variance.
  {
    auto probe = p;
    probe.config.bn_momentum = 1.0;
    Forward(probe, batch, true);
    REQUIRE(probe.tensors[kBnVar].minCoeff() >= 0.01);
  }
  SUBCASE("analytic gradient matches finite differences") {
    GradientCheckOptions opts;
    opts.seed = 4;
    auto r = GradientCheck(p, batch, labels, opts);
    CHECK(r.checked >= 200);
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("perturbed gradient is detected") {
    GradientCheckOptions opts;
    opts.corrupt_tensor = FcW(1);
    auto r = GradientCheck(p, batch, labels, opts);
    CHECK(r.max_relative_error > 1e-3);
  }
  SUBCASE("same point gives the same loss") {
    LossOptions no_update;
    no_update.update_running = false;
    auto q = p;
    const double a = LossAndGradient<double>(q, batch, labels, nullptr, no_update);
    const double b = LossAndGradient<double>(q, batch, labels, nullptr, no_update);
    CHECK(a == b);
    CHECK((a - b) / 1e-3 == 0);
  }
}

TEST_CASE("checkpoint round trip") {
  ssikit::testing::TempDir dir("fnet");
  auto p = InitParams<float>(TinyConfig(), 9);
  p.normalizer = {0.1, 2.0};
  SaveCheckpoint(dir / "m.fnet", p);
  auto q = LoadCheckpoint<float>(dir / "m.fnet");
  CHECK(SameParams(p, q, false));
  CHECK(q.normalizer.stddev == 2.0);
  CHECK(q.config.ToJson() == p.config.ToJson());
  std::ofstream(dir / "bad.fnet") << "nope";
  CHECK_THROWS_AS(LoadCheckpoint<float>(dir / "bad.fnet"), DataError);
}
