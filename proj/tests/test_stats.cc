// tests/test_stats.cc

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

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ssikit/stats.h"
#include "ssikit/synth.h"
#include "ssikit/artic.h"

using namespace ssikit;
using namespace ssikit::stats;

namespace {

// Two-tailed Student-t tail by adaptive Gauss-Kronrod on the density.
double QuadratureTwoTailed(double t, double df) {
  const double lc = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
  auto pdf = [&](double x) { return std::exp(lc - (df + 1) / 2 * std::log1p(x * x / df)); };
  const double a = std::abs(t);
  double err = 0;
  if (a < 4) {
    const double inner = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        pdf, 0.0, a, 15, 1e-12, &err);
    return 1.0 - 2.0 * inner;
  }
  const double tail = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      pdf, a, std::numeric_limits<double>::infinity(), 15, 1e-12, &err);
  return 2.0 * tail;
}

PairedSeries Series(const std::vector<double>& a, const std::vector<double>& b) {
  PairedSeries s;
  s.a = a;
  s.b = b;
  for (std::size_t i = 0; i < a.size(); ++i) s.keys.push_back(std::to_string(i));
  return s;
}

double OracleR(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return double(sxy / std::sqrt(sxx * syy));
}

}  // namespace

TEST_CASE("syllable rate") {
  CHECK(SyllableRate(12, 5.0) == doctest::Approx(2.4));
  CHECK(SyllableRate(1, 1.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(SyllableRate(3, 0.0), DataError);
}

TEST_CASE("t distribution tail") {
  CHECK(StudentTTwoTailed(0.0, 7) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(StudentTTwoTailed(1.0, 1) - 0.5) < 1e-12);
  CHECK(std::abs(StudentTTwoTailed(2.5, 30) - QuadratureTwoTailed(2.5, 30)) < 1e-9);
  CHECK(StudentTTwoTailed(-2.5, 30) == StudentTTwoTailed(2.5, 30));
  CHECK(RegularizedIncompleteBeta(2, 3, 0) == 0);
  CHECK(RegularizedIncompleteBeta(2, 3, 1) == 1);
  // I_x(1, 1) = x
  CHECK(std::abs(RegularizedIncompleteBeta(1, 1, 0.3) - 0.3) < 1e-14);
}

TEST_CASE("paired t-test") {
  SUBCASE("identical series") {
    auto r = PairedTTest(Series({1, 2, 3}, {1, 2, 3}));
    CHECK(r.t == 0);
    CHECK(r.p == 1);
    CHECK(r.df == 2);
  }
  SUBCASE("constant nonzero difference") {
    auto r = PairedTTest(Series({2, 3, 4, 5}, {1, 2, 3, 4}));
    CHECK(r.degenerate_variance);
    CHECK(r.p == 0);
    CHECK(std::isinf(r.t));
  }
  SUBCASE("too short") { CHECK_THROWS_AS(PairedTTest(Series({1}, {2})), DataError); }
  SUBCASE("matches quadrature oracle") {
    Rng rng(2024);
    double worst_t = 0, worst_p = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 3 + int(UniformIndex(rng, 60));
      const double shift = 0.6 * StdNormal(rng);
      std::vector<double> a(n), b(n);
      for (int i = 0; i < n; ++i) {
        a[i] = 5 + StdNormal(rng);
        b[i] = a[i] - shift + 0.8 * StdNormal(rng);
      }
      long double md = 0;
      for (int i = 0; i < n; ++i) md += a[i] - b[i];
      md /= n;
      long double ss = 0;
      for (int i = 0; i < n; ++i) ss += (a[i] - b[i] - md) * (a[i] - b[i] - md);
      const double t_ref = double(md / (std::sqrt(ss / (n - 1)) / std::sqrt((long double)n)));
      const auto r = PairedTTest(Series(a, b));
      worst_t = std::max(worst_t, std::abs(r.t - t_ref) / std::max(1.0, std::abs(t_ref)));
      worst_p = std::max(worst_p, std::abs(r.p - QuadratureTwoTailed(t_ref, n - 1)));
      CHECK(r.p >= 0);
      CHECK(r.p <= 1);
    }
    CHECK(worst_t < 1e-9);
    CHECK(worst_p < 1e-9);
  }
  SUBCASE("shift invariance") {
    Rng rng(9);
    std::vector<double> a(20), b(20);
    for (int i = 0; i < 20; ++i) {
      a[i] = StdNormal(rng);
      b[i] = StdNormal(rng);
    }
    auto r1 = PairedTTest(Series(a, b));
    for (int i = 0; i < 20; ++i) {
      a[i] += 100;
      b[i] += 100;
    }
    auto r2 = PairedTTest(Series(a, b));
    CHECK(r1.t == doctest::Approx(r2.t).epsilon(1e-9));
    CHECK(r1.p == doctest::Approx(r2.p).epsilon(1e-9));
  }
}

TEST_CASE("Holm-Bonferroni") {
  auto h = HolmBonferroni({0.01, 0.04, 0.03}, 0.05);
  CHECK(h.reject == std::vector<bool>{true, false, false});
  CHECK(h.thresholds[0] == doctest::Approx(0.05 / 3));
  CHECK(h.thresholds[2] == doctest::Approx(0.05 / 2));
  auto none = HolmBonferroni({1, 1, 1}, 0.05);
  CHECK(none.reject == std::vector<bool>{false, false, false});
  CHECK(HolmBonferroni({0.049}, 0.05).reject[0]);
  CHECK_FALSE(HolmBonferroni({0.051}, 0.05).reject[0]);

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(1 + UniformIndex(rng, 8));
    for (auto& v : p) v = std::pow(Uniform01(rng), 3);
    auto o = HolmBonferroni(p, 0.05);
    bool seen_accept = false;
    for (auto idx : o.order) {
      if (!o.reject[idx]) seen_accept = true;
      else CHECK_FALSE(seen_accept);
    }
  }
}

TEST_CASE("Pearson correlation") {
  std::vector<double> x = {1, 2, 3, 4, 5};
  std::vector<double> y2, yn;
  for (double v : x) {
    y2.push_back(2 * v + 3);
    yn.push_back(-v);
  }
  CHECK(PearsonR(x, y2) == doctest::Approx(1.0));
  CHECK(PearsonR(x, yn) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(PearsonR(x, {1, 1, 1, 1, 1}), DataError);
  auto fit = FitLine(x, y2);
  CHECK(fit.slope == doctest::Approx(2));
  CHECK(fit.intercept == doctest::Approx(3));

  Rng rng(77);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + int(UniformIndex(rng, 50));
    std::vector<double> a(n), b(n);
    const double rho = 2 * Uniform01(rng) - 1;
    for (int i = 0; i < n; ++i) {
      a[i] = 10 * StdNormal(rng);
      b[i] = rho * a[i] + StdNormal(rng) * 5;
    }
    const double r = PearsonR(a, b);
    worst = std::max(worst, std::abs(r - OracleR(a, b)));
    std::vector<double> a2(n), b2(n);
    for (int i = 0; i < n; ++i) {
      a2[i] = 3 * a[i] + 7;
      b2[i] = -b[i];
    }
    CHECK(PearsonR(a2, b) == doctest::Approx(r).epsilon(1e-9));
    CHECK(PearsonR(a, b2) == doctest::Approx(-r).epsilon(1e-9));
  }
  CHECK(worst < 1e-12);
}

namespace {

corpus::Manifest ThreeModeManifest(int speakers) {
  corpus::Manifest m;
  Rng rng(12);
  for (int s = 0; s < speakers; ++s)
    for (const char* mode : {"modal", "silent", "whispered"})
      for (int u = 0; u < 3; ++u) {
        corpus::UtteranceRecord r;
        r.speaker_id = "s" + std::to_string(s);
        r.mode = corpus::ParseMode(mode);
        r.utt_id = r.speaker_id + "_" + mode + "_" + std::to_string(u);
        r.prompt = {"w" + std::to_string(u)};
        r.syllable_count = 5;
        r.duration = 2.0 + Uniform01(rng) + (r.mode == corpus::SpeakingMode::kSilent ? 0.5 : 0);
        r.split = corpus::Split::kTest;
        m.records.push_back(r);
      }
  return m;
}

}  // namespace

TEST_CASE("three modes form one family of three tests") {
  auto m = ThreeModeManifest(6);
  std::map<std::string, double> rates;
  for (const auto& r : m.records) rates[r.utt_id] = SyllableRate(r);
  SpeakerMetrics metrics;
  Rng rng(1);
  for (int s = 0; s < 6; ++s)
    for (const char* mode : {"modal", "silent", "whispered"})
      metrics["hull_area"]["s" + std::to_string(s)][mode] = 100 + 10 * Uniform01(rng);
  auto rep = ModeComparisonReport(m, rates, metrics, {});
  int rate_tests = 0;
  std::vector<double> thresholds;
  for (const auto& t : rep.tests)
    if (t.metric == "syllable_rate") {
      ++rate_tests;
      thresholds.push_back(t.holm_threshold);
      CHECK(t.n == 18);
    }
  CHECK(rate_tests == 3);
  std::sort(thresholds.begin(), thresholds.end());
  CHECK(thresholds.front() == doctest::Approx(0.05 / 3));
  CHECK(rep.summary.size() == 6);
}

TEST_CASE("tempo-only corpus: duration effect without hull effect") {
  int both_right = 0;
  const int seeds = 20;
  for (int seed = 1; seed <= seeds; ++seed) {
    synth::SynthConfig cfg;
    cfg.seed = std::uint64_t(seed);
    cfg.n_speakers = 10;
    cfg.test_utts_per_speaker = 8;
    cfg.train_utts_per_speaker = 2;
    cfg.render_frames = false;
    cfg.emit_features = false;
    cfg.contour_frame_step = 12;
    cfg.effects[corpus::SpeakingMode::kSilent] = {0.85, 1.0, 0.0};
    const auto c = synth::GenerateCorpus(cfg);
    std::map<std::string, double> rates;
    for (const auto& r : c.manifest.records)
      if (r.split == corpus::Split::kTest) rates[r.utt_id] = SyllableRate(r);
    artic::ArticSpaceOptions ao;
    ao.seed = cfg.seed;
    const auto space = artic::ArticulatorySpace(c.manifest, c.contours, ao);
    SpeakerMetrics metrics;
    for (const auto& h : space.hulls) metrics["hull_area"][h.speaker_id][h.mode] = h.area;
    const auto rep = ModeComparisonReport(c.manifest, rates, metrics, {});
    bool rate_sig = false, hull_sig = true;
    for (const auto& t : rep.tests) {
      if (t.metric == "syllable_rate") rate_sig = t.reject;
      if (t.metric == "hull_area") hull_sig = t.reject;
    }
    both_right += rate_sig && !hull_sig;
  }
  CHECK(both_right >= 18);
}
