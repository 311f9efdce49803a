// tests/acceptance.cc

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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "ssikit/artic.h"
#include "ssikit/asr/lm.h"
#include "ssikit/asr/pipeline.h"
#include "ssikit/featnet.h"
#include "ssikit/stats.h"
#include "ssikit/synth.h"

using namespace ssikit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

std::string Fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

int Jobs() { return std::max(1, int(std::thread::hardware_concurrency())); }

// ---- recognition experiments ------------------------------------------------

struct Task {
  asr::AcousticModels models;
  asr::BigramLm lm;
  asr::Lexicon lex;
  std::vector<asr::DecodeUtterance> modal, silent;
};

synth::SynthConfig RecognitionConfig(std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.seed = seed;
  cfg.n_speakers = 10;
  cfg.test_utts_per_speaker = 10;
  cfg.train_utts_per_speaker = 20;
  cfg.render_frames = false;
  cfg.emit_contours = false;
  return cfg;
}

Task BuildTask(const synth::SynthConfig& cfg) {
  const auto c = synth::GenerateCorpus(cfg);
  Task t;
  t.lex = c.inventory.lexicon;
  std::vector<asr::TrainUtterance> train;
  for (std::size_t i = 0; i < c.manifest.records.size(); ++i) {
    const auto& r = c.manifest.records[i];
    if (r.split != corpus::Split::kTest) {
      train.push_back({r.utt_id, r.speaker_id, c.features[i], t.lex.WordIds(r.prompt)});
    } else {
      asr::DecodeUtterance u{r.utt_id, r.speaker_id, c.features[i], r.prompt};
      (r.mode == corpus::SpeakingMode::kModal ? t.modal : t.silent).push_back(u);
    }
  }
  t.models = asr::TrainAcousticModels(c.inventory.phones, t.lex, train);
  t.lm = asr::TrainBigram(c.lm_sentences, t.lex.words);
  return t;
}

asr::DecodeSetOptions DecodeOpts() {
  asr::DecodeSetOptions o;
  o.jobs = Jobs();
  return o;
}

double Wer(const Task& t, const std::vector<asr::DecodeUtterance>& set, asr::FeatureType f) {
  return 100.0 * asr::DecodeSet(t.models, t.lm, t.lex, set, f, DecodeOpts()).wer.Rate();
}

Outcome MismatchDegradation(int seeds) {
  const auto start = Clock::now();
  int wins = 0;
  std::ostringstream per;
  for (int s = 1; s <= seeds; ++s) {
    const auto t = BuildTask(RecognitionConfig(std::uint64_t(s)));
    const double modal = Wer(t, t.modal, asr::FeatureType::kRaw);
    const double silent = Wer(t, t.silent, asr::FeatureType::kRaw);
    wins += silent > modal;
    per << " s" << s << "=" << Fmt(silent) << "/" << Fmt(modal);
  }
  const double secs = Seconds(start);
  return {wins == seeds && secs <= 300.0,
          "silent>modal raw WER in " + std::to_string(wins) + "/" + std::to_string(seeds) +
              " seeds, " + Fmt(secs, 1) + " s (silent/modal:" + per.str() + ")"};
}

Outcome FmllrDirection(int seeds) {
  int wins = 0;
  double rel_sum = 0, worst_modal = 0;
  for (int s = 1; s <= seeds; ++s) {
    const auto t = BuildTask(RecognitionConfig(std::uint64_t(s)));
    const double raw = Wer(t, t.silent, asr::FeatureType::kRaw);
    const double fm = Wer(t, t.silent, asr::FeatureType::kFmllr);
    const double modal_raw = Wer(t, t.modal, asr::FeatureType::kRaw);
    const double modal_fm = Wer(t, t.modal, asr::FeatureType::kFmllr);
    wins += fm < raw;
    rel_sum += raw > 0 ? (raw - fm) / raw : 0.0;
    worst_modal = std::max(worst_modal, std::abs(modal_fm - modal_raw));
  }
  const double mean_rel = 100.0 * rel_sum / seeds;
  return {wins >= (4 * seeds + 4) / 5 && mean_rel >= 5.0 && worst_modal <= 3.0,
          "fMLLR lowers silent WER in " + std::to_string(wins) + "/" + std::to_string(seeds) +
              " seeds, mean relative reduction " + Fmt(mean_rel, 1) + "%, max modal change " +
              Fmt(worst_modal) + " points"};
}

Outcome AdaptationDirection(int seeds) {
  int wins = 0;
  double worst_matched = 1e9;
  std::ostringstream info;
  for (int s = 1; s <= seeds; ++s) {
    const auto t = BuildTask(RecognitionConfig(std::uint64_t(s)));
    asr::AdaptOptions ad;
    ad.strategy = asr::AdaptStrategy::kMap;
    const auto silent = asr::AdaptUnsupervised(t.models, t.lm, t.lex, t.silent,
                                               asr::FeatureType::kRaw, ad, DecodeOpts());
    const auto modal = asr::AdaptUnsupervised(t.models, t.lm, t.lex, t.modal,
                                              asr::FeatureType::kRaw, ad, DecodeOpts());
    wins += silent.pass2.wer.Rate() < silent.pass1.wer.Rate();
    worst_matched =
        std::min(worst_matched, 100.0 * (modal.pass2.wer.Rate() - modal.pass1.wer.Rate()));
    const auto fm = asr::AdaptUnsupervised(t.models, t.lm, t.lex, t.silent,
                                           asr::FeatureType::kFmllr, ad, DecodeOpts());
    info << " s" << s << "=" << Fmt(100 * fm.pass1.wer.Rate()) << "->"
         << Fmt(100 * fm.pass2.wer.Rate());
  }
  std::cout << "INFO C3: silent fmllr features, pass1->pass2 WER:" << info.str() << '\n';
  return {wins >= (4 * seeds + 4) / 5 && worst_matched >= -1.0,
          "pass2<pass1 on silent raw in " + std::to_string(wins) + "/" + std::to_string(seeds) +
              " seeds, min modal pass2-pass1 " + Fmt(worst_matched) + " points"};
}

// ---- population statistics ---------------------------------------------------

double RateTestP(const synth::SynthConfig& cfg) {
  const auto c = synth::GenerateCorpus(cfg);
  std::map<std::string, double> rates;
  for (const auto& r : c.manifest.records)
    if (r.split == corpus::Split::kTest) rates[r.utt_id] = stats::SyllableRate(r);
  const auto rep = stats::ModeComparisonReport(c.manifest, rates, {}, {});
  for (const auto& t : rep.tests)
    if (t.metric == "syllable_rate") {
      if (t.n != 200) throw DataError("expected 200 paired utterances, got " + std::to_string(t.n));
      return t.p;
    }
  throw DataError("no syllable-rate test in the report");
}

Outcome DurationAnalysis(int seeds) {
  int planted = 0, null_rejects = 0;
  for (int s = 1; s <= seeds; ++s) {
    synth::SynthConfig cfg;
    cfg.seed = std::uint64_t(s);
    cfg.n_speakers = 10;
    cfg.test_utts_per_speaker = 20;
    cfg.train_utts_per_speaker = 1;
    cfg.render_frames = false;
    cfg.emit_contours = false;
    cfg.emit_features = false;
    cfg.effects[corpus::SpeakingMode::kSilent] = {0.85, 0.9, 0.5};
    planted += RateTestP(cfg) < 1e-3;
    cfg.effects[corpus::SpeakingMode::kSilent] = {1.0, 0.9, 0.5};
    null_rejects += RateTestP(cfg) < 1e-3;
  }
  return {planted * 100 >= 95 * seeds && null_rejects * 100 <= seeds,
          "tempo 0.85 rejected in " + std::to_string(planted) + "/" + std::to_string(seeds) +
              ", tempo 1.0 rejected in " + std::to_string(null_rejects) + "/" +
              std::to_string(seeds)};
}

double ExactContractionRatioError() {
  synth::SynthConfig cfg;
  cfg.contour_jitter = 0;
  const auto inv = synth::MakeInventory(cfg);
  double worst = 0;
  Rng prompts(99);
  for (int s = 0; s < 30; ++s) {
    const auto spk = synth::MakeSpeaker(cfg, inv, s);
    std::vector<int> phones, frames;
    for (int k = 0; k < 12; ++k) {
      phones.push_back(int(UniformIndex(prompts, std::size_t(cfg.n_phones))));
      frames.push_back(3 + int(UniformIndex(prompts, 6)));
    }
    Rng a(std::uint64_t(1000 + s)), b(std::uint64_t(1000 + s));
    artic::PointList full, small;
    for (const auto& c : synth::GenContourTrajectory(cfg, inv, spk, 1.0, phones, frames, a))
      full.insert(full.end(), c.begin(), c.end());
    for (const auto& c : synth::GenContourTrajectory(cfg, inv, spk, 0.9, phones, frames, b))
      small.insert(small.end(), c.begin(), c.end());
    const double ratio = artic::PolygonArea(artic::ConvexHull(small)) /
                         artic::PolygonArea(artic::ConvexHull(full));
    worst = std::max(worst, std::abs(ratio - 0.81));
  }
  return worst;
}

Outcome HullAnalysis(int seeds) {
  int rejects = 0;
  for (int s = 1; s <= seeds; ++s) {
    synth::SynthConfig cfg;
    cfg.seed = std::uint64_t(s);
    cfg.n_speakers = 30;
    cfg.test_utts_per_speaker = 8;
    cfg.train_utts_per_speaker = 1;
    cfg.render_frames = false;
    cfg.emit_features = false;
    cfg.contour_frame_step = 12;
    const auto c = synth::GenerateCorpus(cfg);
    artic::ArticSpaceOptions ao;
    ao.seed = cfg.seed;
    ao.jobs = Jobs();
    const auto space = artic::ArticulatorySpace(c.manifest, c.contours, ao);
    stats::SpeakerMetrics metrics;
    for (const auto& h : space.hulls) metrics["hull_area"][h.speaker_id][h.mode] = h.area;
    std::map<std::string, double> rates;
    for (const auto& r : c.manifest.records)
      if (r.split == corpus::Split::kTest) rates[r.utt_id] = stats::SyllableRate(r);
    const auto rep = stats::ModeComparisonReport(c.manifest, rates, metrics, {});
    for (const auto& t : rep.tests)
      if (t.metric == "hull_area" && t.n == 30) rejects += t.p < 1e-3;
  }
  const double err = ExactContractionRatioError();
  return {rejects * 100 >= 90 * seeds && err <= 1e-6,
          "hull test rejected in " + std::to_string(rejects) + "/" + std::to_string(seeds) +
              " seeds, zero-jitter area ratio max |r-0.81| = " + Fmt(err * 1e9, 3) + "e-9"};
}

Outcome NullCorrelation(int seeds) {
  int small = 0;
  double sum_abs = 0;
  for (int s = 1; s <= seeds; ++s) {
    synth::SynthConfig cfg;
    cfg.seed = std::uint64_t(s);
    cfg.n_speakers = 30;
    cfg.test_utts_per_speaker = 4;
    cfg.train_utts_per_speaker = 6;
    cfg.render_frames = false;
    cfg.emit_contours = false;
    const auto c = synth::GenerateCorpus(cfg);
    Task t;
    t.lex = c.inventory.lexicon;
    std::vector<asr::TrainUtterance> train;
    std::map<std::string, std::map<std::string, std::vector<double>>> rates;
    for (std::size_t i = 0; i < c.manifest.records.size(); ++i) {
      const auto& r = c.manifest.records[i];
      if (r.split != corpus::Split::kTest) {
        train.push_back({r.utt_id, r.speaker_id, c.features[i], t.lex.WordIds(r.prompt)});
        continue;
      }
      asr::DecodeUtterance u{r.utt_id, r.speaker_id, c.features[i], r.prompt};
      const bool modal = r.mode == corpus::SpeakingMode::kModal;
      (modal ? t.modal : t.silent).push_back(u);
      rates[r.speaker_id][modal ? "modal" : "silent"].push_back(stats::SyllableRate(r));
    }
    asr::AmConfig am;
    am.mono_iterations = 4;
    am.sat_outer_iterations = 1;
    t.models = asr::TrainAcousticModels(c.inventory.phones, t.lex, train, am);
    t.lm = asr::TrainBigram(c.lm_sentences, t.lex.words);
    auto per_speaker = [&](const std::vector<asr::DecodeUtterance>& set) {
      const auto res = asr::DecodeSet(t.models, t.lm, t.lex, set, asr::FeatureType::kRaw,
                                      DecodeOpts());
      std::map<std::string, asr::WerResult> by;
      for (std::size_t i = 0; i < set.size(); ++i)
        by[set[i].speaker] += asr::ComputeWer(set[i].reference, res.hypotheses[i].words);
      return by;
    };
    const auto wm = per_speaker(t.modal), ws = per_speaker(t.silent);
    std::vector<double> d_wer, d_rate;
    for (const auto& [spk, m] : wm) {
      d_wer.push_back(100.0 * (ws.at(spk).Rate() - m.Rate()));
      d_rate.push_back(stats::Mean(rates[spk]["silent"]) - stats::Mean(rates[spk]["modal"]));
    }
    const double r = stats::PearsonR(d_wer, d_rate);
    small += std::abs(r) < 0.2;
    sum_abs += std::abs(r);
  }
  return {small * 100 >= 90 * seeds,
          "|r(dWER, dRate)| < 0.2 in " + std::to_string(small) + "/" + std::to_string(seeds) +
              " seeds, mean |r| " + Fmt(sum_abs / seeds, 3)};
}

// ---- oracle equivalence ------------------------------------------------------

using Key = std::pair<double, double>;

std::set<Key> BruteForceHull(const artic::PointList& pts) {
  std::set<Key> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (pts[i] == pts[j]) continue;
      bool edge = true;
      for (std::size_t k = 0; k < pts.size() && edge; ++k) {
        const artic::Point a = pts[j] - pts[i], b = pts[k] - pts[i];
        const double cross = a.x() * b.y() - a.y() * b.x();
        if (cross < 0) edge = false;
        if (cross == 0) {
          const double t = a.dot(b) / a.squaredNorm();
          if (t < 0 || t > 1) edge = false;
        }
      }
      if (edge) {
        out.insert({pts[i].x(), pts[i].y()});
        out.insert({pts[j].x(), pts[j].y()});
      }
    }
  return out;
}

double QuadratureTwoTailed(double t, double df) {
  const double lc = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
  auto pdf = [&](double x) { return std::exp(lc - (df + 1) / 2 * std::log1p(x * x / df)); };
  const double a = std::abs(t);
  double err = 0;
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  if (a < 4) return 1.0 - 2.0 * GK::integrate(pdf, 0.0, a, 15, 1e-12, &err);
  return 2.0 * GK::integrate(pdf, a, std::numeric_limits<double>::infinity(), 15, 1e-12, &err);
}

int RecursiveEdits(const std::vector<std::string>& r, const std::vector<std::string>& h) {
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == r.size()) return int(h.size() - j);
    if (j == h.size()) return int(r.size() - i);
    if (auto it = memo.find({i, j}); it != memo.end()) return it->second;
    int best = go(i + 1, j + 1) + (r[i] == h[j] ? 0 : 1);
    best = std::min({best, go(i + 1, j) + 1, go(i, j + 1) + 1});
    return memo[{i, j}] = best;
  };
  return go(0, 0);
}

double Auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
      pairs += 1;
    }
  }
  return wins / pairs;
}

Outcome OracleEquivalence() {
  Rng rng(2026);
  int hull_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    artic::PointList pts;
    for (int i = 0; i < 50; ++i) {
      if (trial % 2 == 0)
        pts.emplace_back(double(UniformIndex(rng, 12)), double(UniformIndex(rng, 12)));
      else
        pts.emplace_back(100 * Uniform01(rng), 60 * Uniform01(rng));
    }
    std::set<Key> got;
    const auto hull = artic::ConvexHull(pts);
    for (const auto& p : hull) got.insert({p.x(), p.y()});
    hull_bad += got != BruteForceHull(pts) || got.size() != hull.size();
  }

  double t_err = 0, p_err = 0, r_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 3 + int(UniformIndex(rng, 60));
    std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    const double shift = 0.6 * StdNormal(rng);
    for (int i = 0; i < n; ++i) {
      a[std::size_t(i)] = 5 + StdNormal(rng);
      b[std::size_t(i)] = a[std::size_t(i)] - shift + 0.8 * StdNormal(rng);
    }
    long double md = 0, ma = 0, mb = 0;
    for (int i = 0; i < n; ++i) {
      md += a[std::size_t(i)] - b[std::size_t(i)];
      ma += a[std::size_t(i)];
      mb += b[std::size_t(i)];
    }
    md /= n;
    ma /= n;
    mb /= n;
    long double ss = 0, sab = 0, saa = 0, sbb = 0;
    for (int i = 0; i < n; ++i) {
      const long double d = a[std::size_t(i)] - b[std::size_t(i)] - md;
      const long double x = a[std::size_t(i)] - ma, y = b[std::size_t(i)] - mb;
      ss += d * d;
      sab += x * y;
      saa += x * x;
      sbb += y * y;
    }
    const double t_ref = double(md / (std::sqrt(ss / (n - 1)) / std::sqrt((long double)n)));
    stats::PairedSeries series;
    series.a = a;
    series.b = b;
    for (int i = 0; i < n; ++i) series.keys.push_back(std::to_string(i));
    const auto res = stats::PairedTTest(series);
    t_err = std::max(t_err, std::abs(res.t - t_ref) / std::max(1.0, std::abs(t_ref)));
    p_err = std::max(p_err, std::abs(res.p - QuadratureTwoTailed(t_ref, n - 1)));
    r_err = std::max(r_err, std::abs(stats::PearsonR(a, b) - double(sab / std::sqrt(saa * sbb))));
  }

  int wer_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> r(1 + UniformIndex(rng, 9)), h(UniformIndex(rng, 10));
    for (auto& w : r) w = std::string(1, char('a' + UniformIndex(rng, 4)));
    for (auto& w : h) w = std::string(1, char('a' + UniformIndex(rng, 4)));
    wer_bad += asr::ComputeWer(r, h).Errors() != RecursiveEdits(r, h);
  }

  double worst_auc = 1.0;
  for (int trial = 0; trial < 20; ++trial) {
    artic::PointList pts;
    std::vector<bool> outlier;
    for (int i = 0; i < 950; ++i) {
      pts.emplace_back(StdNormal(rng), StdNormal(rng));
      outlier.push_back(false);
    }
    for (int i = 0; i < 50; ++i) {
      const double th = 6.283185307179586 * Uniform01(rng);
      pts.emplace_back(10 * std::cos(th), 10 * std::sin(th));
      outlier.push_back(true);
    }
    const auto forest = artic::FitIsolationForest(pts, {}, std::uint64_t(trial + 1));
    worst_auc = std::min(worst_auc, Auc(artic::AnomalyScores(forest, pts), outlier));
  }

  const bool pass = hull_bad == 0 && t_err < 1e-9 && p_err < 1e-9 && r_err < 1e-9 &&
                    wer_bad == 0 && worst_auc >= 0.95;
  std::ostringstream d;
  d << "hull mismatches " << hull_bad << "/1000, max t err " << t_err << ", max p err " << p_err
    << ", max r err " << r_err << ", WER mismatches " << wer_bad << "/1000, min iForest AUC "
    << Fmt(worst_auc, 4);
  return {pass, d.str()};
}

// ---- numerical integrity -----------------------------------------------------

int CountDecreases(const std::vector<double>& trace) {
  int bad = 0;
  for (std::size_t i = 1; i < trace.size(); ++i)
    bad += trace[i] < trace[i - 1] - 1e-6 * std::abs(trace[i - 1]);
  return bad;
}

Outcome NumericalIntegrity() {
  featnet::FeatNetConfig fc;
  fc.channels = 2;
  fc.height = 14;
  fc.width = 14;
  fc.conv_kernel = 3;
  fc.conv_filters = {3, 4};
  fc.fc_dims = {16, 12, 8, 12};
  fc.n_classes = 3;
  auto params = featnet::InitParams<double>(fc, 4);
  Rng rng(4);
  featnet::Tensor<double> batch(16, fc.input_size());
  for (Eigen::Index i = 0; i < batch.size(); ++i) batch.data()[i] = StdNormal(rng);
  std::vector<int> labels(16);
  for (auto& l : labels) l = int(UniformIndex(rng, 3));
  featnet::GradientCheckOptions go;
  go.seed = 4;
  const auto gc = featnet::GradientCheck(params, batch, labels, go);

  auto cfg = RecognitionConfig(1);
  const auto c = synth::GenerateCorpus(cfg);
  const auto& lex = c.inventory.lexicon;
  std::vector<asr::TrainUtterance> train;
  for (std::size_t i = 0; i < c.manifest.records.size(); ++i) {
    const auto& r = c.manifest.records[i];
    if (r.split != corpus::Split::kTest)
      train.push_back({r.utt_id, r.speaker_id, c.features[i], lex.WordIds(r.prompt)});
  }
  auto flat = asr::FlatStart(c.inventory.phones, lex, train);
  asr::EmSchedule sched;
  sched.iterations = 10;
  const auto em = asr::TrainEm(flat.model, lex, train, sched, &flat.alignments);
  int em_bad = CountDecreases(em.log_likelihoods);
  asr::EmSchedule mix;
  mix.iterations = 10;
  mix.target_mixtures = 2;
  mix.split_after = {};
  asr::EmSchedule warm = mix;
  warm.iterations = 2;
  warm.split_after = {1};
  const auto split = asr::TrainEm(em.model, lex, train, warm);
  em_bad += CountDecreases(asr::TrainEm(split.model, lex, train, mix).log_likelihoods);

  // Per-speaker fMLLR on silent test data aligned to its references.
  std::map<std::string, std::vector<FeatureMatrix>> feats;
  std::map<std::string, std::vector<asr::Alignment>> aligns;
  for (std::size_t i = 0; i < c.manifest.records.size(); ++i) {
    const auto& r = c.manifest.records[i];
    if (r.split != corpus::Split::kTest || r.mode != corpus::SpeakingMode::kSilent) continue;
    feats[r.speaker_id].push_back(c.features[i]);
    aligns[r.speaker_id].push_back(
        asr::Align(em.model, lex, c.features[i], lex.WordIds(r.prompt)).states);
  }
  int fm_bad = 0, fm_logged = 0;
  asr::FmllrOptions fo;
  fo.iterations = 2;
  fo.row_sweeps = 5;
  for (const auto& [spk, f] : feats) {
    const auto res = asr::EstimateFmllr(em.model, f, aligns[spk], fo, spk);
    fm_bad += CountDecreases(res.auxiliary);
    fm_logged += int(res.auxiliary.size());
  }

  const bool pass = gc.max_relative_error < 1e-4 && em_bad == 0 && fm_bad == 0 &&
                    em.log_likelihoods.size() >= 10 && fm_logged >= 10;
  std::ostringstream d;
  d << "gradient check max rel err " << gc.max_relative_error << " over " << gc.checked
    << " entries; EM decreases " << em_bad << "; fMLLR auxiliary decreases " << fm_bad << " of "
    << fm_logged << " logged updates";
  return {pass, d.str()};
}

// ---- end-to-end --------------------------------------------------------------

#ifndef SSIKIT_BINARY
#define SSIKIT_BINARY "ssikit"
#endif

int Shell(const std::string& args) {
  const std::string cmd = std::string("\"") + SSIKIT_BINARY + "\" " + args;
  std::cout << "+ ssikit " << args << std::endl;
  const int rc = std::system(cmd.c_str());
  return rc == 0 ? 0 : (WIFEXITED(rc) ? WEXITSTATUS(rc) : 99);
}

bool HasMatch(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && e.path().extension() == ext) return true;
  }
  return false;
}

Outcome EndToEnd() {
  const fs::path root = fs::temp_directory_path() / "ssikit_acceptance_e2e";
  fs::remove_all(root);
  fs::create_directories(root);
  auto p = [&](const char* name) { return "\"" + (root / name).string() + "\""; };
  const std::string corpus = " --corpus " + p("corpus");
  const auto start = Clock::now();
  const std::vector<std::string> steps = {
      "synth --preset desk --seed 1 --out " + p("corpus"),
      "train-featnet --preset desk --seed 1" + corpus + " --out " + p("featnet"),
      "extract-features --preset desk" + corpus + " --model " + p("featnet") + " --out " +
          p("feats"),
      "train-am --preset desk" + corpus + " --feat-dir " + p("feats") + " --out " + p("am"),
      "decode" + corpus + " --feat-dir " + p("feats") + " --model " + p("am") +
          " --features raw --out " + p("dec"),
      "decode" + corpus + " --feat-dir " + p("feats") + " --model " + p("am") +
          " --features fmllr --out " + p("dec"),
      "adapt" + corpus + " --feat-dir " + p("feats") + " --model " + p("am") +
          " --adapt map --out " + p("dec"),
      "score" + corpus + " --out " + p("dec"),
      "analyze" + corpus + " --scores " + p("dec") + " --out " + p("analysis"),
      "report --in " + p("dec") + " " + p("analysis") + " --out " + p("bundle")};
  for (const auto& s : steps) {
    const int rc = Shell(s);
    if (rc != 0) return {false, "step failed with exit " + std::to_string(rc) + ": " + s};
  }
  const double secs = Seconds(start);
  const fs::path bundle = root / "bundle";
  std::vector<std::string> missing;
  for (const char* f : {"wer_table.csv", "wer_by_speaker.csv", "hulls.csv", "syllable_rates.csv",
                        "summary.csv", "tests.csv", "differences.csv", "correlations.csv",
                        "histograms.csv", "bundle.json"})
    if (!fs::exists(bundle / f)) missing.push_back(f);
  for (const char* prefix : {"hull_", "rate_scatter_", "hist_", "diff_"})
    if (!HasMatch(bundle, prefix, ".svg")) missing.push_back(std::string(prefix) + "*.svg");
  std::string miss;
  for (const auto& m : missing) miss += " " + m;
  const bool pass = secs <= 600.0 && missing.empty();
  if (pass) fs::remove_all(root);
  return {pass, "pipeline " + Fmt(secs, 1) + " s, missing artifacts:" +
                    (missing.empty() ? std::string(" none") : miss)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssikit acceptance checks"};
  std::vector<int> criteria;
  int seeds = 0;
  app.add_option("--criterion", criteria, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--seeds", seeds, "override the seed count of seeded criteria");
  CLI11_PARSE(app, argc, argv);
  if (criteria.empty()) criteria = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  SetVerbose(false);
  auto n = [&](int d) { return seeds > 0 ? seeds : d; };
  const std::map<int, std::function<Outcome()>> checks = {
      {1, [&] { return MismatchDegradation(n(5)); }},
      {2, [&] { return FmllrDirection(n(5)); }},
      {3, [&] { return AdaptationDirection(n(5)); }},
      {4, [&] { return DurationAnalysis(n(100)); }},
      {5, [&] { return HullAnalysis(n(100)); }},
      {6, [&] { return NullCorrelation(n(100)); }},
      {7, [] { return OracleEquivalence(); }},
      {8, [] { return NumericalIntegrity(); }},
      {9, [] { return EndToEnd(); }}};
  int failures = 0;
  for (int c : criteria) {
    const auto start = Clock::now();
    Outcome o;
    try {
      o = checks.at(c)();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " C" << c << ": " << o.detail << " ["
              << Fmt(Seconds(start), 1) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
