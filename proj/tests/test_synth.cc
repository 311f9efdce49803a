// tests/test_synth.cc

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

#include "ssikit/stats.h"
#include "ssikit/synth.h"
#include "test_util.h"

using namespace ssikit;
using namespace ssikit::synth;

namespace {

SynthConfig Small(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.n_speakers = 4;
  c.test_utts_per_speaker = 5;
  c.train_utts_per_speaker = 6;
  return c;
}

artic::PointList Pool(const std::vector<artic::PointList>& traj) {
  artic::PointList out;
  for (const auto& c : traj) out.insert(out.end(), c.begin(), c.end());
  return out;
}

artic::Point Mean(const artic::PointList& pts) {
  artic::Point m(0, 0);
  for (const auto& p : pts) m += p;
  return m / double(pts.size());
}

}  // namespace

TEST_CASE("configuration checks") {
  SynthConfig c;
  CHECK_NOTHROW(c.Validate());
  CHECK(c.effects.at(corpus::SpeakingMode::kModal).tempo == 1.0);
  CHECK(c.effects.at(corpus::SpeakingMode::kModal).contraction == 1.0);
  c.effects[corpus::SpeakingMode::kModal].tempo = 0.9;
  CHECK_THROWS_AS(c.Validate(), UsageError);
  SynthConfig d;
  d.effects[corpus::SpeakingMode::kSilent].contraction = 0;
  CHECK_THROWS_AS(d.Validate(), UsageError);
}

TEST_CASE("duration scaling") {
  auto d = ScaleDurations({3, 4, 10, 17}, 0.85);
  CHECK(d == std::vector<int>{int(std::ceil(3 / 0.85)), int(std::ceil(4 / 0.85)),
                              int(std::ceil(10 / 0.85)), int(std::ceil(17 / 0.85))});
  CHECK(ScaleDurations({3, 4}, 1.0) == std::vector<int>{3, 4});
}

TEST_CASE("contour trajectories") {
  SynthConfig cfg = Small(3);
  cfg.contour_jitter = 0;
  const auto inv = MakeInventory(cfg);
  const auto spk = MakeSpeaker(cfg, inv, 1);
  const std::vector<int> phones = {0, 3, 5, 1, 2};
  const std::vector<int> frames = {4, 6, 5, 7, 4};
  Rng r1(5), r2(5);
  const auto full = GenContourTrajectory(cfg, inv, spk, 1.0, phones, frames, r1);
  const auto small = GenContourTrajectory(cfg, inv, spk, 0.9, phones, frames, r2);
  REQUIRE(full.size() == 26);

  const auto a = Pool(full), b = Pool(small);
  const artic::Point ca = Mean(a), cb = Mean(b);
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, ((b[i] - cb) - 0.9 * (a[i] - ca)).norm());
  CHECK(worst < 1e-9);
  const double ratio = artic::PolygonArea(artic::ConvexHull(b)) / artic::PolygonArea(artic::ConvexHull(a));
  CHECK(std::abs(ratio - 0.81) < 1e-6);

  Rng r3(5);
  CHECK(GenContourTrajectory(cfg, inv, spk, 1.0, phones, frames, r3) == full);
}

TEST_CASE("pseudo-ultrasound rendering") {
  SynthConfig cfg = Small(2);
  const auto inv = MakeInventory(cfg);
  const auto spk = MakeSpeaker(cfg, inv, 0);
  Rng rng(1);
  const auto traj = GenContourTrajectory(cfg, inv, spk, 1.0, {1, 2}, {3, 3}, rng);
  for (const auto& contour : traj) {
    Grid g = RenderPseudoUltrasound(contour, cfg.height, cfg.width, 0.0, rng);
    CHECK(g.minCoeff() >= 0);
    CHECK(g.maxCoeff() <= 1);
    for (const auto& p : contour) {
      const int c = int(std::lround(p.x()));
      if (c < 0 || c >= cfg.width || std::abs(p.x() - c) > 1e-9) continue;
      Eigen::Index row;
      g.col(c).maxCoeff(&row);
      CHECK(std::abs(double(row) - p.y()) <= 1.0);
    }
  }
}

TEST_CASE("corpus generation") {
  const auto a = GenerateCorpus(Small(7));
  const auto b = GenerateCorpus(Small(7));
  const auto c = GenerateCorpus(Small(8));
  REQUIRE(a.manifest.records.size() == b.manifest.records.size());
  CHECK(a.contours.size() == b.contours.size());
  for (std::size_t i = 0; i < a.features.size(); ++i) CHECK(a.features[i] == b.features[i]);
  CHECK(a.contours[10].points == b.contours[10].points);
  CHECK(a.features[0] != c.features[0]);
  CHECK_NOTHROW(a.manifest.Validate());
  CHECK(a.manifest.phones.size() == std::size_t(Small(7).n_phones));

  ssikit::testing::TempDir dir("synth");
  WriteCorpus(dir.path(), a);
  const auto loaded = corpus::LoadManifest(dir / "manifest.json");
  CHECK(loaded.records.size() == a.manifest.records.size());
  CHECK_NOTHROW(loaded.Validate());
  for (const char* f : {"lexicon.txt", "lm_corpus.txt", "contours.csv", "truth.json"})
    CHECK(std::filesystem::exists(dir / f));
  const auto& r0 = loaded.records[0];
  CHECK(r0.ultrasound->Get().size() == r0.phone_labels->size());
  CHECK(corpus::ReadFeatures(dir / ("features_oracle/" + r0.utt_id + ".artf")).rows() ==
        Eigen::Index(r0.phone_labels->size()));
  CHECK(ReadSentences(dir / "lm_corpus.txt").size() == a.lm_sentences.size());
}

TEST_CASE("planted tempo shows in syllable rates") {
  SynthConfig cfg;
  cfg.seed = 11;
  cfg.n_speakers = 10;
  cfg.test_utts_per_speaker = 20;
  cfg.train_utts_per_speaker = 1;
  cfg.render_frames = false;
  cfg.emit_contours = false;
  cfg.emit_features = false;
  cfg.effects[corpus::SpeakingMode::kSilent] = {0.85, 1.0, 0.0};
  const auto c = GenerateCorpus(cfg);
  std::vector<double> modal, silent;
  for (const auto& r : c.manifest.records) {
    if (r.split != corpus::Split::kTest) continue;
    (r.mode == corpus::SpeakingMode::kModal ? modal : silent).push_back(stats::SyllableRate(r));
  }
  REQUIRE(modal.size() == 200);
  REQUIRE(silent.size() == 200);
  CHECK(std::abs(stats::Mean(modal) - cfg.target_syllable_rate) < 0.05);
  CHECK(std::abs(stats::Mean(silent) / stats::Mean(modal) - 0.85) < 0.03);
}
