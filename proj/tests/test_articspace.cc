// tests/test_articspace.cc

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

#include <algorithm>
#include <cmath>
#include <set>

#include "ssikit/artic.h"
#include "ssikit/synth.h"
#include "test_util.h"

using namespace ssikit;
using namespace ssikit::artic;

namespace {

using Key = std::pair<double, double>;

std::set<Key> AsSet(const PointList& pts) {
  std::set<Key> s;
  for (const auto& p : pts) s.insert({p.x(), p.y()});
  return s;
}

// O(n^3): (i, j) is a hull edge when every other point lies strictly left
// of i->j or on the closed segment. Vertices are the edge endpoints.
std::set<Key> BruteForceHull(const PointList& pts) {
  std::set<Key> out;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (pts[i] == pts[j]) continue;
      bool edge = true;
      for (std::size_t k = 0; k < n && edge; ++k) {
        const Point a = pts[j] - pts[i], b = pts[k] - pts[i];
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

double FanArea(const PointList& poly) {
  double a = 0;
  for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
    const Point u = poly[i] - poly[0], v = poly[i + 1] - poly[0];
    a += 0.5 * std::abs(u.x() * v.y() - u.y() * v.x());
  }
  return a;
}

double RefC(double n) {
  if (n <= 1) return 0;
  return 2 * (std::log(n - 1) + 0.5772156649015329) - 2 * (n - 1) / n;
}

double RefScore(const IsolationForest& f, const Point& p) {
  double total = 0;
  for (const auto& tree : f.trees) {
    int node = 0;
    double depth = 0;
    while (tree.nodes[std::size_t(node)].dim >= 0) {
      const auto& nd = tree.nodes[std::size_t(node)];
      node = p[nd.dim] < nd.split ? nd.left : nd.right;
      depth += 1;
    }
    total += depth + RefC(tree.nodes[std::size_t(node)].size);
  }
  const double psi = std::min<double>(f.subsample_size, double(f.trees[0].subsample.size()));
  return std::pow(2.0, -(total / double(f.trees.size())) / RefC(psi));
}

PointList Cluster(Rng& rng, int n, double sd = 1.0) {
  PointList pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(sd * StdNormal(rng), sd * StdNormal(rng));
  return pts;
}

Point FarPoint(Rng& rng, double r) {
  const double th = 6.283185307179586 * Uniform01(rng);
  return {r * std::cos(th), r * std::sin(th)};
}

}  // namespace

TEST_CASE("convex hull basics") {
  PointList sq = {{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}};
  auto h = ConvexHull(sq);
  CHECK(h.size() == 4);
  CHECK(AsSet(h).count({0.5, 0.5}) == 0);
  CHECK(h.front() == Point(0, 0));
  CHECK(PolygonArea(h) == doctest::Approx(1.0));

  PointList line = {{0, 0}, {1, 1}, {2, 2}, {3, 3}, {1.5, 1.5}};
  auto l = ConvexHull(line);
  CHECK(l.size() == 2);
  CHECK(AsSet(l) == std::set<Key>{{0, 0}, {3, 3}});
  CHECK(PolygonArea(l) == 0);

  CHECK(PolygonArea({{0, 0}, {2, 0}, {0, 2}}) == doctest::Approx(2.0));
  CHECK(PolygonArea({{0, 0}, {2, 0}}) == 0);
  PointList edge_mid = {{0, 0}, {2, 0}, {1, 0}, {2, 2}, {0, 2}};
  CHECK(ConvexHull(edge_mid).size() == 4);
}

TEST_CASE("convex hull equals brute force") {
  Rng rng(31);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    PointList pts;
    const bool lattice = trial % 2 == 0;
    for (int i = 0; i < 50; ++i) {
      if (lattice)
        pts.emplace_back(double(UniformIndex(rng, 12)), double(UniformIndex(rng, 12)));
      else
        pts.emplace_back(100 * Uniform01(rng), 60 * Uniform01(rng));
    }
    const auto hull = ConvexHull(pts);
    mismatches += AsSet(hull) != BruteForceHull(pts);
    mismatches += hull.size() != AsSet(hull).size();
  }
  CHECK(mismatches == 0);
}

TEST_CASE("hull is counter-clockwise, strictly convex and order invariant") {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    PointList pts = Cluster(rng, 40, 5);
    const auto h = ConvexHull(pts);
    for (std::size_t i = 0; i < h.size(); ++i) {
      const Point a = h[(i + 1) % h.size()] - h[i], b = h[(i + 2) % h.size()] - h[(i + 1) % h.size()];
      CHECK(a.x() * b.y() - a.y() * b.x() > 0);
    }
    std::shuffle(pts.begin(), pts.end(), rng);
    const auto h2 = ConvexHull(pts);
    CHECK(h2 == h);
    CHECK(PolygonArea(h2) == PolygonArea(h));
  }
}

TEST_CASE("polygon area matches fan triangulation") {
  Rng rng(33);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto hull = ConvexHull(Cluster(rng, 30, 1 + 20 * Uniform01(rng)));
    worst = std::max(worst, std::abs(PolygonArea(hull) - FanArea(hull)) /
                                std::max(1.0, FanArea(hull)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("average path length") {
  CHECK(AveragePathLength(1) == 0);
  CHECK(AveragePathLength(0) == 0);
  CHECK(AveragePathLength(256) == doctest::Approx(RefC(256)).epsilon(1e-12));
}

TEST_CASE("isolation forest") {
  Rng rng(40);
  PointList pts = Cluster(rng, 50);
  SUBCASE("deterministic in the seed") {
    auto a = FitIsolationForest(pts, {50, 32}, 9);
    auto b = FitIsolationForest(pts, {50, 32}, 9);
    CHECK(AnomalyScores(a, pts) == AnomalyScores(b, pts));
    auto c = FitIsolationForest(pts, {50, 32}, 10);
    CHECK(AnomalyScores(a, pts) != AnomalyScores(c, pts));
  }
  SUBCASE("identical points score equally") {
    PointList same(20, Point(3, 4));
    auto f = FitIsolationForest(same, {20, 16}, 1);
    auto s = AnomalyScores(f, same);
    for (double v : s) CHECK(v == s[0]);
  }
  SUBCASE("reference scorer") {
    auto f = FitIsolationForest(pts, {100, 256}, 3);
    double worst = 0;
    for (const auto& p : pts) worst = std::max(worst, std::abs(AnomalyScore(f, p) - RefScore(f, p)));
    CHECK(worst < 1e-6);
  }
  SUBCASE("tree order does not matter") {
    auto f = FitIsolationForest(pts, {30, 32}, 3);
    auto g = f;
    std::reverse(g.trees.begin(), g.trees.end());
    for (const auto& p : pts) CHECK(AnomalyScore(f, p) == doctest::Approx(AnomalyScore(g, p)).epsilon(1e-12));
  }
  SUBCASE("structure invariants") {
    auto f = FitIsolationForest(pts, {20, 32}, 5);
    for (const auto& t : f.trees) {
      for (const auto& nd : t.nodes) {
        if (nd.dim < 0) continue;
        double lo = 1e300, hi = -1e300;
        for (auto i : t.subsample) {
          lo = std::min(lo, pts[i][nd.dim]);
          hi = std::max(hi, pts[i][nd.dim]);
        }
        CHECK(nd.split >= lo);
        CHECK(nd.split <= hi);
        CHECK(t.nodes[std::size_t(nd.left)].size + t.nodes[std::size_t(nd.right)].size == nd.size);
      }
      CHECK(t.nodes[0].size == int(t.subsample.size()));
    }
  }
  SUBCASE("score formula limits") {
    IsolationForest f;
    f.subsample_size = 64;
    IsolationTree t;
    t.subsample.resize(64);
    IsolationTree::Node leaf;
    leaf.size = 64;
    t.nodes.push_back(leaf);  // root leaf: h = c(64), score exactly 0.5
    f.trees.push_back(t);
    CHECK(AnomalyScore(f, Point(0, 0)) == doctest::Approx(0.5).epsilon(1e-15));
    f.trees[0].nodes[0].size = 1;  // h -> 0
    CHECK(AnomalyScore(f, Point(0, 0)) == doctest::Approx(1.0));
  }
  SUBCASE("planted outliers score higher") {
    PointList all = Cluster(rng, 190);
    for (int i = 0; i < 10; ++i) all.push_back(FarPoint(rng, 10));
    auto f = FitIsolationForest(all, {1000, 256}, 8);
    auto s = AnomalyScores(f, all);
    double in = 0, out = 0;
    for (int i = 0; i < 190; ++i) in += s[std::size_t(i)] / 190;
    for (int i = 190; i < 200; ++i) out += s[std::size_t(i)] / 10;
    CHECK(out > in);
  }
}

TEST_CASE("outlier pruning") {
  Rng rng(41);
  ContourCloud cloud{"s", "modal", Cluster(rng, 60)};
  CHECK(PruneOutliers(cloud, 0.0, {}, 1).cloud.points == cloud.points);

  int exact = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng r(seed);
    ContourCloud c{"s", "modal", Cluster(r, 95)};
    std::set<Key> planted;
    for (int i = 0; i < 5; ++i) {
      c.points.push_back(FarPoint(r, 10));
      planted.insert({c.points.back().x(), c.points.back().y()});
    }
    const auto res = PruneOutliers(c, 0.05, {}, seed);
    const auto kept = AsSet(res.cloud.points);
    bool ok = res.n_pruned == 5;
    for (const auto& p : planted) ok = ok && !kept.count(p);
    exact += ok;
  }
  CHECK(exact >= 95);
  CHECK_THROWS_AS(PruneOutliers({"s", "m", {Point(0, 0)}}, 0.99, {}, 1), DataError);
}

TEST_CASE("ridge tracking") {
  SUBCASE("black frame") { CHECK_THROWS_AS(RidgeTrack(Grid::Zero(16, 32)), DataError); }
  SUBCASE("single bright row") {
    Grid g = Grid::Zero(16, 32);
    g.row(7).setOnes();
    auto tc = RidgeTrack(g);
    REQUIRE(tc.points.size() == 32);
    for (const auto& p : tc.points) CHECK(p.y() == doctest::Approx(7.0));
  }
  SUBCASE("render then track") {
    Rng rng(5);
    PointList truth;
    for (int x = 0; x < 64; ++x) truth.emplace_back(x, 14 + 6 * std::sin(x / 10.0));
    Grid g = synth::RenderPseudoUltrasound(truth, 32, 64, 0.0, rng);
    auto tc = RidgeTrack(g);
    double ss = 0;
    int n = 0;
    for (const auto& p : tc.points) {
      const double y = 14 + 6 * std::sin(p.x() / 10.0);
      ss += (p.y() - y) * (p.y() - y);
      ++n;
      CHECK(p.y() >= 0);
      CHECK(p.y() <= 31);
    }
    CHECK(n > 50);
    CHECK(std::sqrt(ss / n) < 1.0);
  }
}

namespace {

corpus::UtteranceRecord Rec(const std::string& id, const std::string& spk, const char* mode) {
  corpus::UtteranceRecord r;
  r.utt_id = id;
  r.speaker_id = spk;
  r.mode = corpus::ParseMode(mode);
  r.prompt = {"x"};
  r.duration = 1;
  r.split = corpus::Split::kTest;
  return r;
}

TongueContour Contour(const std::string& utt, int frame, const PointList& pts) {
  return {utt, frame, pts};
}

}  // namespace

TEST_CASE("articulatory space pooling") {
  corpus::Manifest m;
  m.records = {Rec("a1", "A", "modal"), Rec("a2", "A", "silent"), Rec("b1", "B", "modal")};
  Rng rng(6);
  std::vector<TongueContour> cs;
  for (int f = 0; f < 20; ++f) {
    PointList pts = Cluster(rng, 10, 3);
    cs.push_back(Contour("a1", f, pts));
    cs.push_back(Contour("a2", f, pts));
    cs.push_back(Contour("b1", f, Cluster(rng, 10, 2)));
  }
  ArticSpaceOptions opts;
  opts.seed = 4;
  const auto res = ArticulatorySpace(m, cs, opts);
  CHECK(res.paired_speakers == std::vector<std::string>{"A"});
  std::map<std::string, double> area;
  for (const auto& h : res.hulls)
    if (h.speaker_id == "A") area[h.mode] = h.area;
  CHECK(area.at("modal") == area.at("silent"));
  CHECK(area.at("modal") > 0);

  // single-utterance cloud equals measuring that utterance directly
  ContourCloud b{"B", "modal", {}};
  for (const auto& c : cs)
    if (c.utt_id == "b1") b.points.insert(b.points.end(), c.points.begin(), c.points.end());
  double b_area = -1;
  for (const auto& h : res.hulls)
    if (h.speaker_id == "B") b_area = h.area;
  CHECK(b_area == doctest::Approx(MeasureCloud(b, opts).area));

  ssikit::testing::TempDir dir("hulls");
  WriteHullReport(dir / "h.csv", res.hulls);
  auto back = ReadHullReport(dir / "h.csv");
  REQUIRE(back.size() == res.hulls.size());
  CHECK(back[0].area == doctest::Approx(res.hulls[0].area));
  WriteContours(dir / "c.csv", cs);
  auto cs2 = ReadContours(dir / "c.csv");
  REQUIRE(cs2.size() == cs.size());
  CHECK(cs2[5].points.size() == cs[5].points.size());
}

TEST_CASE("contracted silent contours give smaller hulls") {
  synth::SynthConfig cfg;
  cfg.n_speakers = 30;
  cfg.test_utts_per_speaker = 6;
  cfg.train_utts_per_speaker = 1;
  cfg.render_frames = false;
  cfg.emit_features = false;
  cfg.contour_frame_step = 6;
  cfg.effects[corpus::SpeakingMode::kSilent] = {1.0, 0.9, 0.0};
  const auto c = synth::GenerateCorpus(cfg);
  ArticSpaceOptions opts;
  opts.seed = 1;
  const auto res = ArticulatorySpace(c.manifest, c.contours, opts);
  std::map<std::string, std::map<std::string, double>> area;
  for (const auto& h : res.hulls) area[h.speaker_id][h.mode] = h.area;
  int smaller = 0;
  for (const auto& [spk, modes] : area) smaller += modes.at("silent") < modes.at("modal");
  CHECK(area.size() == 30);
  CHECK(smaller >= 27);
}
