// src/artic.cc

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

#include "ssikit/artic.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "ssikit/svg.h"

namespace ssikit::artic {

namespace fs = std::filesystem;

// ---- ridge tracking ----------------------------------------------------------

TongueContour RidgeTrack(const Grid& frame, const RidgeTrackOptions& options) {
  const int h = int(frame.rows()), w = int(frame.cols());
  TongueContour contour;
  std::vector<double> smooth(std::size_t(std::max(h, 0)));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) {
      double s = 0;
      int n = 0;
      for (int k = -options.smoothing_radius; k <= options.smoothing_radius; ++k) {
        int rr = r + k;
        if (rr < 0 || rr >= h) continue;
        s += frame(rr, c);
        ++n;
      }
      smooth[std::size_t(r)] = s / n;
    }
    auto best = std::max_element(smooth.begin(), smooth.end());
    if (best == smooth.end() || *best < options.threshold) continue;
    const int r = int(best - smooth.begin());
    int plateau_end = r;
    while (plateau_end + 1 < h && smooth[std::size_t(plateau_end + 1)] == *best) ++plateau_end;
    double offset = 0.0;
    if (plateau_end > r) {
      offset = 0.5 * (plateau_end - r);
    } else if (r > 0 && r < h - 1) {
      const double a = smooth[std::size_t(r - 1)], b = smooth[std::size_t(r)],
                   d = smooth[std::size_t(r + 1)];
      const double denom = a - 2 * b + d;
      if (denom < 0) offset = std::clamp(0.5 * (a - d) / denom, -0.5, 0.5);
    }
    contour.points.emplace_back(double(c), double(r) + offset);
  }
  if (contour.points.empty())
    throw DataError("RidgeTrack: no column exceeds the brightness threshold");
  return contour;
}

// ---- isolation forest --------------------------------------------------------

double AveragePathLength(double n) {
  if (n <= 1) return 0.0;
  constexpr double kEuler = 0.5772156649015329;
  const double harmonic = std::log(n - 1.0) + kEuler;
  return 2.0 * harmonic - 2.0 * (n - 1.0) / n;
}

namespace {

int BuildNode(IsolationTree& tree, const PointList& points,
              std::vector<std::size_t>& idx, std::size_t begin, std::size_t end,
              int depth, int height_limit, Rng& rng) {
  const int node_id = int(tree.nodes.size());
  tree.nodes.push_back({});
  tree.nodes[std::size_t(node_id)].size = int(end - begin);
  tree.nodes[std::size_t(node_id)].depth = depth;
  if (depth >= height_limit || end - begin <= 1) return node_id;

  int candidates[2];
  double lo[2], hi[2];
  int n_candidates = 0;
  for (int d = 0; d < 2; ++d) {
    lo[d] = hi[d] = points[idx[begin]][d];
    for (std::size_t i = begin + 1; i < end; ++i) {
      lo[d] = std::min(lo[d], points[idx[i]][d]);
      hi[d] = std::max(hi[d], points[idx[i]][d]);
    }
    if (hi[d] > lo[d]) candidates[n_candidates++] = d;
  }
  if (n_candidates == 0) return node_id;
  const int dim = candidates[UniformIndex(rng, std::size_t(n_candidates))];
  const double split = lo[dim] + Uniform01(rng) * (hi[dim] - lo[dim]);
  auto mid_it = std::stable_partition(
      idx.begin() + long(begin), idx.begin() + long(end),
      [&](std::size_t i) { return points[i][dim] < split; });
  const auto mid = std::size_t(mid_it - idx.begin());
  const int left = BuildNode(tree, points, idx, begin, mid, depth + 1, height_limit, rng);
  const int right = BuildNode(tree, points, idx, mid, end, depth + 1, height_limit, rng);
  auto& node = tree.nodes[std::size_t(node_id)];
  node.dim = dim;
  node.split = split;
  node.left = left;
  node.right = right;
  return node_id;
}

}  // namespace

IsolationForest FitIsolationForest(const PointList& points,
                                   const ForestParams& params,
                                   std::uint64_t seed) {
  if (points.size() < 2) throw DataError("FitIsolationForest: need at least 2 points");
  if (params.n_trees < 1 || params.subsample_size < 2)
    throw DataError("FitIsolationForest: invalid forest parameters");
  IsolationForest forest;
  forest.n_trees = params.n_trees;
  forest.subsample_size = int(std::min<std::size_t>(std::size_t(params.subsample_size),
                                                    points.size()));
  forest.height_limit = int(std::ceil(std::log2(double(forest.subsample_size))));
  Rng rng(seed);
  std::vector<std::size_t> pool(points.size());
  forest.trees.reserve(std::size_t(params.n_trees));
  for (int t = 0; t < params.n_trees; ++t) {
    std::iota(pool.begin(), pool.end(), 0);
    const auto psi = std::size_t(forest.subsample_size);
    for (std::size_t i = 0; i < psi; ++i)
      std::swap(pool[i], pool[i + UniformIndex(rng, pool.size() - i)]);
    IsolationTree tree;
    tree.subsample.assign(pool.begin(), pool.begin() + long(psi));
    std::vector<std::size_t> idx = tree.subsample;
    BuildNode(tree, points, idx, 0, idx.size(), 0, forest.height_limit, rng);
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

double PathLength(const IsolationTree& tree, const Point& p) {
  int n = 0;
  while (tree.nodes[std::size_t(n)].dim >= 0) {
    const auto& node = tree.nodes[std::size_t(n)];
    n = p[node.dim] < node.split ? node.left : node.right;
  }
  const auto& leaf = tree.nodes[std::size_t(n)];
  return double(leaf.depth) + AveragePathLength(double(leaf.size));
}

double AnomalyScore(const IsolationForest& forest, const Point& p) {
  double total = 0;
  for (const auto& tree : forest.trees) total += PathLength(tree, p);
  const double mean = total / double(forest.trees.size());
  return std::pow(2.0, -mean / AveragePathLength(double(forest.subsample_size)));
}

std::vector<double> AnomalyScores(const IsolationForest& forest,
                                  const PointList& points) {
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = AnomalyScore(forest, points[i]);
  return out;
}

PruneResult PruneOutliers(const ContourCloud& cloud, double contamination,
                          const ForestParams& params, std::uint64_t seed) {
  if (!(contamination >= 0 && contamination < 0.5))
    throw DataError("PruneOutliers: contamination must be in [0, 0.5)");
  PruneResult out;
  out.cloud.speaker_id = cloud.speaker_id;
  out.cloud.mode = cloud.mode;
  const std::size_t n = cloud.points.size();
  const auto k = std::size_t(std::ceil(contamination * double(n) - 1e-9));
  if (k == 0) {
    out.cloud.points = cloud.points;
    return out;
  }
  if (k >= n) throw DataError("PruneOutliers: pruning would empty the cloud");
  const IsolationForest forest = FitIsolationForest(cloud.points, params, seed);
  const std::vector<double> scores = AnomalyScores(forest, cloud.points);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> drop(n, false);
  for (std::size_t i = 0; i < k; ++i) drop[order[i]] = true;
  out.cloud.points.reserve(n - k);
  for (std::size_t i = 0; i < n; ++i)
    if (!drop[i]) out.cloud.points.push_back(cloud.points[i]);
  out.n_pruned = k;
  return out;
}

// ---- hull ----------------------------------------------------------------------

namespace {

struct FixedPoint {
  std::int64_t x, y;
  std::size_t src;
};

__int128 Cross(const FixedPoint& o, const FixedPoint& a, const FixedPoint& b) {
  return __int128(a.x - o.x) * (b.y - o.y) - __int128(a.y - o.y) * (b.x - o.x);
}

}  // namespace

PointList ConvexHull(const PointList& points) {
  std::vector<FixedPoint> pts;
  pts.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    pts.push_back({std::llround(points[i].x() * kHullScale),
                   std::llround(points[i].y() * kHullScale), i});
  std::stable_sort(pts.begin(), pts.end(), [](const FixedPoint& a, const FixedPoint& b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const FixedPoint& a, const FixedPoint& b) {
                          return a.x == b.x && a.y == b.y;
                        }),
            pts.end());
  PointList out;
  if (pts.size() <= 2) {
    for (const auto& p : pts) out.push_back(points[p.src]);
    return out;
  }
  std::vector<FixedPoint> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && Cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = pts.size() - 1; i-- > 0;) {
    while (k >= lower && Cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  for (const auto& p : hull) out.push_back(points[p.src]);
  return out;
}

double PolygonArea(const PointList& vertices) {
  const std::size_t n = vertices.size();
  if (n < 3) return 0.0;
  double twice = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = vertices[i];
    const auto& b = vertices[(i + 1) % n];
    twice += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * std::fabs(twice);
}

// ---- articulatory space --------------------------------------------------------

namespace {

HullResult MeasureInto(const ContourCloud& cloud, const ArticSpaceOptions& options,
                       ContourCloud* pruned_out) {
  if (cloud.points.empty())
    throw DataError("MeasureCloud: empty cloud for " + cloud.speaker_id);
  HullResult r;
  r.speaker_id = cloud.speaker_id;
  r.mode = cloud.mode;
  r.n_points = cloud.points.size();
  PruneResult pruned = PruneOutliers(cloud, options.contamination, options.forest,
                                     MixSeed(options.seed, cloud.speaker_id));
  r.n_pruned = pruned.n_pruned;
  r.vertices = ConvexHull(pruned.cloud.points);
  r.area = PolygonArea(r.vertices) * options.mm_per_pixel * options.mm_per_pixel;
  if (pruned_out) *pruned_out = std::move(pruned.cloud);
  return r;
}

}  // namespace

HullResult MeasureCloud(const ContourCloud& cloud, const ArticSpaceOptions& options) {
  return MeasureInto(cloud, options, nullptr);
}

ArticSpaceResult ArticulatorySpace(const corpus::Manifest& manifest,
                                   const std::vector<TongueContour>& contours,
                                   const ArticSpaceOptions& options) {
  std::map<std::string, const corpus::UtteranceRecord*> by_id;
  for (const auto& r : manifest.records) by_id[r.utt_id] = &r;

  std::map<std::pair<std::string, std::string>, ContourCloud> clouds;
  std::set<std::string> have_contours;
  for (const auto& c : contours) {
    auto it = by_id.find(c.utt_id);
    if (it == by_id.end()) continue;
    const auto& rec = *it->second;
    if (options.test_split_only && rec.split != corpus::Split::kTest) continue;
    const std::string mode = corpus::ToString(rec.mode);
    auto& cloud = clouds[{rec.speaker_id, mode}];
    cloud.speaker_id = rec.speaker_id;
    cloud.mode = mode;
    cloud.points.insert(cloud.points.end(), c.points.begin(), c.points.end());
    have_contours.insert(c.utt_id);
  }
  for (const auto& r : manifest.records)
    if ((!options.test_split_only || r.split == corpus::Split::kTest) &&
        !have_contours.count(r.utt_id))
      LogWarning("articulatory space: no contours for utterance " + r.utt_id);

  std::vector<const ContourCloud*> work;
  for (const auto& [key, cloud] : clouds) work.push_back(&cloud);
  ArticSpaceResult result;
  result.hulls.resize(work.size());
  std::vector<ContourCloud> pruned(work.size());
  auto measure = [&](std::size_t i) {
    result.hulls[i] = MeasureInto(*work[i], options, &pruned[i]);
  };
  const int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < work.size(); ++i) measure(i);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j)
      pool.emplace_back([&, j] {
        for (std::size_t i = std::size_t(j); i < work.size(); i += std::size_t(jobs))
          measure(i);
      });
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < work.size(); ++i)
    result.pruned_clouds[work[i]->speaker_id][work[i]->mode] = std::move(pruned[i]);

  std::set<std::string> all_modes;
  std::map<std::string, std::set<std::string>> modes_by_speaker;
  for (const auto& h : result.hulls) {
    all_modes.insert(h.mode);
    modes_by_speaker[h.speaker_id].insert(h.mode);
  }
  for (const auto& [spk, modes] : modes_by_speaker) {
    if (modes == all_modes) {
      result.paired_speakers.push_back(spk);
    } else {
      LogWarning("articulatory space: speaker " + spk +
                 " lacks a speaking mode; excluded from paired output");
    }
  }
  return result;
}

// ---- files -----------------------------------------------------------------------

std::vector<TongueContour> ReadContours(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open contour file '" + path.string() + "'");
  std::vector<TongueContour> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && line.rfind("utt_id", 0) == 0) continue;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string utt, frame, x, y;
    if (!std::getline(ss, utt, ',') || !std::getline(ss, frame, ',') ||
        !std::getline(ss, x, ',') || !std::getline(ss, y, ','))
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected utt_id,frame,x,y");
    int f;
    Point p;
    try {
      f = std::stoi(frame);
      p = Point(std::stod(x), std::stod(y));
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": malformed number");
    }
    if (out.empty() || out.back().utt_id != utt || out.back().frame_index != f)
      out.push_back({utt, f, {}});
    out.back().points.push_back(p);
  }
  return out;
}

void WriteContours(const fs::path& path, const std::vector<TongueContour>& contours) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "utt_id,frame,x,y\n";
  char buf[96];
  for (const auto& c : contours)
    for (const auto& p : c.points) {
      std::snprintf(buf, sizeof(buf), ",%d,%.6f,%.6f\n", c.frame_index, p.x(), p.y());
      out << c.utt_id << buf;
    }
}

void WriteHullReport(const fs::path& path, const std::vector<HullResult>& hulls) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "speaker,mode,n_points,n_pruned,area\n";
  char buf[64];
  for (const auto& h : hulls) {
    std::snprintf(buf, sizeof(buf), "%.17g", h.area);
    out << h.speaker_id << ',' << h.mode << ',' << h.n_points << ',' << h.n_pruned
        << ',' << buf << '\n';
  }
}

std::vector<HullResult> ReadHullReport(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<HullResult> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string spk, mode, n, k, area;
    std::getline(ss, spk, ',');
    std::getline(ss, mode, ',');
    std::getline(ss, n, ',');
    std::getline(ss, k, ',');
    std::getline(ss, area, ',');
    HullResult h;
    h.speaker_id = spk;
    h.mode = mode;
    try {
      h.n_points = std::stoul(n);
      h.n_pruned = std::stoul(k);
      h.area = std::stod(area);
    } catch (const std::exception&) {
      throw DataError(path.string() + ": malformed hull report row");
    }
    out.push_back(std::move(h));
  }
  return out;
}

void WriteHullSvg(const fs::path& path, const std::string& speaker,
                  const std::map<std::string, ContourCloud>& clouds_by_mode,
                  const std::map<std::string, HullResult>& hulls_by_mode) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& [mode, cloud] : clouds_by_mode)
    for (const auto& p : cloud.points) {
      x0 = std::min(x0, p.x());
      x1 = std::max(x1, p.x());
      y0 = std::min(y0, p.y());
      y1 = std::max(y1, p.y());
    }
  if (x0 > x1) {
    x0 = y0 = 0;
    x1 = y1 = 1;
  }
  const std::map<std::string, std::string> colours = {
      {"modal", "#1f77b4"}, {"silent", "#d62728"}, {"whispered", "#2ca02c"}};
  svg::Canvas canvas(480, 360);
  canvas.SetBounds(x0 - 1, x1 + 1, y0 - 1, y1 + 1, /*flip_y=*/false);
  canvas.Axes("x (px)", "y (px)");
  canvas.Title("speaker " + speaker);
  double legend_y = 34;
  for (const auto& [mode, cloud] : clouds_by_mode) {
    auto col = colours.count(mode) ? colours.at(mode) : std::string("#555");
    const std::size_t stride = std::max<std::size_t>(1, cloud.points.size() / 3000);
    for (std::size_t i = 0; i < cloud.points.size(); i += stride)
      canvas.Dot(cloud.points[i].x(), cloud.points[i].y(), 0.8, col, 0.15);
    auto h = hulls_by_mode.find(mode);
    if (h != hulls_by_mode.end()) {
      std::vector<std::pair<double, double>> poly;
      for (const auto& v : h->second.vertices) poly.emplace_back(v.x(), v.y());
      canvas.Polyline(poly, col, 2.0, true, false, 0.95);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%s: area %.1f", mode.c_str(), h->second.area);
      canvas.Text(380, legend_y, buf, 11);
      legend_y += 14;
    }
  }
  canvas.Save(path);
}

}  // namespace ssikit::artic
