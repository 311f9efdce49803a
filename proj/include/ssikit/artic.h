// include/ssikit/artic.h

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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ssikit/corpus.h"

namespace ssikit::artic {

using Point = Eigen::Vector2d;  // (x = column, y = row), image pixels
using PointList = std::vector<Point>;

struct TongueContour {
  std::string utt_id;
  int frame_index = 0;
  PointList points;  // ordered left to right
};

struct ContourCloud {
  std::string speaker_id;
  std::string mode;
  PointList points;
};

// ---- ridge tracking ----------------------------------------------------------

struct RidgeTrackOptions {
  float threshold = 0.3f;   // minimum smoothed intensity for a column
  int smoothing_radius = 1; // vertical box-filter half width
};

/// Per column, the row of maximum vertically smoothed intensity (parabolic
/// sub-pixel refinement). Throws DataError if no column passes the threshold.
TongueContour RidgeTrack(const Grid& frame, const RidgeTrackOptions& options = {});

// ---- isolation forest --------------------------------------------------------

struct IsolationTree {
  struct Node {
    int dim = -1;          // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
    int size = 0;          // training points reaching the node
    int depth = 0;
  };
  std::vector<Node> nodes;            // nodes[0] is the root
  std::vector<std::size_t> subsample; // indices of the training sample
};

struct IsolationForest {
  int n_trees = 100;
  int subsample_size = 256;  // effective psi = min(requested, n)
  int height_limit = 8;
  std::vector<IsolationTree> trees;
};

struct ForestParams {
  int n_trees = 100;
  int subsample_size = 256;
};

/// Average path-length normaliser c(n) = 2H(n-1) - 2(n-1)/n with
/// H(i) = ln(i) + Euler-Mascheroni; c(n) = 0 for n <= 1.
double AveragePathLength(double n);

IsolationForest FitIsolationForest(const PointList& points,
                                   const ForestParams& params,
                                   std::uint64_t seed);

/// Path length of one point in one tree, extended by c(leaf size).
double PathLength(const IsolationTree& tree, const Point& p);

/// s(x) = 2^(-E[h(x)] / c(psi)).
double AnomalyScore(const IsolationForest& forest, const Point& p);
std::vector<double> AnomalyScores(const IsolationForest& forest,
                                  const PointList& points);

struct PruneResult {
  ContourCloud cloud;
  std::size_t n_pruned = 0;
};

/// Removes the ceil(contamination * N) highest-scoring points (stable order
/// on ties). Throws DataError if that would empty the cloud.
PruneResult PruneOutliers(const ContourCloud& cloud, double contamination,
                          const ForestParams& params, std::uint64_t seed);

// ---- hull ----------------------------------------------------------------------

inline constexpr double kHullScale = 65536.0;  // 2^16 fixed-point grid

/// Monotone-chain hull, counter-clockwise starting at the lowest-x (then
/// lowest-y) vertex, collinear boundary points dropped. Orientation tests
/// run in exact integer arithmetic on coordinates scaled by 2^16.
PointList ConvexHull(const PointList& points);

/// Shoelace area; fewer than 3 vertices gives 0.
double PolygonArea(const PointList& vertices);

struct HullResult {
  std::string speaker_id;
  std::string mode;
  PointList vertices;
  double area = 0.0;   // pixel^2 times scale^2
  std::size_t n_points = 0;
  std::size_t n_pruned = 0;
};

struct ArticSpaceOptions {
  double contamination = 0.02;
  ForestParams forest;
  std::uint64_t seed = 0;
  double mm_per_pixel = 1.0;   // area unit conversion (1 => pixel^2)
  bool test_split_only = true;
  int jobs = 1;
};

struct ArticSpaceResult {
  std::vector<HullResult> hulls;  // every speaker x mode with contours
  // Speakers that have every mode present in the corpus.
  std::vector<std::string> paired_speakers;
  std::map<std::string, std::map<std::string, ContourCloud>> pruned_clouds;
};

/// Pools contour points per speaker x mode, prunes, and measures the hull.
/// The forest seed depends on (seed, speaker) only, so identical clouds in
/// different modes prune identically.
ArticSpaceResult ArticulatorySpace(const corpus::Manifest& manifest,
                                   const std::vector<TongueContour>& contours,
                                   const ArticSpaceOptions& options);

HullResult MeasureCloud(const ContourCloud& cloud, const ArticSpaceOptions& options);

// ---- file formats ----------------------------------------------------------------

/// CSV: utt_id,frame,x,y; one point per row, grouped into contours by
/// (utt_id, frame) in file order.
std::vector<TongueContour> ReadContours(const std::filesystem::path& path);
void WriteContours(const std::filesystem::path& path,
                   const std::vector<TongueContour>& contours);

/// CSV: speaker,mode,n_points,n_pruned,area
void WriteHullReport(const std::filesystem::path& path,
                     const std::vector<HullResult>& hulls);
std::vector<HullResult> ReadHullReport(const std::filesystem::path& path);

/// Pooled points (light) and hull outline (dark) per mode for one speaker.
void WriteHullSvg(const std::filesystem::path& path, const std::string& speaker,
                  const std::map<std::string, ContourCloud>& clouds_by_mode,
                  const std::map<std::string, HullResult>& hulls_by_mode);

}  // namespace ssikit::artic
