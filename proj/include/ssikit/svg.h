// include/ssikit/svg.h

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

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ssikit::svg {

// Minimal standalone SVG writer with a data-to-pixel mapping.
class Canvas {
 public:
  Canvas(double width, double height, double margin = 40.0);

  /// Data bounds; flip_y maps larger y upwards (plots) instead of downwards
  /// (image coordinates).
  void SetBounds(double x0, double x1, double y0, double y1, bool flip_y = true);

  void Polyline(const std::vector<std::pair<double, double>>& pts,
                const std::string& stroke, double width = 1.0,
                bool closed = false, bool dashed = false, double opacity = 1.0);
  void Dot(double x, double y, double r, const std::string& fill,
           double opacity = 1.0);
  /// Axis-aligned rectangle in data coordinates.
  void Box(double x0, double y0, double x1, double y1, const std::string& fill,
           const std::string& stroke = "none");
  void Text(double px, double py, const std::string& text, double size = 12.0,
            const std::string& anchor = "start");
  void Axes(const std::string& xlabel, const std::string& ylabel);
  void Title(const std::string& title);

  void Save(const std::filesystem::path& path) const;

  double MapX(double x) const;
  double MapY(double y) const;

 private:
  double width_, height_, margin_;
  double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1;
  bool flip_y_ = true;
  std::string body_;
};

/// Paired scatter with identity line.
void PairedScatter(const std::filesystem::path& path, const std::string& title,
                   const std::string& xlabel, const std::string& ylabel,
                   const std::vector<double>& x, const std::vector<double>& y);

/// Scatter with dashed least-squares line.
void FitScatter(const std::filesystem::path& path, const std::string& title,
                const std::string& xlabel, const std::string& ylabel,
                const std::vector<double>& x, const std::vector<double>& y,
                double slope, double intercept);

struct Bin {
  double lo, hi;
  std::size_t count;
};
void Histogram(const std::filesystem::path& path, const std::string& title,
               const std::string& xlabel, const std::vector<Bin>& bins);

}  // namespace ssikit::svg
