// src/svg.cc

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

#include "ssikit/svg.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ssikit/core.h"

namespace ssikit::svg {

namespace {

std::string Fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::pair<double, double> Range(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 1.0};
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  double a = *lo, b = *hi;
  if (a == b) {
    a -= 0.5;
    b += 0.5;
  }
  const double pad = 0.05 * (b - a);
  return {a - pad, b + pad};
}

}  // namespace

Canvas::Canvas(double width, double height, double margin)
    : width_(width), height_(height), margin_(margin) {}

void Canvas::SetBounds(double x0, double x1, double y0, double y1, bool flip_y) {
  x0_ = x0;
  x1_ = x1 > x0 ? x1 : x0 + 1;
  y0_ = y0;
  y1_ = y1 > y0 ? y1 : y0 + 1;
  flip_y_ = flip_y;
}

double Canvas::MapX(double x) const {
  return margin_ + (x - x0_) / (x1_ - x0_) * (width_ - 2 * margin_);
}

double Canvas::MapY(double y) const {
  const double u = (y - y0_) / (y1_ - y0_);
  const double span = height_ - 2 * margin_;
  return flip_y_ ? height_ - margin_ - u * span : margin_ + u * span;
}

void Canvas::Polyline(const std::vector<std::pair<double, double>>& pts,
                      const std::string& stroke, double width, bool closed,
                      bool dashed, double opacity) {
  if (pts.empty()) return;
  body_ += closed ? "<polygon points=\"" : "<polyline points=\"";
  for (const auto& [x, y] : pts) body_ += Fmt(MapX(x)) + "," + Fmt(MapY(y)) + " ";
  body_ += "\" fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" +
           Fmt(width) + "\" stroke-opacity=\"" + Fmt(opacity) + "\"";
  if (dashed) body_ += " stroke-dasharray=\"6,4\"";
  body_ += "/>\n";
}

void Canvas::Dot(double x, double y, double r, const std::string& fill,
                 double opacity) {
  body_ += "<circle cx=\"" + Fmt(MapX(x)) + "\" cy=\"" + Fmt(MapY(y)) +
           "\" r=\"" + Fmt(r) + "\" fill=\"" + fill + "\" fill-opacity=\"" +
           Fmt(opacity) + "\"/>\n";
}

void Canvas::Box(double x0, double y0, double x1, double y1,
                 const std::string& fill, const std::string& stroke) {
  const double px0 = MapX(x0), px1 = MapX(x1);
  const double py0 = MapY(y0), py1 = MapY(y1);
  body_ += "<rect x=\"" + Fmt(std::min(px0, px1)) + "\" y=\"" +
           Fmt(std::min(py0, py1)) + "\" width=\"" + Fmt(std::fabs(px1 - px0)) +
           "\" height=\"" + Fmt(std::fabs(py1 - py0)) + "\" fill=\"" + fill +
           "\" stroke=\"" + stroke + "\"/>\n";
}

void Canvas::Text(double px, double py, const std::string& text, double size,
                  const std::string& anchor) {
  body_ += "<text x=\"" + Fmt(px) + "\" y=\"" + Fmt(py) + "\" font-size=\"" +
           Fmt(size) + "\" font-family=\"sans-serif\" text-anchor=\"" + anchor +
           "\">" + Escape(text) + "</text>\n";
}

void Canvas::Axes(const std::string& xlabel, const std::string& ylabel) {
  const double l = margin_, r = width_ - margin_;
  const double t = margin_, b = height_ - margin_;
  body_ += "<rect x=\"" + Fmt(l) + "\" y=\"" + Fmt(t) + "\" width=\"" +
           Fmt(r - l) + "\" height=\"" + Fmt(b - t) +
           "\" fill=\"none\" stroke=\"#444\"/>\n";
  Text(0.5 * (l + r), height_ - 8, xlabel, 12, "middle");
  body_ += "<text x=\"14\" y=\"" + Fmt(0.5 * (t + b)) +
           "\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\"middle\" "
           "transform=\"rotate(-90 14 " + Fmt(0.5 * (t + b)) + ")\">" +
           Escape(ylabel) + "</text>\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", x0_);
  Text(l, b + 14, buf, 10, "start");
  std::snprintf(buf, sizeof(buf), "%.3g", x1_);
  Text(r, b + 14, buf, 10, "end");
  std::snprintf(buf, sizeof(buf), "%.3g", flip_y_ ? y0_ : y1_);
  Text(l - 4, b, buf, 10, "end");
  std::snprintf(buf, sizeof(buf), "%.3g", flip_y_ ? y1_ : y0_);
  Text(l - 4, t + 10, buf, 10, "end");
}

void Canvas::Title(const std::string& title) {
  Text(0.5 * width_, 20, title, 14, "middle");
}

void Canvas::Save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << Fmt(width_)
      << "\" height=\"" << Fmt(height_) << "\" viewBox=\"0 0 " << Fmt(width_)
      << ' ' << Fmt(height_) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << body_ << "</svg>\n";
}

void PairedScatter(const std::filesystem::path& path, const std::string& title,
                   const std::string& xlabel, const std::string& ylabel,
                   const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> all = x;
  all.insert(all.end(), y.begin(), y.end());
  auto [lo, hi] = Range(all);
  Canvas c(420, 420);
  c.SetBounds(lo, hi, lo, hi);
  c.Axes(xlabel, ylabel);
  c.Title(title);
  c.Polyline({{lo, lo}, {hi, hi}}, "#888", 1.0, false, true);
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i)
    c.Dot(x[i], y[i], 2.5, "#1f77b4", 0.6);
  c.Save(path);
}

void FitScatter(const std::filesystem::path& path, const std::string& title,
                const std::string& xlabel, const std::string& ylabel,
                const std::vector<double>& x, const std::vector<double>& y,
                double slope, double intercept) {
  auto [x0, x1] = Range(x);
  auto [y0, y1] = Range(y);
  Canvas c(420, 360);
  c.SetBounds(x0, x1, y0, y1);
  c.Axes(xlabel, ylabel);
  c.Title(title);
  for (std::size_t i = 0; i < x.size() && i < y.size(); ++i)
    c.Dot(x[i], y[i], 3.0, "#1f77b4", 0.7);
  c.Polyline({{x0, slope * x0 + intercept}, {x1, slope * x1 + intercept}},
             "#d62728", 1.5, false, true);
  c.Save(path);
}

void Histogram(const std::filesystem::path& path, const std::string& title,
               const std::string& xlabel, const std::vector<Bin>& bins) {
  Canvas c(420, 320);
  double lo = bins.empty() ? 0 : bins.front().lo;
  double hi = bins.empty() ? 1 : bins.back().hi;
  std::size_t top = 1;
  for (const auto& b : bins) top = std::max(top, b.count);
  c.SetBounds(lo, hi, 0, double(top) * 1.1);
  c.Axes(xlabel, "count");
  c.Title(title);
  for (const auto& b : bins) c.Box(b.lo, 0, b.hi, double(b.count), "#9ecae1", "#3182bd");
  if (lo < 0 && hi > 0)
    c.Polyline({{0, 0}, {0, double(top) * 1.1}}, "#d62728", 1.0, false, true);
  c.Save(path);
}

}  // namespace ssikit::svg
