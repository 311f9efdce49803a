// src/stats.cc

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

#include "ssikit/stats.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace ssikit::stats {

namespace fs = std::filesystem;

double SyllableRate(int syllables, double duration_s) {
  if (!(duration_s > 0)) throw DataError("SyllableRate: zero duration");
  if (syllables < 1) throw DataError("SyllableRate: syllable count < 1");
  return double(syllables) / duration_s;
}

double SyllableRate(const corpus::UtteranceRecord& record) {
  return SyllableRate(record.syllable_count, record.duration);
}

double Mean(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double StdDev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = Mean(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(v.size() - 1));
}

void PairedSeries::Validate() const {
  if (a.size() != b.size())
    throw DataError("PairedSeries: series lengths differ");
  if (a.size() < 2) throw DataError("PairedSeries: need at least 2 pairs");
  if (!keys.empty()) {
    if (keys.size() != a.size())
      throw DataError("PairedSeries: key count differs from series length");
    std::set<std::string> uniq(keys.begin(), keys.end());
    if (uniq.size() != keys.size())
      throw DataError("PairedSeries: duplicate keys");
  }
}

// Continued fraction for the incomplete beta (modified Lentz).
static double BetaContinuedFraction(double a, double b, double x) {
  constexpr int kMaxIter = 20000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

double RegularizedIncompleteBeta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw NumericError("incomplete beta: a, b must be > 0");
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0))
    return front * BetaContinuedFraction(a, b, x) / a;
  return 1.0 - front * BetaContinuedFraction(b, a, 1.0 - x) / b;
}

double StudentTTwoTailed(double t, double df) {
  if (!std::isfinite(t)) throw NumericError("StudentTTwoTailed: non-finite t");
  if (!(df >= 1)) throw NumericError("StudentTTwoTailed: df must be >= 1");
  if (t == 0.0) return 1.0;
  const double x = df / (df + t * t);
  return std::clamp(RegularizedIncompleteBeta(0.5 * df, 0.5, x), 0.0, 1.0);
}

TestResult PairedTTest(const PairedSeries& series) {
  series.Validate();
  const std::size_t n = series.a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = series.a[i] - series.b[i];
  TestResult r;
  r.df = int(n) - 1;
  r.mean_a = Mean(series.a);
  r.std_a = StdDev(series.a);
  r.mean_b = Mean(series.b);
  r.std_b = StdDev(series.b);
  r.mean_diff = Mean(d);
  r.std_diff = StdDev(d);
  if (r.std_diff == 0.0) {
    if (r.mean_diff == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
      r.p = 0.0;
      r.degenerate_variance = true;
    }
    return r;
  }
  r.t = r.mean_diff / (r.std_diff / std::sqrt(double(n)));
  r.p = StudentTTwoTailed(r.t, double(r.df));
  return r;
}

HolmOutcome HolmBonferroni(const std::vector<double>& p_values, double alpha) {
  if (p_values.empty()) throw DataError("HolmBonferroni: no p-values");
  if (!(alpha > 0 && alpha < 1)) throw DataError("HolmBonferroni: alpha must be in (0, 1)");
  for (double p : p_values)
    if (!(p >= 0 && p <= 1)) throw DataError("HolmBonferroni: p-value outside [0, 1]");
  HolmOutcome out;
  out.alpha = alpha;
  out.p_values = p_values;
  const std::size_t m = p_values.size();
  out.order.resize(m);
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });
  out.thresholds.assign(m, 0.0);
  out.reject.assign(m, false);
  bool still_rejecting = true;
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t idx = out.order[k];
    out.thresholds[idx] = alpha / double(m - k);
    if (still_rejecting && p_values[idx] <= out.thresholds[idx]) {
      out.reject[idx] = true;
    } else {
      still_rejecting = false;
    }
  }
  return out;
}

double PearsonR(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw DataError("PearsonR: lengths differ");
  if (x.size() < 2) throw DataError("PearsonR: need at least 2 points");
  const double mx = Mean(x), my = Mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw DataError("PearsonR: constant input series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

LinearFit FitLine(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw DataError("FitLine: need two equal-length series of >= 2 points");
  const double mx = Mean(x), my = Mean(y);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0) throw DataError("FitLine: constant x");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

// ---- report ----------------------------------------------------------------

namespace {

const std::vector<std::string> kModeOrder = {"modal", "silent", "whispered"};

std::vector<std::string> ModesPresent(const std::set<std::string>& present) {
  std::vector<std::string> out;
  for (const auto& m : kModeOrder)
    if (present.count(m)) out.push_back(m);
  return out;
}

void AddHistogram(ModeReport& report, const std::string& name,
                  const std::vector<double>& values, int bins) {
  if (values.empty() || bins < 1) return;
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double w = (hi - lo) / bins;
  std::vector<std::size_t> counts(std::size_t(bins), 0);
  for (double v : values) {
    auto b = std::size_t(std::clamp(int((v - lo) / w), 0, bins - 1));
    ++counts[b];
  }
  for (int b = 0; b < bins; ++b)
    report.histograms.push_back({name, lo + b * w, lo + (b + 1) * w, counts[std::size_t(b)]});
}

void AddPairTests(ModeReport& report, const std::string& metric,
                  const std::vector<std::string>& modes,
                  const std::map<std::string, std::map<std::string, double>>& by_key_mode,
                  const ReportOptions& options) {
  std::vector<TestRow> rows;
  for (std::size_t i = 0; i < modes.size(); ++i) {
    for (std::size_t j = i + 1; j < modes.size(); ++j) {
      PairedSeries s;
      s.label_a = modes[i];
      s.label_b = modes[j];
      for (const auto& [key, vals] : by_key_mode) {
        auto ia = vals.find(modes[i]);
        auto ib = vals.find(modes[j]);
        if (ia == vals.end() || ib == vals.end()) continue;
        if (!std::isfinite(ia->second) || !std::isfinite(ib->second)) continue;
        s.keys.push_back(key);
        s.a.push_back(ia->second);
        s.b.push_back(ib->second);
      }
      if (s.a.size() < 2) {
        LogWarning("report: fewer than 2 pairs for " + metric + " " + modes[i] +
                   "/" + modes[j] + "; test skipped");
        continue;
      }
      TestResult tr = PairedTTest(s);
      TestRow row;
      row.metric = metric;
      row.mode_a = modes[i];
      row.mode_b = modes[j];
      row.n = s.a.size();
      row.t = tr.t;
      row.df = tr.df;
      row.p = tr.p;
      row.degenerate = tr.degenerate_variance;
      rows.push_back(row);
      report.scatter[metric + "|" + modes[i] + "|" + modes[j]] = {s.a, s.b};
      std::vector<double> d(s.a.size());
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = s.a[k] - s.b[k];
      AddHistogram(report, metric + "|" + modes[i] + "-" + modes[j], d,
                   options.histogram_bins);
    }
  }
  if (rows.empty()) return;
  std::vector<double> ps;
  for (const auto& r : rows) ps.push_back(r.p);
  HolmOutcome h = HolmBonferroni(ps, options.alpha);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    rows[k].holm_threshold = h.thresholds[k];
    rows[k].reject = h.reject[k];
    report.tests.push_back(rows[k]);
  }
}

}  // namespace

ModeReport ModeComparisonReport(const corpus::Manifest& manifest,
                                const std::map<std::string, double>& syllable_rate_by_utt,
                                const SpeakerMetrics& speaker_metrics,
                                const ReportOptions& options) {
  ModeReport report;

  // Per-utterance syllable rate, paired by (speaker, prompt, occurrence).
  std::map<std::string, std::map<std::string, double>> rate_pairs;
  std::map<std::string, std::vector<double>> rate_by_mode;
  std::map<std::string, std::map<std::string, std::vector<double>>> rate_by_spk;
  std::set<std::string> modes_seen;
  std::map<std::string, int> occurrence;
  for (const auto& r : manifest.records) {
    auto it = syllable_rate_by_utt.find(r.utt_id);
    if (it == syllable_rate_by_utt.end()) continue;
    const std::string mode = corpus::ToString(r.mode);
    modes_seen.insert(mode);
    const std::string base = r.speaker_id + "\t" + r.PromptText();
    const int occ = occurrence[base + "\t" + mode]++;
    rate_pairs[base + "\t" + std::to_string(occ)][mode] = it->second;
    rate_by_mode[mode].push_back(it->second);
    rate_by_spk[r.speaker_id][mode].push_back(it->second);
  }
  for (const auto& [metric, by_spk] : speaker_metrics)
    for (const auto& [spk, by_mode] : by_spk)
      for (const auto& [mode, v] : by_mode) modes_seen.insert(mode);
  const auto modes = ModesPresent(modes_seen);

  for (const auto& mode : modes) {
    auto it = rate_by_mode.find(mode);
    if (it == rate_by_mode.end()) continue;
    report.summary.push_back({"syllable_rate", mode, it->second.size(),
                              Mean(it->second), StdDev(it->second)});
  }
  for (const auto& [metric, by_spk] : speaker_metrics) {
    for (const auto& mode : modes) {
      std::vector<double> vals;
      for (const auto& [spk, by_mode] : by_spk) {
        auto it = by_mode.find(mode);
        if (it != by_mode.end() && std::isfinite(it->second)) vals.push_back(it->second);
      }
      if (!vals.empty())
        report.summary.push_back({metric, mode, vals.size(), Mean(vals), StdDev(vals)});
    }
  }

  AddPairTests(report, "syllable_rate", modes, rate_pairs, options);
  for (const auto& [metric, by_spk] : speaker_metrics)
    AddPairTests(report, metric, modes, by_spk, options);

  // Per-speaker differences against the reference mode.
  std::set<std::string> speakers;
  for (const auto& [spk, v] : rate_by_spk) speakers.insert(spk);
  for (const auto& [metric, by_spk] : speaker_metrics)
    for (const auto& [spk, v] : by_spk) speakers.insert(spk);
  auto speaker_value = [&](const std::string& metric, const std::string& spk,
                           const std::string& mode) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (metric == "syllable_rate") {
      auto s = rate_by_spk.find(spk);
      if (s == rate_by_spk.end()) return nan;
      auto m = s->second.find(mode);
      return m == s->second.end() ? nan : Mean(m->second);
    }
    auto mt = speaker_metrics.find(metric);
    if (mt == speaker_metrics.end()) return nan;
    auto s = mt->second.find(spk);
    if (s == mt->second.end()) return nan;
    auto m = s->second.find(mode);
    return m == s->second.end() ? nan : m->second;
  };
  const std::string& ref = options.reference_mode;
  for (const auto& other : modes) {
    if (other == ref) continue;
    std::vector<DifferenceRow> rows;
    for (const auto& spk : speakers) {
      DifferenceRow row;
      row.speaker = spk;
      row.mode_a = ref;
      row.mode_b = other;
      row.d_wer = speaker_value("wer", spk, ref) - speaker_value("wer", spk, other);
      row.d_syllable_rate = speaker_value("syllable_rate", spk, ref) -
                            speaker_value("syllable_rate", spk, other);
      row.d_hull_area = speaker_value("hull_area", spk, ref) -
                        speaker_value("hull_area", spk, other);
      if (std::isnan(row.d_wer) && std::isnan(row.d_syllable_rate) &&
          std::isnan(row.d_hull_area)) {
        LogWarning("report: speaker " + spk + " lacks paired " + ref + "/" + other +
                   " data; excluded");
        continue;
      }
      rows.push_back(row);
      report.differences.push_back(row);
    }
    const std::vector<std::pair<std::string, double DifferenceRow::*>> cols = {
        {"wer", &DifferenceRow::d_wer},
        {"syllable_rate", &DifferenceRow::d_syllable_rate},
        {"hull_area", &DifferenceRow::d_hull_area}};
    for (std::size_t i = 0; i < cols.size(); ++i) {
      for (std::size_t j = i + 1; j < cols.size(); ++j) {
        std::vector<double> xs, ys;
        for (const auto& row : rows) {
          double xv = row.*(cols[i].second), yv = row.*(cols[j].second);
          if (std::isfinite(xv) && std::isfinite(yv)) {
            xs.push_back(xv);
            ys.push_back(yv);
          }
        }
        if (xs.size() < 2) continue;
        CorrelationRow c;
        c.mode_a = ref;
        c.mode_b = other;
        c.x = cols[i].first;
        c.y = cols[j].first;
        c.n = xs.size();
        try {
          c.r = PearsonR(xs, ys);
          LinearFit f = FitLine(xs, ys);
          c.slope = f.slope;
          c.intercept = f.intercept;
        } catch (const DataError& e) {
          LogWarning(std::string("report: correlation skipped: ") + e.what());
          continue;
        }
        report.correlations.push_back(c);
        report.scatter["diff|" + c.x + "|" + c.y + "|" + ref + "-" + other] = {xs, ys};
      }
    }
  }
  return report;
}

// ---- CSV serialization -------------------------------------------------------

namespace {

std::string Num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::vector<std::string>> ReadCsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

double ParseNum(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

std::ofstream OpenCsv(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace

void WriteReport(const fs::path& dir, const ModeReport& report) {
  fs::create_directories(dir);
  {
    auto out = OpenCsv(dir / "summary.csv");
    out << "metric,mode,n,mean,std\n";
    for (const auto& r : report.summary)
      out << r.metric << ',' << r.mode << ',' << r.n << ',' << Num(r.mean) << ','
          << Num(r.stddev) << '\n';
  }
  {
    auto out = OpenCsv(dir / "tests.csv");
    out << "metric,mode_a,mode_b,n,t,df,p,holm_threshold,reject,degenerate\n";
    for (const auto& r : report.tests)
      out << r.metric << ',' << r.mode_a << ',' << r.mode_b << ',' << r.n << ','
          << Num(r.t) << ',' << r.df << ',' << Num(r.p) << ','
          << Num(r.holm_threshold) << ',' << (r.reject ? 1 : 0) << ','
          << (r.degenerate ? 1 : 0) << '\n';
  }
  {
    auto out = OpenCsv(dir / "differences.csv");
    out << "speaker,mode_a,mode_b,d_wer,d_syllable_rate,d_hull_area\n";
    for (const auto& r : report.differences)
      out << r.speaker << ',' << r.mode_a << ',' << r.mode_b << ',' << Num(r.d_wer)
          << ',' << Num(r.d_syllable_rate) << ',' << Num(r.d_hull_area) << '\n';
  }
  {
    auto out = OpenCsv(dir / "correlations.csv");
    out << "mode_a,mode_b,x,y,n,r,slope,intercept\n";
    for (const auto& r : report.correlations)
      out << r.mode_a << ',' << r.mode_b << ',' << r.x << ',' << r.y << ',' << r.n
          << ',' << Num(r.r) << ',' << Num(r.slope) << ',' << Num(r.intercept) << '\n';
  }
  {
    auto out = OpenCsv(dir / "histograms.csv");
    out << "series,lo,hi,count\n";
    for (const auto& r : report.histograms)
      out << r.series << ',' << Num(r.lo) << ',' << Num(r.hi) << ',' << r.count << '\n';
  }
}

ModeReport ReadReport(const fs::path& dir) {
  ModeReport report;
  for (const auto& c : ReadCsv(dir / "summary.csv")) {
    if (c.size() != 5) throw DataError("summary.csv: expected 5 columns");
    report.summary.push_back({c[0], c[1], std::stoul(c[2]), ParseNum(c[3]), ParseNum(c[4])});
  }
  for (const auto& c : ReadCsv(dir / "tests.csv")) {
    if (c.size() != 10) throw DataError("tests.csv: expected 10 columns");
    TestRow r;
    r.metric = c[0];
    r.mode_a = c[1];
    r.mode_b = c[2];
    r.n = std::stoul(c[3]);
    r.t = ParseNum(c[4]);
    r.df = std::stoi(c[5]);
    r.p = ParseNum(c[6]);
    r.holm_threshold = ParseNum(c[7]);
    r.reject = c[8] == "1";
    r.degenerate = c[9] == "1";
    report.tests.push_back(r);
  }
  for (const auto& c : ReadCsv(dir / "differences.csv")) {
    if (c.size() != 6) throw DataError("differences.csv: expected 6 columns");
    report.differences.push_back(
        {c[0], c[1], c[2], ParseNum(c[3]), ParseNum(c[4]), ParseNum(c[5])});
  }
  for (const auto& c : ReadCsv(dir / "correlations.csv")) {
    if (c.size() != 8) throw DataError("correlations.csv: expected 8 columns");
    report.correlations.push_back({c[0], c[1], c[2], c[3], std::stoul(c[4]),
                                   ParseNum(c[5]), ParseNum(c[6]), ParseNum(c[7])});
  }
  for (const auto& c : ReadCsv(dir / "histograms.csv")) {
    if (c.size() != 4) throw DataError("histograms.csv: expected 4 columns");
    report.histograms.push_back({c[0], ParseNum(c[1]), ParseNum(c[2]), std::stoul(c[3])});
  }
  return report;
}

}  // namespace ssikit::stats
