// include/ssikit/stats.h

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
#include <map>
#include <string>
#include <vector>

#include "ssikit/corpus.h"

namespace ssikit::stats {

/// Syllables per second. Throws DataError on non-positive duration.
double SyllableRate(const corpus::UtteranceRecord& record);
double SyllableRate(int syllables, double duration_s);

struct PairedSeries {
  std::vector<std::string> keys;
  std::vector<double> a;
  std::vector<double> b;
  std::string label_a = "a";
  std::string label_b = "b";

  void Validate() const;
};

struct TestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;
  double mean_a = 0.0, std_a = 0.0;
  double mean_b = 0.0, std_b = 0.0;
  double mean_diff = 0.0, std_diff = 0.0;
  // Set when the differences have zero variance but a nonzero mean; p is
  // then reported as 0 and t as +/-infinity.
  bool degenerate_variance = false;
};

/// Two-tailed paired t-test on a - b.
TestResult PairedTTest(const PairedSeries& series);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double RegularizedIncompleteBeta(double a, double b, double x);

/// Two-tailed tail probability P(|T| >= |t|) for Student's t with df degrees
/// of freedom.
double StudentTTwoTailed(double t, double df);

struct HolmOutcome {
  std::vector<double> p_values;    // input order
  std::vector<std::size_t> order;  // indices sorted by ascending p
  std::vector<double> thresholds;  // alpha / (m - k + 1), input order
  std::vector<bool> reject;        // input order
  double alpha = 0.05;
};

HolmOutcome HolmBonferroni(const std::vector<double>& p_values, double alpha);

/// Sample Pearson correlation. Throws DataError on constant input.
double PearsonR(const std::vector<double>& x, const std::vector<double>& y);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};
LinearFit FitLine(const std::vector<double>& x, const std::vector<double>& y);

double Mean(const std::vector<double>& v);
/// Sample standard deviation (n - 1 denominator).
double StdDev(const std::vector<double>& v);

// ---- mode comparison report ------------------------------------------------

/// metric -> speaker -> mode -> value.
using SpeakerMetrics =
    std::map<std::string, std::map<std::string, std::map<std::string, double>>>;

struct SummaryRow {
  std::string metric, mode;
  std::size_t n = 0;
  double mean = 0.0, stddev = 0.0;
};

struct TestRow {
  std::string metric, mode_a, mode_b;
  std::size_t n = 0;
  double t = 0.0;
  int df = 0;
  double p = 1.0;
  double holm_threshold = 0.0;
  bool reject = false;
  bool degenerate = false;
};

struct DifferenceRow {
  std::string speaker, mode_a, mode_b;
  // mode_a minus mode_b; NaN when the metric is unavailable for the speaker
  double d_wer = 0.0, d_syllable_rate = 0.0, d_hull_area = 0.0;
};

struct CorrelationRow {
  std::string mode_a, mode_b, x, y;
  std::size_t n = 0;
  double r = 0.0, slope = 0.0, intercept = 0.0;
};

struct HistogramBin {
  std::string series;
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
};

struct ModeReport {
  std::vector<SummaryRow> summary;
  std::vector<TestRow> tests;
  std::vector<DifferenceRow> differences;
  std::vector<CorrelationRow> correlations;
  std::vector<HistogramBin> histograms;
  // Paired scatter series: metric|mode_a|mode_b -> (a values, b values).
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      scatter;
};

struct ReportOptions {
  double alpha = 0.05;
  int histogram_bins = 12;
  std::string reference_mode = "modal";
};

/// Builds summary, paired tests (Holm over each metric's mode-pair family),
/// per-speaker differences against the reference mode, correlations and
/// histogram/scatter data. Syllable rates are paired per utterance by
/// (speaker, prompt, occurrence); speaker metrics are paired per speaker.
ModeReport ModeComparisonReport(const corpus::Manifest& manifest,
                                const std::map<std::string, double>& syllable_rate_by_utt,
                                const SpeakerMetrics& speaker_metrics,
                                const ReportOptions& options);

void WriteReport(const std::filesystem::path& dir, const ModeReport& report);
/// Reads the CSV tables written by WriteReport (scatter data is not stored).
ModeReport ReadReport(const std::filesystem::path& dir);

}  // namespace ssikit::stats
