// include/ssikit/asr/transforms.h

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

#include <string>
#include <vector>

#include "ssikit/asr/model.h"
#include "ssikit/core.h"

namespace ssikit::asr {

// Linear projection y = P x, P is d_out x d_in.
struct LdaTransform {
  Eigen::MatrixXd projection;
  Eigen::VectorXd eigenvalues;      // generalized eigenvalues of the kept rows
  Eigen::MatrixXd within_scatter;   // d_in x d_in, per-frame normalised
  Eigen::MatrixXd between_scatter;

  int InDim() const { return int(projection.cols()); }
  int OutDim() const { return int(projection.rows()); }
  FeatureMatrix Apply(const FeatureMatrix& feats) const;

  void Save(const std::filesystem::path& path) const;
  static LdaTransform Load(const std::filesystem::path& path);
};

/// Rows are the leading generalized eigenvectors of (Sb, Sw + eps I),
/// scaled so that p' (Sw + eps I) p = 1.
LdaTransform EstimateLda(const std::vector<FeatureMatrix>& feats,
                         const std::vector<std::vector<int>>& labels, int d_out,
                         double eps = 1e-6);

// x' = A x + b.
struct FmllrTransform {
  std::string owner;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;

  static FmllrTransform Identity(int dim, std::string owner = {});
  int Dim() const { return int(A.rows()); }
  FeatureMatrix Apply(const FeatureMatrix& feats) const;
  FmllrTransform Inverse() const;
  /// [A b], d x (d+1).
  Eigen::MatrixXd W() const;
};

/// Sufficient statistics of the constrained-MLLR auxiliary function.
struct FmllrStats {
  double beta = 0;
  std::vector<Eigen::MatrixXd> G;  // d of (d+1) x (d+1)
  Eigen::MatrixXd K;               // d x (d+1), row i is k_i

  explicit FmllrStats(int dim = 0);
  int Dim() const { return int(K.rows()); }
};

/// Accumulates statistics for one utterance. Component posteriors are
/// computed on `transformed` features; statistics use the raw features.
void AccumulateFmllrStats(const GmmHmmModel& model, const FeatureMatrix& raw,
                          const FeatureMatrix& transformed, const Alignment& alignment,
                          FmllrStats& stats);

/// Q(W) = beta log|det A| + sum_i (w_i k_i' - 0.5 w_i G_i w_i').
double FmllrAuxiliary(const FmllrStats& stats, const Eigen::MatrixXd& W);

struct FmllrOptions {
  int iterations = 5;       // posterior recomputation passes
  int row_sweeps = 10;      // row-update sweeps per pass
  // Row i is pulled toward the identity row with weight ridge * tr(G_i) / (d + 1).
  double ridge = 1e-6;
};

struct FmllrResult {
  FmllrTransform transform;
  std::vector<double> auxiliary;  // value after every row update
  bool identity_fallback = false;
};

/// Row-by-row cofactor updates starting from the identity.
FmllrResult EstimateFmllr(const GmmHmmModel& model, const std::vector<FeatureMatrix>& feats,
                          const std::vector<Alignment>& alignments,
                          const FmllrOptions& options = {}, const std::string& owner = {});

/// One round of row updates on fixed statistics, starting from W (in place).
void FmllrRowUpdates(const FmllrStats& stats, Eigen::MatrixXd& W, int sweeps,
                     std::vector<double>* trace);

/// MAP re-estimation of Gaussian means with relevance factor tau.
GmmHmmModel MapAdaptMeans(const GmmHmmModel& model, const std::vector<FeatureMatrix>& feats,
                          const std::vector<Alignment>& alignments, double tau = 10.0);

void SaveTransforms(const std::filesystem::path& path,
                    const std::vector<FmllrTransform>& transforms);
std::vector<FmllrTransform> LoadTransforms(const std::filesystem::path& path);

}  // namespace ssikit::asr
