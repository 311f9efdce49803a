// include/ssikit/asr/model.h

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
#include <vector>

#include "ssikit/asr/lm.h"
#include "ssikit/core.h"

namespace ssikit::asr {

// Diagonal-covariance Gaussian mixture.
struct DiagGmm {
  Eigen::VectorXd weights;     // K
  Eigen::MatrixXd means;       // K x d
  Eigen::MatrixXd variances;   // K x d
  Eigen::VectorXd gconsts;     // log w_k - 0.5 * sum log(2 pi var_k)
  Eigen::MatrixXd inv_vars;    // K x d

  int NumComponents() const { return int(weights.size()); }
  int Dim() const { return int(means.cols()); }
  void ComputeGconsts();

  /// Per-component log(w_k N(x; mu_k, var_k)).
  Eigen::VectorXd ComponentLogLikelihoods(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double LogLikelihood(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Fills component posteriors and returns the log-likelihood.
  double Posteriors(const Eigen::Ref<const Eigen::VectorXd>& x,
                    Eigen::VectorXd& post) const;
};

// Monophone HMMs with a fixed number of left-to-right emitting states;
// state id = phone * states_per_phone + position.
struct GmmHmmModel {
  std::vector<std::string> phones;
  int states_per_phone = 3;
  std::vector<DiagGmm> states;
  Eigen::VectorXd self_loop;   // per state
  Eigen::VectorXd var_floor;   // per dimension

  int NumStates() const { return int(states.size()); }
  int Dim() const { return states.empty() ? 0 : states[0].Dim(); }
  double LogSelfLoop(int s) const { return std::log(self_loop[s]); }
  double LogAdvance(int s) const { return std::log1p(-self_loop[s]); }
  std::vector<int> StateSequence(const std::vector<int>& phone_seq) const;
  void Validate() const;

  /// T x S matrix of state log-likelihoods.
  Eigen::MatrixXd FrameLogLikelihoods(const FeatureMatrix& feats) const;

  /// File: "GMMH", u32 header length, JSON header (phones, topology,
  /// mixture counts, dim), then little-endian f32 blob.
  void Save(const std::filesystem::path& path) const;
  static GmmHmmModel Load(const std::filesystem::path& path);
};

using Alignment = std::vector<int>;  // state id per frame

struct AlignResult {
  Alignment states;
  double log_likelihood = 0.0;  // acoustic + transitions (incl. final exit)
};

/// Viterbi path through the linear state sequence of the transcript.
/// Throws DataError if there are more states than frames.
AlignResult AlignStates(const GmmHmmModel& model, const Eigen::MatrixXd& frame_loglik,
                        const std::vector<int>& state_seq);
AlignResult Align(const GmmHmmModel& model, const Lexicon& lexicon,
                  const FeatureMatrix& feats, const std::vector<int>& word_ids);

/// Score of a fixed alignment under the model (acoustic + transitions).
double AlignmentLogLikelihood(const GmmHmmModel& model, const FeatureMatrix& feats,
                              const Alignment& alignment);

// Training data: features plus the transcript as lexicon word ids.
struct TrainUtterance {
  std::string utt_id;
  std::string speaker;
  FeatureMatrix feats;
  std::vector<int> words;
};

/// Divides frames evenly over a state sequence; remainder frames go to the
/// final states. Throws DataError if n_frames < n_states.
Alignment UniformAlignment(std::size_t n_frames, const std::vector<int>& state_seq);

struct FlatStartResult {
  GmmHmmModel model;
  std::vector<Alignment> alignments;
};

/// Single-Gaussian states at the global mean/variance, transitions from the
/// uniform alignments.
FlatStartResult FlatStart(const std::vector<std::string>& phones, const Lexicon& lexicon,
                          const std::vector<TrainUtterance>& data,
                          int states_per_phone = 3, double var_floor_scale = 1e-3);

struct EmSchedule {
  int iterations = 10;
  int target_mixtures = 1;
  // Component count doubles (capped at target) after each of these
  // iterations (0-based).
  std::vector<int> split_after;
  double split_perturb = 0.1;   // mean offset in standard deviations
  double min_component_count = 2.0;
};

struct EmResult {
  GmmHmmModel model;
  std::vector<Alignment> alignments;
  // Total Viterbi log-likelihood of the alignment computed at the start of
  // each iteration, and the mixture count it was computed with.
  std::vector<double> log_likelihoods;
  std::vector<int> mixtures;
};

/// Viterbi EM. When initial alignments are supplied, the first
/// re-estimation uses them instead of realigning.
EmResult TrainEm(GmmHmmModel model, const Lexicon& lexicon,
                 const std::vector<TrainUtterance>& data, const EmSchedule& schedule,
                 const std::vector<Alignment>* initial_alignments = nullptr);

/// One maximum-likelihood re-estimation from fixed alignments.
GmmHmmModel Reestimate(const GmmHmmModel& model, const std::vector<TrainUtterance>& data,
                       const std::vector<Alignment>& alignments,
                       double min_component_count = 2.0);

/// Re-initialises single-Gaussian states from alignments (used when the
/// feature space changes, e.g. after LDA).
GmmHmmModel InitFromAlignments(const std::vector<std::string>& phones, int states_per_phone,
                               const std::vector<TrainUtterance>& data,
                               const std::vector<Alignment>& alignments,
                               double var_floor_scale = 1e-3);

/// Doubles mixture components (up to target) by splitting the heaviest.
void SplitMixtures(GmmHmmModel& model, int target, double perturb);

}  // namespace ssikit::asr
