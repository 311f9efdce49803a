// include/ssikit/asr/pipeline.h

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

#include <map>
#include <string>
#include <vector>

#include "ssikit/asr/decoder.h"
#include "ssikit/asr/model.h"
#include "ssikit/asr/transforms.h"

namespace ssikit::asr {

struct AmConfig {
  int states_per_phone = 3;
  double var_floor_scale = 1e-3;
  int mono_iterations = 8;
  int target_mixtures = 2;
  std::vector<int> split_after = {3};
  int lda_dim = 0;            // 0: numerical rank of the input features
  int lda_iterations = 4;
  int sat_outer_iterations = 2;
  int sat_em_iterations = 3;
  FmllrOptions fmllr;
};

struct AcousticModels {
  LdaTransform lda;
  GmmHmmModel si;    // speaker independent, LDA space
  GmmHmmModel sat;   // trained on per-speaker fMLLR-normalised LDA features
  std::vector<FmllrTransform> train_transforms;
  // Per-stage EM log-likelihood traces.
  std::vector<double> mono_loglik, lda_loglik, sat_loglik;
  std::vector<int> mono_mixtures;

  void Save(const std::filesystem::path& dir) const;
  static AcousticModels Load(const std::filesystem::path& dir);
};

/// Number of covariance eigenvalues above rel_tol times the largest.
int FeatureRank(const std::vector<FeatureMatrix>& feats, double rel_tol = 1e-8);

/// Flat start -> Viterbi EM with mixture splitting -> LDA on state labels ->
/// EM in LDA space -> speaker adaptive training with per-speaker fMLLR.
AcousticModels TrainAcousticModels(const std::vector<std::string>& phones,
                                   const Lexicon& lexicon,
                                   const std::vector<TrainUtterance>& data,
                                   const AmConfig& config = {});

enum class FeatureType { kRaw, kFmllr };
FeatureType ParseFeatureType(const std::string& s);
std::string ToString(FeatureType f);

enum class AdaptStrategy { kNone, kFmllr, kMap, kBoth };
AdaptStrategy ParseAdaptStrategy(const std::string& s);
std::string ToString(AdaptStrategy a);

struct DecodeUtterance {
  std::string utt_id;
  std::string speaker;
  FeatureMatrix feats;  // raw (pre-LDA) features
  std::vector<std::string> reference;
};

struct DecodeSetResult {
  std::vector<Hypothesis> hypotheses;
  std::vector<FmllrTransform> transforms;  // fmllr features only
  WerResult wer;
};

struct DecodeSetOptions {
  DecodeOptions decode;
  int fmllr_passes = 2;  // estimate / re-decode rounds for fmllr features
  FmllrOptions fmllr;
  int jobs = 1;
};

/// raw: LDA features with the SI model. fmllr: SI first pass, then per-speaker
/// transforms estimated from its hypotheses against the SAT model.
DecodeSetResult DecodeSet(const AcousticModels& models, const BigramLm& lm,
                          const Lexicon& lexicon, const std::vector<DecodeUtterance>& utts,
                          FeatureType features, const DecodeSetOptions& options = {});

struct AdaptOptions {
  AdaptStrategy strategy = AdaptStrategy::kMap;
  int iterations = 1;
  double map_tau = 10.0;
};

struct AdaptResult {
  DecodeSetResult pass1, pass2;
};

/// First-pass hypotheses serve as supervision for per-speaker fMLLR and/or a
/// MAP update of the means pooled over the whole set, then a second pass.
AdaptResult AdaptUnsupervised(const AcousticModels& models, const BigramLm& lm,
                              const Lexicon& lexicon, const std::vector<DecodeUtterance>& utts,
                              FeatureType features, const AdaptOptions& adapt,
                              const DecodeSetOptions& options = {});

/// Pooled WER of hypotheses against references keyed by utterance id.
WerResult ScoreHypotheses(const std::vector<Hypothesis>& hyps,
                          const std::map<std::string, std::vector<std::string>>& references);

}  // namespace ssikit::asr
