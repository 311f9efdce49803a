// include/ssikit/asr/decoder.h

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

#include "ssikit/asr/lm.h"
#include "ssikit/asr/model.h"

namespace ssikit::asr {

struct Hypothesis {
  std::string utt_id;
  std::vector<std::string> words;
  double score = 0.0;
  std::vector<std::pair<int, int>> boundaries;  // inclusive [first, last] frame per word
};

struct DecodeOptions {
  double lm_scale = 10.0;
  double word_penalty = 0.0;
  double beam = 0.0;  // <= 0 disables pruning
};

// Token-passing Viterbi over the lexicon's word HMMs joined by bigram arcs.
// Score = acoustic + transitions + lm_scale * log P_lm + word_penalty * n_words.
class Decoder {
 public:
  Decoder(const GmmHmmModel& model, const BigramLm& lm, const Lexicon& lexicon,
          DecodeOptions options = {});

  Hypothesis Decode(const FeatureMatrix& feats, const std::string& utt_id = {}) const;
  Hypothesis DecodeLoglik(const Eigen::MatrixXd& frame_loglik,
                          const std::string& utt_id = {}) const;

  /// Combined score of a fixed word sequence (forced alignment + LM terms).
  double SentenceScore(const FeatureMatrix& feats, const std::vector<int>& word_ids) const;

  const DecodeOptions& options() const { return options_; }

 private:
  const GmmHmmModel& model_;
  const Lexicon& lexicon_;
  DecodeOptions options_;
  std::vector<std::vector<int>> word_states_;
  // lm_arc_(u, v): scaled LM score of v after u, plus word penalty. Row V is
  // <s>, column V is </s> (no penalty).
  Eigen::MatrixXd lm_arc_;
};

struct WerResult {
  int substitutions = 0, deletions = 0, insertions = 0;
  int ref_length = 0;
  int Errors() const { return substitutions + deletions + insertions; }
  double Rate() const { return double(Errors()) / double(ref_length); }
  WerResult& operator+=(const WerResult& o);
};

/// Unit-cost Levenshtein alignment. On equal cost, substitution is preferred
/// over deletion, and deletion over insertion. Throws on empty reference.
WerResult ComputeWer(const std::vector<std::string>& reference,
                     const std::vector<std::string>& hypothesis);

/// JSON lines: {"utt_id", "words", "score", "boundaries"}.
void WriteHypotheses(const std::filesystem::path& path, const std::vector<Hypothesis>& hyps);
std::vector<Hypothesis> ReadHypotheses(const std::filesystem::path& path);

}  // namespace ssikit::asr
