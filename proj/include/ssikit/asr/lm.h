// include/ssikit/asr/lm.h

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

#include "ssikit/core.h"

namespace ssikit::asr {

struct LexiconEntry {
  std::vector<int> phones;  // indices into the phone inventory
  int syllables = 1;
};

// Word -> pronunciation; word ids are positions in `words`.
struct Lexicon {
  std::vector<std::string> words;
  std::vector<LexiconEntry> entries;
  std::map<std::string, int> index;

  int Add(const std::string& word, LexiconEntry entry);
  int WordId(const std::string& word) const;  // throws DataError if absent
  bool Contains(const std::string& word) const { return index.count(word) > 0; }
  std::size_t size() const { return words.size(); }
  std::vector<int> WordIds(const std::vector<std::string>& sentence) const;
  /// Phone sequence of a word-id sentence.
  std::vector<int> Phones(const std::vector<int>& word_ids) const;
  void Validate(std::size_t n_phones) const;
};

/// Text format: word<TAB>syllable_count<TAB>phone phone ...
Lexicon ReadLexicon(const std::filesystem::path& path,
                    const std::vector<std::string>& phone_inventory);
void WriteLexicon(const std::filesystem::path& path, const Lexicon& lexicon,
                  const std::vector<std::string>& phone_inventory);

// Witten-Bell smoothed bigram in backoff form. Prediction targets are the
// vocabulary plus end-of-sentence; histories are begin-of-sentence plus the
// vocabulary. Unigrams interpolate with a uniform distribution.
class BigramLm {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";

  const std::vector<std::string>& vocabulary() const { return vocab_; }
  int WordIndex(const std::string& w) const;  // -1 if out of vocabulary
  int EosIndex() const { return int(vocab_.size()); }
  int BosHistory() const { return int(vocab_.size()); }

  /// P(target | history); target in [0, V] (V = </s>), history in [0, V]
  /// (V = <s>).
  double Prob(int history, int target) const;
  double LogProb(int history, int target) const;
  double Unigram(int target) const { return unigram_[std::size_t(target)]; }
  double BackoffWeight(int history) const { return backoff_[std::size_t(history)]; }

  /// Sum of log P over the sentence including </s>.
  double SentenceLogProb(const std::vector<std::string>& words) const;

  void Save(const std::filesystem::path& path) const;
  static BigramLm Load(const std::filesystem::path& path);

  friend BigramLm TrainBigram(const std::vector<std::vector<std::string>>&,
                              const std::vector<std::string>&);

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, int> index_;
  std::vector<double> unigram_;                 // size V + 1
  std::vector<double> backoff_;                 // size V + 1 (histories)
  std::vector<std::map<int, double>> bigram_;   // seen pairs, per history
};

/// Maximum-likelihood counts with Witten-Bell smoothing. Extra vocabulary
/// words (e.g. lexicon entries absent from the text) receive unigram mass.
BigramLm TrainBigram(const std::vector<std::vector<std::string>>& sentences,
                     const std::vector<std::string>& extra_vocabulary = {});

}  // namespace ssikit::asr
