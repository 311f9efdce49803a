// src/asr/lm.cc

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

#include "ssikit/asr/lm.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ssikit::asr {

namespace fs = std::filesystem;

int Lexicon::Add(const std::string& word, LexiconEntry entry) {
  if (index.count(word)) throw DataError("lexicon: duplicate word '" + word + "'");
  if (entry.phones.empty()) throw DataError("lexicon: word '" + word + "' has no phones");
  const int id = int(words.size());
  words.push_back(word);
  entries.push_back(std::move(entry));
  index[word] = id;
  return id;
}

int Lexicon::WordId(const std::string& word) const {
  auto it = index.find(word);
  if (it == index.end()) throw DataError("word '" + word + "' not in lexicon");
  return it->second;
}

std::vector<int> Lexicon::WordIds(const std::vector<std::string>& sentence) const {
  std::vector<int> ids;
  ids.reserve(sentence.size());
  for (const auto& w : sentence) ids.push_back(WordId(w));
  return ids;
}

std::vector<int> Lexicon::Phones(const std::vector<int>& word_ids) const {
  std::vector<int> out;
  for (int w : word_ids) {
    const auto& p = entries.at(std::size_t(w)).phones;
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void Lexicon::Validate(std::size_t n_phones) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    for (int p : entries[i].phones)
      if (p < 0 || std::size_t(p) >= n_phones)
        throw DataError("lexicon: word '" + words[i] + "' uses unknown phone");
}

Lexicon ReadLexicon(const fs::path& path, const std::vector<std::string>& inventory) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open lexicon '" + path.string() + "'");
  std::map<std::string, int> phone_id;
  for (std::size_t i = 0; i < inventory.size(); ++i) phone_id[inventory[i]] = int(i);
  Lexicon lex;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected word<TAB>syllables<TAB>phones");
    LexiconEntry e;
    try {
      e.syllables = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": bad syllable count");
    }
    std::istringstream ps(line.substr(t2 + 1));
    std::string p;
    while (ps >> p) {
      auto it = phone_id.find(p);
      if (it == phone_id.end())
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": unknown phone '" + p + "'");
      e.phones.push_back(it->second);
    }
    lex.Add(line.substr(0, t1), std::move(e));
  }
  return lex;
}

void WriteLexicon(const fs::path& path, const Lexicon& lexicon,
                  const std::vector<std::string>& inventory) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < lexicon.size(); ++i) {
    out << lexicon.words[i] << '\t' << lexicon.entries[i].syllables << '\t';
    const auto& ph = lexicon.entries[i].phones;
    for (std::size_t k = 0; k < ph.size(); ++k)
      out << (k ? " " : "") << inventory.at(std::size_t(ph[k]));
    out << '\n';
  }
}

// ---- bigram -----------------------------------------------------------------

int BigramLm::WordIndex(const std::string& w) const {
  auto it = index_.find(w);
  return it == index_.end() ? -1 : it->second;
}

double BigramLm::Prob(int history, int target) const {
  const auto& seen = bigram_[std::size_t(history)];
  auto it = seen.find(target);
  if (it != seen.end()) return it->second;
  return backoff_[std::size_t(history)] * unigram_[std::size_t(target)];
}

double BigramLm::LogProb(int history, int target) const {
  return std::log(Prob(history, target));
}

double BigramLm::SentenceLogProb(const std::vector<std::string>& words) const {
  int h = BosHistory();
  double lp = 0;
  for (const auto& w : words) {
    int id = WordIndex(w);
    if (id < 0) return -std::numeric_limits<double>::infinity();
    lp += LogProb(h, id);
    h = id;
  }
  return lp + LogProb(h, EosIndex());
}

BigramLm TrainBigram(const std::vector<std::vector<std::string>>& sentences,
                     const std::vector<std::string>& extra_vocabulary) {
  std::set<std::string> vocab_set(extra_vocabulary.begin(), extra_vocabulary.end());
  for (const auto& s : sentences) vocab_set.insert(s.begin(), s.end());
  vocab_set.erase(BigramLm::kBos);
  vocab_set.erase(BigramLm::kEos);
  if (vocab_set.empty()) throw DataError("TrainBigram: empty vocabulary");

  BigramLm lm;
  lm.vocab_.assign(vocab_set.begin(), vocab_set.end());
  for (std::size_t i = 0; i < lm.vocab_.size(); ++i) lm.index_[lm.vocab_[i]] = int(i);
  const std::size_t n_targets = lm.vocab_.size() + 1;  // + </s>

  std::vector<double> uni_count(n_targets, 0.0);
  std::vector<std::map<int, double>> pair_count(n_targets);  // history-major
  for (const auto& s : sentences) {
    int h = lm.BosHistory();
    for (const auto& w : s) {
      const int id = lm.index_.at(w);
      uni_count[std::size_t(id)] += 1;
      pair_count[std::size_t(h)][id] += 1;
      h = id;
    }
    uni_count[std::size_t(lm.EosIndex())] += 1;
    pair_count[std::size_t(h)][lm.EosIndex()] += 1;
  }

  double n_tokens = 0, n_types = 0;
  for (double c : uni_count) {
    n_tokens += c;
    if (c > 0) n_types += 1;
  }
  lm.unigram_.assign(n_targets, 0.0);
  const double uniform = 1.0 / double(n_targets);
  for (std::size_t w = 0; w < n_targets; ++w)
    lm.unigram_[w] = n_tokens > 0 ? (uni_count[w] + n_types * uniform) / (n_tokens + n_types)
                                  : uniform;

  lm.bigram_.assign(n_targets, {});
  lm.backoff_.assign(n_targets, 1.0);
  for (std::size_t h = 0; h < n_targets; ++h) {
    const auto& counts = pair_count[h];
    if (counts.empty()) continue;  // unseen history: pure unigram
    double c_h = 0;
    for (const auto& [w, c] : counts) c_h += c;
    const double t_h = double(counts.size());
    const double denom = c_h + t_h;
    for (const auto& [w, c] : counts)
      lm.bigram_[h][w] = (c + t_h * lm.unigram_[std::size_t(w)]) / denom;
    lm.backoff_[h] = t_h / denom;
  }
  return lm;
}

void BigramLm::Save(const fs::path& path) const {
  nlohmann::json doc;
  doc["vocabulary"] = vocab_;
  doc["unigram"] = unigram_;
  doc["backoff"] = backoff_;
  nlohmann::json bigrams = nlohmann::json::array();
  for (std::size_t h = 0; h < bigram_.size(); ++h)
    for (const auto& [w, p] : bigram_[h]) bigrams.push_back({h, w, p});
  doc["bigrams"] = bigrams;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << doc.dump() << '\n';
}

BigramLm BigramLm::Load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open language model '" + path.string() + "'");
  BigramLm lm;
  try {
    auto doc = nlohmann::json::parse(in);
    lm.vocab_ = doc.at("vocabulary").get<std::vector<std::string>>();
    lm.unigram_ = doc.at("unigram").get<std::vector<double>>();
    lm.backoff_ = doc.at("backoff").get<std::vector<double>>();
    lm.bigram_.assign(lm.vocab_.size() + 1, {});
    for (const auto& b : doc.at("bigrams"))
      lm.bigram_.at(b.at(0).get<std::size_t>())[b.at(1).get<int>()] = b.at(2).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < lm.vocab_.size(); ++i) lm.index_[lm.vocab_[i]] = int(i);
  if (lm.unigram_.size() != lm.vocab_.size() + 1 || lm.backoff_.size() != lm.vocab_.size() + 1)
    throw DataError(path.string() + ": inconsistent language model tables");
  return lm;
}

}  // namespace ssikit::asr
