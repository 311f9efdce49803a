// src/asr/decoder.cc

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

#include "ssikit/asr/decoder.h"

#include <algorithm>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace ssikit::asr {

namespace fs = std::filesystem;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Decoder::Decoder(const GmmHmmModel& model, const BigramLm& lm, const Lexicon& lexicon,
                 DecodeOptions options)
    : model_(model), lexicon_(lexicon), options_(options) {
  const auto V = Eigen::Index(lexicon.size());
  if (V == 0) throw DataError("decoder: empty lexicon");
  std::vector<int> lm_index(std::size_t(V) + 1);
  for (Eigen::Index w = 0; w < V; ++w) {
    const int i = lm.WordIndex(lexicon.words[std::size_t(w)]);
    if (i < 0)
      throw DataError("decoder: word '" + lexicon.words[std::size_t(w)] +
                      "' missing from the language model");
    lm_index[std::size_t(w)] = i;
    word_states_.push_back(model.StateSequence(lexicon.entries[std::size_t(w)].phones));
  }
  lm_index[std::size_t(V)] = lm.EosIndex();  // == BosHistory()
  lm_arc_.resize(V + 1, V + 1);
  for (Eigen::Index u = 0; u <= V; ++u)
    for (Eigen::Index v = 0; v <= V; ++v) {
      if (u == V && v == V) {
        lm_arc_(u, v) = kNegInf;  // empty sentence
        continue;
      }
      const double lp = lm.LogProb(lm_index[std::size_t(u)], lm_index[std::size_t(v)]);
      lm_arc_(u, v) = options_.lm_scale * lp + (v < V ? options_.word_penalty : 0.0);
    }
}

Hypothesis Decoder::Decode(const FeatureMatrix& feats, const std::string& utt_id) const {
  return DecodeLoglik(model_.FrameLogLikelihoods(feats), utt_id);
}

namespace {

struct Link {
  int word;
  int start;
  int prev;  // index of the previous word's link, -1 at sentence start
};

}  // namespace

Hypothesis Decoder::DecodeLoglik(const Eigen::MatrixXd& ll, const std::string& utt_id) const {
  const auto T = int(ll.rows());
  const auto V = int(word_states_.size());
  if (T == 0) throw DataError("decoder: empty utterance '" + utt_id + "'");
  const auto nv = static_cast<std::size_t>(V);
  std::vector<std::vector<double>> score(nv), next(nv);
  std::vector<std::vector<int>> link(nv), next_link(nv);
  for (int w = 0; w < V; ++w) {
    const auto n = word_states_[std::size_t(w)].size();
    score[std::size_t(w)].assign(n, kNegInf);
    next[std::size_t(w)].assign(n, kNegInf);
    link[std::size_t(w)].assign(n, -1);
    next_link[std::size_t(w)].assign(n, -1);
  }
  std::vector<Link> links;
  std::vector<double> exit_score(nv);

  for (int t = 0; t < T; ++t) {
    // Word-exit scores from frame t - 1.
    for (int u = 0; u < V; ++u) {
      const auto& st = word_states_[std::size_t(u)];
      exit_score[std::size_t(u)] =
          t == 0 ? kNegInf : score[std::size_t(u)].back() + model_.LogAdvance(st.back());
    }
    double best = kNegInf;
    for (int v = 0; v < V; ++v) {
      const auto& st = word_states_[std::size_t(v)];
      auto& cur = score[std::size_t(v)];
      auto& nx = next[std::size_t(v)];
      auto& nl = next_link[std::size_t(v)];
      const auto& cl = link[std::size_t(v)];
      // Best predecessor for entering v.
      double enter = kNegInf;
      int from = -2;  // -1 = sentence start
      if (t == 0) {
        enter = lm_arc_(V, v);
        from = -1;
      } else {
        for (int u = 0; u < V; ++u) {
          const double s = exit_score[std::size_t(u)] + lm_arc_(u, v);
          if (s > enter) {
            enter = s;
            from = u;
          }
        }
      }
      for (std::size_t j = st.size(); j-- > 0;) {
        const int s = st[j];
        double stay = cur[j] + model_.LogSelfLoop(s);
        int lk = cl[j];
        double in = kNegInf;
        int in_link = -1;
        if (j > 0) {
          in = cur[j - 1] + model_.LogAdvance(st[j - 1]);
          in_link = cl[j - 1];
        } else if (enter > kNegInf) {
          in = enter;
          in_link = -3;  // new link created below if chosen
        }
        if (in > stay) {
          stay = in;
          lk = in_link;
        }
        if (lk == -3) {
          const int prev = from >= 0 ? link[std::size_t(from)].back() : -1;
          links.push_back({v, t, prev});
          lk = int(links.size()) - 1;
        }
        nx[j] = stay + ll(t, s);
        nl[j] = lk;
        best = std::max(best, nx[j]);
      }
    }
    if (!(best > kNegInf))
      throw NumericError("decoder: no surviving token at frame " + std::to_string(t) +
                         " of '" + utt_id + "'");
    if (options_.beam > 0) {
      const double floor = best - options_.beam;
      for (int v = 0; v < V; ++v)
        for (auto& x : next[std::size_t(v)])
          if (x < floor) x = kNegInf;
    }
    std::swap(score, next);
    std::swap(link, next_link);
  }

  double best = kNegInf;
  int best_word = -1;
  for (int u = 0; u < V; ++u) {
    const auto& st = word_states_[std::size_t(u)];
    const double s = score[std::size_t(u)].back() + model_.LogAdvance(st.back()) + lm_arc_(u, V);
    if (s > best) {
      best = s;
      best_word = u;
    }
  }
  if (best_word < 0)
    throw NumericError("decoder: no complete hypothesis for '" + utt_id +
                       "' (utterance shorter than any word, or beam too tight)");
  Hypothesis h;
  h.utt_id = utt_id;
  h.score = best;
  int end = T - 1;
  for (int l = link[std::size_t(best_word)].back(); l >= 0; l = links[std::size_t(l)].prev) {
    const Link& k = links[std::size_t(l)];
    h.words.push_back(lexicon_.words[std::size_t(k.word)]);
    h.boundaries.emplace_back(k.start, end);
    end = k.start - 1;
  }
  std::reverse(h.words.begin(), h.words.end());
  std::reverse(h.boundaries.begin(), h.boundaries.end());
  return h;
}

double Decoder::SentenceScore(const FeatureMatrix& feats, const std::vector<int>& words) const {
  if (words.empty()) return kNegInf;
  const auto V = Eigen::Index(word_states_.size());
  std::vector<int> seq;
  for (int w : words) {
    const auto& st = word_states_.at(std::size_t(w));
    seq.insert(seq.end(), st.begin(), st.end());
  }
  if (std::size_t(feats.rows()) < seq.size()) return kNegInf;
  double s = AlignStates(model_, model_.FrameLogLikelihoods(feats), seq).log_likelihood;
  Eigen::Index h = V;
  for (int w : words) {
    s += lm_arc_(h, w);
    h = w;
  }
  return s + lm_arc_(h, V);
}

// ---- WER -----------------------------------------------------------------------

WerResult& WerResult::operator+=(const WerResult& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  ref_length += o.ref_length;
  return *this;
}

WerResult ComputeWer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  if (ref.empty()) throw DataError("WER: empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = int(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = int(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1),
                          d[i - 1][j] + 1, d[i][j - 1] + 1});
  WerResult r;
  r.ref_length = int(n);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        d[i][j] == d[i - 1][j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++r.substitutions;
      --i;
      --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++r.deletions;
      --i;
    } else {
      ++r.insertions;
      --j;
    }
  }
  return r;
}

// ---- hypothesis files ----------------------------------------------------------

void WriteHypotheses(const fs::path& path, const std::vector<Hypothesis>& hyps) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& h : hyps) {
    nlohmann::json j;
    j["utt_id"] = h.utt_id;
    j["words"] = h.words;
    j["score"] = h.score;
    nlohmann::json b = nlohmann::json::array();
    for (const auto& [s, e] : h.boundaries) b.push_back({s, e});
    j["boundaries"] = b;
    out << j.dump() << '\n';
  }
}

std::vector<Hypothesis> ReadHypotheses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open hypotheses '" + path.string() + "'");
  std::vector<Hypothesis> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Hypothesis h;
      h.utt_id = j.at("utt_id").get<std::string>();
      h.words = j.at("words").get<std::vector<std::string>>();
      h.score = j.at("score").get<double>();
      for (const auto& b : j.at("boundaries"))
        h.boundaries.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
      out.push_back(std::move(h));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ssikit::asr
