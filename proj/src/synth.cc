// src/synth.cc

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

#include "ssikit/synth.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ssikit::synth {

namespace fs = std::filesystem;
using corpus::Split;

void SynthConfig::Validate() const {
  if (n_speakers < 1 || test_utts_per_speaker < 0 || train_utts_per_speaker < 1)
    throw UsageError("synth: speaker/utterance counts must be positive");
  if (test_prompt_pool < test_utts_per_speaker)
    throw UsageError("synth: test prompt pool smaller than per-speaker test set");
  if (n_phones < 2 || n_words < 2) throw UsageError("synth: need >= 2 phones and words");
  if (min_prompt_words < 1 || max_prompt_words < min_prompt_words)
    throw UsageError("synth: bad prompt length range");
  if (!(ult_fps > 0) || !(vid_fps > 0) || height < 4 || width < 4)
    throw UsageError("synth: bad frame geometry");
  if (!(target_syllable_rate > 0)) throw UsageError("synth: syllable rate must be > 0");
  for (const auto& [mode, e] : effects) {
    if (!(e.tempo > 0) || !(e.contraction > 0))
      throw UsageError("synth: mode factors must be > 0");
    if (mode == SpeakingMode::kModal &&
        (e.tempo != 1.0 || e.contraction != 1.0 || e.feature_shift != 0.0))
      throw UsageError("synth: modal factors must be exactly 1 (shift 0)");
  }
  for (auto m : test_modes)
    if (!effects.count(m)) throw UsageError("synth: no effects configured for a test mode");
  if (contour_frame_step < 1) throw UsageError("synth: contour_frame_step must be >= 1");
}

// ---- inventory -----------------------------------------------------------------

Inventory MakeInventory(const SynthConfig& config) {
  static const char* kNames[] = {"p", "t", "k", "m", "a", "i", "u", "s",
                                 "n", "l", "o", "e", "f", "r", "b", "d"};
  Rng rng(MixSeed(config.seed, "inventory"));
  Inventory inv;
  for (int i = 0; i < config.n_phones; ++i)
    inv.phones.push_back(i < 16 ? kNames[i] : "x" + std::to_string(i));

  // Unique pronunciations of 1-4 phones covering the whole inventory.
  for (int attempt = 0;; ++attempt) {
    if (attempt > 1000) throw UsageError("synth: cannot build a covering lexicon");
    asr::Lexicon lex;
    std::set<int> used;
    while (int(lex.size()) < config.n_words) {
      const int len = 1 + int(UniformIndex(rng, 4));
      asr::LexiconEntry e;
      std::string spelling;
      for (int k = 0; k < len; ++k) {
        e.phones.push_back(int(UniformIndex(rng, std::size_t(config.n_phones))));
        spelling += inv.phones[std::size_t(e.phones.back())];
      }
      if (lex.Contains(spelling)) continue;
      e.syllables = (len + 1) / 2;
      used.insert(e.phones.begin(), e.phones.end());
      lex.Add(spelling, std::move(e));
    }
    if (int(used.size()) == config.n_phones) {
      inv.lexicon = std::move(lex);
      break;
    }
  }

  const int n_states = config.n_phones * config.states_per_phone;
  inv.state_means.resize(n_states, config.feature_dim);
  for (int s = 0; s < n_states; ++s)
    for (int j = 0; j < config.feature_dim; ++j)
      inv.state_means(s, j) = config.state_mean_scale * config.feature_noise * StdNormal(rng);

  inv.phone_deformation.resize(config.n_phones, 3);
  for (int p = 0; p < config.n_phones; ++p)
    for (int j = 0; j < 3; ++j) inv.phone_deformation(p, j) = StdNormal(rng);

  const int V = config.n_words;
  inv.word_successors.resize(V + 1, V);
  for (int h = 0; h <= V; ++h)
    for (int w = 0; w < V; ++w) inv.word_successors(h, w) = std::exp(1.5 * StdNormal(rng));
  return inv;
}

SpeakerParams MakeSpeaker(const SynthConfig& config, const Inventory&, int index) {
  char id[16];
  std::snprintf(id, sizeof id, "spk%02d", index);
  Rng rng(MixSeed(config.seed, std::string("speaker:") + id));
  SpeakerParams s;
  s.id = id;
  s.feature_offset.resize(config.feature_dim);
  for (int j = 0; j < config.feature_dim; ++j)
    s.feature_offset[j] = config.speaker_variability * config.feature_noise * StdNormal(rng);
  const double h = config.height, w = config.width;
  s.arch_height = 0.72 * h;
  s.arch_amplitude = 0.35 * h * (1.0 + 0.1 * StdNormal(rng));
  s.arch_half_width = 0.42 * w * (1.0 + 0.05 * StdNormal(rng));
  s.vertical_offset = config.speaker_variability * StdNormal(rng);
  return s;
}

// ---- durations and contours ----------------------------------------------------

std::vector<int> ScaleDurations(const std::vector<double>& base, double tempo) {
  if (!(tempo > 0)) throw UsageError("tempo factor must be > 0");
  std::vector<int> out;
  out.reserve(base.size());
  for (double b : base) out.push_back(std::max(1, int(std::ceil(b / tempo - 1e-9))));
  return out;
}

namespace {

artic::PointList ArchShape(const SynthConfig& config, const SpeakerParams& spk,
                           const double* deformation, int phone) {
  const int W = config.width;
  const double xc = 0.5 * (W - 1);
  artic::PointList pts(static_cast<std::size_t>(W));
  for (int x = 0; x < W; ++x) {
    const double u = (x - xc) / spk.arch_half_width;
    const double dome = std::max(0.0, 1.0 - u * u);
    double y = spk.arch_height + spk.vertical_offset - spk.arch_amplitude * dome;
    if (deformation) {
      const double bump_x =
          W * (0.25 + 0.5 * double(phone) / double(std::max(1, config.n_phones - 1)));
      const double bump = std::exp(-0.5 * std::pow((x - bump_x) / (W / 8.0), 2));
      y -= 1.5 * deformation[0] * dome + 1.0 * deformation[1] * u + 1.5 * deformation[2] * bump;
    }
    y = std::clamp(y, 1.0, double(config.height) - 2.0);
    pts[std::size_t(x)] = artic::Point(double(x), y);
  }
  return pts;
}

artic::Point Centroid(const artic::PointList& pts) {
  artic::Point c = artic::Point::Zero();
  for (const auto& p : pts) c += p;
  return c / double(pts.size());
}

}  // namespace

std::vector<artic::PointList> GenContourTrajectory(const SynthConfig& config,
                                                   const Inventory& inv,
                                                   const SpeakerParams& speaker,
                                                   double contraction,
                                                   const std::vector<int>& phones,
                                                   const std::vector<int>& phone_frames,
                                                   Rng& rng) {
  if (phones.size() != phone_frames.size())
    throw UsageError("GenContourTrajectory: phones and durations differ in length");
  const artic::PointList rest = ArchShape(config, speaker, nullptr, 0);
  const artic::Point centre = Centroid(rest);
  std::vector<artic::PointList> out;
  artic::PointList prev = rest;
  for (std::size_t i = 0; i < phones.size(); ++i) {
    Eigen::RowVector3d def = inv.phone_deformation.row(phones[i]);
    const artic::PointList target = ArchShape(config, speaker, def.data(), phones[i]);
    const int n = phone_frames[i];
    const int ramp = std::max(1, int(std::ceil(0.4 * n)));
    for (int f = 0; f < n; ++f) {
      const double a = std::min(1.0, double(f + 1) / double(ramp));
      artic::PointList pts(target.size());
      for (std::size_t k = 0; k < target.size(); ++k) {
        const artic::Point p = (1.0 - a) * prev[k] + a * target[k];
        pts[k] = centre + contraction * (p - centre);
        pts[k].x() += config.contour_jitter * StdNormal(rng);
        pts[k].y() += config.contour_jitter * StdNormal(rng);
      }
      out.push_back(std::move(pts));
    }
    prev = target;
  }
  return out;
}

Grid RenderPseudoUltrasound(const artic::PointList& contour, int height, int width,
                            double noise_std, Rng& rng) {
  Grid g = Grid::Zero(height, width);
  artic::PointList pts = contour;
  std::stable_sort(pts.begin(), pts.end(),
                   [](const artic::Point& a, const artic::Point& b) { return a.x() < b.x(); });
  if (pts.empty()) return g;
  std::size_t k = 0;
  for (int c = 0; c < width; ++c) {
    const double x = c;
    if (x < pts.front().x() || x > pts.back().x()) continue;
    while (k + 1 < pts.size() && pts[k + 1].x() < x) ++k;
    double y = pts[k].y();
    if (k + 1 < pts.size() && pts[k + 1].x() > pts[k].x()) {
      const double t = std::clamp((x - pts[k].x()) / (pts[k + 1].x() - pts[k].x()), 0.0, 1.0);
      y = (1 - t) * pts[k].y() + t * pts[k + 1].y();
    }
    for (int r = 0; r < height; ++r) {
      const double v = std::exp(-(r - y) * (r - y) / 8.0);
      g(r, c) = float(v);
    }
  }
  if (noise_std > 0)
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      const double v = g.data()[i] * (1.0 + noise_std * StdNormal(rng));
      g.data()[i] = float(std::clamp(v, 0.0, 1.0));
    }
  return g;
}

// ---- corpus --------------------------------------------------------------------

namespace {

std::vector<int> SamplePrompt(const SynthConfig& config, const Inventory& inv, Rng& rng) {
  const int V = config.n_words;
  const int len = config.min_prompt_words +
                  int(UniformIndex(rng, std::size_t(config.max_prompt_words -
                                                    config.min_prompt_words + 1)));
  std::vector<int> words;
  int h = V;
  for (int i = 0; i < len; ++i) {
    const Eigen::RowVectorXd w = inv.word_successors.row(h);
    double u = Uniform01(rng) * w.sum();
    int next = V - 1;
    for (int j = 0; j < V; ++j) {
      u -= w[j];
      if (u < 0) {
        next = j;
        break;
      }
    }
    words.push_back(next);
    h = next;
  }
  return words;
}

std::string Join(const asr::Lexicon& lex, const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i)
    s += (i ? " " : "") + lex.words[std::size_t(ids[i])];
  return s;
}

struct GeneratedUtterance {
  corpus::UtteranceRecord record;
  FeatureMatrix features;
  std::vector<artic::TongueContour> contours;
  UtteranceTruth truth;
};

GeneratedUtterance GenUtterance(const SynthConfig& config, const Inventory& inv,
                                const SpeakerParams& spk, SpeakingMode mode,
                                const std::vector<int>& words, Split split,
                                const std::string& utt_id, Rng& rng) {
  const ModeEffects fx = config.effects.at(mode);
  GeneratedUtterance g;
  auto& r = g.record;
  r.utt_id = utt_id;
  r.speaker_id = spk.id;
  r.session_id = spk.id + "-sess1";
  r.mode = mode;
  r.split = split;
  for (int w : words) r.prompt.push_back(inv.lexicon.words[std::size_t(w)]);
  r.syllable_count = 0;
  for (int w : words) r.syllable_count += inv.lexicon.entries[std::size_t(w)].syllables;
  const std::vector<int> phones = inv.lexicon.Phones(words);

  // Modal-scale base durations around the target syllable rate.
  const double s2 = config.rate_log_std * config.rate_log_std;
  const double rate =
      config.target_syllable_rate * std::exp(config.rate_log_std * StdNormal(rng) - 0.5 * s2);
  const double total = r.syllable_count / rate * config.ult_fps;
  std::vector<double> weight(phones.size());
  for (auto& w : weight) w = 0.75 + 0.5 * Uniform01(rng);
  const double wsum = std::accumulate(weight.begin(), weight.end(), 0.0);
  std::vector<double> base(phones.size());
  for (std::size_t i = 0; i < phones.size(); ++i)
    base[i] = std::max(config.min_phone_frames, total * weight[i] / wsum - 0.5);
  const std::vector<int> frames = ScaleDurations(base, fx.tempo);
  const int T = std::accumulate(frames.begin(), frames.end(), 0);
  r.duration = T / config.ult_fps;

  g.truth = {utt_id, phones, {}, fx.tempo, fx.contraction};
  std::vector<std::uint16_t> labels;
  std::vector<int> states;
  for (std::size_t i = 0; i < phones.size(); ++i) {
    g.truth.phone_starts.push_back(int(labels.size()));
    const int n = frames[i], k = config.states_per_phone;
    const int per = n / k, extra = n % k;
    for (int j = 0; j < k; ++j) {
      const int len = per + (j >= k - extra ? 1 : 0);
      for (int f = 0; f < len; ++f) states.push_back(phones[i] * k + j);
    }
    labels.insert(labels.end(), std::size_t(n), std::uint16_t(phones[i]));
  }
  r.phone_labels = labels;
  r.labels_path = "labels/" + utt_id + ".lab";

  if (config.emit_features) {
    const int d = config.feature_dim;
    const Eigen::RowVectorXd centre =
        inv.state_means.colwise().mean() + spk.feature_offset.transpose();
    g.features.resize(T, d);
    for (int t = 0; t < T; ++t) {
      Eigen::RowVectorXd x = inv.state_means.row(states[std::size_t(t)]) +
                             spk.feature_offset.transpose();
      for (int j = 0; j < d; ++j) x[j] += config.feature_noise * StdNormal(rng);
      x = centre + fx.contraction * (x - centre);
      x.array() += fx.feature_shift * config.feature_noise;
      g.features.row(t) = x;
    }
  }

  if (config.emit_contours || config.render_frames) {
    const auto traj = GenContourTrajectory(config, inv, spk, fx.contraction, phones, frames, rng);
    if (config.emit_contours)
      for (int f = 0; f < T; f += config.contour_frame_step)
        g.contours.push_back({utt_id, f, traj[std::size_t(f)]});
    if (config.render_frames) {
      corpus::FrameSequence ult{corpus::Modality::kUltrasound, config.ult_fps, {}};
      for (const auto& c : traj)
        ult.frames.push_back(
            RenderPseudoUltrasound(c, config.height, config.width, config.speckle_std, rng));
      const int n_vid = std::max(1, int(std::lround(T * config.vid_fps / config.ult_fps)));
      corpus::FrameSequence vid{corpus::Modality::kVideo, config.vid_fps, {}};
      for (int j = 0; j < n_vid; ++j) {
        const int src = std::min(T - 1, int(std::lround(j * config.ult_fps / config.vid_fps)));
        vid.frames.push_back(RenderPseudoUltrasound(traj[std::size_t(src)], config.height,
                                                    config.width, config.speckle_std, rng));
      }
      r.ult_path = "frames/" + utt_id + ".ult.artf";
      r.vid_path = "frames/" + utt_id + ".vid.artf";
      r.ultrasound = std::make_shared<corpus::FrameSource>(std::move(ult));
      r.video = std::make_shared<corpus::FrameSource>(std::move(vid));
    }
  }
  return g;
}

}  // namespace

SynthCorpus GenerateCorpus(const SynthConfig& config) {
  config.Validate();
  SynthCorpus out;
  out.config = config;
  out.inventory = MakeInventory(config);
  const Inventory& inv = out.inventory;
  out.manifest.phones = inv.phones;
  out.manifest.ult_fps = config.ult_fps;
  out.manifest.vid_fps = config.vid_fps;

  Rng prompt_rng(MixSeed(config.seed, "prompts"));
  std::vector<std::vector<int>> pool;
  std::set<std::string> pool_text;
  for (int guard = 0; int(pool.size()) < config.test_prompt_pool; ++guard) {
    if (guard > 100000) throw UsageError("synth: cannot draw enough distinct test prompts");
    auto p = SamplePrompt(config, inv, prompt_rng);
    if (pool_text.insert(Join(inv.lexicon, p)).second) pool.push_back(std::move(p));
  }
  auto to_words = [&](const std::vector<int>& ids) {
    std::vector<std::string> w;
    for (int i : ids) w.push_back(inv.lexicon.words[std::size_t(i)]);
    return w;
  };
  for (const auto& p : pool) out.lm_sentences.push_back(to_words(p));

  for (int s = 0; s < config.n_speakers; ++s) {
    SpeakerParams spk = MakeSpeaker(config, inv, s);
    Rng rng(MixSeed(config.seed, "utterances:" + spk.id));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < config.test_utts_per_speaker; ++i)
      std::swap(order[std::size_t(i)], order[std::size_t(i) + UniformIndex(rng, order.size() - std::size_t(i))]);

    auto add = [&](GeneratedUtterance&& g) {
      out.manifest.records.push_back(std::move(g.record));
      if (config.emit_features) out.features.push_back(std::move(g.features));
      out.contours.insert(out.contours.end(), g.contours.begin(), g.contours.end());
      out.truth.push_back(std::move(g.truth));
    };
    const int n_val = int(std::ceil(0.1 * config.train_utts_per_speaker - 1e-9));
    for (int i = 0; i < config.train_utts_per_speaker; ++i) {
      std::vector<int> words;
      do {
        words = SamplePrompt(config, inv, rng);
      } while (pool_text.count(Join(inv.lexicon, words)));
      out.lm_sentences.push_back(to_words(words));
      char id[64];
      std::snprintf(id, sizeof id, "%s_train_%03d", spk.id.c_str(), i);
      const Split split =
          i >= config.train_utts_per_speaker - n_val && config.train_utts_per_speaker > 1
              ? Split::kValidation
              : Split::kTrain;
      add(GenUtterance(config, inv, spk, SpeakingMode::kModal, words, split, id, rng));
    }
    for (SpeakingMode mode : config.test_modes)
      for (int i = 0; i < config.test_utts_per_speaker; ++i) {
        char id[64];
        std::snprintf(id, sizeof id, "%s_%s_%03d", spk.id.c_str(),
                      corpus::ToString(mode).c_str(), i);
        add(GenUtterance(config, inv, spk, mode, pool[order[std::size_t(i)]], Split::kTest, id,
                         rng));
      }
    out.speakers.push_back(std::move(spk));
  }
  // Extra LM text: the LM is trained on a superset of the prompts.
  for (int i = 0; i < 200; ++i)
    out.lm_sentences.push_back(to_words(SamplePrompt(config, inv, prompt_rng)));
  out.manifest.Validate();
  return out;
}

// ---- output --------------------------------------------------------------------

void WriteCorpus(const fs::path& dir, const SynthCorpus& c) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < c.manifest.records.size(); ++i) {
    const auto& r = c.manifest.records[i];
    if (r.ultrasound)
      corpus::WriteFrames(dir / r.ult_path, r.ultrasound->Get(), corpus::PixelType::kU8);
    if (r.video) corpus::WriteFrames(dir / r.vid_path, r.video->Get(), corpus::PixelType::kU8);
    if (r.phone_labels) corpus::WriteLabels(dir / r.labels_path, *r.phone_labels);
    if (i < c.features.size())
      corpus::WriteFeatures(dir / "features_oracle" / (r.utt_id + ".artf"), c.features[i]);
  }
  corpus::SaveManifest(dir / "manifest.json", c.manifest);
  asr::WriteLexicon(dir / "lexicon.txt", c.inventory.lexicon, c.inventory.phones);
  {
    std::ofstream lm(dir / "lm_corpus.txt");
    for (const auto& s : c.lm_sentences) {
      for (std::size_t i = 0; i < s.size(); ++i) lm << (i ? " " : "") << s[i];
      lm << '\n';
    }
    if (!lm) throw DataError("cannot write lm_corpus.txt");
  }
  if (c.config.emit_contours) artic::WriteContours(dir / "contours.csv", c.contours);

  nlohmann::json truth;
  nlohmann::json effects = nlohmann::json::object();
  for (const auto& [mode, e] : c.config.effects)
    effects[corpus::ToString(mode)] = {{"tempo", e.tempo},
                                       {"contraction", e.contraction},
                                       {"feature_shift", e.feature_shift},
                                       {"hull_area_ratio", e.contraction * e.contraction}};
  truth["seed"] = c.config.seed;
  truth["effects"] = effects;
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& t : c.truth)
    utts.push_back({{"id", t.utt_id},
                    {"phones", t.phones},
                    {"phone_starts", t.phone_starts},
                    {"tempo", t.tempo},
                    {"contraction", t.contraction}});
  truth["utterances"] = utts;
  std::ofstream tj(dir / "truth.json");
  tj << truth.dump(1) << '\n';
  if (!tj) throw DataError("cannot write truth.json");
}

std::vector<std::vector<std::string>> ReadSentences(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<std::string> words;
    std::string w;
    while (ss >> w) words.push_back(w);
    if (!words.empty()) out.push_back(std::move(words));
  }
  return out;
}

}  // namespace ssikit::synth
