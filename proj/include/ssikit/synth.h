// include/ssikit/synth.h

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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ssikit/artic.h"
#include "ssikit/asr/lm.h"
#include "ssikit/corpus.h"

namespace ssikit::synth {

using corpus::SpeakingMode;

// Per-mode planted effects. Modal must stay at the identity.
struct ModeEffects {
  double tempo = 1.0;          // durations scale by 1 / tempo
  double contraction = 1.0;    // contour and feature scaling about the centroid
  double feature_shift = 0.0;  // added to every feature dimension, in noise std units
};

struct SynthConfig {
  int n_speakers = 30;
  int test_utts_per_speaker = 20;    // per test mode
  int train_utts_per_speaker = 30;   // modal only, prompts disjoint from test
  int test_prompt_pool = 40;
  std::vector<SpeakingMode> test_modes = {SpeakingMode::kModal, SpeakingMode::kSilent};
  std::map<SpeakingMode, ModeEffects> effects = {
      {SpeakingMode::kModal, {}},
      {SpeakingMode::kSilent, {0.85, 0.9, 0.5}},
      {SpeakingMode::kWhispered, {0.95, 0.95, 0.25}}};

  int n_phones = 8;
  int n_words = 20;
  int min_prompt_words = 3;
  int max_prompt_words = 6;
  int states_per_phone = 3;

  double ult_fps = 81.5;
  double vid_fps = 60.0;
  int height = 16;
  int width = 32;
  double target_syllable_rate = 2.66;  // modal syllables per second
  double rate_log_std = 0.2;           // per-utterance log speaking-rate spread
  double min_phone_frames = 3.0;

  // Oracle bottleneck-like features.
  int feature_dim = 16;
  double state_mean_scale = 0.4;   // per-dimension std of state means, noise units
  double feature_noise = 1.0;
  double speaker_variability = 0.1;  // per-speaker offset std (noise units; pixels for contours)

  // Contours and rendering.
  double speckle_std = 0.3;
  double contour_jitter = 0.15;    // pixels
  int contour_frame_step = 1;      // emit every k-th frame's contour

  bool emit_features = true;
  bool emit_contours = true;
  bool render_frames = true;
  std::uint64_t seed = 1;

  void Validate() const;
};

// Static per-speaker parameters drawn from the speaker seed.
struct SpeakerParams {
  std::string id;
  Eigen::VectorXd feature_offset;
  double arch_height = 0.0;      // rows
  double arch_amplitude = 0.0;   // rows
  double arch_half_width = 0.0;  // columns
  double vertical_offset = 0.0;  // rows
};

// Generator-level inventory shared by every speaker.
struct Inventory {
  std::vector<std::string> phones;
  asr::Lexicon lexicon;
  Eigen::MatrixXd state_means;        // (phones * states) x feature_dim
  Eigen::MatrixXd phone_deformation;  // phones x 3 shape coefficients
  Eigen::MatrixXd word_successors;    // (V + 1) x V sampling weights; row V = start
};

Inventory MakeInventory(const SynthConfig& config);
SpeakerParams MakeSpeaker(const SynthConfig& config, const Inventory& inv, int index);

/// Frames per phone segment: ceil(base / tempo).
std::vector<int> ScaleDurations(const std::vector<double>& base_frames, double tempo);

/// One contour per frame: phone targets (base arch + phone deformation +
/// speaker offset) blended over the segment onsets, scaled about the arch
/// centroid by `contraction`, then jittered.
std::vector<artic::PointList> GenContourTrajectory(const SynthConfig& config,
                                                   const Inventory& inv,
                                                   const SpeakerParams& speaker,
                                                   double contraction,
                                                   const std::vector<int>& phones,
                                                   const std::vector<int>& phone_frames,
                                                   Rng& rng);

/// Gaussian ridge (sigma 2 px, by vertical distance) along the contour with
/// multiplicative speckle, clipped to [0, 1].
Grid RenderPseudoUltrasound(const artic::PointList& contour, int height, int width,
                            double noise_std, Rng& rng);

struct UtteranceTruth {
  std::string utt_id;
  std::vector<int> phones;
  std::vector<int> phone_starts;  // first frame of each phone
  double tempo = 1.0;
  double contraction = 1.0;
};

struct SynthCorpus {
  corpus::Manifest manifest;   // in-memory frame payloads when rendered
  Inventory inventory;
  std::vector<SpeakerParams> speakers;
  std::vector<std::vector<std::string>> lm_sentences;
  std::vector<FeatureMatrix> features;        // per record, when emitted
  std::vector<artic::TongueContour> contours;
  std::vector<UtteranceTruth> truth;          // per record
  SynthConfig config;
};

/// Deterministic in (config, seed); speakers use independent derived seeds.
SynthCorpus GenerateCorpus(const SynthConfig& config);

/// manifest.json, frames/, labels/, features_oracle/, contours.csv,
/// lexicon.txt, lm_corpus.txt, truth.json.
void WriteCorpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

/// Lines of whitespace-separated words.
std::vector<std::vector<std::string>> ReadSentences(const std::filesystem::path& path);

}  // namespace ssikit::synth
