// src/cli.cc

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

#include "ssikit/cli.h"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ssikit/artic.h"
#include "ssikit/asr/pipeline.h"
#include "ssikit/featnet.h"
#include "ssikit/stats.h"
#include "ssikit/svg.h"
#include "ssikit/synth.h"

namespace ssikit::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using corpus::Manifest;
using corpus::Modality;
using corpus::SpeakingMode;
using corpus::Split;

namespace {

struct Common {
  std::string corpus;
  std::string out;
  std::string preset = "desk";
  std::string config;
  std::uint64_t seed = 1;
  int jobs = 0;
  bool verbose = false;
};

int Jobs(const Common& c) {
  if (c.jobs > 0) return c.jobs;
  return std::max(1, int(std::thread::hardware_concurrency()));
}

json Section(const Common& c, const std::string& name) {
  if (c.config.empty()) return json::object();
  std::ifstream in(c.config);
  if (!in) throw DataError("cannot open config '" + c.config + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("config '" + c.config + "': " + e.what());
  }
  return j.contains(name) ? j.at(name) : json::object();
}

void CheckPreset(const Common& c) {
  if (c.preset != "desk" && c.preset != "full")
    throw UsageError("--preset must be desk or full, got '" + c.preset + "'");
}

void WriteRunJson(const fs::path& dir, const std::string& command,
                  const std::vector<std::string>& args, const Common& c, const json& resolved) {
  fs::create_directories(dir);
  json j;
  j["command"] = command;
  j["argv"] = args;
  j["seed"] = c.seed;
  j["preset"] = c.preset;
  j["jobs"] = Jobs(c);
  j["config_file"] = c.config;
  j["resolved"] = resolved;
  j["versions"] = {{"ssikit", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                         std::to_string(NLOHMANN_JSON_VERSION_MINOR)},
                   {"compiler", __VERSION__}};
  std::ofstream out(dir / "run.json");
  if (!out) throw DataError("cannot write '" + (dir / "run.json").string() + "'");
  out << j.dump(2) << '\n';
}

Manifest LoadCorpus(const Common& c) {
  if (c.corpus.empty()) throw UsageError("--corpus is required");
  return corpus::LoadManifest(fs::path(c.corpus) / "manifest.json");
}

asr::Lexicon LoadLexicon(const Common& c, const Manifest& m) {
  return asr::ReadLexicon(fs::path(c.corpus) / "lexicon.txt", m.phones);
}

std::string Num(double v) {
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

// ---- synth -----------------------------------------------------------------------

synth::SynthConfig SynthPreset(const std::string& preset) {
  synth::SynthConfig s;
  if (preset == "full") {
    s.n_speakers = 81;
    s.train_utts_per_speaker = 60;
    s.test_prompt_pool = 80;
    s.n_phones = 49;
    s.n_words = 200;
    s.height = 64;
    s.width = 128;
    s.feature_dim = 128;
  }
  return s;
}

json EffectsToJson(const synth::ModeEffects& e) {
  return {{"tempo", e.tempo}, {"contraction", e.contraction}, {"feature_shift", e.feature_shift}};
}

json SynthToJson(const synth::SynthConfig& s) {
  json effects = json::object();
  for (const auto& [mode, e] : s.effects) effects[corpus::ToString(mode)] = EffectsToJson(e);
  std::vector<std::string> modes;
  for (auto m : s.test_modes) modes.push_back(corpus::ToString(m));
  return {{"n_speakers", s.n_speakers},
          {"test_utts_per_speaker", s.test_utts_per_speaker},
          {"train_utts_per_speaker", s.train_utts_per_speaker},
          {"test_prompt_pool", s.test_prompt_pool},
          {"test_modes", modes},
          {"effects", effects},
          {"n_phones", s.n_phones},
          {"n_words", s.n_words},
          {"min_prompt_words", s.min_prompt_words},
          {"max_prompt_words", s.max_prompt_words},
          {"states_per_phone", s.states_per_phone},
          {"ult_fps", s.ult_fps},
          {"vid_fps", s.vid_fps},
          {"height", s.height},
          {"width", s.width},
          {"target_syllable_rate", s.target_syllable_rate},
          {"rate_log_std", s.rate_log_std},
          {"min_phone_frames", s.min_phone_frames},
          {"feature_dim", s.feature_dim},
          {"state_mean_scale", s.state_mean_scale},
          {"feature_noise", s.feature_noise},
          {"speaker_variability", s.speaker_variability},
          {"speckle_std", s.speckle_std},
          {"contour_jitter", s.contour_jitter},
          {"contour_frame_step", s.contour_frame_step},
          {"emit_features", s.emit_features},
          {"emit_contours", s.emit_contours},
          {"render_frames", s.render_frames},
          {"seed", s.seed}};
}

synth::SynthConfig SynthFromJson(const json& j, synth::SynthConfig s) {
  try {
    json base = SynthToJson(s);
    base.merge_patch(j);
    s.n_speakers = base.at("n_speakers");
    s.test_utts_per_speaker = base.at("test_utts_per_speaker");
    s.train_utts_per_speaker = base.at("train_utts_per_speaker");
    s.test_prompt_pool = base.at("test_prompt_pool");
    s.test_modes.clear();
    for (const auto& m : base.at("test_modes")) s.test_modes.push_back(corpus::ParseMode(m));
    for (const auto& [name, e] : base.at("effects").items()) {
      synth::ModeEffects fx;
      fx.tempo = e.value("tempo", 1.0);
      fx.contraction = e.value("contraction", 1.0);
      fx.feature_shift = e.value("feature_shift", 0.0);
      s.effects[corpus::ParseMode(name)] = fx;
    }
    s.n_phones = base.at("n_phones");
    s.n_words = base.at("n_words");
    s.min_prompt_words = base.at("min_prompt_words");
    s.max_prompt_words = base.at("max_prompt_words");
    s.states_per_phone = base.at("states_per_phone");
    s.ult_fps = base.at("ult_fps");
    s.vid_fps = base.at("vid_fps");
    s.height = base.at("height");
    s.width = base.at("width");
    s.target_syllable_rate = base.at("target_syllable_rate");
    s.rate_log_std = base.at("rate_log_std");
    s.min_phone_frames = base.at("min_phone_frames");
    s.feature_dim = base.at("feature_dim");
    s.state_mean_scale = base.at("state_mean_scale");
    s.feature_noise = base.at("feature_noise");
    s.speaker_variability = base.at("speaker_variability");
    s.speckle_std = base.at("speckle_std");
    s.contour_jitter = base.at("contour_jitter");
    s.contour_frame_step = base.at("contour_frame_step");
    s.emit_features = base.at("emit_features");
    s.emit_contours = base.at("emit_contours");
    s.render_frames = base.at("render_frames");
    s.seed = base.at("seed");
  } catch (const json::exception& e) {
    throw DataError(std::string("synth config: ") + e.what());
  }
  return s;
}

struct SynthFlags {
  int speakers = 0;
  int test_utts = 0;
  int train_utts = 0;
  bool no_frames = false;
  bool no_contours = false;
};

void CmdSynth(const Common& c, const SynthFlags& f, const std::vector<std::string>& args) {
  if (c.out.empty()) throw UsageError("--out is required");
  synth::SynthConfig s = SynthFromJson(Section(c, "synth"), SynthPreset(c.preset));
  s.seed = c.seed;
  if (f.speakers > 0) s.n_speakers = f.speakers;
  if (f.test_utts > 0) s.test_utts_per_speaker = f.test_utts;
  if (f.train_utts > 0) s.train_utts_per_speaker = f.train_utts;
  if (f.no_frames) s.render_frames = false;
  if (f.no_contours) s.emit_contours = false;
  s.Validate();
  const auto corpus = synth::GenerateCorpus(s);
  synth::WriteCorpus(c.out, corpus);
  WriteRunJson(c.out, "synth", args, c, SynthToJson(s));
  LogInfo("synth: wrote " + std::to_string(corpus.manifest.records.size()) +
          " utterances to " + c.out);
}

// ---- featnet -----------------------------------------------------------------------

featnet::FeatNetConfig FeatNetPreset(const Common& c) {
  auto fc = c.preset == "full" ? featnet::FeatNetConfig::Full() : featnet::FeatNetConfig::Desk();
  json j = fc.ToJson();
  j.merge_patch(Section(c, "featnet"));
  return featnet::FeatNetConfig::FromJson(j);
}

corpus::PreprocessConfig PreprocessFor(const Common& c, const featnet::FeatNetConfig& fc) {
  corpus::PreprocessConfig p;
  p.out_h = fc.height;
  p.out_w = fc.width;
  if (c.preset != "full") {
    p.video_resize_h = fc.height;
    p.video_resize_w = fc.width;
  }
  return p;
}

std::vector<Modality> ParseModalities(const std::string& s) {
  if (s == "both") return {Modality::kUltrasound, Modality::kVideo};
  if (s == "ultrasound") return {Modality::kUltrasound};
  if (s == "video") return {Modality::kVideo};
  throw UsageError("--modality must be ultrasound, video or both");
}

const corpus::FrameSource* Payload(const corpus::UtteranceRecord& r, Modality m) {
  return m == Modality::kUltrasound ? r.ultrasound.get() : r.video.get();
}

// Ultrasound-rate labels mapped onto another timeline by nearest timestamp.
std::vector<std::uint16_t> ResampleLabels(const std::vector<std::uint16_t>& labels,
                                          double from_fps, double to_fps, std::size_t count) {
  std::vector<std::uint16_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto j = long(std::lround(double(i) / to_fps * from_fps));
    j = std::clamp<long>(j, 0, long(labels.size()) - 1);
    out[i] = labels[std::size_t(j)];
  }
  return out;
}

fs::path CheckpointPath(const fs::path& dir, Modality m) {
  return dir / ("featnet_" + corpus::ToString(m) + ".fnet");
}

struct FeatNetFlags {
  std::string modality = "both";
  int epochs = -1;
  double lr = -1;
};

void CmdTrainFeatNet(const Common& c, const FeatNetFlags& f,
                     const std::vector<std::string>& args) {
  if (c.out.empty()) throw UsageError("--out is required");
  const Manifest m = LoadCorpus(c);
  auto fc = FeatNetPreset(c);
  fc.n_classes = int(m.phones.size());
  fc.seed = c.seed;
  if (f.epochs >= 0) fc.epochs = f.epochs;
  if (f.lr >= 0) fc.lr = f.lr;
  fc.Validate();
  const auto pre = PreprocessFor(c, fc);
  fs::create_directories(c.out);
  std::ofstream metrics(fs::path(c.out) / "featnet_metrics.csv");
  metrics << "modality,epoch,train_loss,validation_accuracy,selected\n";
  json resolved;
  resolved["featnet"] = fc.ToJson();
  for (Modality mod : ParseModalities(f.modality)) {
    std::vector<std::shared_ptr<const corpus::FrameSequence>> tr, va;
    std::vector<std::vector<std::uint16_t>> trl, val;
    std::vector<const corpus::FrameSequence*> raw;
    for (const auto& r : m.records) {
      if (r.split == Split::kTest || !r.phone_labels) continue;
      const auto* src = Payload(r, mod);
      if (!src) continue;
      auto seq = std::make_shared<const corpus::FrameSequence>(
          corpus::Preprocess(src->Get(), pre));
      auto labels = mod == Modality::kUltrasound
                        ? *r.phone_labels
                        : ResampleLabels(*r.phone_labels, m.ult_fps, seq->fps, seq->size());
      if (r.split == Split::kTrain) {
        raw.push_back(seq.get());
        tr.push_back(seq);
        trl.push_back(std::move(labels));
      } else {
        va.push_back(seq);
        val.push_back(std::move(labels));
      }
    }
    if (tr.empty()) {
      LogWarning("train-featnet: no " + corpus::ToString(mod) + " training data; skipped");
      continue;
    }
    if (va.empty()) throw DataError("train-featnet: no validation utterances");
    const auto norm = corpus::Normalizer::Fit(raw);
    auto params = featnet::InitParams<float>(fc, c.seed);
    params.normalizer = norm;
    const auto trs = featnet::WindowedSamples<float>(tr, trl, norm);
    const auto vas = featnet::WindowedSamples<float>(va, val, norm);
    LogInfo("train-featnet: " + corpus::ToString(mod) + " " + std::to_string(trs.size()) +
            " training and " + std::to_string(vas.size()) + " validation samples");
    const auto res = featnet::TrainSgd(params, trs, vas);
    featnet::SaveCheckpoint(CheckpointPath(c.out, mod), res.best);
    for (const auto& e : res.epochs)
      metrics << corpus::ToString(mod) << ',' << e.epoch << ',' << Num(e.train_loss) << ','
              << Num(e.validation_accuracy) << ',' << (e.epoch == res.best_epoch ? 1 : 0)
              << '\n';
    resolved["best_epoch"][corpus::ToString(mod)] = res.best_epoch;
  }
  WriteRunJson(c.out, "train-featnet", args, c, resolved);
}

template <typename Fn>
void ParallelFor(std::size_t n, int jobs, Fn fn) {
  jobs = std::max(1, std::min<int>(jobs, int(n)));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = std::size_t(t); i < n; i += std::size_t(jobs)) fn(i);
      } catch (...) {
        errors[std::size_t(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct ExtractFlags {
  std::string model;
};

void CmdExtract(const Common& c, const ExtractFlags& f, const std::vector<std::string>& args) {
  if (c.out.empty() || f.model.empty()) throw UsageError("--model and --out are required");
  const Manifest m = LoadCorpus(c);
  std::vector<std::pair<Modality, featnet::FeatNetParams<float>>> nets;
  for (Modality mod : {Modality::kUltrasound, Modality::kVideo})
    if (fs::exists(CheckpointPath(f.model, mod)))
      nets.emplace_back(mod, featnet::LoadCheckpoint<float>(CheckpointPath(f.model, mod)));
  if (nets.empty()) throw DataError("extract-features: no featnet checkpoint in '" + f.model + "'");
  fs::create_directories(c.out);
  ParallelFor(m.records.size(), Jobs(c), [&](std::size_t i) {
    const auto& r = m.records[i];
    if (!r.ultrasound) throw DataError("extract-features: " + r.utt_id + " has no ultrasound");
    const std::size_t T = r.ultrasound->n_frames();
    std::vector<FeatureMatrix> parts;
    for (const auto& [mod, params] : nets) {
      const auto* src = Payload(r, mod);
      if (!src) throw DataError("extract-features: " + r.utt_id + " lacks " + corpus::ToString(mod));
      const auto seq = corpus::Preprocess(src->Get(), PreprocessFor(c, params.config));
      FeatureMatrix feats = featnet::ExtractBottleneck(params, seq);
      if (mod != Modality::kUltrasound) {
        FeatureMatrix aligned(Eigen::Index(T), feats.cols());
        for (std::size_t t = 0; t < T; ++t) {
          auto j = long(std::lround(double(t) / m.ult_fps * seq.fps));
          j = std::clamp<long>(j, 0, long(feats.rows()) - 1);
          aligned.row(Eigen::Index(t)) = feats.row(j);
        }
        feats = std::move(aligned);
      }
      parts.push_back(std::move(feats));
    }
    Eigen::Index dim = 0;
    for (const auto& p : parts) dim += p.cols();
    FeatureMatrix out(Eigen::Index(T), dim);
    Eigen::Index col = 0;
    for (const auto& p : parts) {
      out.middleCols(col, p.cols()) = p;
      col += p.cols();
    }
    corpus::WriteFeatures(fs::path(c.out) / (r.utt_id + ".artf"), out);
  });
  json resolved;
  for (const auto& [mod, params] : nets)
    resolved["modalities"].push_back({{"modality", corpus::ToString(mod)},
                                      {"bottleneck_dim", params.config.bottleneck_dim()}});
  WriteRunJson(c.out, "extract-features", args, c, resolved);
}

// ---- recogniser ----------------------------------------------------------------------

asr::AmConfig AmFromJson(const json& j) {
  asr::AmConfig a;
  try {
    a.states_per_phone = j.value("states_per_phone", a.states_per_phone);
    a.var_floor_scale = j.value("var_floor_scale", a.var_floor_scale);
    a.mono_iterations = j.value("mono_iterations", a.mono_iterations);
    a.target_mixtures = j.value("target_mixtures", a.target_mixtures);
    a.split_after = j.value("split_after", a.split_after);
    a.lda_dim = j.value("lda_dim", a.lda_dim);
    a.lda_iterations = j.value("lda_iterations", a.lda_iterations);
    a.sat_outer_iterations = j.value("sat_outer_iterations", a.sat_outer_iterations);
    a.sat_em_iterations = j.value("sat_em_iterations", a.sat_em_iterations);
    a.fmllr.iterations = j.value("fmllr_iterations", a.fmllr.iterations);
    a.fmllr.row_sweeps = j.value("fmllr_row_sweeps", a.fmllr.row_sweeps);
  } catch (const json::exception& e) {
    throw DataError(std::string("am config: ") + e.what());
  }
  return a;
}

json AmToJson(const asr::AmConfig& a) {
  return {{"states_per_phone", a.states_per_phone},
          {"var_floor_scale", a.var_floor_scale},
          {"mono_iterations", a.mono_iterations},
          {"target_mixtures", a.target_mixtures},
          {"split_after", a.split_after},
          {"lda_dim", a.lda_dim},
          {"lda_iterations", a.lda_iterations},
          {"sat_outer_iterations", a.sat_outer_iterations},
          {"sat_em_iterations", a.sat_em_iterations},
          {"fmllr_iterations", a.fmllr.iterations},
          {"fmllr_row_sweeps", a.fmllr.row_sweeps}};
}

fs::path FeatDir(const Common& c, const std::string& feat_dir) {
  return feat_dir.empty() ? fs::path(c.corpus) / "features_oracle" : fs::path(feat_dir);
}

FeatureMatrix LoadUttFeatures(const fs::path& dir, const corpus::UtteranceRecord& r) {
  auto f = corpus::ReadFeatures(dir / (r.utt_id + ".artf"));
  if (r.ultrasound && std::size_t(f.rows()) != r.ultrasound->n_frames())
    throw DataError("features for " + r.utt_id + " have " + std::to_string(f.rows()) +
                    " frames, expected " + std::to_string(r.ultrasound->n_frames()));
  return f;
}

struct AmFlags {
  std::string feat_dir;
};

void CmdTrainAm(const Common& c, const AmFlags& f, const std::vector<std::string>& args) {
  if (c.out.empty()) throw UsageError("--out is required");
  const Manifest m = LoadCorpus(c);
  const auto lex = LoadLexicon(c, m);
  const auto am = AmFromJson(Section(c, "am"));
  const fs::path dir = FeatDir(c, f.feat_dir);
  std::vector<asr::TrainUtterance> data;
  for (const auto& r : m.records)
    if (r.split != Split::kTest)
      data.push_back({r.utt_id, r.speaker_id, LoadUttFeatures(dir, r), lex.WordIds(r.prompt)});
  if (data.empty()) throw DataError("train-am: no training utterances");
  const auto models = asr::TrainAcousticModels(m.phones, lex, data, am);
  models.Save(c.out);
  const auto lm = asr::TrainBigram(synth::ReadSentences(fs::path(c.corpus) / "lm_corpus.txt"),
                                   lex.words);
  lm.Save(fs::path(c.out) / "lm.json");
  std::ofstream trace(fs::path(c.out) / "am_training.csv");
  trace << "stage,iteration,log_likelihood\n";
  auto dump = [&](const char* stage, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) trace << stage << ',' << i << ',' << Num(v[i]) << '\n';
  };
  dump("mono", models.mono_loglik);
  dump("lda", models.lda_loglik);
  dump("sat", models.sat_loglik);
  WriteRunJson(c.out, "train-am", args, c, {{"am", AmToJson(am)}, {"utterances", data.size()}});
}

struct DecodeFlags {
  std::string feat_dir;
  std::string model;
  std::string features = "raw";
  std::string adapt = "map";
  std::vector<std::string> modes;
  double lm_scale = 10.0;
  double word_penalty = 0.0;
  double beam = 0.0;
  double map_tau = 10.0;
  int adapt_iterations = 1;
};

std::vector<std::string> TestModes(const Manifest& m, const std::vector<std::string>& wanted) {
  std::set<std::string> present;
  for (const auto& r : m.records)
    if (r.split == Split::kTest) present.insert(corpus::ToString(r.mode));
  std::vector<std::string> out;
  for (const char* mode : {"modal", "silent", "whispered"})
    if (present.count(mode) &&
        (wanted.empty() || std::find(wanted.begin(), wanted.end(), mode) != wanted.end()))
      out.push_back(mode);
  for (const auto& w : wanted)
    if (!present.count(w)) throw DataError("no test utterances for mode '" + w + "'");
  if (out.empty()) throw DataError("corpus has no test utterances");
  return out;
}

std::vector<asr::DecodeUtterance> TestSet(const Manifest& m, const fs::path& dir,
                                          const std::string& mode) {
  std::vector<asr::DecodeUtterance> out;
  for (const auto& r : m.records)
    if (r.split == Split::kTest && corpus::ToString(r.mode) == mode)
      out.push_back({r.utt_id, r.speaker_id, LoadUttFeatures(dir, r), r.prompt});
  return out;
}

json WerJson(const asr::WerResult& w) {
  return {{"wer", w.Rate()},
          {"errors", w.Errors()},
          {"ref_words", w.ref_length},
          {"substitutions", w.substitutions},
          {"deletions", w.deletions},
          {"insertions", w.insertions}};
}

asr::DecodeSetOptions DecodeOptionsFrom(const Common& c, const DecodeFlags& f) {
  asr::DecodeSetOptions o;
  o.decode.lm_scale = f.lm_scale;
  o.decode.word_penalty = f.word_penalty;
  o.decode.beam = f.beam;
  o.jobs = Jobs(c);
  return o;
}

void CmdDecode(const Common& c, const DecodeFlags& f, bool adapt,
               const std::vector<std::string>& args) {
  if (c.out.empty() || f.model.empty()) throw UsageError("--model and --out are required");
  const auto features = asr::ParseFeatureType(f.features);
  const Manifest m = LoadCorpus(c);
  const auto lex = LoadLexicon(c, m);
  const auto models = asr::AcousticModels::Load(f.model);
  const auto lm = asr::BigramLm::Load(fs::path(f.model) / "lm.json");
  const auto opts = DecodeOptionsFrom(c, f);
  const fs::path out(c.out);
  fs::create_directories(out);
  json resolved = {{"features", f.features},
                   {"lm_scale", f.lm_scale},
                   {"word_penalty", f.word_penalty},
                   {"beam", f.beam}};
  for (const auto& mode : TestModes(m, f.modes)) {
    const auto utts = TestSet(m, FeatDir(c, f.feat_dir), mode);
    const std::string stem = mode + "_" + f.features;
    if (!adapt) {
      const auto res = asr::DecodeSet(models, lm, lex, utts, features, opts);
      asr::WriteHypotheses(out / ("hyp_" + stem + ".jsonl"), res.hypotheses);
      if (!res.transforms.empty())
        asr::SaveTransforms(out / ("fmllr_" + stem + ".json"), res.transforms);
      std::ofstream(out / ("decode_" + stem + ".json"))
          << json{{"mode", mode}, {"features", f.features}, {"result", WerJson(res.wer)}}.dump(2)
          << '\n';
      LogInfo("decode " + stem + ": WER " + Num(100 * res.wer.Rate()) + "%");
    } else {
      asr::AdaptOptions ad;
      ad.strategy = asr::ParseAdaptStrategy(f.adapt);
      ad.iterations = f.adapt_iterations;
      ad.map_tau = f.map_tau;
      const auto res = asr::AdaptUnsupervised(models, lm, lex, utts, features, ad, opts);
      asr::WriteHypotheses(out / ("hyp_" + stem + ".jsonl"), res.pass1.hypotheses);
      asr::WriteHypotheses(out / ("hyp_" + stem + "_" + f.adapt + ".jsonl"),
                           res.pass2.hypotheses);
      std::ofstream(out / ("adapt_" + stem + "_" + f.adapt + ".json"))
          << json{{"mode", mode},
                  {"features", f.features},
                  {"adaptation", f.adapt},
                  {"pass1", WerJson(res.pass1.wer)},
                  {"pass2", WerJson(res.pass2.wer)}}
                 .dump(2)
          << '\n';
      LogInfo("adapt " + stem + ": WER " + Num(100 * res.pass1.wer.Rate()) + "% -> " +
              Num(100 * res.pass2.wer.Rate()) + "%");
    }
  }
  if (adapt) {
    resolved["adaptation"] = f.adapt;
    resolved["map_tau"] = f.map_tau;
    resolved["iterations"] = f.adapt_iterations;
  }
  WriteRunJson(out, adapt ? "adapt" : "decode", args, c, resolved);
}

// ---- score -------------------------------------------------------------------------

struct ScoreFlags {
  std::string in;
};

struct ScoreKey {
  std::string mode, features, adaptation;
};

int ModeOrder(const std::string& m) {
  return m == "modal" ? 0 : m == "silent" ? 1 : m == "whispered" ? 2 : 3;
}

void CmdScore(const Common& c, const ScoreFlags& f, const std::vector<std::string>& args) {
  if (c.out.empty()) throw UsageError("--out is required");
  const fs::path in = f.in.empty() ? fs::path(c.out) : fs::path(f.in);
  const Manifest m = LoadCorpus(c);
  std::map<std::string, std::vector<std::string>> refs;
  std::map<std::string, std::string> speaker_of;
  for (const auto& r : m.records) {
    refs[r.utt_id] = r.prompt;
    speaker_of[r.utt_id] = r.speaker_id;
  }
  static const std::regex kName(
      R"(hyp_([a-z]+)_(raw|fmllr)(?:_(none|fmllr|map|both))?\.jsonl)");
  struct Entry {
    ScoreKey key;
    asr::WerResult total;
    std::map<std::string, asr::WerResult> by_speaker;
  };
  std::vector<Entry> entries;
  if (!fs::is_directory(in)) throw DataError("score: '" + in.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    std::smatch mt;
    const std::string name = p.filename().string();
    if (!std::regex_match(name, mt, kName)) continue;
    Entry e;
    e.key = {mt[1], mt[2], mt[3].matched ? std::string(mt[3]) : std::string("none")};
    for (const auto& h : asr::ReadHypotheses(p)) {
      auto it = refs.find(h.utt_id);
      if (it == refs.end()) throw DataError("score: unknown utterance '" + h.utt_id + "'");
      const auto w = asr::ComputeWer(it->second, h.words);
      e.total += w;
      e.by_speaker[speaker_of[h.utt_id]] += w;
    }
    if (e.total.ref_length == 0) continue;
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw DataError("score: no hypothesis files in '" + in.string() + "'");
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    auto ka = std::make_tuple(ModeOrder(a.key.mode), a.key.mode, a.key.features != "raw",
                              a.key.adaptation != "none", a.key.adaptation);
    auto kb = std::make_tuple(ModeOrder(b.key.mode), b.key.mode, b.key.features != "raw",
                              b.key.adaptation != "none", b.key.adaptation);
    return ka < kb;
  });
  std::map<std::pair<std::string, std::string>, double> baseline;
  for (const auto& e : entries)
    if (e.key.adaptation == "none")
      baseline[{e.key.mode, e.key.features}] = 100.0 * e.total.Rate();
  fs::create_directories(c.out);
  std::ofstream table(fs::path(c.out) / "wer_table.csv");
  table << "mode,features,adaptation,wer,delta,errors,ref_words,substitutions,deletions,"
           "insertions\n";
  std::ofstream spk(fs::path(c.out) / "wer_by_speaker.csv");
  spk << "speaker,mode,features,adaptation,wer\n";
  std::ostringstream pretty;
  pretty << std::left << std::setw(10) << "mode" << std::setw(8) << "feats" << std::setw(8)
         << "adapt" << std::right << std::setw(9) << "WER%" << std::setw(10) << "delta" << '\n';
  for (const auto& e : entries) {
    const double wer = 100.0 * e.total.Rate();
    std::string delta;
    if (e.key.adaptation != "none") {
      auto it = baseline.find({e.key.mode, e.key.features});
      if (it != baseline.end()) delta = Num(wer - it->second);
    }
    table << e.key.mode << ',' << e.key.features << ',' << e.key.adaptation << ',' << Num(wer)
          << ',' << delta << ',' << e.total.Errors() << ',' << e.total.ref_length << ','
          << e.total.substitutions << ',' << e.total.deletions << ',' << e.total.insertions
          << '\n';
    for (const auto& [s, w] : e.by_speaker)
      spk << s << ',' << e.key.mode << ',' << e.key.features << ',' << e.key.adaptation << ','
          << Num(100.0 * w.Rate()) << '\n';
    std::string delta_text;
    if (!delta.empty()) {
      std::ostringstream d;
      d << '(' << std::showpos << std::fixed << std::setprecision(2) << std::stod(delta) << ')';
      delta_text = d.str();
    }
    pretty << std::left << std::setw(10) << e.key.mode << std::setw(8) << e.key.features
           << std::setw(8) << e.key.adaptation << std::right << std::fixed
           << std::setprecision(2) << std::setw(9) << wer << std::setw(10)
           << delta_text << '\n';
  }
  std::cout << pretty.str();
  WriteRunJson(c.out, "score", args, c, {{"in", in.string()}, {"rows", entries.size()}});
}

// ---- analyze -----------------------------------------------------------------------

struct AnalyzeFlags {
  std::string scores;
  std::string wer_features = "raw";
  std::string wer_adaptation = "none";
  double contamination = 0.02;
  double alpha = 0.05;
  bool all_splits = false;
};

std::vector<std::vector<std::string>> ReadCsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::vector<artic::TongueContour> TrackContours(const Manifest& m, bool all_splits, int jobs) {
  std::vector<const corpus::UtteranceRecord*> recs;
  for (const auto& r : m.records)
    if ((all_splits || r.split == Split::kTest) && r.ultrasound) recs.push_back(&r);
  std::vector<std::vector<artic::TongueContour>> per(recs.size());
  ParallelFor(recs.size(), jobs, [&](std::size_t i) {
    const auto& seq = recs[i]->ultrasound->Get();
    for (std::size_t t = 0; t < seq.size(); ++t) {
      try {
        auto tc = artic::RidgeTrack(seq.frames[t]);
        tc.utt_id = recs[i]->utt_id;
        tc.frame_index = int(t);
        per[i].push_back(std::move(tc));
      } catch (const DataError&) {
        // frame without a visible ridge
      }
    }
  });
  std::vector<artic::TongueContour> out;
  for (auto& v : per)
    for (auto& tc : v) out.push_back(std::move(tc));
  return out;
}

std::string Safe(std::string s) {
  for (char& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') ch = '_';
  return s;
}

void CmdAnalyze(const Common& c, const AnalyzeFlags& f, const std::vector<std::string>& args) {
  if (c.out.empty()) throw UsageError("--out is required");
  if (!(f.contamination >= 0 && f.contamination < 1))
    throw UsageError("--contamination must be in [0, 1)");
  if (!(f.alpha > 0 && f.alpha < 1)) throw UsageError("--alpha must be in (0, 1)");
  const Manifest m = LoadCorpus(c);
  const fs::path out(c.out);
  fs::create_directories(out);

  const fs::path contour_csv = fs::path(c.corpus) / "contours.csv";
  const auto contours = fs::exists(contour_csv) ? artic::ReadContours(contour_csv)
                                                : TrackContours(m, f.all_splits, Jobs(c));
  artic::ArticSpaceOptions ao;
  ao.contamination = f.contamination;
  ao.seed = c.seed;
  ao.test_split_only = !f.all_splits;
  ao.jobs = Jobs(c);
  const auto space = artic::ArticulatorySpace(m, contours, ao);
  artic::WriteHullReport(out / "hulls.csv", space.hulls);

  std::map<std::string, double> rates;
  {
    std::ofstream rc(out / "syllable_rates.csv");
    rc << "utt_id,speaker,mode,syllables,duration,rate\n";
    for (const auto& r : m.records)
      if (r.split == Split::kTest) {
        const double rate = stats::SyllableRate(r);
        rates[r.utt_id] = rate;
        rc << r.utt_id << ',' << r.speaker_id << ',' << corpus::ToString(r.mode) << ','
           << r.syllable_count << ',' << Num(r.duration) << ',' << Num(rate) << '\n';
      }
  }
  stats::SpeakerMetrics metrics;
  for (const auto& h : space.hulls) metrics["hull_area"][h.speaker_id][h.mode] = h.area;
  if (!f.scores.empty()) {
    const auto rows = ReadCsv(fs::path(f.scores) / "wer_by_speaker.csv");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& row = rows[i];
      if (row.size() < 5) throw DataError("wer_by_speaker.csv: short row");
      if (row[2] == f.wer_features && row[3] == f.wer_adaptation)
        metrics["wer"][row[0]][row[1]] = std::stod(row[4]);
    }
    if (!metrics.count("wer"))
      LogWarning("analyze: no WER rows for features=" + f.wer_features +
                 " adaptation=" + f.wer_adaptation);
  }
  stats::ReportOptions ro;
  ro.alpha = f.alpha;
  const auto report = stats::ModeComparisonReport(m, rates, metrics, ro);
  stats::WriteReport(out, report);

  // Figures.
  for (const auto& spk : space.paired_speakers) {
    std::map<std::string, artic::HullResult> by_mode;
    for (const auto& h : space.hulls)
      if (h.speaker_id == spk) by_mode[h.mode] = h;
    artic::WriteHullSvg(out / ("hull_" + Safe(spk) + ".svg"), spk, space.pruned_clouds.at(spk),
                        by_mode);
  }
  for (const auto& [key, series] : report.scatter) {
    if (key.rfind("syllable_rate|", 0) == 0) {
      const auto a = key.find('|'), b = key.find('|', a + 1);
      const std::string ma = key.substr(a + 1, b - a - 1), mb = key.substr(b + 1);
      svg::PairedScatter(out / ("rate_scatter_" + ma + "_" + mb + ".svg"),
                         "Syllable rate, " + ma + " vs " + mb, ma + " (syll/s)",
                         mb + " (syll/s)", series.first, series.second);
    }
  }
  std::map<std::string, std::vector<svg::Bin>> hist;
  for (const auto& b : report.histograms) hist[b.series].push_back({b.lo, b.hi, b.count});
  for (const auto& [series, bins] : hist) {
    const auto bar = series.find('|');
    svg::Histogram(out / ("hist_" + Safe(series.substr(0, bar)) + "_" +
                          Safe(series.substr(bar + 1)) + ".svg"),
                   "Differences: " + series, series.substr(0, bar), bins);
  }
  for (const auto& cr : report.correlations) {
    const auto it = report.scatter.find("diff|" + cr.x + "|" + cr.y + "|" + cr.mode_a + "-" +
                                        cr.mode_b);
    if (it == report.scatter.end()) continue;
    std::ostringstream title;
    title << "d" << cr.y << " vs d" << cr.x << " (" << cr.mode_a << " - " << cr.mode_b
          << "), r = " << std::setprecision(3) << cr.r;
    svg::FitScatter(out / ("diff_" + cr.y + "_vs_" + cr.x + "_" + cr.mode_b + ".svg"),
                    title.str(), "d " + cr.x, "d " + cr.y, it->second.first, it->second.second,
                    cr.slope, cr.intercept);
  }
  WriteRunJson(out, "analyze", args, c,
               {{"contamination", f.contamination},
                {"alpha", f.alpha},
                {"contours", fs::exists(contour_csv) ? "contours.csv" : "ridge-tracked"},
                {"wer_source", f.scores},
                {"wer_features", f.wer_features},
                {"wer_adaptation", f.wer_adaptation}});
}

// ---- report ------------------------------------------------------------------------

struct ReportFlags {
  std::vector<std::string> inputs;
};

void CmdReport(const Common& c, const ReportFlags& f, const std::vector<std::string>& args) {
  if (c.out.empty() || f.inputs.empty()) throw UsageError("--in and --out are required");
  const fs::path out(c.out);
  fs::create_directories(out);
  json index = json::array();
  std::set<std::string> names;
  for (const auto& dir : f.inputs) {
    if (!fs::is_directory(dir)) throw DataError("report: '" + dir + "' is not a directory");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    const std::string tag = Safe(fs::path(dir).filename().string());
    for (const auto& p : files) {
      const auto ext = p.extension().string();
      if (ext != ".csv" && ext != ".svg" && ext != ".json") continue;
      std::string name = p.filename().string();
      if (name == "run.json") name = "run_" + tag + ".json";
      if (names.count(name)) name = tag + "_" + name;
      names.insert(name);
      fs::copy_file(p, out / name, fs::copy_options::overwrite_existing);
      index.push_back({{"file", name},
                       {"source", p.string()},
                       {"bytes", fs::file_size(p)},
                       {"kind", ext.substr(1)}});
    }
  }
  std::size_t csv = 0, svg_count = 0;
  for (const auto& e : index) {
    if (e["kind"] == "csv") ++csv;
    if (e["kind"] == "svg") ++svg_count;
  }
  if (csv == 0) throw DataError("report: no CSV artifacts found in the inputs");
  std::ofstream(out / "bundle.json") << json{{"artifacts", index}}.dump(2) << '\n';
  LogInfo("report: bundled " + std::to_string(csv) + " CSV and " + std::to_string(svg_count) +
          " SVG files");
  WriteRunJson(out, "report", args, c, {{"inputs", f.inputs}});
}

void AddCommon(CLI::App* app, Common& c, bool corpus, bool out) {
  if (corpus) app->add_option("--corpus", c.corpus, "corpus directory");
  if (out) app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--jobs", c.jobs, "worker threads (default: all cores)");
  app->add_option("--preset", c.preset, "scale preset: desk or full");
  app->add_option("--config", c.config, "JSON config; flags win");
  app->add_flag("-v,--verbose", c.verbose, "progress logging");
}

}  // namespace

int Run(const std::vector<std::string>& args) {
  CLI::App app{"ssikit: silent speech recognition and articulatory analysis toolkit", "ssikit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Common common;

  SynthFlags sf;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  AddCommon(synth_cmd, common, false, true);
  synth_cmd->add_option("--speakers", sf.speakers, "number of speakers");
  synth_cmd->add_option("--test-utts", sf.test_utts, "test utterances per speaker and mode");
  synth_cmd->add_option("--train-utts", sf.train_utts, "modal training utterances per speaker");
  synth_cmd->add_flag("--no-frames", sf.no_frames, "skip ultrasound/video rendering");
  synth_cmd->add_flag("--no-contours", sf.no_contours, "skip contours.csv");

  FeatNetFlags ff;
  auto* fn_cmd = app.add_subcommand("train-featnet", "train bottleneck feature networks");
  AddCommon(fn_cmd, common, true, true);
  fn_cmd->add_option("--modality", ff.modality, "ultrasound, video or both");
  fn_cmd->add_option("--epochs", ff.epochs, "override epoch count");
  fn_cmd->add_option("--lr", ff.lr, "override learning rate");

  ExtractFlags ef;
  auto* ex_cmd = app.add_subcommand("extract-features", "write bottleneck features");
  AddCommon(ex_cmd, common, true, true);
  ex_cmd->add_option("--model", ef.model, "featnet model directory");

  AmFlags af;
  auto* am_cmd = app.add_subcommand("train-am", "train GMM-HMM acoustic models and the LM");
  AddCommon(am_cmd, common, true, true);
  am_cmd->add_option("--feat-dir", af.feat_dir, "feature directory (default: oracle features)");

  DecodeFlags df;
  auto add_decode = [&](CLI::App* cmd, bool adapt) {
    AddCommon(cmd, common, true, true);
    cmd->add_option("--feat-dir", df.feat_dir, "feature directory (default: oracle features)");
    cmd->add_option("--model", df.model, "acoustic model directory");
    cmd->add_option("--features", df.features, "raw or fmllr");
    cmd->add_option("--mode", df.modes, "test mode(s); default: all");
    cmd->add_option("--lm-scale", df.lm_scale, "language model scale");
    cmd->add_option("--word-penalty", df.word_penalty, "log-score added per word");
    cmd->add_option("--beam", df.beam, "pruning beam (0: exact)");
    if (adapt) {
      cmd->add_option("--adapt", df.adapt, "none, fmllr, map or both");
      cmd->add_option("--map-tau", df.map_tau, "MAP relevance factor");
      cmd->add_option("--iterations", df.adapt_iterations, "adaptation rounds");
    }
  };
  auto* dec_cmd = app.add_subcommand("decode", "decode test sets");
  add_decode(dec_cmd, false);
  auto* ad_cmd = app.add_subcommand("adapt", "two-pass unsupervised adaptation");
  add_decode(ad_cmd, true);

  ScoreFlags scf;
  auto* sc_cmd = app.add_subcommand("score", "WER table from hypothesis files");
  AddCommon(sc_cmd, common, true, true);
  sc_cmd->add_option("--in", scf.in, "directory with hyp_*.jsonl (default: --out)");

  AnalyzeFlags anf;
  auto* an_cmd = app.add_subcommand("analyze", "hulls, syllable rates and paired statistics");
  AddCommon(an_cmd, common, true, true);
  an_cmd->add_option("--scores", anf.scores, "directory with wer_by_speaker.csv");
  an_cmd->add_option("--wer-features", anf.wer_features, "WER rows to use: raw or fmllr");
  an_cmd->add_option("--wer-adaptation", anf.wer_adaptation, "WER rows to use: none, map, ...");
  an_cmd->add_option("--contamination", anf.contamination, "outlier fraction pruned per cloud");
  an_cmd->add_option("--alpha", anf.alpha, "family-wise significance level");
  an_cmd->add_flag("--all-splits", anf.all_splits, "use every split, not only test");

  ReportFlags rf;
  auto* rp_cmd = app.add_subcommand("report", "assemble the CSV/SVG bundle");
  AddCommon(rp_cmd, common, false, true);
  rp_cmd->add_option("--in", rf.inputs, "artifact directories")->expected(1, -1);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    std::cout << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  SetVerbose(common.verbose);
  try {
    CheckPreset(common);
    if (*synth_cmd) CmdSynth(common, sf, args);
    else if (*fn_cmd) CmdTrainFeatNet(common, ff, args);
    else if (*ex_cmd) CmdExtract(common, ef, args);
    else if (*am_cmd) CmdTrainAm(common, af, args);
    else if (*dec_cmd) CmdDecode(common, df, false, args);
    else if (*ad_cmd) CmdDecode(common, df, true, args);
    else if (*sc_cmd) CmdScore(common, scf, args);
    else if (*an_cmd) CmdAnalyze(common, anf, args);
    else if (*rp_cmd) CmdReport(common, rf, args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int Main(int argc, char** argv) { return Run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace ssikit::cli
