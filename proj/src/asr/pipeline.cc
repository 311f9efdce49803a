// src/asr/pipeline.cc

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

#include "ssikit/asr/pipeline.h"

#include <algorithm>
#include <functional>
#include <thread>

namespace ssikit::asr {

namespace fs = std::filesystem;

FeatureType ParseFeatureType(const std::string& s) {
  if (s == "raw") return FeatureType::kRaw;
  if (s == "fmllr") return FeatureType::kFmllr;
  throw UsageError("unknown feature type '" + s + "' (expected raw|fmllr)");
}

std::string ToString(FeatureType f) { return f == FeatureType::kRaw ? "raw" : "fmllr"; }

AdaptStrategy ParseAdaptStrategy(const std::string& s) {
  if (s == "none") return AdaptStrategy::kNone;
  if (s == "fmllr") return AdaptStrategy::kFmllr;
  if (s == "map") return AdaptStrategy::kMap;
  if (s == "both") return AdaptStrategy::kBoth;
  throw UsageError("unknown adaptation strategy '" + s + "' (expected none|fmllr|map|both)");
}

std::string ToString(AdaptStrategy a) {
  switch (a) {
    case AdaptStrategy::kNone: return "none";
    case AdaptStrategy::kFmllr: return "fmllr";
    case AdaptStrategy::kMap: return "map";
    case AdaptStrategy::kBoth: return "both";
  }
  return "none";
}

void AcousticModels::Save(const fs::path& dir) const {
  fs::create_directories(dir);
  lda.Save(dir / "lda.json");
  si.Save(dir / "si.gmm");
  sat.Save(dir / "sat.gmm");
  SaveTransforms(dir / "train_fmllr.json", train_transforms);
}

AcousticModels AcousticModels::Load(const fs::path& dir) {
  AcousticModels m;
  m.lda = LdaTransform::Load(dir / "lda.json");
  m.si = GmmHmmModel::Load(dir / "si.gmm");
  m.sat = GmmHmmModel::Load(dir / "sat.gmm");
  if (fs::exists(dir / "train_fmllr.json"))
    m.train_transforms = LoadTransforms(dir / "train_fmllr.json");
  if (m.lda.OutDim() != m.si.Dim() || m.si.Dim() != m.sat.Dim())
    throw DataError(dir.string() + ": model and LDA dimensions disagree");
  return m;
}

namespace {

std::vector<TrainUtterance> MapFeatures(const std::vector<TrainUtterance>& data,
                                        const std::function<FeatureMatrix(const TrainUtterance&)>& f) {
  std::vector<TrainUtterance> out;
  out.reserve(data.size());
  for (const auto& u : data) out.push_back({u.utt_id, u.speaker, f(u), u.words});
  return out;
}

// Utterance indices grouped by speaker, in order of first appearance.
template <typename T>
std::vector<std::pair<std::string, std::vector<std::size_t>>> BySpeaker(const std::vector<T>& v) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto [it, inserted] = index.emplace(v[i].speaker, groups.size());
    if (inserted) groups.push_back({v[i].speaker, {}});
    groups[it->second].second.push_back(i);
  }
  return groups;
}

}  // namespace

int FeatureRank(const std::vector<FeatureMatrix>& feats, double rel_tol) {
  const Eigen::Index d = feats.at(0).cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(d, d);
  double n = 0;
  for (const auto& f : feats) {
    sum += f.colwise().sum().transpose();
    outer.noalias() += f.transpose() * f;
    n += double(f.rows());
  }
  const Eigen::VectorXd mu = sum / n;
  const Eigen::MatrixXd cov = outer / n - mu * mu.transpose();
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov).eigenvalues();
  const double top = ev.maxCoeff();
  if (!(top > 0)) throw DataError("training features are constant");
  return int((ev.array() > rel_tol * top).count());
}

AcousticModels TrainAcousticModels(const std::vector<std::string>& phones,
                                   const Lexicon& lexicon,
                                   const std::vector<TrainUtterance>& data,
                                   const AmConfig& config) {
  if (data.empty()) throw DataError("no training utterances");
  AcousticModels out;
  FlatStartResult flat = FlatStart(phones, lexicon, data, config.states_per_phone,
                                   config.var_floor_scale);
  EmSchedule mono;
  mono.iterations = config.mono_iterations;
  mono.target_mixtures = config.target_mixtures;
  mono.split_after = config.split_after;
  EmResult em1 = TrainEm(flat.model, lexicon, data, mono, &flat.alignments);
  out.mono_loglik = em1.log_likelihoods;
  out.mono_mixtures = em1.mixtures;
  LogInfo("monophone EM: final log-likelihood " + std::to_string(em1.log_likelihoods.back()));

  std::vector<FeatureMatrix> feats;
  for (const auto& u : data) feats.push_back(u.feats);
  const int d_in = int(data[0].feats.cols());
  const int rank = FeatureRank(feats);
  if (rank < d_in)
    LogWarning("train: features span only " + std::to_string(rank) + " of " +
               std::to_string(d_in) + " dimensions");
  const int d_out = config.lda_dim > 0 ? std::min(config.lda_dim, rank) : rank;
  out.lda = EstimateLda(feats, em1.alignments, d_out);
  const auto lda_data = MapFeatures(data, [&](const TrainUtterance& u) {
    return out.lda.Apply(u.feats);
  });

  GmmHmmModel si = InitFromAlignments(phones, config.states_per_phone, lda_data,
                                      em1.alignments, config.var_floor_scale);
  if (config.target_mixtures > 1) SplitMixtures(si, config.target_mixtures, 0.1);
  EmSchedule lda_schedule;
  lda_schedule.iterations = config.lda_iterations;
  lda_schedule.target_mixtures = config.target_mixtures;
  EmResult em2 = TrainEm(si, lexicon, lda_data, lda_schedule, &em1.alignments);
  out.si = em2.model;
  out.lda_loglik = em2.log_likelihoods;

  GmmHmmModel model = out.si;
  std::vector<Alignment> alignments = em2.alignments;
  const auto speakers = BySpeaker(lda_data);
  std::vector<FmllrTransform> transforms;
  for (int outer = 0; outer < config.sat_outer_iterations; ++outer) {
    transforms.clear();
    std::vector<TrainUtterance> adapted = lda_data;
    for (const auto& [spk, idx] : speakers) {
      std::vector<FeatureMatrix> f;
      std::vector<Alignment> a;
      for (std::size_t i : idx) {
        f.push_back(lda_data[i].feats);
        a.push_back(alignments[i]);
      }
      FmllrTransform t = EstimateFmllr(model, f, a, config.fmllr, spk).transform;
      for (std::size_t i : idx) adapted[i].feats = t.Apply(lda_data[i].feats);
      transforms.push_back(std::move(t));
    }
    EmSchedule sat_schedule;
    sat_schedule.iterations = config.sat_em_iterations;
    sat_schedule.target_mixtures = config.target_mixtures;
    EmResult em = TrainEm(model, lexicon, adapted, sat_schedule, &alignments);
    out.sat_loglik.insert(out.sat_loglik.end(), em.log_likelihoods.begin(),
                          em.log_likelihoods.end());
    model = std::move(em.model);
    alignments = std::move(em.alignments);
  }
  out.sat = std::move(model);
  out.train_transforms = std::move(transforms);
  if (config.sat_outer_iterations == 0) out.sat = out.si;
  return out;
}

// ---- decoding ------------------------------------------------------------------

namespace {

std::vector<Hypothesis> DecodeAll(const GmmHmmModel& model, const BigramLm& lm,
                                  const Lexicon& lexicon, const std::vector<DecodeUtterance>& utts,
                                  const std::vector<FeatureMatrix>& feats,
                                  const DecodeOptions& options, int jobs) {
  const Decoder decoder(model, lm, lexicon, options);
  std::vector<Hypothesis> hyps(utts.size());
  const std::size_t n_jobs =
      std::max<std::size_t>(1, std::min<std::size_t>(std::size_t(std::max(jobs, 1)), utts.size()));
  std::vector<std::exception_ptr> errors(n_jobs);
  auto work = [&](std::size_t job) {
    try {
      for (std::size_t i = job; i < utts.size(); i += n_jobs)
        hyps[i] = decoder.Decode(feats[i], utts[i].utt_id);
    } catch (...) {
      errors[job] = std::current_exception();
    }
  };
  if (n_jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < n_jobs; ++j) threads.emplace_back(work, j);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return hyps;
}

WerResult Score(const std::vector<DecodeUtterance>& utts, const std::vector<Hypothesis>& hyps) {
  WerResult total;
  for (std::size_t i = 0; i < utts.size(); ++i) total += ComputeWer(utts[i].reference, hyps[i].words);
  return total;
}

// Viterbi alignments of the hypotheses; utterances that cannot be aligned
// (more states than frames) get an empty alignment and are skipped.
std::vector<Alignment> AlignHypotheses(const GmmHmmModel& model, const Lexicon& lexicon,
                                       const std::vector<FeatureMatrix>& feats,
                                       const std::vector<Hypothesis>& hyps) {
  std::vector<Alignment> out(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const auto seq = model.StateSequence(lexicon.Phones(lexicon.WordIds(hyps[i].words)));
    if (seq.empty() || seq.size() > std::size_t(feats[i].rows())) continue;
    out[i] = AlignStates(model, model.FrameLogLikelihoods(feats[i]), seq).states;
  }
  return out;
}

// Per-speaker fMLLR from aligned hypotheses; returns transforms in utterance order.
std::vector<FmllrTransform> EstimateSpeakerTransforms(
    const GmmHmmModel& model, const std::vector<DecodeUtterance>& utts,
    const std::vector<FeatureMatrix>& lda_feats, const std::vector<Alignment>& alignments,
    const FmllrOptions& options, std::vector<FmllrTransform>* per_speaker) {
  std::vector<FmllrTransform> per_utt(utts.size());
  for (const auto& [spk, idx] : BySpeaker(utts)) {
    std::vector<FeatureMatrix> f;
    std::vector<Alignment> a;
    for (std::size_t i : idx)
      if (!alignments[i].empty()) {
        f.push_back(lda_feats[i]);
        a.push_back(alignments[i]);
      }
    FmllrTransform t = FmllrTransform::Identity(model.Dim(), spk);
    if (!f.empty()) t = EstimateFmllr(model, f, a, options, spk).transform;
    for (std::size_t i : idx) per_utt[i] = t;
    if (per_speaker) per_speaker->push_back(t);
  }
  return per_utt;
}

std::vector<FeatureMatrix> ApplyEach(const std::vector<FmllrTransform>& t,
                                     const std::vector<FeatureMatrix>& feats) {
  std::vector<FeatureMatrix> out;
  out.reserve(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) out.push_back(t[i].Apply(feats[i]));
  return out;
}

struct SetState {
  std::vector<FeatureMatrix> lda_feats;
  std::vector<FmllrTransform> per_utt;  // current transform of each utterance
};

}  // namespace

DecodeSetResult DecodeSet(const AcousticModels& models, const BigramLm& lm,
                          const Lexicon& lexicon, const std::vector<DecodeUtterance>& utts,
                          FeatureType features, const DecodeSetOptions& options) {
  std::vector<FeatureMatrix> lda_feats;
  for (const auto& u : utts) lda_feats.push_back(models.lda.Apply(u.feats));
  DecodeSetResult r;
  r.hypotheses = DecodeAll(models.si, lm, lexicon, utts, lda_feats, options.decode, options.jobs);
  if (features == FeatureType::kFmllr) {
    std::vector<FeatureMatrix> current = lda_feats;
    for (int pass = 0; pass < options.fmllr_passes; ++pass) {
      const auto alignments = AlignHypotheses(models.sat, lexicon, current, r.hypotheses);
      r.transforms.clear();
      const auto per_utt = EstimateSpeakerTransforms(models.sat, utts, lda_feats, alignments,
                                                     options.fmllr, &r.transforms);
      current = ApplyEach(per_utt, lda_feats);
      r.hypotheses =
          DecodeAll(models.sat, lm, lexicon, utts, current, options.decode, options.jobs);
    }
  }
  r.wer = Score(utts, r.hypotheses);
  return r;
}

AdaptResult AdaptUnsupervised(const AcousticModels& models, const BigramLm& lm,
                              const Lexicon& lexicon, const std::vector<DecodeUtterance>& utts,
                              FeatureType features, const AdaptOptions& adapt,
                              const DecodeSetOptions& options) {
  AdaptResult r;
  r.pass1 = DecodeSet(models, lm, lexicon, utts, features, options);
  r.pass2 = r.pass1;
  if (adapt.strategy == AdaptStrategy::kNone || adapt.iterations <= 0) return r;

  std::vector<FeatureMatrix> lda_feats;
  for (const auto& u : utts) lda_feats.push_back(models.lda.Apply(u.feats));
  GmmHmmModel model = features == FeatureType::kRaw ? models.si : models.sat;
  std::vector<FmllrTransform> per_utt(utts.size(), FmllrTransform::Identity(model.Dim()));
  if (features == FeatureType::kFmllr) {
    const auto groups = BySpeaker(utts);
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (std::size_t i : groups[g].second) per_utt[i] = r.pass1.transforms.at(g);
  }
  const bool use_fmllr =
      adapt.strategy == AdaptStrategy::kFmllr || adapt.strategy == AdaptStrategy::kBoth;
  const bool use_map = adapt.strategy == AdaptStrategy::kMap || adapt.strategy == AdaptStrategy::kBoth;
  for (int it = 0; it < adapt.iterations; ++it) {
    auto current = ApplyEach(per_utt, lda_feats);
    auto alignments = AlignHypotheses(model, lexicon, current, r.pass2.hypotheses);
    if (use_fmllr) {
      r.pass2.transforms.clear();
      per_utt = EstimateSpeakerTransforms(model, utts, lda_feats, alignments, options.fmllr,
                                          &r.pass2.transforms);
      current = ApplyEach(per_utt, lda_feats);
    }
    if (use_map) {
      std::vector<FeatureMatrix> f;
      std::vector<Alignment> a;
      for (std::size_t i = 0; i < utts.size(); ++i)
        if (!alignments[i].empty()) {
          f.push_back(current[i]);
          a.push_back(alignments[i]);
        }
      model = MapAdaptMeans(model, f, a, adapt.map_tau);
    }
    r.pass2.hypotheses =
        DecodeAll(model, lm, lexicon, utts, current, options.decode, options.jobs);
  }
  r.pass2.wer = Score(utts, r.pass2.hypotheses);
  return r;
}

WerResult ScoreHypotheses(const std::vector<Hypothesis>& hyps,
                          const std::map<std::string, std::vector<std::string>>& references) {
  WerResult total;
  for (const auto& h : hyps) {
    auto it = references.find(h.utt_id);
    if (it == references.end())
      throw DataError("hypothesis for unknown utterance '" + h.utt_id + "'");
    total += ComputeWer(it->second, h.words);
  }
  return total;
}

}  // namespace ssikit::asr
