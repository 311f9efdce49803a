// src/asr/model.cc

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

#include "ssikit/asr/model.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ssikit::asr {

namespace fs = std::filesystem;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kMinSelfLoop = 1e-3;
constexpr double kMaxSelfLoop = 0.999;
constexpr double kMinWeight = 1e-5;

namespace {

double LogSumExp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

// ---- DiagGmm -------------------------------------------------------------------

void DiagGmm::ComputeGconsts() {
  inv_vars = variances.cwiseInverse();
  gconsts.resize(weights.size());
  for (Eigen::Index k = 0; k < weights.size(); ++k)
    gconsts[k] = std::log(weights[k]) -
                 0.5 * (double(Dim()) * kLog2Pi + variances.row(k).array().log().sum());
}

Eigen::VectorXd DiagGmm::ComponentLogLikelihoods(
    const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::VectorXd ll(weights.size());
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    const auto diff = x.transpose().array() - means.row(k).array();
    ll[k] = gconsts[k] - 0.5 * (diff.square() * inv_vars.row(k).array()).sum();
  }
  return ll;
}

double DiagGmm::LogLikelihood(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return LogSumExp(ComponentLogLikelihoods(x));
}

double DiagGmm::Posteriors(const Eigen::Ref<const Eigen::VectorXd>& x,
                           Eigen::VectorXd& post) const {
  Eigen::VectorXd ll = ComponentLogLikelihoods(x);
  const double total = LogSumExp(ll);
  post = (ll.array() - total).exp();
  return total;
}

// ---- GmmHmmModel ---------------------------------------------------------------

std::vector<int> GmmHmmModel::StateSequence(const std::vector<int>& phone_seq) const {
  std::vector<int> out;
  out.reserve(phone_seq.size() * std::size_t(states_per_phone));
  for (int p : phone_seq)
    for (int k = 0; k < states_per_phone; ++k) out.push_back(p * states_per_phone + k);
  return out;
}

void GmmHmmModel::Validate() const {
  if (states.size() != phones.size() * std::size_t(states_per_phone))
    throw DataError("GmmHmmModel: state count does not match topology");
  if (self_loop.size() != NumStates())
    throw DataError("GmmHmmModel: transition table size mismatch");
  for (const auto& g : states) {
    if (std::fabs(g.weights.sum() - 1.0) > 1e-6)
      throw NumericError("GmmHmmModel: mixture weights do not sum to 1");
    for (Eigen::Index k = 0; k < g.variances.rows(); ++k)
      if ((g.variances.row(k).transpose().array() < var_floor.array() * (1 - 1e-6)).any())
        throw NumericError("GmmHmmModel: variance below floor");
  }
}

Eigen::MatrixXd GmmHmmModel::FrameLogLikelihoods(const FeatureMatrix& feats) const {
  const Eigen::Index T = feats.rows();
  if (feats.cols() != Dim())
    throw DataError("feature dimension " + std::to_string(feats.cols()) +
                    " does not match model dimension " + std::to_string(Dim()));
  Eigen::MatrixXd out(T, NumStates());
  const Eigen::MatrixXd x = feats;
  const Eigen::MatrixXd x2 = x.array().square().matrix();
  for (int s = 0; s < NumStates(); ++s) {
    const DiagGmm& g = states[std::size_t(s)];
    const Eigen::MatrixXd mu_iv = g.means.cwiseProduct(g.inv_vars);
    const Eigen::VectorXd c = (g.means.cwiseProduct(mu_iv)).rowwise().sum();
    // T x K quadratic forms.
    Eigen::MatrixXd q = x2 * g.inv_vars.transpose() - 2.0 * x * mu_iv.transpose();
    q.rowwise() += c.transpose();
    Eigen::MatrixXd ll = (-0.5 * q).rowwise() + g.gconsts.transpose();
    if (ll.cols() == 1) {
      out.col(s) = ll.col(0);
    } else {
      for (Eigen::Index t = 0; t < T; ++t) out(t, s) = LogSumExp(ll.row(t).transpose());
    }
  }
  return out;
}

// ---- alignment -----------------------------------------------------------------

AlignResult AlignStates(const GmmHmmModel& model, const Eigen::MatrixXd& ll,
                        const std::vector<int>& seq) {
  const Eigen::Index T = ll.rows();
  const auto N = Eigen::Index(seq.size());
  if (N == 0) throw DataError("AlignStates: empty state sequence");
  if (T < N)
    throw DataError("transcript unalignable: " + std::to_string(N) + " states but " +
                    std::to_string(T) + " frames");
  Eigen::VectorXd prev = Eigen::VectorXd::Constant(N, kNegInf);
  Eigen::VectorXd cur(N);
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> advanced(T, N);
  advanced.setZero();
  prev[0] = ll(0, seq[0]);
  for (Eigen::Index t = 1; t < T; ++t) {
    // State j is reachable at frame t only if j <= t and N - j <= T - t.
    const Eigen::Index j_lo = std::max<Eigen::Index>(0, N - (T - t));
    const Eigen::Index j_hi = std::min<Eigen::Index>(N - 1, t);
    cur.setConstant(kNegInf);
    for (Eigen::Index j = j_lo; j <= j_hi; ++j) {
      const int s = seq[std::size_t(j)];
      double stay = prev[j] + model.LogSelfLoop(s);
      double adv = j > 0 ? prev[j - 1] + model.LogAdvance(seq[std::size_t(j - 1)]) : kNegInf;
      if (adv > stay) {
        cur[j] = adv + ll(t, s);
        advanced(t, j) = 1;
      } else {
        cur[j] = stay + ll(t, s);
      }
    }
    prev.swap(cur);
  }
  AlignResult r;
  r.log_likelihood = prev[N - 1] + model.LogAdvance(seq.back());
  r.states.resize(std::size_t(T));
  Eigen::Index j = N - 1;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    r.states[std::size_t(t)] = seq[std::size_t(j)];
    if (t > 0 && advanced(t, j)) --j;
  }
  return r;
}

AlignResult Align(const GmmHmmModel& model, const Lexicon& lexicon,
                  const FeatureMatrix& feats, const std::vector<int>& word_ids) {
  return AlignStates(model, model.FrameLogLikelihoods(feats),
                     model.StateSequence(lexicon.Phones(word_ids)));
}

double AlignmentLogLikelihood(const GmmHmmModel& model, const FeatureMatrix& feats,
                              const Alignment& alignment) {
  double total = 0;
  const auto T = alignment.size();
  for (std::size_t t = 0; t < T; ++t) {
    const int s = alignment[t];
    total += model.states[std::size_t(s)].LogLikelihood(feats.row(Eigen::Index(t)).transpose());
    if (t + 1 < T && alignment[t + 1] == s) {
      total += model.LogSelfLoop(s);
    } else {
      total += model.LogAdvance(s);
    }
  }
  return total;
}

Alignment UniformAlignment(std::size_t n_frames, const std::vector<int>& seq) {
  const std::size_t n = seq.size();
  if (n == 0 || n_frames < n)
    throw DataError("utterance shorter than its state sequence (" +
                    std::to_string(n_frames) + " frames, " + std::to_string(n) +
                    " states)");
  const std::size_t base = n_frames / n, extra = n_frames % n;
  Alignment out;
  out.reserve(n_frames);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t len = base + (j >= n - extra ? 1 : 0);
    out.insert(out.end(), len, seq[j]);
  }
  return out;
}

// ---- estimation ----------------------------------------------------------------

namespace {

struct GlobalStats {
  Eigen::VectorXd mean, var;
};

GlobalStats ComputeGlobalStats(const std::vector<TrainUtterance>& data) {
  if (data.empty()) throw DataError("no training data");
  const Eigen::Index d = data[0].feats.cols();
  Eigen::VectorXd s = Eigen::VectorXd::Zero(d), s2 = Eigen::VectorXd::Zero(d);
  double n = 0;
  for (const auto& u : data) {
    if (u.feats.cols() != d) throw DataError("inconsistent feature dimensions");
    s += u.feats.colwise().sum().transpose();
    s2 += u.feats.array().square().matrix().colwise().sum().transpose();
    n += double(u.feats.rows());
  }
  if (n < 2) throw DataError("not enough frames for global statistics");
  GlobalStats g;
  g.mean = s / n;
  g.var = (s2 / n - g.mean.cwiseAbs2()).cwiseMax(1e-10);
  return g;
}

void SetTransitionsFromAlignments(GmmHmmModel& model,
                                  const std::vector<Alignment>& alignments) {
  Eigen::VectorXd stay = Eigen::VectorXd::Zero(model.NumStates());
  Eigen::VectorXd leave = Eigen::VectorXd::Zero(model.NumStates());
  for (const auto& a : alignments)
    for (std::size_t t = 0; t < a.size(); ++t) {
      if (t + 1 < a.size() && a[t + 1] == a[t]) {
        stay[a[t]] += 1;
      } else {
        leave[a[t]] += 1;
      }
    }
  for (int s = 0; s < model.NumStates(); ++s) {
    const double total = stay[s] + leave[s];
    if (total > 0)
      model.self_loop[s] = std::clamp(stay[s] / total, kMinSelfLoop, kMaxSelfLoop);
  }
}

}  // namespace

FlatStartResult FlatStart(const std::vector<std::string>& phones, const Lexicon& lexicon,
                          const std::vector<TrainUtterance>& data, int states_per_phone,
                          double var_floor_scale) {
  const GlobalStats g = ComputeGlobalStats(data);
  FlatStartResult r;
  GmmHmmModel& m = r.model;
  m.phones = phones;
  m.states_per_phone = states_per_phone;
  m.var_floor = var_floor_scale * g.var;
  const int n_states = int(phones.size()) * states_per_phone;
  m.states.resize(std::size_t(n_states));
  for (auto& st : m.states) {
    st.weights = Eigen::VectorXd::Ones(1);
    st.means = g.mean.transpose();
    st.variances = g.var.transpose();
    st.ComputeGconsts();
  }
  m.self_loop = Eigen::VectorXd::Constant(n_states, 0.5);
  for (const auto& u : data)
    r.alignments.push_back(UniformAlignment(std::size_t(u.feats.rows()),
                                            m.StateSequence(lexicon.Phones(u.words))));
  SetTransitionsFromAlignments(m, r.alignments);
  return r;
}

GmmHmmModel InitFromAlignments(const std::vector<std::string>& phones, int states_per_phone,
                               const std::vector<TrainUtterance>& data,
                               const std::vector<Alignment>& alignments,
                               double var_floor_scale) {
  const GlobalStats g = ComputeGlobalStats(data);
  GmmHmmModel m;
  m.phones = phones;
  m.states_per_phone = states_per_phone;
  m.var_floor = var_floor_scale * g.var;
  const int n_states = int(phones.size()) * states_per_phone;
  const Eigen::Index d = g.mean.size();
  Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(n_states, d), s2 = s1;
  Eigen::VectorXd n = Eigen::VectorXd::Zero(n_states);
  for (std::size_t u = 0; u < data.size(); ++u)
    for (std::size_t t = 0; t < alignments[u].size(); ++t) {
      const int s = alignments[u][t];
      const auto x = data[u].feats.row(Eigen::Index(t));
      s1.row(s) += x;
      s2.row(s) += x.cwiseAbs2();
      n[s] += 1;
    }
  m.states.resize(std::size_t(n_states));
  for (int s = 0; s < n_states; ++s) {
    auto& st = m.states[std::size_t(s)];
    st.weights = Eigen::VectorXd::Ones(1);
    if (n[s] >= 2) {
      Eigen::RowVectorXd mu = s1.row(s) / n[s];
      st.means = mu;
      st.variances = (s2.row(s) / n[s] - mu.cwiseAbs2()).cwiseMax(m.var_floor.transpose());
    } else {
      st.means = g.mean.transpose();
      st.variances = g.var.transpose();
    }
    st.ComputeGconsts();
  }
  m.self_loop = Eigen::VectorXd::Constant(n_states, 0.5);
  SetTransitionsFromAlignments(m, alignments);
  return m;
}

GmmHmmModel Reestimate(const GmmHmmModel& model, const std::vector<TrainUtterance>& data,
                       const std::vector<Alignment>& alignments,
                       double min_component_count) {
  const int S = model.NumStates();
  const Eigen::Index d = model.Dim();
  struct Acc {
    Eigen::VectorXd gamma;
    Eigen::MatrixXd s1, s2;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    const int K = model.states[std::size_t(s)].NumComponents();
    acc[std::size_t(s)] = {Eigen::VectorXd::Zero(K), Eigen::MatrixXd::Zero(K, d),
                           Eigen::MatrixXd::Zero(K, d)};
  }
  Eigen::VectorXd post;
  for (std::size_t u = 0; u < data.size(); ++u) {
    const auto& a = alignments[u];
    for (std::size_t t = 0; t < a.size(); ++t) {
      const int s = a[t];
      const Eigen::VectorXd x = data[u].feats.row(Eigen::Index(t)).transpose();
      model.states[std::size_t(s)].Posteriors(x, post);
      auto& ac = acc[std::size_t(s)];
      ac.gamma += post;
      ac.s1 += post * x.transpose();
      ac.s2 += post * x.cwiseAbs2().transpose();
    }
  }
  GmmHmmModel out = model;
  for (int s = 0; s < S; ++s) {
    const auto& ac = acc[std::size_t(s)];
    const double total = ac.gamma.sum();
    if (total <= 0) continue;  // unseen state keeps its parameters
    DiagGmm& g = out.states[std::size_t(s)];
    for (Eigen::Index k = 0; k < g.weights.size(); ++k) {
      g.weights[k] = std::max(ac.gamma[k] / total, kMinWeight);
      if (ac.gamma[k] < min_component_count) continue;  // frozen
      Eigen::RowVectorXd mu = ac.s1.row(k) / ac.gamma[k];
      g.means.row(k) = mu;
      g.variances.row(k) =
          (ac.s2.row(k) / ac.gamma[k] - mu.cwiseAbs2()).cwiseMax(model.var_floor.transpose());
    }
    g.weights /= g.weights.sum();
    g.ComputeGconsts();
  }
  SetTransitionsFromAlignments(out, alignments);
  return out;
}

void SplitMixtures(GmmHmmModel& model, int target, double perturb) {
  for (auto& g : model.states) {
    const int k0 = g.NumComponents();
    const int goal = std::min(target, 2 * k0);
    if (goal <= k0) continue;
    std::vector<double> w(g.weights.data(), g.weights.data() + k0);
    std::vector<Eigen::RowVectorXd> mu, var;
    for (int k = 0; k < k0; ++k) {
      mu.push_back(g.means.row(k));
      var.push_back(g.variances.row(k));
    }
    while (int(w.size()) < goal) {
      const auto k = std::size_t(std::max_element(w.begin(), w.end()) - w.begin());
      const Eigen::RowVectorXd offset = perturb * var[k].cwiseSqrt();
      w[k] *= 0.5;
      w.push_back(w[k]);
      var.push_back(var[k]);
      mu.push_back(mu[k] - offset);
      mu[k] += offset;
    }
    const auto K = Eigen::Index(w.size());
    g.weights.resize(K);
    g.means.resize(K, model.Dim() ? model.Dim() : mu[0].size());
    g.variances.resize(K, mu[0].size());
    for (Eigen::Index k = 0; k < K; ++k) {
      g.weights[k] = w[std::size_t(k)];
      g.means.row(k) = mu[std::size_t(k)];
      g.variances.row(k) = var[std::size_t(k)];
    }
    g.ComputeGconsts();
  }
}

EmResult TrainEm(GmmHmmModel model, const Lexicon& lexicon,
                 const std::vector<TrainUtterance>& data, const EmSchedule& schedule,
                 const std::vector<Alignment>* initial_alignments) {
  std::vector<std::vector<int>> seqs;
  for (const auto& u : data) seqs.push_back(model.StateSequence(lexicon.Phones(u.words)));
  const std::set<int> split_after(schedule.split_after.begin(), schedule.split_after.end());

  EmResult r;
  std::vector<Alignment> alignments;
  auto realign = [&](double& total) {
    alignments.assign(data.size(), {});
    total = 0;
    for (std::size_t u = 0; u < data.size(); ++u) {
      AlignResult a = AlignStates(model, model.FrameLogLikelihoods(data[u].feats), seqs[u]);
      total += a.log_likelihood;
      alignments[u] = std::move(a.states);
    }
  };
  auto mixtures = [&] {
    int k = 0;
    for (const auto& g : model.states) k = std::max(k, g.NumComponents());
    return k;
  };
  for (int it = 0; it < schedule.iterations; ++it) {
    double total = 0;
    if (it == 0 && initial_alignments) {
      alignments = *initial_alignments;
      for (std::size_t u = 0; u < data.size(); ++u)
        total += AlignmentLogLikelihood(model, data[u].feats, alignments[u]);
    } else {
      realign(total);
    }
    if (!std::isfinite(total)) throw NumericError("EM: non-finite data log-likelihood");
    r.log_likelihoods.push_back(total);
    r.mixtures.push_back(mixtures());
    model = Reestimate(model, data, alignments, schedule.min_component_count);
    if (split_after.count(it) && mixtures() < schedule.target_mixtures)
      SplitMixtures(model, schedule.target_mixtures, schedule.split_perturb);
  }
  double total = 0;
  realign(total);
  r.log_likelihoods.push_back(total);
  r.mixtures.push_back(mixtures());
  r.model = std::move(model);
  r.alignments = std::move(alignments);
  return r;
}

// ---- model I/O -----------------------------------------------------------------

namespace {

void PutU32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xFF));
}

void PutF32(std::string& buf, double v) {
  const float f = float(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  PutU32(buf, bits);
}

}  // namespace

void GmmHmmModel::Save(const fs::path& path) const {
  nlohmann::json header;
  header["phones"] = phones;
  header["states_per_phone"] = states_per_phone;
  header["topology"] = "left-to-right";
  header["dim"] = Dim();
  std::vector<int> mix;
  for (const auto& g : states) mix.push_back(g.NumComponents());
  header["mixtures"] = mix;
  const std::string h = header.dump();
  std::string buf = "GMMH";
  PutU32(buf, std::uint32_t(h.size()));
  buf += h;
  for (Eigen::Index i = 0; i < var_floor.size(); ++i) PutF32(buf, var_floor[i]);
  for (int s = 0; s < NumStates(); ++s) {
    const auto& g = states[std::size_t(s)];
    PutF32(buf, self_loop[s]);
    for (int k = 0; k < g.NumComponents(); ++k) {
      PutF32(buf, g.weights[k]);
      for (int j = 0; j < Dim(); ++j) PutF32(buf, g.means(k, j));
      for (int j = 0; j < Dim(); ++j) PutF32(buf, g.variances(k, j));
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(buf.data(), std::streamsize(buf.size()));
}

GmmHmmModel GmmHmmModel::Load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  if (data.size() < 8 || data.compare(0, 4, "GMMH") != 0)
    throw DataError(path.string() + ": not a GMMH model file");
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  auto u32 = [&](std::size_t off) {
    return std::uint32_t(p[off]) | std::uint32_t(p[off + 1]) << 8 |
           std::uint32_t(p[off + 2]) << 16 | std::uint32_t(p[off + 3]) << 24;
  };
  const std::uint32_t hlen = u32(4);
  if (8 + std::size_t(hlen) > data.size()) throw DataError(path.string() + ": truncated header");
  GmmHmmModel m;
  std::vector<int> mix;
  int dim = 0;
  try {
    auto header = nlohmann::json::parse(data.substr(8, hlen));
    m.phones = header.at("phones").get<std::vector<std::string>>();
    m.states_per_phone = header.at("states_per_phone").get<int>();
    dim = header.at("dim").get<int>();
    mix = header.at("mixtures").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::size_t off = 8 + hlen;
  std::size_t need = off + 4 * std::size_t(dim);
  for (int k : mix) need += 4 * (1 + std::size_t(k) * (1 + 2 * std::size_t(dim)));
  if (need != data.size()) throw DataError(path.string() + ": parameter blob size mismatch");
  auto f32 = [&]() {
    std::uint32_t bits = u32(off);
    off += 4;
    float f;
    std::memcpy(&f, &bits, 4);
    return double(f);
  };
  m.var_floor.resize(dim);
  for (int j = 0; j < dim; ++j) m.var_floor[j] = f32();
  m.states.resize(mix.size());
  m.self_loop.resize(Eigen::Index(mix.size()));
  for (std::size_t s = 0; s < mix.size(); ++s) {
    m.self_loop[Eigen::Index(s)] = f32();
    auto& g = m.states[s];
    g.weights.resize(mix[s]);
    g.means.resize(mix[s], dim);
    g.variances.resize(mix[s], dim);
    for (int k = 0; k < mix[s]; ++k) {
      g.weights[k] = f32();
      for (int j = 0; j < dim; ++j) g.means(k, j) = f32();
      for (int j = 0; j < dim; ++j) g.variances(k, j) = f32();
    }
    g.weights /= g.weights.sum();
    g.ComputeGconsts();
  }
  m.Validate();
  return m;
}

}  // namespace ssikit::asr
