// src/asr/transforms.cc

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

#include "ssikit/asr/transforms.h"

#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace ssikit::asr {

namespace fs = std::filesystem;

namespace {

nlohmann::json MatrixToJson(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(std::size_t(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[std::size_t(j)] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

Eigen::MatrixXd MatrixFromJson(const nlohmann::json& rows) {
  const auto n = Eigen::Index(rows.size());
  const auto c = n ? Eigen::Index(rows[0].size()) : 0;
  Eigen::MatrixXd m(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (Eigen::Index(rows[std::size_t(i)].size()) != c) throw DataError("ragged matrix");
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rows[std::size_t(i)][std::size_t(j)];
  }
  return m;
}

nlohmann::json ReadJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void WriteJson(const fs::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << doc.dump() << '\n';
}

}  // namespace

// ---- LDA -----------------------------------------------------------------------

FeatureMatrix LdaTransform::Apply(const FeatureMatrix& feats) const {
  if (feats.cols() != projection.cols())
    throw DataError("LDA: feature dimension mismatch");
  return feats * projection.transpose();
}

void LdaTransform::Save(const fs::path& path) const {
  nlohmann::json doc;
  doc["projection"] = MatrixToJson(projection);
  doc["eigenvalues"] = std::vector<double>(eigenvalues.data(),
                                           eigenvalues.data() + eigenvalues.size());
  WriteJson(path, doc);
}

LdaTransform LdaTransform::Load(const fs::path& path) {
  const auto doc = ReadJson(path);
  LdaTransform t;
  try {
    t.projection = MatrixFromJson(doc.at("projection"));
    const auto ev = doc.at("eigenvalues").get<std::vector<double>>();
    t.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), Eigen::Index(ev.size()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return t;
}

LdaTransform EstimateLda(const std::vector<FeatureMatrix>& feats,
                         const std::vector<std::vector<int>>& labels, int d_out,
                         double eps) {
  if (feats.empty() || feats.size() != labels.size())
    throw DataError("LDA: features and labels must be non-empty and parallel");
  const Eigen::Index d = feats[0].cols();
  if (d_out < 1 || d_out > d) throw UsageError("LDA: output dimension out of range");
  std::map<int, Eigen::Index> class_index;
  for (const auto& l : labels)
    for (int c : l) class_index.emplace(c, 0);
  Eigen::Index n_classes = 0;
  for (auto& [c, idx] : class_index) idx = n_classes++;
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n_classes, d);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_classes);
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(d, d);
  double n = 0;
  for (std::size_t u = 0; u < feats.size(); ++u) {
    if (feats[u].cols() != d || std::size_t(feats[u].rows()) != labels[u].size())
      throw DataError("LDA: label/feature length mismatch");
    for (Eigen::Index t = 0; t < feats[u].rows(); ++t) {
      const Eigen::Index c = class_index[labels[u][std::size_t(t)]];
      sums.row(c) += feats[u].row(t);
      counts[c] += 1;
    }
    scatter.noalias() += feats[u].transpose() * feats[u];
    n += double(feats[u].rows());
  }
  if (n_classes < 2) throw DataError("LDA: need at least two classes");
  for (Eigen::Index c = 0; c < n_classes; ++c)
    if (counts[c] < 2) throw DataError("LDA: every class needs at least two frames");
  const Eigen::VectorXd mu = sums.colwise().sum().transpose() / n;
  // Sw = (1/N) sum_c sum_x (x - mu_c)(x - mu_c)' = E[xx'] - (1/N) sum_c n_c mu_c mu_c'.
  Eigen::MatrixXd class_outer = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index c = 0; c < n_classes; ++c) {
    const Eigen::VectorXd mc = sums.row(c).transpose() / counts[c];
    class_outer.noalias() += counts[c] * mc * mc.transpose();
  }
  LdaTransform t;
  t.within_scatter = (scatter - class_outer) / n;
  t.between_scatter = class_outer / n - mu * mu.transpose();
  t.within_scatter = 0.5 * (t.within_scatter + t.within_scatter.transpose());
  t.between_scatter = 0.5 * (t.between_scatter + t.between_scatter.transpose());
  const Eigen::MatrixXd sw_reg =
      t.within_scatter + eps * Eigen::MatrixXd::Identity(d, d);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(t.between_scatter, sw_reg);
  if (solver.info() != Eigen::Success)
    throw NumericError("LDA: generalized eigenproblem failed (within-class scatter singular?)");
  // Eigenvalues ascending; keep the largest.
  t.projection.resize(d_out, d);
  t.eigenvalues.resize(d_out);
  for (int r = 0; r < d_out; ++r) {
    const Eigen::Index k = d - 1 - r;
    Eigen::VectorXd v = solver.eigenvectors().col(k);
    // Deterministic sign: largest-magnitude coordinate positive.
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    t.projection.row(r) = v.transpose();
    t.eigenvalues[r] = solver.eigenvalues()[k];
  }
  return t;
}

// ---- fMLLR ---------------------------------------------------------------------

FmllrTransform FmllrTransform::Identity(int dim, std::string owner) {
  return {std::move(owner), Eigen::MatrixXd::Identity(dim, dim), Eigen::VectorXd::Zero(dim)};
}

FeatureMatrix FmllrTransform::Apply(const FeatureMatrix& feats) const {
  if (feats.cols() != A.cols())
    throw DataError("fMLLR: feature dimension " + std::to_string(feats.cols()) +
                    " does not match transform dimension " + std::to_string(A.cols()));
  FeatureMatrix out = feats * A.transpose();
  out.rowwise() += b.transpose();
  return out;
}

FmllrTransform FmllrTransform::Inverse() const {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) throw NumericError("fMLLR: transform is singular");
  FmllrTransform inv;
  inv.owner = owner;
  inv.A = lu.inverse();
  inv.b = -inv.A * b;
  return inv;
}

Eigen::MatrixXd FmllrTransform::W() const {
  Eigen::MatrixXd w(A.rows(), A.cols() + 1);
  w << A, b;
  return w;
}

FmllrStats::FmllrStats(int dim)
    : G(std::size_t(dim), Eigen::MatrixXd::Zero(dim + 1, dim + 1)),
      K(Eigen::MatrixXd::Zero(dim, dim + 1)) {}

void AccumulateFmllrStats(const GmmHmmModel& model, const FeatureMatrix& raw,
                          const FeatureMatrix& transformed, const Alignment& alignment,
                          FmllrStats& stats) {
  const int d = stats.Dim();
  if (raw.cols() != d || transformed.cols() != d)
    throw DataError("fMLLR: feature dimension mismatch");
  if (std::size_t(raw.rows()) != alignment.size())
    throw DataError("fMLLR: alignment length mismatch");
  Eigen::VectorXd post, xi(d + 1);
  // Per-dimension weighted sums, flushed into G once per utterance.
  std::vector<Eigen::MatrixXd> g_local(std::size_t(d), Eigen::MatrixXd::Zero(d + 1, d + 1));
  for (Eigen::Index t = 0; t < raw.rows(); ++t) {
    const DiagGmm& g = model.states[std::size_t(alignment[std::size_t(t)])];
    g.Posteriors(transformed.row(t).transpose(), post);
    xi << raw.row(t).transpose(), 1.0;
    const Eigen::MatrixXd outer = xi * xi.transpose();
    // Effective inverse variance and mean-weighted inverse variance per dim.
    const Eigen::VectorXd inv = g.inv_vars.transpose() * post;                       // d
    const Eigen::VectorXd mu_inv = g.means.cwiseProduct(g.inv_vars).transpose() * post;  // d
    stats.beta += post.sum();
    for (int i = 0; i < d; ++i) {
      g_local[std::size_t(i)].noalias() += inv[i] * outer;
      stats.K.row(i).noalias() += mu_inv[i] * xi.transpose();
    }
  }
  for (int i = 0; i < d; ++i) stats.G[std::size_t(i)] += g_local[std::size_t(i)];
}

double FmllrAuxiliary(const FmllrStats& stats, const Eigen::MatrixXd& W) {
  const int d = stats.Dim();
  const double det = W.leftCols(d).determinant();
  double q = stats.beta * std::log(std::fabs(det));
  for (int i = 0; i < d; ++i) {
    const Eigen::RowVectorXd w = W.row(i);
    q += w.dot(stats.K.row(i)) - 0.5 * (w * stats.G[std::size_t(i)] * w.transpose())(0, 0);
  }
  return q;
}

void FmllrRowUpdates(const FmllrStats& stats, Eigen::MatrixXd& W, int sweeps,
                     std::vector<double>* trace) {
  const int d = stats.Dim();
  std::vector<Eigen::LDLT<Eigen::MatrixXd>> g_inv;
  for (int i = 0; i < d; ++i) g_inv.emplace_back(stats.G[std::size_t(i)]);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int i = 0; i < d; ++i) {
      // Cofactor row of A up to the scale det(A), which cancels in the update.
      const Eigen::MatrixXd a_inv_t = W.leftCols(d).inverse().transpose();
      Eigen::VectorXd p = Eigen::VectorXd::Zero(d + 1);
      p.head(d) = a_inv_t.row(i).transpose();
      const Eigen::VectorXd k = stats.K.row(i).transpose();
      const Eigen::VectorXd gp = g_inv[std::size_t(i)].solve(p);
      const Eigen::VectorXd gk = g_inv[std::size_t(i)].solve(k);
      const double e1 = p.dot(gp);
      const double e2 = p.dot(gk);
      const double disc = e2 * e2 + 4.0 * e1 * stats.beta;
      if (!(e1 > 0) || !(disc >= 0)) throw NumericError("fMLLR: degenerate row statistics");
      const double s = std::sqrt(disc);
      const double roots[2] = {(-e2 + s) / (2 * e1), (-e2 - s) / (2 * e1)};
      auto objective = [&](double a) {
        return stats.beta * std::log(std::fabs(a * e1 + e2)) - 0.5 * a * a * e1;
      };
      const double alpha = objective(roots[0]) >= objective(roots[1]) ? roots[0] : roots[1];
      W.row(i) = (alpha * gp + gk).transpose();
      if (trace) trace->push_back(FmllrAuxiliary(stats, W));
    }
  }
}

FmllrResult EstimateFmllr(const GmmHmmModel& model, const std::vector<FeatureMatrix>& feats,
                          const std::vector<Alignment>& alignments,
                          const FmllrOptions& options, const std::string& owner) {
  const int d = model.Dim();
  FmllrResult r;
  r.transform = FmllrTransform::Identity(d, owner);
  std::size_t n_frames = 0;
  for (const auto& f : feats) n_frames += std::size_t(f.rows());
  if (n_frames < std::size_t(d) * std::size_t(d + 1)) {
    LogWarning("fMLLR" + (owner.empty() ? std::string() : " for '" + owner + "'") + ": only " +
               std::to_string(n_frames) + " frames (< " + std::to_string(d * (d + 1)) +
               "), using identity transform");
    r.identity_fallback = true;
    return r;
  }
  Eigen::MatrixXd W = r.transform.W();
  for (int it = 0; it < options.iterations; ++it) {
    FmllrStats stats(d);
    const FmllrTransform current{owner, W.leftCols(d), W.col(d)};
    for (std::size_t u = 0; u < feats.size(); ++u)
      AccumulateFmllrStats(model, feats[u], current.Apply(feats[u]), alignments[u], stats);
    for (int i = 0; i < d; ++i) {
      auto& g = stats.G[std::size_t(i)];
      const double delta = options.ridge * g.trace() / double(d + 1);
      g.diagonal().array() += delta;
      stats.K(i, i) += delta;
    }
    r.auxiliary.push_back(FmllrAuxiliary(stats, W));
    FmllrRowUpdates(stats, W, options.row_sweeps, &r.auxiliary);
  }
  r.transform.A = W.leftCols(d);
  r.transform.b = W.col(d);
  if (!std::isfinite(W.sum()) || std::fabs(r.transform.A.determinant()) < 1e-12)
    throw NumericError("fMLLR: estimated transform is singular or non-finite");
  return r;
}

// ---- MAP -----------------------------------------------------------------------

GmmHmmModel MapAdaptMeans(const GmmHmmModel& model, const std::vector<FeatureMatrix>& feats,
                          const std::vector<Alignment>& alignments, double tau) {
  const int S = model.NumStates();
  const Eigen::Index d = model.Dim();
  std::vector<Eigen::VectorXd> gamma;
  std::vector<Eigen::MatrixXd> sum;
  for (const auto& g : model.states) {
    gamma.push_back(Eigen::VectorXd::Zero(g.NumComponents()));
    sum.push_back(Eigen::MatrixXd::Zero(g.NumComponents(), d));
  }
  Eigen::VectorXd post;
  for (std::size_t u = 0; u < feats.size(); ++u)
    for (Eigen::Index t = 0; t < feats[u].rows(); ++t) {
      const int s = alignments[u][std::size_t(t)];
      const Eigen::VectorXd x = feats[u].row(t).transpose();
      model.states[std::size_t(s)].Posteriors(x, post);
      gamma[std::size_t(s)] += post;
      sum[std::size_t(s)] += post * x.transpose();
    }
  GmmHmmModel out = model;
  for (int s = 0; s < S; ++s) {
    auto& g = out.states[std::size_t(s)];
    for (int k = 0; k < g.NumComponents(); ++k) {
      const double n = gamma[std::size_t(s)][k];
      g.means.row(k) = (tau * g.means.row(k) + sum[std::size_t(s)].row(k)) / (tau + n);
    }
    g.ComputeGconsts();
  }
  return out;
}

// ---- I/O -----------------------------------------------------------------------

void SaveTransforms(const fs::path& path, const std::vector<FmllrTransform>& transforms) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& t : transforms)
    doc.push_back({{"owner", t.owner},
                   {"A", MatrixToJson(t.A)},
                   {"b", std::vector<double>(t.b.data(), t.b.data() + t.b.size())}});
  WriteJson(path, doc);
}

std::vector<FmllrTransform> LoadTransforms(const fs::path& path) {
  const auto doc = ReadJson(path);
  std::vector<FmllrTransform> out;
  try {
    for (const auto& e : doc) {
      FmllrTransform t;
      t.owner = e.at("owner").get<std::string>();
      t.A = MatrixFromJson(e.at("A"));
      const auto b = e.at("b").get<std::vector<double>>();
      t.b = Eigen::Map<const Eigen::VectorXd>(b.data(), Eigen::Index(b.size()));
      if (t.A.rows() != t.A.cols() || t.A.rows() != t.b.size())
        throw DataError(path.string() + ": transform shape mismatch");
      out.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace ssikit::asr
