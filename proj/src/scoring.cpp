// Copyright 2026  The hvector Authors
//
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

#include "hvector/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>

#include "hvector/text.hpp"

namespace hvector::scoring {

namespace {

using i128 = __int128;

// Operating point in counts: false alarms among non-targets, misses among
// targets, and the threshold that produces it.
struct RocPoint {
  long long fa = 0, miss = 0;
  double threshold = 0;
};

}  // namespace

EerResult compute_eer(const std::vector<ScoredTrial>& trials) {
  long long nt = 0, nn = 0;
  for (const auto& t : trials) {
    if (!std::isfinite(t.score)) throw DataError("compute_eer: non-finite score");
    (t.target ? nt : nn) += 1;
  }
  if (nt == 0 || nn == 0) throw DataError("compute_eer needs both target and non-target trials");
  std::vector<ScoredTrial> sorted = trials;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score > b.score; });

  std::vector<RocPoint> pts;
  pts.push_back({0, nt, std::nextafter(sorted.front().score, std::numeric_limits<double>::infinity())});
  for (std::size_t i = 0; i < sorted.size();) {
    RocPoint p = pts.back();
    const double s = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == s; ++i) {
      if (sorted[i].target) --p.miss;
      else ++p.fa;
    }
    p.threshold = s;
    pts.push_back(p);
  }

  // Lower convex hull in (fa / nn, miss / nt), scaled to integers (fa * nt, miss * nn).
  auto X = [&](const RocPoint& p) { return i128(p.fa) * nt; };
  auto Y = [&](const RocPoint& p) { return i128(p.miss) * nn; };
  std::vector<RocPoint> hull;
  for (const auto& p : pts) {
    while (hull.size() >= 2) {
      const RocPoint& a = hull[hull.size() - 2];
      const RocPoint& b = hull.back();
      const i128 cross = (X(b) - X(a)) * (Y(p) - Y(a)) - (Y(b) - Y(a)) * (X(p) - X(a));
      if (cross <= 0) hull.pop_back();  // b is on or above the chord a-p
      else break;
    }
    hull.push_back(p);
  }

  // d = miss rate - fa rate (scaled) is non-increasing along the hull.
  auto D = [&](const RocPoint& p) { return Y(p) - X(p); };
  for (std::size_t k = 0; k < hull.size(); ++k) {
    const RocPoint& a = hull[k];
    if (D(a) == 0) return {double(a.fa) / double(nn), a.threshold};
    if (k + 1 < hull.size() && D(hull[k + 1]) < 0) {
      const RocPoint& b = hull[k + 1];
      // Intersection of the segment a-b with fa / nn = miss / nt.
      const i128 num = i128(a.fa) * b.miss - i128(a.miss) * b.fa;
      const i128 den = i128(a.fa) * nt - i128(a.miss) * nn - i128(b.fa) * nt + i128(b.miss) * nn;
      const double eer = double(num) / double(den);
      const bool a_nearer = D(a) <= -D(b);
      return {eer, a_nearer ? a.threshold : b.threshold};
    }
  }
  throw std::logic_error("compute_eer: hull does not cross the diagonal");
}

// ---- PLDA ----

namespace {

struct SpeakerStats {
  std::vector<std::vector<Index>> rows;  // row indices per speaker
};

SpeakerStats group_rows(const std::vector<int>& labels) {
  std::map<int, std::vector<Index>> g;
  for (std::size_t i = 0; i < labels.size(); ++i) g[labels[i]].push_back(Index(i));
  SpeakerStats s;
  for (auto& [l, r] : g) s.rows.push_back(std::move(r));
  return s;
}

void check_groups(const SpeakerStats& s) {
  if (s.rows.size() < 2) throw DataError("PLDA needs at least 2 speakers, got " + std::to_string(s.rows.size()));
  bool repeat = false;
  for (const auto& r : s.rows) repeat |= r.size() >= 2;
  if (!repeat) throw DataError("PLDA needs at least one speaker with 2 or more observations");
}

Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError(std::string(what) + " is not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

double log_det_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError(std::string(what) + " is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

// Raises eigenvalues below `floor` to it; returns whether anything changed.
bool floor_eigenvalues(Eigen::MatrixXd& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.eigenvalues().minCoeff() >= floor) return false;
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  m = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  m = 0.5 * (m + m.transpose());
  return true;
}

// Within-speaker and between-speaker (speaker means about the grand mean)
// scatter, each normalised by its number of terms.
void scatter(const Eigen::MatrixXd& x, const SpeakerStats& s, Eigen::MatrixXd& sw, Eigen::MatrixXd& sb,
             bool weight_between) {
  const Index d = x.cols();
  const Eigen::RowVectorXd grand = x.colwise().mean();
  sw = Eigen::MatrixXd::Zero(d, d);
  sb = Eigen::MatrixXd::Zero(d, d);
  double wsum = 0;
  for (const auto& rows : s.rows) {
    Eigen::MatrixXd xs(Index(rows.size()), d);
    for (std::size_t k = 0; k < rows.size(); ++k) xs.row(Index(k)) = x.row(rows[k]);
    const Eigen::RowVectorXd m = xs.colwise().mean();
    const Eigen::MatrixXd c = xs.rowwise() - m;
    sw += c.transpose() * c;
    const double w = weight_between ? double(rows.size()) : 1.0;
    sb += w * (m - grand).transpose() * (m - grand);
    wsum += w;
  }
  sw /= double(x.rows());
  sb /= wsum;
}

}  // namespace

double two_covariance_log_likelihood(const TwoCovModel& m, const Eigen::MatrixXd& x, const std::vector<int>& labels) {
  const SpeakerStats s = group_rows(labels);
  const Index d = x.cols();
  const Eigen::MatrixXd wi = inverse_spd(m.phi_w, "within-class covariance");
  const double logdet_w = log_det_spd(m.phi_w, "within-class covariance");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double ll = 0;
  for (const auto& rows : s.rows) {
    const double n = double(rows.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (Index r : rows) mean += x.row(r).transpose();
    mean /= n;
    // N(mean; mu, phi_b + phi_w / n)
    const Eigen::MatrixXd c = m.phi_b + m.phi_w / n;
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) throw NumericError("speaker-mean covariance is not positive definite");
    const Eigen::VectorXd diff = mean - m.mu;
    ll += -0.5 * (double(d) * log2pi + log_det_spd(c, "speaker-mean covariance") + diff.dot(llt.solve(diff)));
    // deviations from the speaker mean
    double quad = 0;
    for (Index r : rows) {
      const Eigen::VectorXd e = x.row(r).transpose() - mean;
      quad += e.dot(wi * e);
    }
    ll += -0.5 * ((n - 1) * (double(d) * log2pi + logdet_w) + double(d) * std::log(n) + quad);
  }
  return ll;
}

TwoCovModel fit_two_covariance(const Eigen::MatrixXd& x, const std::vector<int>& labels, int max_iter, double tol,
                               std::vector<std::string>* warnings) {
  if (Index(labels.size()) != x.rows()) throw DimensionError("fit_two_covariance: labels and rows differ in count");
  if (!x.allFinite()) throw DataError("fit_two_covariance: non-finite input");
  const SpeakerStats s = group_rows(labels);
  check_groups(s);
  const Index d = x.cols();
  const double n_total = double(x.rows()), n_spk = double(s.rows.size());

  TwoCovModel m;
  m.mu = x.colwise().mean().transpose();
  scatter(x, s, m.phi_w, m.phi_b, false);
  auto regularize = [&](Eigen::MatrixXd& c, const char* what) {
    if (floor_eigenvalues(c, kPldaRegularization)) {
      if (!m.regularized && warnings) warnings->push_back(std::string(what) + " is singular; regularised with 1e-6 I");
      m.regularized = true;
    }
  };
  regularize(m.phi_w, "within-class covariance");
  regularize(m.phi_b, "between-class covariance");

  std::vector<Eigen::VectorXd> sums;
  for (const auto& rows : s.rows) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
    for (Index r : rows) sum += x.row(r).transpose();
    sums.push_back(sum);
  }
  double prev = two_covariance_log_likelihood(m, x, labels);
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd bi = inverse_spd(m.phi_b, "between-class covariance");
    const Eigen::MatrixXd wi = inverse_spd(m.phi_w, "within-class covariance");
    const Eigen::VectorXd bmu = bi * m.mu;
    std::vector<Eigen::VectorXd> y(s.rows.size());
    std::vector<Eigen::MatrixXd> cov(s.rows.size());
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
      cov[i] = inverse_spd(bi + double(s.rows[i].size()) * wi, "posterior precision");
      y[i] = cov[i] * (bmu + wi * sums[i]);
    }
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (const auto& v : y) mu += v;
    mu /= n_spk;
    Eigen::MatrixXd pb = Eigen::MatrixXd::Zero(d, d), pw = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
      pb += cov[i] + (y[i] - mu) * (y[i] - mu).transpose();
      for (Index r : s.rows[i]) {
        const Eigen::VectorXd e = x.row(r).transpose() - y[i];
        pw += e * e.transpose();
      }
      pw += double(s.rows[i].size()) * cov[i];
    }
    m.mu = mu;
    m.phi_b = 0.5 * (pb + pb.transpose()) / n_spk;
    m.phi_w = 0.5 * (pw + pw.transpose()) / n_total;
    regularize(m.phi_w, "within-class covariance");
    regularize(m.phi_b, "between-class covariance");
    const double ll = two_covariance_log_likelihood(m, x, labels);
    m.log_likelihood.push_back(ll);
    const bool done = ll - prev < tol;
    prev = ll;
    if (done) break;
  }
  return m;
}

Eigen::VectorXd PldaModel::project(const Eigen::VectorXd& raw) const {
  if (raw.size() != center.size())
    throw DimensionError("PLDA input has " + std::to_string(raw.size()) + " dims, model expects " +
                         std::to_string(center.size()));
  Eigen::VectorXd v = raw - center;
  if (length_norm) {
    const double n = v.norm();
    if (n > 0) v /= n;
  }
  return lda.transpose() * v;
}

PldaModel plda_fit(const std::vector<EmbeddingRow>& rows, const PldaOptions& opts) {
  if (rows.empty()) throw DataError("plda_fit: no embeddings");
  const Index raw_dim = rows.front().vector.size();
  std::map<std::string, int> spk;
  std::vector<int> labels;
  for (const auto& r : rows) {
    if (r.vector.size() != raw_dim) throw DimensionError("plda_fit: embeddings differ in length");
    labels.push_back(spk.emplace(r.speaker_id, int(spk.size())).first->second);
  }
  const Index n_spk = Index(spk.size());
  check_groups(group_rows(labels));

  PldaModel model;
  model.length_norm = opts.length_norm;
  Eigen::MatrixXd x(Index(rows.size()), raw_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(Index(i)) = rows[i].vector.transpose();
  model.center = x.colwise().mean().transpose();
  x.rowwise() -= model.center.transpose();
  if (opts.length_norm)
    for (Index i = 0; i < x.rows(); ++i)
      if (x.row(i).norm() > 0) x.row(i).normalize();

  if (!opts.lda) {
    model.lda = Eigen::MatrixXd::Identity(raw_dim, raw_dim);
  } else {
    const Index dim = opts.reduced_dim < 0 ? std::min<Index>({n_spk - 1, 300, raw_dim}) : opts.reduced_dim;
    if (dim < 1 || dim > raw_dim || dim > n_spk - 1)
      throw ConfigError("reduced_dim " + std::to_string(dim) + " must be in [1, min(dim " + std::to_string(raw_dim) +
                        ", speakers - 1 = " + std::to_string(n_spk - 1) + ")]");
    Eigen::MatrixXd sw, sb;
    scatter(x, group_rows(labels), sw, sb, true);
    if (floor_eigenvalues(sw, kPldaRegularization))
      model.warnings.push_back("within-class scatter is singular; regularised with 1e-6 I");
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(sb, sw);
    if (ges.info() != Eigen::Success) throw NumericError("LDA eigen-decomposition failed");
    // eigenvalues ascending; keep the largest, eigenvectors are sw-orthonormal
    model.lda = ges.eigenvectors().rightCols(dim).rowwise().reverse();
  }
  const Eigen::MatrixXd y = x * model.lda;
  model.plda = fit_two_covariance(y, labels, opts.max_iter, opts.tol, &model.warnings);
  return model;
}

PldaScorer::PldaScorer(const TwoCovModel& m) : mu_(m.mu) {
  const Eigen::MatrixXd t = m.phi_b + m.phi_w;
  const Eigen::MatrixXd ti = inverse_spd(t, "total covariance");
  const Eigen::MatrixXd sc = t - m.phi_b * ti * m.phi_b;
  const Eigen::MatrixXd a = inverse_spd(0.5 * (sc + sc.transpose()), "conditional covariance");
  q_ = ti - a;
  p_ = a * m.phi_b * ti;
  p_ = 0.5 * (p_ + p_.transpose());
  c_ = 0.5 * log_det_spd(t, "total covariance") - 0.5 * log_det_spd(0.5 * (sc + sc.transpose()), "conditional covariance");
}

double PldaScorer::operator()(const Eigen::VectorXd& e, const Eigen::VectorXd& t) const {
  if (e.size() != mu_.size() || t.size() != mu_.size())
    throw DimensionError("plda score: vectors of " + std::to_string(e.size()) + " and " + std::to_string(t.size()) +
                         " dims, model has " + std::to_string(mu_.size()));
  const Eigen::VectorXd a = e - mu_, b = t - mu_;
  return 0.5 * a.dot(q_ * a) + 0.5 * b.dot(q_ * b) + a.dot(p_ * b) + c_;
}

double plda_score(const PldaModel& model, const Eigen::VectorXd& enrol_raw, const Eigen::VectorXd& test_raw) {
  return PldaScorer(model.plda)(model.project(enrol_raw), model.project(test_raw));
}

double cosine_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw DimensionError("cosine_score: vectors differ in length");
  const double n = a.norm() * b.norm();
  return n > 0 ? a.dot(b) / n : 0.0;
}

namespace {

std::map<std::string, Eigen::VectorXd> speaker_means(const std::vector<EmbeddingRow>& rows) {
  std::map<std::string, std::pair<Eigen::VectorXd, int>> acc;
  for (const auto& r : rows) {
    auto [it, fresh] = acc.try_emplace(r.speaker_id, Eigen::VectorXd::Zero(r.vector.size()), 0);
    if (it->second.first.size() != r.vector.size()) throw DimensionError("embeddings differ in length");
    it->second.first += r.vector;
    ++it->second.second;
  }
  std::map<std::string, Eigen::VectorXd> out;
  for (auto& [s, v] : acc) out[s] = v.first / double(v.second);
  return out;
}

}  // namespace

std::vector<Trial> make_trials(const std::vector<EmbeddingRow>& enrol, const std::vector<EmbeddingRow>& eval) {
  if (enrol.empty() || eval.empty()) throw DataError("make_trials needs non-empty enrolment and evaluation sets");
  std::vector<Trial> out;
  for (const auto& [spk, model] : speaker_means(enrol))
    for (const auto& r : eval) {
      if (r.vector.size() != model.size()) throw DimensionError("enrolment and evaluation embeddings differ in length");
      out.push_back({spk, r.utterance_id, model, r.vector, r.speaker_id == spk});
    }
  return out;
}

void write_trials_csv(const std::filesystem::path& path, const std::vector<ScoredTrialRow>& rows) {
  std::ostringstream os;
  os << "enrol_speaker,test_utterance,score,target\n";
  for (const auto& r : rows) os << r.enrol_speaker << ',' << r.test_utterance << ',' << format_double(r.score) << ',' << (r.target ? 1 : 0) << '\n';
  write_text_file(path, os.str());
}

std::vector<ScoredTrialRow> read_trials_csv(const std::filesystem::path& path) {
  std::istringstream is(read_text_file(path));
  std::string line;
  if (!std::getline(is, line) || trim(line) != "enrol_speaker,test_utterance,score,target")
    throw FormatError(path.string() + ": bad trials header");
  std::vector<ScoredTrialRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = hvector::split(trim(line), ',');
    if (f.size() != 4 || (f[3] != "0" && f[3] != "1"))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed trial");
    double score = 0;
    try {
      score = parse_double("score", f[2]);
    } catch (const ConfigError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    rows.push_back({f[0], f[1], score, f[3] == "1"});
  }
  return rows;
}

std::string format_eer(const EerResult& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "EER=%.4f threshold=%.6g", r.eer, r.threshold);
  return buf;
}

std::vector<std::string> identify(const std::vector<EmbeddingRow>& enrol, const std::vector<EmbeddingRow>& test,
                                  Backend backend, const PldaModel* plda) {
  if (enrol.empty()) throw DataError("identify: empty enrolment set");
  if (backend == Backend::kPlda && plda == nullptr) throw std::invalid_argument("identify: PLDA backend needs a model");
  const auto models = speaker_means(enrol);
  std::optional<PldaScorer> scorer;
  std::map<std::string, Eigen::VectorXd> projected;
  if (backend == Backend::kPlda) {
    scorer.emplace(plda->plda);
    for (const auto& [s, v] : models) projected[s] = plda->project(v);
  }
  std::vector<std::string> out;
  for (const auto& r : test) {
    const Eigen::VectorXd tv = backend == Backend::kPlda ? plda->project(r.vector) : r.vector;
    double best = -std::numeric_limits<double>::infinity();
    std::string who;
    for (const auto& [s, v] : models) {
      const double sc = backend == Backend::kPlda ? (*scorer)(projected[s], tv) : cosine_score(v, tv);
      if (sc > best) {
        best = sc;
        who = s;
      }
    }
    out.push_back(who);
  }
  return out;
}

}  // namespace hvector::scoring
