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

#ifndef HVECTOR_SCORING_HPP_
#define HVECTOR_SCORING_HPP_

// Identification accuracy, verification trials and EER, and the LDA + PLDA
// back-end for embeddings.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hvector/checkpoint.hpp"
#include "hvector/errors.hpp"

namespace hvector::scoring {

/// Fraction of positions where preds and truth agree.
template <typename T>
double accuracy(const std::vector<T>& preds, const std::vector<T>& truth) {
  if (preds.size() != truth.size())
    throw DimensionError("accuracy: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(truth.size()) + " labels");
  if (preds.empty()) throw DataError("accuracy of an empty list");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truth[i];
  return double(hits) / double(preds.size());
}

struct ScoredTrial {
  double score = 0;
  bool target = false;
};

struct EerResult {
  double eer = 0;
  double threshold = 0;  // accept when score >= threshold at the nearest operating point
};

/// Equal error rate. Thresholds sweep every distinct score; with
/// FAR(th) = P(score >= th | non-target) and FRR(th) = P(score < th | target)
/// the operating points (FAR, FRR) are joined by their lower convex hull and
/// the EER is where that hull meets FAR = FRR, found by linear interpolation
/// between the two hull vertices on either side. Computed in exact integer
/// arithmetic up to one final division. Throws DataError without both classes.
EerResult compute_eer(const std::vector<ScoredTrial>& trials);

// ---- PLDA ----

inline constexpr double kPldaRegularization = 1e-6;

struct PldaOptions {
  Index reduced_dim = -1;  // -1: min(n_speakers - 1, 300, input dim)
  int max_iter = 50;
  double tol = 1e-6;       // stop when the log-likelihood gains less than this
  bool length_norm = false;
  bool lda = true;         // false: two-covariance model on the centred data
};

/// Two-covariance model in the reduced space: y ~ N(mu, phi_b), x = y + e,
/// e ~ N(0, phi_w).
struct TwoCovModel {
  Eigen::VectorXd mu;
  Eigen::MatrixXd phi_b, phi_w;
  std::vector<double> log_likelihood;  // after each EM iteration
  bool regularized = false;
};

struct PldaModel {
  Eigen::VectorXd center;   // training mean of the raw embeddings
  bool length_norm = false;
  Eigen::MatrixXd lda;      // [raw dim, reduced dim]
  TwoCovModel plda;
  std::vector<std::string> warnings;

  /// Centering, optional length normalisation, then LDA.
  Eigen::VectorXd project(const Eigen::VectorXd& raw) const;
};

/// EM fit of the two-covariance model. `labels` group rows of x (one row per
/// observation) by speaker. Initialised from the within- and between-speaker
/// scatter. Throws DataError with fewer than 2 speakers or no speaker with 2
/// observations.
TwoCovModel fit_two_covariance(const Eigen::MatrixXd& x, const std::vector<int>& labels, int max_iter = 50,
                               double tol = 1e-6, std::vector<std::string>* warnings = nullptr);

/// Total log-likelihood of the data under a two-covariance model.
double two_covariance_log_likelihood(const TwoCovModel& m, const Eigen::MatrixXd& x, const std::vector<int>& labels);

/// Centre, optionally length-normalise, LDA to reduced_dim (generalised
/// eigenvectors of between- vs within-speaker scatter, scaled to unit
/// within-class variance), then fit_two_covariance. A singular within-class
/// scatter is regularised with 1e-6 I and a warning is recorded.
PldaModel plda_fit(const std::vector<EmbeddingRow>& rows, const PldaOptions& opts = {});

/// Same-speaker vs different-speaker log-likelihood ratio for two vectors
/// already in the model space (see PldaModel::project).
class PldaScorer {
 public:
  explicit PldaScorer(const TwoCovModel& m);
  double operator()(const Eigen::VectorXd& e, const Eigen::VectorXd& t) const;

 private:
  Eigen::VectorXd mu_;
  Eigen::MatrixXd q_, p_;  // llr = 1/2 e'Qe + 1/2 t'Qt + e'Pt + c
  double c_ = 0;
};

double plda_score(const PldaModel& model, const Eigen::VectorXd& enrol_raw, const Eigen::VectorXd& test_raw);

double cosine_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// ---- trials ----

struct Trial {
  std::string enrol_speaker;
  std::string test_utterance;
  Eigen::VectorXd enrol_vector;  // mean of the speaker's enrolment embeddings
  Eigen::VectorXd test_vector;
  bool target = false;
};

/// One trial per (enrol speaker, eval utterance) pair, speakers in sorted
/// order, utterances in input order.
std::vector<Trial> make_trials(const std::vector<EmbeddingRow>& enrol, const std::vector<EmbeddingRow>& eval);

struct ScoredTrialRow {
  std::string enrol_speaker, test_utterance;
  double score = 0;
  bool target = false;
};

/// `enrol_speaker,test_utterance,score,target`
void write_trials_csv(const std::filesystem::path& path, const std::vector<ScoredTrialRow>& rows);
std::vector<ScoredTrialRow> read_trials_csv(const std::filesystem::path& path);

/// `EER=<value> threshold=<value>`
std::string format_eer(const EerResult& r);

/// Closed-set identification: each test vector goes to the enrol speaker with
/// the highest score. Returns the predicted speaker ids.
enum class Backend { kCosine, kPlda };
std::vector<std::string> identify(const std::vector<EmbeddingRow>& enrol, const std::vector<EmbeddingRow>& test,
                                  Backend backend, const PldaModel* plda = nullptr);

}  // namespace hvector::scoring

#endif  // HVECTOR_SCORING_HPP_
