#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "skipgru/numerics.hpp"

namespace skipgru {

/// [u * v, |u - v|], componentwise.
Vector pair_features(std::span<const double> u, std::span<const double> v);

inline constexpr std::size_t kScoreLevels = 5;

/// Relatedness score y in [1, 5] as a distribution over the integer scores
/// 1..5 whose expectation is y.
Vector score_to_distribution(double y);
/// Expected score sum_i i * p_i of a 5-way distribution.
double distribution_to_score(std::span<const double> p);

struct ProbeModel {
  Matrix weights;  // classes x features
  Vector bias;     // classes
  double l2 = 0.0;
  std::size_t iterations = 0;
  double grad_norm = 0.0;

  std::size_t classes() const { return weights.rows(); }
  std::size_t features() const { return weights.cols(); }
  Vector predict_proba(std::span<const double> x) const;
  std::size_t predict(std::span<const double> x) const;
};

/// Rows of targets are distributions over classes (one-hot for hard labels).
Matrix one_hot(const std::vector<std::size_t>& labels, std::size_t classes);

/// Mean cross-entropy of softmax(W x + b) against the target rows plus
/// (l2 / 2) |W|^2. Gradients are written when the pointers are non-null.
double logreg_objective(const Matrix& x, const Matrix& targets, const Matrix& w, std::span<const double> b,
                        double l2, Matrix* grad_w = nullptr, Vector* grad_b = nullptr);

/// Minimises logreg_objective with L-BFGS to gradient norm < options.tolerance.
ProbeModel fit_logreg(const Matrix& x, const Matrix& targets, double l2, const LbfgsOptions& options = {});
ProbeModel fit_logreg(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t classes, double l2,
                      const LbfgsOptions& options = {});

/// Relatedness readout: softmax over the five score levels with soft
/// targets; prediction is the expected score.
ProbeModel fit_relatedness(const Matrix& features, std::span<const double> gold, double l2);
double predict_relatedness(const ProbeModel& model, std::span<const double> features);

std::vector<double> default_l2_grid();

/// Fold index per example. Each stratum is shuffled with the seeded RNG and
/// dealt round-robin, continuing across strata so fold sizes stay balanced.
/// InputError when a stratum has fewer members than folds.
std::vector<std::size_t> stratified_folds(const std::vector<std::size_t>& strata, std::size_t folds,
                                          std::uint64_t seed);

/// Trains on train_rows with the given l2 and returns a score on test_rows
/// (higher is better).
using FoldScorer = std::function<double(const std::vector<std::size_t>& train_rows,
                                        const std::vector<std::size_t>& test_rows, double l2)>;

struct CvResult {
  double best_l2 = 0.0;
  std::vector<double> grid_scores;  // mean fold score per grid entry
  std::vector<double> fold_scores;  // per fold, at best_l2
  std::vector<std::size_t> folds;   // fold assignment
};

CvResult cross_validate(const std::vector<std::size_t>& strata, std::size_t folds, const std::vector<double>& grid,
                        std::uint64_t seed, const FoldScorer& scorer);

/// Accuracy-scored logistic regression cross-validation.
CvResult cross_validate(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t classes,
                        std::size_t folds, const std::vector<double>& grid, std::uint64_t seed);

struct NestedCvResult {
  std::vector<double> fold_accuracy;
  std::vector<double> chosen_l2;
  double mean_accuracy = 0.0;
};

/// Outer folds report held-out accuracy; l2 is picked by an inner
/// cross-validation on each outer training split.
NestedCvResult nested_cross_validate(const Matrix& x, const std::vector<std::size_t>& labels, std::size_t classes,
                                     std::size_t outer_folds, std::size_t inner_folds,
                                     const std::vector<double>& grid, std::uint64_t seed);

double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);
double mse(std::span<const double> a, std::span<const double> b);
double accuracy(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold);
/// F1 of the positive class (label 1).
double f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold, std::size_t positive = 1);

/// Average (1-based) ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

struct PairExample {
  std::string a, b;
  double gold = 0.0;
};

struct LabeledSentence {
  std::size_t label = 0;
  std::string text;
};

/// Tab-separated sentence_a, sentence_b, gold with a header line.
std::vector<PairExample> read_pair_dataset(const std::filesystem::path& path);
/// label TAB sentence per line; labels are non-negative integers.
std::vector<LabeledSentence> read_classification_dataset(const std::filesystem::path& path);

struct MetricRow {
  std::string task, variant, metric;
  double value = 0.0;
};

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows, bool header = true);

}  // namespace skipgru
