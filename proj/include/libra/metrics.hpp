#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "libra/numkernel.hpp"

namespace libra {

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> v);

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels);

// Mean per-class F1. A class with no positives and no predictions scores 0.
double macro_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                std::size_t classes);

// Area under the ROC curve via midranks (ties count half). Computed in
// integer half-rank units so the result equals the pair-counting estimate
// (concordant + ties / 2) / pairs exactly. Returns NaN when either class is
// absent. An example is positive when its label equals positive_class.
double binary_auc(std::span<const double> scores, std::span<const std::size_t> labels,
                  std::size_t positive_class = 1);

// Mean one-vs-rest AUC over classes that have both positives and negatives
// (0.5 if none do). probs is N x classes.
double macro_auc(const Matrix& probs, std::span<const std::size_t> labels);

struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double macro_auc = 0.0;
  std::size_t count = 0;
};

MetricsReport compute_metrics(const Matrix& probs, std::span<const std::size_t> labels);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

MeanStd mean_std(std::span<const double> xs);

struct FoldSummary {
  std::vector<MetricsReport> folds;
  MeanStd accuracy;
  MeanStd macro_f1;
  MeanStd macro_auc;
};

FoldSummary summarize_folds(std::vector<MetricsReport> folds);

}  // namespace libra
