#include "libra/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>

#include "libra/error.hpp"

namespace libra {

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  if (predicted.size() != labels.size() || labels.empty()) {
    throw InvalidArgument("accuracy: empty or mismatched inputs");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double macro_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                std::size_t classes) {
  if (predicted.size() != labels.size() || labels.empty() || classes == 0) {
    throw InvalidArgument("macro_f1: empty or mismatched inputs");
  }
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool p = predicted[i] == c;
      const bool t = labels[i] == c;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    total += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return total / static_cast<double>(classes);
}

double binary_auc(std::span<const double> scores, std::span<const std::size_t> labels,
                  std::size_t positive_class) {
  if (scores.size() != labels.size()) throw InvalidArgument("binary_auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the midrank of each tie group is (first + last) with 1-based ranks.
  std::int64_t twice_rank_pos = 0;
  std::int64_t npos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const auto twice_mid = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == positive_class) {
        twice_rank_pos += twice_mid;
        ++npos;
      }
    }
    i = j + 1;
  }
  const std::int64_t nneg = static_cast<std::int64_t>(n) - npos;
  if (npos == 0 || nneg == 0) return std::numeric_limits<double>::quiet_NaN();
  // (R - npos(npos+1)/2) / (npos nneg), both sides doubled.
  const std::int64_t num = twice_rank_pos - npos * (npos + 1);
  const std::int64_t den = 2 * npos * nneg;
  return static_cast<double>(num) / static_cast<double>(den);
}

double macro_auc(const Matrix& probs, std::span<const std::size_t> labels) {
  if (probs.rows() != labels.size() || labels.empty()) {
    throw InvalidArgument("macro_auc: empty or mismatched inputs");
  }
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> scores(labels.size());
  for (std::size_t c = 0; c < probs.cols(); ++c) {
    for (std::size_t i = 0; i < labels.size(); ++i) scores[i] = probs(i, c);
    const double auc = binary_auc(scores, labels, c);
    if (std::isnan(auc)) continue;
    total += auc;
    ++counted;
  }
  return counted == 0 ? 0.5 : total / static_cast<double>(counted);
}

MetricsReport compute_metrics(const Matrix& probs, std::span<const std::size_t> labels) {
  if (probs.rows() != labels.size() || labels.empty()) {
    throw InvalidArgument("compute_metrics: empty or mismatched inputs");
  }
  std::vector<std::size_t> pred(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pred[i] = argmax(probs.row(i));
    if (labels[i] >= probs.cols()) {
      throw InvalidArgument("compute_metrics: label " + std::to_string(labels[i]) +
                            " out of range");
    }
  }
  MetricsReport r;
  r.accuracy = accuracy(pred, labels);
  r.macro_f1 = macro_f1(pred, labels, probs.cols());
  r.macro_auc = macro_auc(probs, labels);
  r.count = labels.size();
  return r;
}

MeanStd mean_std(std::span<const double> xs) {
  if (xs.empty()) return {};
  double s = 0.0;
  for (double x : xs) s += x;
  const double mean = s / static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - mean) * (x - mean);
  return {mean, std::sqrt(v / static_cast<double>(xs.size()))};
}

FoldSummary summarize_folds(std::vector<MetricsReport> folds) {
  FoldSummary s;
  std::vector<double> acc, f1, auc;
  for (const auto& f : folds) {
    acc.push_back(f.accuracy);
    f1.push_back(f.macro_f1);
    auc.push_back(f.macro_auc);
  }
  s.accuracy = mean_std(acc);
  s.macro_f1 = mean_std(f1);
  s.macro_auc = mean_std(auc);
  s.folds = std::move(folds);
  return s;
}

}  // namespace libra
