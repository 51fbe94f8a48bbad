#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prisk/scenario.hpp"

namespace prisk {

// counts[true][predicted]
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumLevels>, kNumLevels> counts{};

  std::size_t total() const;
  std::size_t row_sum(int k) const;
  std::size_t col_sum(int k) const;
  double accuracy() const;  // trace / total, 0 when empty
};

// Throws RangeError on mismatched lengths or values outside 0..4.
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels);

struct ClassMetrics {
  std::array<double, kNumLevels> precision{};
  std::array<double, kNumLevels> recall{};
  std::array<double, kNumLevels> f1{};
  std::array<bool, kNumLevels> precision_undefined{};  // no predictions of the class
  std::array<bool, kNumLevels> recall_undefined{};     // class absent from labels
  // Unweighted means over classes present in the labels.
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

ClassMetrics class_metrics(const ConfusionMatrix& cm);

// Binary AUC as the Mann-Whitney rank statistic, ties credited 0.5. Returns
// nothing if either side is empty.
std::optional<double> binary_auc(std::span<const double> scores, std::span<const bool> positive);

struct AucResult {
  double macro = 0.0;
  std::array<std::optional<double>, kNumLevels> per_class;
};

// One-vs-rest per class, averaged over classes with both positives and
// negatives. Throws DataError for n < 2, rows not summing to 1, or when no
// class qualifies.
AucResult macro_ovr_auc(std::span<const std::array<double, kNumLevels>> probs,
                        std::span<const int> labels);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

// P(F > f) for F ~ F(d1, d2).
double f_upper_tail(double f, double d1, double d2);

struct AnovaRow {
  std::string feature;
  double sumsq = 0.0;  // between groups
  double ss_within = 0.0;
  double f_stat = 0.0;
  double p_value = 1.0;
  std::size_t groups = 0;
  std::size_t n = 0;
  bool degenerate = false;  // all values identical
};

// One-way ANOVA over the distinct group labels. Throws DataError unless there
// are at least two groups and three values.
AnovaRow anova_oneway(std::span<const double> values, std::span<const int> groups,
                      std::string feature = {});

std::string anova_table(std::span<const AnovaRow> rows);

struct RunSummary {
  std::string model;
  std::string group;  // "All", "Category 1", ...
  double auc = 0.0;
  ConfusionMatrix cm;
  ClassMetrics metrics;
};

struct ComparisonReport {
  std::string text;   // one column per model, one row per group plus Average
  std::string jsonl;  // {model, group, auc, accuracy, macro_f1} per run and per average
  std::vector<std::string> model_order;  // by average AUC, descending; ties by name
};

// "Average" is the mean over category groups, or over all groups when there
// are no categories.
ComparisonReport compare_report(std::span<const RunSummary> runs);

}  // namespace prisk
