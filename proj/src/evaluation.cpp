#include "prisk/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "prisk/common.hpp"

namespace prisk {

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (const auto& row : counts) n += std::accumulate(row.begin(), row.end(), std::size_t{0});
  return n;
}

std::size_t ConfusionMatrix::row_sum(int k) const {
  const auto& row = counts[static_cast<std::size_t>(k)];
  return std::accumulate(row.begin(), row.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::col_sum(int k) const {
  std::size_t s = 0;
  for (const auto& row : counts) s += row[static_cast<std::size_t>(k)];
  return s;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  if (n == 0) return 0.0;
  std::size_t trace = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) trace += counts[k][k];
  return static_cast<double>(trace) / static_cast<double>(n);
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) {
    throw RangeError("confusion: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= kNumLevels || labels[i] < 0 || labels[i] >= kNumLevels) {
      throw RangeError("confusion: level out of range at index " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  return cm;
}

ClassMetrics class_metrics(const ConfusionMatrix& cm) {
  ClassMetrics m;
  int present = 0;
  for (int k = 0; k < kNumLevels; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const double tp = static_cast<double>(cm.counts[i][i]);
    const auto col = cm.col_sum(k), row = cm.row_sum(k);
    m.precision_undefined[i] = col == 0;
    m.recall_undefined[i] = row == 0;
    m.precision[i] = col ? tp / static_cast<double>(col) : 0.0;
    m.recall[i] = row ? tp / static_cast<double>(row) : 0.0;
    const double denom = m.precision[i] + m.recall[i];
    m.f1[i] = denom > 0.0 ? 2.0 * m.precision[i] * m.recall[i] / denom : 0.0;
    if (row > 0) {
      ++present;
      m.macro_precision += m.precision[i];
      m.macro_recall += m.recall[i];
      m.macro_f1 += m.f1[i];
    }
  }
  if (present > 0) {
    m.macro_precision /= present;
    m.macro_recall /= present;
    m.macro_f1 /= present;
  }
  return m;
}

std::optional<double> binary_auc(std::span<const double> scores, std::span<const bool> positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

AucResult macro_ovr_auc(std::span<const std::array<double, kNumLevels>> probs,
                        std::span<const int> labels) {
  if (probs.size() != labels.size()) throw DataError("AUC: probability and label counts differ");
  if (probs.size() < 2) throw DataError("AUC needs at least two samples");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double s = std::accumulate(probs[i].begin(), probs[i].end(), 0.0);
    if (!(std::abs(s - 1.0) <= 1e-6)) {
      throw DataError("AUC: probability row " + std::to_string(i) + " sums to " +
                      std::to_string(s));
    }
    if (labels[i] < 0 || labels[i] >= kNumLevels) throw DataError("AUC: label out of range");
  }

  AucResult r;
  std::vector<double> scores(probs.size());
  auto pos = std::make_unique<bool[]>(probs.size());
  int counted = 0;
  for (int k = 0; k < kNumLevels; ++k) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i][static_cast<std::size_t>(k)];
      pos[i] = labels[i] == k;
    }
    const auto auc = binary_auc(scores, std::span<const bool>(pos.get(), probs.size()));
    r.per_class[static_cast<std::size_t>(k)] = auc;
    if (auc) {
      r.macro += *auc;
      ++counted;
    }
  }
  if (counted == 0) throw DataError("AUC undefined: every class lacks positives or negatives");
  r.macro /= counted;
  return r;
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_cf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr double kTol = 1e-10;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((a - 1.0 + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + 1.0 + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kTol) return h;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double f_upper_tail(double f, double d1, double d2) {
  if (!(f > 0.0)) return 1.0;
  if (std::isinf(f)) return 0.0;
  return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

AnovaRow anova_oneway(std::span<const double> values, std::span<const int> groups,
                      std::string feature) {
  if (values.size() != groups.size()) throw DataError("ANOVA: value and group counts differ");
  std::map<int, std::pair<double, std::size_t>> acc;  // group -> (sum, count)
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw DataError("ANOVA: non-finite value");
    auto& [s, c] = acc[groups[i]];
    s += values[i];
    ++c;
    total += values[i];
  }
  AnovaRow row;
  row.feature = std::move(feature);
  row.groups = acc.size();
  row.n = values.size();
  if (row.groups < 2) throw DataError("ANOVA needs at least two groups");
  if (row.n < 3) throw DataError("ANOVA needs at least three values");

  const double grand = total / static_cast<double>(row.n);
  std::map<int, double> means;
  for (const auto& [g, sc] : acc) {
    const double mean = sc.first / static_cast<double>(sc.second);
    means[g] = mean;
    row.sumsq += static_cast<double>(sc.second) * (mean - grand) * (mean - grand);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - means[groups[i]];
    row.ss_within += d * d;
  }

  const double df_b = static_cast<double>(row.groups - 1);
  const double df_w = static_cast<double>(row.n - row.groups);
  if (row.sumsq == 0.0 && row.ss_within == 0.0) {
    row.degenerate = true;
    return row;  // F = 0, p = 1
  }
  if (df_w == 0.0 || row.ss_within == 0.0) {
    row.f_stat = row.sumsq > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    row.p_value = row.sumsq > 0.0 ? 0.0 : 1.0;
    return row;
  }
  row.f_stat = (row.sumsq / df_b) / (row.ss_within / df_w);
  row.p_value = f_upper_tail(row.f_stat, df_b, df_w);
  return row;
}

std::string anova_table(std::span<const AnovaRow> rows) {
  std::string out = fmt::format("{:<24} {:>14} {:>12} {:>12}\n", "Features", "Sumsq", "F", "P");
  for (const auto& r : rows) {
    out += fmt::format("{:<24} {:>14.6g} {:>12.6g} {:>12.4g}{}\n", r.feature, r.sumsq, r.f_stat,
                       r.p_value, r.degenerate ? "  (constant)" : "");
  }
  return out;
}

ComparisonReport compare_report(std::span<const RunSummary> runs) {
  ComparisonReport rep;
  std::vector<std::string> groups;
  for (const auto& r : runs) {
    if (std::find(groups.begin(), groups.end(), r.group) == groups.end()) groups.push_back(r.group);
  }
  std::stable_sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
    return (a == "All") > (b == "All");
  });
  const bool has_categories = std::any_of(groups.begin(), groups.end(),
                                          [](const auto& g) { return g != "All"; });
  auto averaged = [&](const std::string& g) { return !has_categories || g != "All"; };

  struct Avg {
    double auc = 0.0, accuracy = 0.0, macro_f1 = 0.0;
    int n = 0;
  };
  std::map<std::string, Avg> avg;
  std::map<std::pair<std::string, std::string>, const RunSummary*> cell;
  for (const auto& r : runs) {
    cell[{r.model, r.group}] = &r;
    auto& a = avg[r.model];
    if (averaged(r.group)) {
      a.auc += r.auc;
      a.accuracy += r.cm.accuracy();
      a.macro_f1 += r.metrics.macro_f1;
      ++a.n;
    }
  }
  for (auto& [m, a] : avg) {
    if (a.n > 0) {
      a.auc /= a.n;
      a.accuracy /= a.n;
      a.macro_f1 /= a.n;
    }
    rep.model_order.push_back(m);
  }
  std::stable_sort(rep.model_order.begin(), rep.model_order.end(),
                   [&](const auto& a, const auto& b) { return avg[a].auc > avg[b].auc; });

  rep.text = fmt::format("{:<12}", "Group");
  for (const auto& m : rep.model_order) rep.text += fmt::format(" {:>10}", m);
  rep.text += '\n';
  for (const auto& g : groups) {
    rep.text += fmt::format("{:<12}", g);
    for (const auto& m : rep.model_order) {
      const auto it = cell.find({m, g});
      rep.text += it == cell.end() ? fmt::format(" {:>10}", "-")
                                   : fmt::format(" {:>10.3f}", it->second->auc);
    }
    rep.text += '\n';
  }
  rep.text += fmt::format("{:<12}", "Average");
  for (const auto& m : rep.model_order) rep.text += fmt::format(" {:>10.3f}", avg[m].auc);
  rep.text += "\nAUC: macro one-vs-rest over levels present in the test labels\n";

  for (const auto& m : rep.model_order) {
    for (const auto& g : groups) {
      const auto it = cell.find({m, g});
      if (it == cell.end()) continue;
      const auto& r = *it->second;
      nlohmann::ordered_json j = {{"model", m},
                                  {"group", g},
                                  {"auc", r.auc},
                                  {"accuracy", r.cm.accuracy()},
                                  {"macro_f1", r.metrics.macro_f1}};
      rep.jsonl += j.dump() + '\n';
    }
    const auto& a = avg[m];
    nlohmann::ordered_json j = {{"model", m},
                                {"group", "Average"},
                                {"auc", a.auc},
                                {"accuracy", a.accuracy},
                                {"macro_f1", a.macro_f1}};
    rep.jsonl += j.dump() + '\n';
  }
  return rep;
}

}  // namespace prisk
