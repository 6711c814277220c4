#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lmexam/error.hpp"
#include "lmexam/prompts.hpp"
#include "lmexam/records.hpp"
#include "lmexam/util.hpp"

namespace lmexam {

/// Report rounding: one decimal, halves away from zero.
inline double round1(double v) { return std::round(v * 10.0) / 10.0; }

inline std::string format1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", round1(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Full-mark rates

struct FullMarkReport {
  std::size_t total = 0;
  std::optional<double> overall;                   // percent, absent for no cards
  std::map<CognitiveLevel, double> per_level;      // only non-empty levels
  std::map<CognitiveLevel, std::size_t> level_counts;
};

inline FullMarkReport full_mark_rate(std::span<const std::pair<ScoreCard, CognitiveLevel>> cards) {
  FullMarkReport rep;
  rep.total = cards.size();
  if (cards.empty()) return rep;
  std::size_t full = 0;
  std::map<CognitiveLevel, std::size_t> level_full;
  for (const auto& [card, level] : cards) {
    ++rep.level_counts[level];
    if (card.full_mark()) {
      ++full;
      ++level_full[level];
    }
  }
  rep.overall = 100.0 * static_cast<double>(full) / static_cast<double>(cards.size());
  for (const auto& [level, n] : rep.level_counts)
    rep.per_level[level] = 100.0 * static_cast<double>(level_full[level]) / static_cast<double>(n);
  return rep;
}

// ---------------------------------------------------------------------------
// Dimension means on a shared 0-100 axis

struct DimensionMeans {
  double accuracy = 0;
  double coherence = 0;
  double factuality = 0;
  double comprehensiveness = 0;
  double overall = 0;
};

/// Each dimension's mean divided by its own maximum (3, or 5 for overall).
inline DimensionMeans dimension_means(std::span<const ScoreCard> cards) {
  if (cards.empty()) fail(Errc::EmptyInput, "dimension_means needs at least one scorecard");
  double acc = 0, coh = 0, fac = 0, com = 0, ove = 0;
  for (const auto& c : cards) {
    acc += c.accuracy;
    coh += c.coherence;
    fac += c.factuality;
    com += c.comprehensiveness;
    ove += c.overall;
  }
  const double n = static_cast<double>(cards.size());
  return {acc / n / 3.0 * 100.0, coh / n / 3.0 * 100.0, fac / n / 3.0 * 100.0, com / n / 3.0 * 100.0,
          ove / n / 5.0 * 100.0};
}

// ---------------------------------------------------------------------------
// Win rates

struct WinRateMatrix {
  std::vector<std::string> models;
  std::vector<std::vector<double>> wins;          // wins[i][j]: credit to i against j
  std::vector<std::vector<std::size_t>> counts;   // comparisons between i and j

  explicit WinRateMatrix(std::vector<std::string> m = {}) : models(std::move(m)) {
    const auto n = models.size();
    wins.assign(n, std::vector<double>(n, 0.0));
    counts.assign(n, std::vector<std::size_t>(n, 0));
  }

  std::size_t size() const { return models.size(); }

  std::size_t index_of(const std::string& model) const {
    auto it = std::find(models.begin(), models.end(), model);
    if (it == models.end()) fail(Errc::UnknownModel, "model '" + model + "' is not registered in the matrix");
    return static_cast<std::size_t>(it - models.begin());
  }

  /// Fraction of i's wins against j; absent on the diagonal or with no data.
  std::optional<double> cell(std::size_t i, std::size_t j) const {
    if (i == j || counts[i][j] == 0) return std::nullopt;
    return wins[i][j] / static_cast<double>(counts[i][j]);
  }

  /// Records one comparison where `a` earns `a_credit` in [0,1] against `b`.
  void add(const std::string& a, const std::string& b, double a_credit) {
    const auto i = index_of(a);
    const auto j = index_of(b);
    if (i == j) return;
    wins[i][j] += a_credit;
    wins[j][i] += 1.0 - a_credit;
    ++counts[i][j];
    ++counts[j][i];
  }
};

/// Every ordered pair inside a ranking credits the earlier model with a win.
/// `model_of` maps a response id to its model label.
template <typename ModelOf>
WinRateMatrix win_rate_matrix(std::vector<std::string> models, std::span<const Ranking> rankings, ModelOf&& model_of) {
  WinRateMatrix m(std::move(models));
  for (const auto& r : rankings)
    for (std::size_t i = 0; i < r.order.size(); ++i)
      for (std::size_t j = i + 1; j < r.order.size(); ++j) m.add(model_of(r.order[i]), model_of(r.order[j]), 1.0);
  return m;
}

/// Outcome fractions accumulate directly; a 0.5 tie gives half a win to each.
template <typename ModelOf>
WinRateMatrix win_rate_matrix(std::vector<std::string> models, std::span<const PairwiseOutcome> outcomes,
                              ModelOf&& model_of) {
  WinRateMatrix m(std::move(models));
  for (const auto& o : outcomes) m.add(model_of(o.first), model_of(o.second), o.first_win_fraction);
  return m;
}

/// Mean of each row over opponents with data. Rows without any counted cell
/// are left empty and reported through the warning sink.
inline std::vector<std::optional<double>> average_win_rate(const WinRateMatrix& m) {
  if (m.size() < 2) fail(Errc::DegenerateMatrix, "average win rate needs at least two models");
  std::vector<std::optional<double>> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    double sum = 0;
    std::size_t k = 0;
    for (std::size_t j = 0; j < m.size(); ++j)
      if (auto c = m.cell(i, j)) {
        sum += *c;
        ++k;
      }
    if (k == 0)
      warn("model '" + m.models[i] + "' has no counted comparisons; excluded from average win rate");
    else
      out[i] = sum / static_cast<double>(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Examinee x examiner tables

struct ScoreTable {
  std::vector<std::string> examinees;  // rows
  std::vector<std::string> examiners;  // columns
  std::vector<std::vector<std::optional<double>>> values;

  ScoreTable(std::vector<std::string> rows, std::vector<std::string> cols)
      : examinees(std::move(rows)), examiners(std::move(cols)) {
    values.assign(examinees.size(), std::vector<std::optional<double>>(examiners.size()));
  }
};

struct RowAverages {
  double avg = 0;
  double avg_weight = 0;
};

/// AVG is the plain mean of a row's present cells. AVG_weight first scales
/// every column so its maximum becomes 100.
inline std::vector<RowAverages> weighted_column_average(const ScoreTable& table) {
  std::vector<double> col_max(table.examiners.size(), 0.0);
  for (std::size_t c = 0; c < table.examiners.size(); ++c) {
    for (const auto& row : table.values)
      if (row[c]) col_max[c] = std::max(col_max[c], *row[c]);
    if (!(col_max[c] > 0.0)) fail(Errc::ZeroColumn, "column '" + table.examiners[c] + "' has no positive value");
  }
  std::vector<RowAverages> out;
  out.reserve(table.values.size());
  for (const auto& row : table.values) {
    double sum = 0, scaled = 0;
    std::size_t k = 0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (!row[c]) continue;
      sum += *row[c];
      scaled += *row[c] * 100.0 / col_max[c];
      ++k;
    }
    if (k == 0) fail(Errc::EmptyInput, "score table row has no values");
    out.push_back({sum / static_cast<double>(k), scaled / static_cast<double>(k)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rank correlation

namespace detail {

inline void check_pair_lengths(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    fail(Errc::LengthMismatch, "vectors differ in length (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
  if (x.size() < 2) fail(Errc::EmptyInput, "correlation needs at least two observations");
}

/// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Merge sort on `v` counting inversions (pairs out of order).
inline std::uint64_t count_swaps(std::vector<double>& v) {
  std::vector<double> buf(v.size());
  std::uint64_t swaps = 0;
  for (std::size_t width = 1; width < v.size(); width *= 2) {
    for (std::size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, v.size());
      const std::size_t hi = std::min(lo + 2 * width, v.size());
      std::size_t l = lo, r = mid, k = lo;
      while (l < mid && r < hi) {
        if (v[r] < v[l]) {
          swaps += mid - l;
          buf[k++] = v[r++];
        } else {
          buf[k++] = v[l++];
        }
      }
      while (l < mid) buf[k++] = v[l++];
      while (r < hi) buf[k++] = v[r++];
    }
    std::swap(v, buf);
  }
  return swaps;
}

/// Sum of t(t-1)/2 over runs of equal adjacent values.
template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq&& equal_to_prev) {
  std::uint64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= n; ++i) {
    if (i < n && equal_to_prev(i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

}  // namespace detail

/// Pearson correlation of average ranks.
inline double spearman_rho(std::span<const double> x, std::span<const double> y) {
  detail::check_pair_lengths(x, y);
  const auto rx = detail::average_ranks(x);
  const auto ry = detail::average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(Errc::ConstantInput, "Spearman rho is undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  detail::check_pair_lengths(x, y);
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });

  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t ties_x = detail::tied_pairs(n, [&](std::size_t i) { return x[idx[i]] == x[idx[i - 1]]; });
  const std::uint64_t ties_xy = detail::tied_pairs(
      n, [&](std::size_t i) { return x[idx[i]] == x[idx[i - 1]] && y[idx[i]] == y[idx[i - 1]]; });

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  const std::uint64_t swaps = detail::count_swaps(ys);  // ys is now sorted
  const std::uint64_t ties_y = detail::tied_pairs(n, [&](std::size_t i) { return ys[i] == ys[i - 1]; });

  if (ties_x == n0 || ties_y == n0) fail(Errc::ConstantInput, "Kendall tau is undefined for a constant vector");
  const double s = static_cast<double>(n0) - static_cast<double>(ties_x) - static_cast<double>(ties_y) +
                   static_cast<double>(ties_xy) - 2.0 * static_cast<double>(swaps);
  const double denom = std::sqrt(static_cast<double>(n0 - ties_x) * static_cast<double>(n0 - ties_y));
  return std::clamp(s / denom, -1.0, 1.0);
}

template <typename T>
double pairwise_accuracy(std::span<const T> predicted, std::span<const T> human) {
  if (predicted.size() != human.size())
    fail(Errc::LengthMismatch, "predicted and human label lists differ in length");
  if (predicted.empty()) fail(Errc::EmptyInput, "pairwise accuracy needs at least one label");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) agree += predicted[i] == human[i] ? 1 : 0;
  return static_cast<double>(agree) / static_cast<double>(predicted.size());
}

struct CorrelationReport {
  double spearman_rho = 0;
  double kendall_tau = 0;
  std::optional<double> pairwise_accuracy;
  std::size_t n_samples = 0;
  std::size_t n_pairs = 0;
};

}  // namespace lmexam
