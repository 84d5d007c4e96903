#pragma once

#include "divker/types.hpp"

#include <cmath>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace divker {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
  std::size_t count = 0;
};

/// Sample mean and standard error sd / sqrt(n) (sd with n - 1).
MeanSe mean_se(std::span<const double> values);

struct BinSpec {
  double lo = -2.0;
  double hi = 2.0;
  int n_bins = 10;
  std::size_t min_count = 30;
};

/// Conditional means E[payload | x in bin] (histogram mode) or
/// E[payload | x near query] (kNN mode).
struct ConditionalTable {
  enum class Mode { Histogram, Knn };

  Mode mode = Mode::Histogram;
  std::vector<double> left, right;  ///< bin edges (histogram mode)
  Mat queries;                      ///< query points (kNN mode)
  std::size_t k = 0;
  std::vector<std::size_t> counts;
  std::vector<double> means, ses;
  std::vector<double> log_density;  ///< log(count / (L width)); -inf if empty
  std::size_t out_of_range = 0;
  std::size_t total = 0;

  std::size_t size() const { return counts.size(); }
  double center(std::size_t i) const { return 0.5 * (left[i] + right[i]); }
  bool empty(std::size_t i) const { return std::isnan(means[i]); }
  /// Marks bins with fewer than `min_count` samples as empty (NaN mean/SE).
  void apply_min_count(std::size_t min_count);
};

/// Index of the bin containing v, or -1 outside [lo, hi]. Bins are
/// [left, right) except the last, which is closed.
int bin_index(double v, double lo, double hi, int n_bins);

/// Equal-width histogram of `x` with per-bin mean/SE of `payload`.
ConditionalTable bin_1d(std::span<const double> x, std::span<const double> payload,
                        double lo, double hi, int n_bins);

/// Indices of the k nearest rows of `points` for each row of `queries`
/// (Euclidean, exact). Ties go to the lower index. Neighbors are sorted by
/// distance.
std::vector<std::vector<std::size_t>> knn(const Mat& queries, const Mat& points,
                                          std::size_t k);

/// kNN conditional mean of `payload` at each query.
ConditionalTable knn_table(const Mat& queries, const Mat& points,
                           std::span<const double> payload, std::size_t k);

/// CSV columns: bin_left,bin_right,count,mean,se,log_density.
void write_table_csv(std::ostream& os, const ConditionalTable& table);
void write_table_csv(const std::string& path, const ConditionalTable& table);
/// Reads back the CSV written by write_table_csv (histogram mode).
ConditionalTable read_table_csv(std::istream& is);

}  // namespace divker
