#include "divker/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace divker {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Moments {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double v) {
    ++n;
    const double d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (v - mean);
  }
  double se() const {
    if (n < 2) return kNaN;
    return std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n));
  }
};

}  // namespace

MeanSe mean_se(std::span<const double> values) {
  Moments m;
  for (double v : values) m.add(v);
  return {m.n ? m.mean : kNaN, m.se(), m.n};
}

void ConditionalTable::apply_min_count(std::size_t min_count) {
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < min_count) {
      means[i] = kNaN;
      ses[i] = kNaN;
    }
  }
}

int bin_index(double v, double lo, double hi, int n_bins) {
  if (!(v >= lo && v <= hi)) return -1;
  const double width = (hi - lo) / n_bins;
  auto i = static_cast<int>(std::floor((v - lo) / width));
  return std::clamp(i, 0, n_bins - 1);
}

ConditionalTable bin_1d(std::span<const double> x, std::span<const double> payload, double lo,
                        double hi, int n_bins) {
  if (!(hi > lo)) throw ConfigError("bin_1d: need hi > lo");
  if (n_bins < 1) throw ConfigError("bin_1d: need n_bins >= 1");
  if (x.size() != payload.size()) throw ConfigError("bin_1d: size mismatch");

  ConditionalTable t;
  t.mode = ConditionalTable::Mode::Histogram;
  t.total = x.size();
  const double width = (hi - lo) / n_bins;
  std::vector<Moments> acc(n_bins);
  for (std::size_t p = 0; p < x.size(); ++p) {
    const int b = bin_index(x[p], lo, hi, n_bins);
    if (b < 0) {
      ++t.out_of_range;
      continue;
    }
    acc[b].add(payload[p]);
  }
  for (int b = 0; b < n_bins; ++b) {
    t.left.push_back(lo + b * width);
    t.right.push_back(b + 1 == n_bins ? hi : lo + (b + 1) * width);
    t.counts.push_back(acc[b].n);
    t.means.push_back(acc[b].n ? acc[b].mean : kNaN);
    t.ses.push_back(acc[b].n >= 2 ? acc[b].se() : (acc[b].n ? 0.0 : kNaN));
    t.log_density.push_back(
        acc[b].n ? std::log(static_cast<double>(acc[b].n) / (static_cast<double>(t.total) * width))
                 : -std::numeric_limits<double>::infinity());
  }
  return t;
}

std::vector<std::vector<std::size_t>> knn(const Mat& queries, const Mat& points,
                                          std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n == 0) throw ConfigError("knn: empty point set");
  if (k < 1 || k > n) throw ConfigError("knn: need 1 <= k <= number of points");
  if (queries.cols() != points.cols()) throw ConfigError("knn: dimension mismatch");

  std::vector<std::vector<std::size_t>> out(queries.rows());
  std::vector<std::pair<double, std::size_t>> d(n);
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    for (std::size_t p = 0; p < n; ++p)
      d[p] = {(points.row(static_cast<Eigen::Index>(p)) - queries.row(q)).squaredNorm(), p};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    auto& idx = out[q];
    idx.reserve(k);
    for (std::size_t j = 0; j < k; ++j) idx.push_back(d[j].second);
  }
  return out;
}

ConditionalTable knn_table(const Mat& queries, const Mat& points,
                           std::span<const double> payload, std::size_t k) {
  if (payload.size() != static_cast<std::size_t>(points.rows()))
    throw ConfigError("knn_table: payload size mismatch");
  ConditionalTable t;
  t.mode = ConditionalTable::Mode::Knn;
  t.queries = queries;
  t.k = k;
  t.total = payload.size();
  for (const auto& idx : knn(queries, points, k)) {
    Moments m;
    for (auto p : idx) m.add(payload[p]);
    t.counts.push_back(m.n);
    t.means.push_back(m.mean);
    t.ses.push_back(m.se());
    t.log_density.push_back(kNaN);
  }
  return t;
}

void write_table_csv(std::ostream& os, const ConditionalTable& t) {
  os << "bin_left,bin_right,count,mean,se,log_density\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double l = i < t.left.size() ? t.left[i] : kNaN;
    const double r = i < t.right.size() ? t.right[i] : kNaN;
    os << l << ',' << r << ',' << t.counts[i] << ',' << t.means[i] << ',' << t.ses[i] << ','
       << t.log_density[i] << '\n';
  }
}

void write_table_csv(const std::string& path, const ConditionalTable& t) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path);
  write_table_csv(os, t);
}

ConditionalTable read_table_csv(std::istream& is) {
  ConditionalTable t;
  std::string line;
  if (!std::getline(is, line) || line.rfind("bin_left,", 0) != 0)
    throw ConfigError("read_table_csv: missing header");
  auto parse = [](const std::string& cell) {
    // strtod accepts nan/inf spellings produced by the writer
    return std::strtod(cell.c_str(), nullptr);
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string c[6];
    for (auto& cell : c) std::getline(ss, cell, ',');
    t.left.push_back(parse(c[0]));
    t.right.push_back(parse(c[1]));
    t.counts.push_back(static_cast<std::size_t>(std::stoull(c[2])));
    t.means.push_back(parse(c[3]));
    t.ses.push_back(parse(c[4]));
    t.log_density.push_back(parse(c[5]));
    t.total += t.counts.back();
  }
  return t;
}

}  // namespace divker
