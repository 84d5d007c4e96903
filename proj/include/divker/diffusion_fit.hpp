#pragma once

#include "divker/linresp.hpp"
#include "divker/model.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace divker {

struct FitConfig {
  std::string model = "diffproto1d";
  int dim = 1;
  std::vector<double> gamma0;
  std::vector<double> gamma_true;  ///< empty when the data come from a file
  std::size_t n_data = 200;
  std::size_t n_paths = 200;       ///< L
  double eta = 1.0;
  std::size_t n_neighbors = 5;
  int n_updates = 10;
  double dt = 0.01;
  double horizon = 1.0;            ///< T
  double alpha = 10.0;
  std::uint64_t seed = 1;
  int workers = 1;

  int n_steps() const;
  void validate() const;
};

struct FitRecord {
  int iteration = 0;
  std::vector<double> gamma;
  std::vector<double> gradient;
  std::vector<double> gradient_se;
  double distance = -1.0;  ///< |gamma - gamma_true|, -1 when unknown
  double wall_seconds = 0.0;
};

struct FitHistory {
  std::vector<FitRecord> records;  ///< n_updates + 1 entries

  /// Index of the record with the smallest distance to the truth.
  std::size_t best_index() const;
};

/// Terminal states of `n_data` independent paths of `model` at its current
/// parameters (rows of the returned matrix).
Mat generate_dataset(const ModelInstance& model, std::size_t n_data, double dt, int n_steps,
                     std::uint64_t seed, int workers = 1);

/// Header y0..y{M-1}, one row per point.
void write_dataset_csv(std::ostream& os, const Mat& data);
Mat read_dataset_csv(std::istream& is);

struct KlGradient {
  std::vector<double> value;
  std::vector<double> se;  ///< spread over data points / sqrt(N_data)
};

/// -1/N_data sum_k 1/N_nb sum_{l in N(y_k)} S_l for every accumulator column
/// of the ensemble. Invalid paths are excluded from the neighbor search.
KlGradient kl_gradient(const Mat& data, const PathEnsemble& ens, std::size_t n_neighbors);

/// Gradient descent gamma <- gamma - eta grad with a fresh L-path ensemble at
/// every iterate. Throws NumericalError on a non-finite gradient.
FitHistory fit(const FitConfig& config, const Mat& data);

/// Generates the dataset from gamma_true and fits.
FitHistory fit(const FitConfig& config);

/// CSV columns: iteration, gamma_*, grad_*, distance, wall_seconds.
void write_history_csv(std::ostream& os, const FitHistory& history);

}  // namespace divker
