#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace divker {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Parameter vector gamma, read-only view.
using ParamView = std::span<const double>;

/// A perturbation direction in parameter space (length N_gamma).
using Direction = std::vector<double>;

/// Invalid model construction or evaluation (unknown family, bad
/// dimension, non-positive diffusion).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: config files, option values, inconsistent sizes.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure of a run: blow-up budget exceeded, singular
/// Jacobians, non-finite gradients.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unit coordinate direction e_k in an n-dimensional parameter space.
inline Direction coordinate_direction(std::size_t n, std::size_t k) {
  Direction d(n, 0.0);
  d.at(k) = 1.0;
  return d;
}

/// All coordinate directions e_0 .. e_{n-1}.
inline std::vector<Direction> coordinate_directions(std::size_t n) {
  std::vector<Direction> dirs;
  dirs.reserve(n);
  for (std::size_t k = 0; k < n; ++k) dirs.push_back(coordinate_direction(n, k));
  return dirs;
}

}  // namespace divker
