#pragma once

#include "divker/model.hpp"
#include "divker/rng.hpp"
#include "divker/types.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace divker {

struct PathConfig {
  double dt = 0.01;
  int n_steps = 1;             ///< N, so T = N dt
  std::size_t n_paths = 1;     ///< L
  std::uint64_t seed = 1;
  double alpha = 10.0;         ///< constant alpha (1/time)
  double t0 = 0.0;
  std::vector<Direction> directions;  ///< perturbation directions, one accumulator each
  int workers = 1;
  bool store_trajectories = false;
  double max_blowup_fraction = 0.01;

  double horizon() const { return t0 + dt * n_steps; }
  /// Throws ConfigError on dt <= 0, n_steps < 1, n_paths < 1, alpha < 0.
  void validate() const;
};

/// Brownian increments of one path, rows are Delta B_n ~ N(0, dt I).
using BrownianIncrements = Mat;

/// Deterministic in all arguments; the same stream drives simulate_ensemble.
BrownianIncrements generate_increments(std::uint64_t seed, std::uint64_t path_index,
                                       int n_steps, int dim, double dt);

struct PathState {
  Vec x;
  Vec nu;
  std::vector<double> acc;  ///< one running sum per perturbation direction
  double t = 0.0;
  int step = 0;
  std::size_t path_index = 0;
  bool failed = false;
};

/// Euler-Maruyama step x + F dt + sigma dB with coefficients at the left
/// endpoint. Throws NumericalError when the result is non-finite or
/// exceeds the blow-up threshold.
Vec em_step(const Vec& x, double t, const Vec& dB, double dt, const ModelInstance& model);

/// Blow-up threshold on |x|_inf.
inline constexpr double kBlowupThreshold = 1e8;

bool state_is_sane(const PathState& s);

/// Per-path callbacks. `step` runs before the state update of step n, with
/// the bundle evaluated at (t_n, x_n); it may update `nu` and `acc`.
class PathHook {
 public:
  virtual ~PathHook() = default;
  /// Called once after x_0 is drawn, nu = score0(x_0), acc = dlog h_0(x_0).
  virtual void begin(PathState&) {}
  virtual void step(PathState& state, const DerivativeBundle& bundle, const Vec& dB,
                    double dt) = 0;
};

/// One hook per worker; hooks may keep scratch state.
using HookFactory = std::function<std::unique_ptr<PathHook>()>;

struct PathEnsemble {
  int dim = 0;
  std::size_t n_directions = 0;
  double horizon = 0.0;
  Mat x0;     ///< L x M
  Mat x;      ///< L x M, terminal states
  Mat nu;     ///< L x M, terminal covectors
  Mat acc;    ///< L x K, terminal accumulators (include dlog h_0)
  std::vector<std::uint8_t> valid;
  std::size_t n_failed = 0;
  /// Per path (N+1) x M when trajectories are stored.
  std::vector<Mat> trajectories;

  std::size_t size() const { return valid.size(); }
  std::size_t n_valid() const { return size() - n_failed; }
};

/// Runs L independent paths. Results are bitwise identical for any worker
/// count. Throws NumericalError when more than max_blowup_fraction of the
/// paths blow up.
PathEnsemble simulate_ensemble(const ModelInstance& model, const PathConfig& config,
                               const HookFactory& hooks = {});

/// Splits [0, n) over `workers` threads; fn(begin, end) must only write
/// disjoint, index-addressed outputs.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t)>& fn);

/// Worker count from the DIVKER_WORKERS environment variable, or 1.
int default_workers();

}  // namespace divker
