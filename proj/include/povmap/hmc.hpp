#pragma once

// Hamiltonian Monte Carlo with multinomial no-U-turn trajectories, dual-averaging
// step-size adaptation and a windowed diagonal metric estimate.

#include "povmap/model_core.hpp"
#include "povmap/types.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace povmap {

using LogDensityFn = std::function<LogDensityResult(const VectorXd&)>;

struct SamplerConfig {
  int chains = 4;
  int iterations = 10000;  // per chain, warmup included
  int warmup = 5000;
  std::uint64_t seed = 20240101;
  double target_accept = 0.8;
  int max_leapfrog = 1024;  // caps the trajectory at 2^floor(log2(max_leapfrog)) steps
  double init_radius = 2.0;
  bool nuts = true;         // false: fixed-length trajectories of fixed_steps leapfrog steps
  int fixed_steps = 16;
  int threads = 0;          // 0 means one thread per chain

  void validate() const;
  int post_warmup() const { return iterations - warmup; }
};

struct PosteriorDraws {
  std::vector<MatrixXd> chains;  // one (post-warmup iterations x dim) block per chain
  std::vector<std::string> parameter_names;
  std::vector<int> divergences;
  std::vector<double> step_size;
  std::vector<VectorXd> inv_metric;  // diagonal inverse mass matrix per chain
  std::vector<double> mean_accept;

  int num_chains() const { return static_cast<int>(chains.size()); }
  int draws_per_chain() const { return chains.empty() ? 0 : static_cast<int>(chains.front().rows()); }
  int dim() const { return chains.empty() ? 0 : static_cast<int>(chains.front().cols()); }
  int total_divergences() const;

  /// All chains stacked in chain order (R x dim).
  MatrixXd stacked() const;
  /// One parameter as a (draws x chains) matrix.
  MatrixXd parameter(int index) const;
  int index_of(const std::string& name) const;

  /// Applies fn to every draw row, producing a new set of draws with the given names.
  PosteriorDraws map(const std::function<VectorXd(const VectorXd&)>& fn, std::vector<std::string> names) const;
};

/// Per-chain generator: mt19937_64 seeded through seed_seq{seed low, seed high, chain, stream}.
std::mt19937_64 make_chain_rng(std::uint64_t seed, int chain, int stream = 0);

PosteriorDraws sample(const LogDensityFn& target, int dim, const SamplerConfig& config,
                      std::vector<std::string> parameter_names = {});

PosteriorDraws sample(const Model& model, const SamplerConfig& config);

struct GradientCheckReport {
  double max_rel_error = 0.0;
  int point = -1;
  int coordinate = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central finite differences with step h per coordinate. Errors are measured as
/// |analytic - numeric| / max(|numeric|, 1).
GradientCheckReport gradient_check(const LogDensityFn& target, const std::vector<VectorXd>& points, double h = 1e-5);

/// Leapfrog integration with a diagonal inverse metric; exposed for reversibility checks.
struct PhasePoint {
  VectorXd q;
  VectorXd p;
  double logp = 0.0;
  VectorXd grad;
};

void leapfrog(const LogDensityFn& target, const VectorXd& inv_metric, double step, PhasePoint& z);

}  // namespace povmap
