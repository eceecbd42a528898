#pragma once

// Split R-hat, effective sample size and Monte Carlo standard error.
// Draws are passed as (draws x chains) matrices.

#include "povmap/hmc.hpp"
#include "povmap/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace povmap {

/// Biased (1/n) autocovariance at every lag, computed by FFT.
VectorXd autocovariance(const VectorXd& x);

/// Split-chain potential scale reduction. std::nullopt when the within-chain variance is zero.
std::optional<double> split_rhat(const MatrixXd& chains);

/// Split-chain ESS with Geyer's initial positive and monotone sequence truncation.
/// Capped at twice the number of draws. std::nullopt for constant chains.
std::optional<double> effective_sample_size(const MatrixXd& chains);

struct ParameterDiagnostics {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double mcse = 0.0;  // sd / sqrt(ess); zero for constant draws
  std::optional<double> rhat;
  std::optional<double> ess;
};

ParameterDiagnostics diagnose(const MatrixXd& chains, std::string name = {});
std::vector<ParameterDiagnostics> diagnose(const PosteriorDraws& draws);

inline constexpr double kRhatWarning = 1.05;

}  // namespace povmap
