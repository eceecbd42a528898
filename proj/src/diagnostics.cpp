#include "povmap/diagnostics.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <complex>

namespace povmap {

namespace {

void require_shape(const MatrixXd& chains) {
  if (chains.cols() < 1 || chains.rows() < 4) throw DataError("diagnostics need at least 4 draws per chain");
}

// Each chain split into a first and second half; the middle draw is dropped for odd lengths.
MatrixXd split_chains(const MatrixXd& chains) {
  const Eigen::Index n = chains.rows();
  const Eigen::Index half = n / 2;
  MatrixXd out(half, 2 * chains.cols());
  for (Eigen::Index c = 0; c < chains.cols(); ++c) {
    out.col(2 * c) = chains.col(c).head(half);
    out.col(2 * c + 1) = chains.col(c).tail(half);
  }
  return out;
}

}  // namespace

VectorXd autocovariance(const VectorXd& x) {
  const Eigen::Index n = x.size();
  Eigen::FFT<double> fft;
  Eigen::Index padded = 1;
  while (padded < 2 * n) padded *= 2;
  std::vector<double> centered(padded, 0.0);
  const double mean = x.mean();
  for (Eigen::Index i = 0; i < n; ++i) centered[i] = x(i) - mean;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, centered);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> back;
  fft.inv(back, freq);
  VectorXd acov(n);
  for (Eigen::Index i = 0; i < n; ++i) acov(i) = back[i] / static_cast<double>(n);
  return acov;
}

std::optional<double> split_rhat(const MatrixXd& chains) {
  require_shape(chains);
  const MatrixXd split = split_chains(chains);
  const auto n = static_cast<double>(split.rows());
  const VectorXd means = split.colwise().mean();
  VectorXd vars(split.cols());
  for (Eigen::Index c = 0; c < split.cols(); ++c) vars(c) = (split.col(c).array() - means(c)).square().sum() / (n - 1.0);
  const double W = vars.mean();
  if (!(W > 0.0)) return std::nullopt;
  const double grand = means.mean();
  const double B = n * (means.array() - grand).square().sum() / static_cast<double>(split.cols() - 1);
  const double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

std::optional<double> effective_sample_size(const MatrixXd& chains) {
  require_shape(chains);
  const MatrixXd split = split_chains(chains);
  const Eigen::Index n = split.rows();
  const Eigen::Index M = split.cols();
  const auto nd = static_cast<double>(n);

  MatrixXd acov(n, M);
  VectorXd means(M);
  VectorXd vars(M);
  for (Eigen::Index c = 0; c < M; ++c) {
    acov.col(c) = autocovariance(split.col(c));
    means(c) = split.col(c).mean();
    vars(c) = acov(0, c) * nd / (nd - 1.0);
  }
  const double mean_var = vars.mean();
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (M > 1) var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(M - 1);
  if (!(mean_var > 0.0) || !(var_plus > 0.0)) return std::nullopt;

  auto rho_at = [&](Eigen::Index lag) { return 1.0 - (mean_var - acov.row(lag).mean()) / var_plus; };

  VectorXd rho = VectorXd::Zero(n);
  rho(0) = 1.0;
  double rho_even = 1.0;
  double rho_odd = rho_at(1);
  rho(1) = rho_odd;
  Eigen::Index s = 1;
  while (s < n - 4 && rho_even + rho_odd > 0.0) {
    rho_even = rho_at(s + 1);
    rho_odd = rho_at(s + 2);
    if (rho_even + rho_odd >= 0.0) {
      rho(s + 1) = rho_even;
      rho(s + 2) = rho_odd;
    }
    s += 2;
  }
  const Eigen::Index max_s = s;
  if (rho_even > 0.0 && max_s + 1 < n) rho(max_s + 1) = rho_even;

  // Monotone sequence: pair sums may not increase.
  for (Eigen::Index t = 1; t <= max_s - 3; t += 2) {
    if (rho(t + 1) + rho(t + 2) > rho(t - 1) + rho(t)) {
      rho(t + 1) = (rho(t - 1) + rho(t)) / 2.0;
      rho(t + 2) = rho(t + 1);
    }
  }

  const double total = nd * static_cast<double>(M);
  double tau = -1.0 + 2.0 * rho.head(std::min(max_s, n)).sum();
  if (max_s + 1 < n) tau += rho(max_s + 1);
  tau = std::max(tau, 0.5);
  return total / tau;
}

ParameterDiagnostics diagnose(const MatrixXd& chains, std::string name) {
  ParameterDiagnostics d;
  d.name = std::move(name);
  const auto N = static_cast<double>(chains.size());
  d.mean = chains.mean();
  d.sd = N > 1 ? std::sqrt((chains.array() - d.mean).square().sum() / (N - 1.0)) : 0.0;
  if (chains.rows() >= 4) {
    d.rhat = split_rhat(chains);
    d.ess = effective_sample_size(chains);
  }
  d.mcse = d.ess ? d.sd / std::sqrt(*d.ess) : 0.0;
  return d;
}

std::vector<ParameterDiagnostics> diagnose(const PosteriorDraws& draws) {
  std::vector<ParameterDiagnostics> out;
  out.reserve(draws.parameter_names.size());
  for (int j = 0; j < draws.dim(); ++j) out.push_back(diagnose(draws.parameter(j), draws.parameter_names[j]));
  return out;
}

}  // namespace povmap
