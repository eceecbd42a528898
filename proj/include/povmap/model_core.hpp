#pragma once

// Unnormalized log-posteriors of the area-level models over unconstrained
// parameter vectors, with exact analytic gradients.
//
// Univariate layout (FH, NL, NL_RS, NL_PLUGIN):
//   [gamma_1..gamma_p, log sigma_v, phi_1..phi_m]
//   phi_i = pi_i for FH and logit(pi_i) otherwise.
// Multivariate layout (MV_LOGIT):
//   [beta_1..beta_q, log sigma, logit rho_(1,2), logit rho_(1,3), ..., Lambda_(1,1..K), ..., Lambda_(m,1..K)]
//   rho entries follow the row-major upper triangle; Lambda_i = logit(theta_i).

#include "povmap/types.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace povmap {

enum class ModelFamily { kFH, kNL, kNLRS, kNLPlugin, kMVLogit };

std::string to_string(ModelFamily family);
ModelFamily parse_family(std::string_view name);
bool is_univariate(ModelFamily family);

struct Priors {
  double coeff_scale = 5.0;  // N(0, coeff_scale^2) on regression coefficients
  double sd_scale = 5.0;     // Half-Cauchy(0, sd_scale) on sigma_v / sigma
  bool zero_correlation = false;  // MV_LOGIT only: fix R = I instead of Uniform(0,1) correlations
};

struct LogDensityResult {
  double value = 0.0;
  VectorXd gradient;
};

/// Inputs shared by the four univariate families. Unused members may be left empty:
/// FH/NL read D, NL_RS reads n_adjusted and deff, NL_PLUGIN reads plugin, n_adjusted and deff.
struct AreaLevelData {
  VectorXd z;
  VectorXd D;
  VectorXd n_adjusted;
  double deff = 1.0;
  MatrixXd X;  // m x p, first column the intercept
  std::optional<VectorXd> plugin;
};

struct MultivariateData {
  int K = 0;
  std::vector<std::optional<VectorXd>> y;      // absent for areas without poor respondents
  std::vector<std::optional<MatrixXd>> sigma;  // paired with y
  std::vector<MatrixXd> X;                     // K x q per area
};

/// X_i = 1_K x_i' when dimension_specific is false, otherwise the block-diagonal K x (K p) form.
std::vector<MatrixXd> make_mv_design(const MatrixXd& covariates, int K, bool dimension_specific);

class Model {
 public:
  virtual ~Model() = default;

  virtual ModelFamily family() const = 0;
  virtual int dim() const = 0;
  virtual std::vector<std::string> parameter_names() const = 0;

  /// Throws NumericalError("invalid parameter point") on non-finite input.
  /// Returns value -inf (zero gradient) outside the support, e.g. a non-PD correlation matrix.
  virtual LogDensityResult log_density(const VectorXd& params) const = 0;

  /// Level-1 log density of every observed area at one parameter point.
  virtual VectorXd pointwise_loglik(const VectorXd& params) const = 0;
  /// Indices of the areas that appear as columns in pointwise_loglik.
  virtual std::vector<int> observed_areas() const = 0;

  /// Constrained quantities reported per draw (coefficients, scales, correlations, area means).
  virtual std::vector<std::string> output_names() const = 0;
  virtual VectorXd outputs(const VectorXd& params) const = 0;
};

class UnivariateModel final : public Model {
 public:
  UnivariateModel(ModelFamily family, AreaLevelData data, Priors priors = {});

  ModelFamily family() const override { return family_; }
  int dim() const override { return p_ + 1 + m_; }
  std::vector<std::string> parameter_names() const override;
  LogDensityResult log_density(const VectorXd& params) const override;
  VectorXd pointwise_loglik(const VectorXd& params) const override;
  std::vector<int> observed_areas() const override;
  std::vector<std::string> output_names() const override;
  VectorXd outputs(const VectorXd& params) const override;

  int areas() const { return m_; }
  int coefficients() const { return p_; }
  /// The fixed sampling variance for FH/NL/NL_PLUGIN.
  const VectorXd& fixed_variance() const { return D_; }

 private:
  // level-1 value and derivative with respect to phi_i
  void level1(int i, double phi, double& value, double& dphi) const;

  ModelFamily family_;
  AreaLevelData data_;
  Priors priors_;
  int m_ = 0;
  int p_ = 0;
  VectorXd D_;
};

class MultivariateLogitModel final : public Model {
 public:
  MultivariateLogitModel(MultivariateData data, Priors priors = {});

  ModelFamily family() const override { return ModelFamily::kMVLogit; }
  int dim() const override { return q_ + 1 + n_rho_ + m_ * K_; }
  std::vector<std::string> parameter_names() const override;
  LogDensityResult log_density(const VectorXd& params) const override;
  VectorXd pointwise_loglik(const VectorXd& params) const override;
  std::vector<int> observed_areas() const override;
  std::vector<std::string> output_names() const override;
  VectorXd outputs(const VectorXd& params) const override;

  int areas() const { return m_; }
  int dimensions() const { return K_; }
  int coefficients() const { return q_; }
  int correlations() const { return n_rho_; }

 private:
  MultivariateData data_;
  Priors priors_;
  int m_ = 0;
  int K_ = 0;
  int q_ = 0;
  int n_rho_ = 0;
  std::vector<std::optional<MatrixXd>> sigma_inv_;
  std::vector<double> sigma_logdet_;
};

struct CorrelationMatrix {
  MatrixXd R;
  bool is_pd = false;
};

/// Unit-diagonal matrix filled from the row-major upper triangle.
CorrelationMatrix build_correlation(const VectorXd& rho, int K);
int correlation_count(int K);

LogDensityResult logpost_fh(const VectorXd& params, const AreaLevelData& data, const Priors& priors = {});
LogDensityResult logpost_nl(const VectorXd& params, const AreaLevelData& data, const Priors& priors = {});
LogDensityResult logpost_nl_rs(const VectorXd& params, const AreaLevelData& data, const Priors& priors = {});
LogDensityResult logpost_nl_plugin(const VectorXd& params, const AreaLevelData& data, const Priors& priors = {});
LogDensityResult logpost_mv_logit(const VectorXd& params, const MultivariateData& data, const Priors& priors = {});

/// Draws stacked row-wise (R x dim). Returns R x (#observed areas).
MatrixXd pointwise_loglik(const Model& model, const MatrixXd& draws);

std::unique_ptr<Model> make_univariate(ModelFamily family, AreaLevelData data, Priors priors = {});

}  // namespace povmap
