#include "povmap/model_core.hpp"

#include <fmt/format.h>

#include <limits>

namespace povmap {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_finite(const VectorXd& params, int expected) {
  if (params.size() != expected)
    throw NumericalError(fmt::format("invalid parameter point: expected {} entries, got {}", expected, params.size()));
  if (!params.allFinite()) throw NumericalError("invalid parameter point");
}

double normal_prior(const VectorXd& coeff, double scale, Eigen::Ref<VectorXd> grad) {
  const double s2 = scale * scale;
  grad += -coeff / s2;
  return static_cast<double>(coeff.size()) * (-kLogSqrtTwoPi - std::log(scale)) - 0.5 * coeff.squaredNorm() / s2;
}

// Half-Cauchy(0, scale) on sigma = exp(u), including the log-Jacobian u.
double half_cauchy_log_scale(double u, double scale, double& dudu) {
  const double ratio = std::exp(u) / scale;
  const double r2 = ratio * ratio;
  dudu += 1.0 - 2.0 * r2 / (1.0 + r2);
  return std::log(2.0 / (kPi * scale)) - std::log1p(r2) + u;
}

}  // namespace

std::string to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::kFH: return "FH";
    case ModelFamily::kNL: return "NL";
    case ModelFamily::kNLRS: return "NL_RS";
    case ModelFamily::kNLPlugin: return "NL_PLUGIN";
    case ModelFamily::kMVLogit: return "MV_LOGIT";
  }
  return "?";
}

ModelFamily parse_family(std::string_view name) {
  if (name == "FH") return ModelFamily::kFH;
  if (name == "NL") return ModelFamily::kNL;
  if (name == "NL_RS") return ModelFamily::kNLRS;
  if (name == "NL_PLUGIN") return ModelFamily::kNLPlugin;
  if (name == "MV_LOGIT") return ModelFamily::kMVLogit;
  throw UsageError(fmt::format("unknown model family '{}' (expected FH, NL, NL_RS, NL_PLUGIN or MV_LOGIT)", name));
}

bool is_univariate(ModelFamily family) { return family != ModelFamily::kMVLogit; }

int correlation_count(int K) { return K * (K - 1) / 2; }

CorrelationMatrix build_correlation(const VectorXd& rho, int K) {
  if (rho.size() != correlation_count(K))
    throw UsageError(fmt::format("{} correlations given, K = {} needs {}", rho.size(), K, correlation_count(K)));
  CorrelationMatrix out;
  out.R = MatrixXd::Identity(K, K);
  int idx = 0;
  for (int k = 0; k < K; ++k) {
    for (int k2 = k + 1; k2 < K; ++k2) {
      out.R(k, k2) = out.R(k2, k) = rho(idx++);
    }
  }
  Eigen::LLT<MatrixXd> llt(out.R);
  out.is_pd = llt.info() == Eigen::Success;
  return out;
}

std::vector<MatrixXd> make_mv_design(const MatrixXd& covariates, int K, bool dimension_specific) {
  const auto m = covariates.rows();
  const auto p = covariates.cols();
  std::vector<MatrixXd> X(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    if (dimension_specific) {
      X[i] = MatrixXd::Zero(K, K * p);
      for (int k = 0; k < K; ++k) X[i].block(k, k * p, 1, p) = covariates.row(i);
    } else {
      X[i] = covariates.row(i).replicate(K, 1);
    }
  }
  return X;
}

// ---------------------------------------------------------------------------
// Univariate families

UnivariateModel::UnivariateModel(ModelFamily family, AreaLevelData data, Priors priors)
    : family_(family), data_(std::move(data)), priors_(priors) {
  if (!is_univariate(family)) throw UsageError("UnivariateModel: MV_LOGIT is not a univariate family");
  m_ = static_cast<int>(data_.z.size());
  p_ = static_cast<int>(data_.X.cols());
  if (m_ == 0) throw DataError("model needs at least one area");
  if (data_.X.rows() != m_) throw DataError("covariate matrix rows do not match the number of areas");
  if (p_ > m_) throw DataError("more covariates than areas");
  if (!data_.z.allFinite()) throw DataError("direct estimates must be finite");

  switch (family_) {
    case ModelFamily::kFH:
    case ModelFamily::kNL:
      if (data_.D.size() != m_ || !(data_.D.array() > 0.0).all())
        throw DataError("sampling variances D_i must be positive for every area");
      D_ = data_.D;
      break;
    case ModelFamily::kNLRS:
      if (data_.n_adjusted.size() != m_ || !(data_.n_adjusted.array() > 0.0).all())
        throw DataError("adjusted sample sizes must be positive for every area");
      if (!(data_.deff > 0.0)) throw DataError("design effect must be positive");
      break;
    case ModelFamily::kNLPlugin: {
      if (!data_.plugin || data_.plugin->size() != m_) throw DataError("NL_PLUGIN needs one plugin estimate per area");
      if (data_.n_adjusted.size() != m_ || !(data_.n_adjusted.array() > 0.0).all())
        throw DataError("adjusted sample sizes must be positive for every area");
      if (!(data_.deff > 0.0)) throw DataError("design effect must be positive");
      const VectorXd& pi = *data_.plugin;
      if (!((pi.array() > 0.0) && (pi.array() < 1.0)).all())
        throw DataError("plugin estimate outside (0, 1)");
      D_ = (pi.array() * (1.0 - pi.array()) * data_.deff / data_.n_adjusted.array()).matrix();
      break;
    }
    case ModelFamily::kMVLogit:
      break;
  }
}

std::vector<std::string> UnivariateModel::parameter_names() const {
  std::vector<std::string> names;
  for (int j = 0; j < p_; ++j) names.push_back(fmt::format("gamma[{}]", j + 1));
  names.emplace_back("log_sigma_v");
  for (int i = 0; i < m_; ++i) names.push_back(fmt::format("phi[{}]", i + 1));
  return names;
}

std::vector<std::string> UnivariateModel::output_names() const {
  std::vector<std::string> names;
  for (int j = 0; j < p_; ++j) names.push_back(fmt::format("gamma[{}]", j + 1));
  names.emplace_back("sigma_v");
  for (int i = 0; i < m_; ++i) names.push_back(fmt::format("pi[{}]", i + 1));
  return names;
}

VectorXd UnivariateModel::outputs(const VectorXd& params) const {
  VectorXd out = params;
  out(p_) = std::exp(params(p_));
  if (family_ != ModelFamily::kFH) {
    for (int i = 0; i < m_; ++i) out(p_ + 1 + i) = inv_logit(params(p_ + 1 + i));
  }
  return out;
}

void UnivariateModel::level1(int i, double phi, double& value, double& dphi) const {
  const double z = data_.z(i);
  switch (family_) {
    case ModelFamily::kFH: {
      const double D = D_(i);
      const double r = z - phi;
      value = -kLogSqrtTwoPi - 0.5 * std::log(D) - 0.5 * r * r / D;
      dphi = r / D;
      return;
    }
    case ModelFamily::kNL:
    case ModelFamily::kNLPlugin: {
      const double D = D_(i);
      const double pi = inv_logit(phi);
      const double r = z - pi;
      value = -kLogSqrtTwoPi - 0.5 * std::log(D) - 0.5 * r * r / D;
      dphi = r / D * pi * (1.0 - pi);
      return;
    }
    case ModelFamily::kNLRS: {
      // D(pi) = c * pi * (1 - pi), evaluated on the log scale so saturated phi stays finite as long as possible.
      const double c = data_.deff / data_.n_adjusted(i);
      const double log_D = std::log(c) + log_inv_logit(phi) + log1m_inv_logit(phi);
      const double inv_D = std::exp(-log_D);
      const double pi = inv_logit(phi);
      const double r = z - pi;
      const double slope = 1.0 - 2.0 * pi;
      value = -kLogSqrtTwoPi - 0.5 * log_D - 0.5 * r * r * inv_D;
      dphi = -0.5 * slope + r / c + 0.5 * r * r * slope * inv_D;
      return;
    }
    case ModelFamily::kMVLogit:
      break;
  }
  value = kNegInf;
  dphi = 0.0;
}

LogDensityResult UnivariateModel::log_density(const VectorXd& params) const {
  require_finite(params, dim());
  LogDensityResult res;
  res.gradient = VectorXd::Zero(dim());
  const auto gamma = params.head(p_);
  const double u = params(p_);
  const auto phi = params.tail(m_);
  const double sigma2 = std::exp(2.0 * u);

  double value = 0.0;
  double grad_u = 0.0;
  VectorXd resid = phi - data_.X * gamma;
  for (int i = 0; i < m_; ++i) {
    double l1 = 0.0;
    double d1 = 0.0;
    level1(i, phi(i), l1, d1);
    const double r = resid(i);
    value += l1 - kLogSqrtTwoPi - u - 0.5 * r * r / sigma2;
    res.gradient(p_ + 1 + i) = d1 - r / sigma2;
    grad_u += -1.0 + r * r / sigma2;
  }
  res.gradient.head(p_) = data_.X.transpose() * resid / sigma2;

  value += normal_prior(gamma, priors_.coeff_scale, res.gradient.head(p_));
  value += half_cauchy_log_scale(u, priors_.sd_scale, grad_u);
  res.gradient(p_) = grad_u;
  res.value = value;
  if (!std::isfinite(res.value) || !res.gradient.allFinite()) {
    res.value = kNegInf;
    res.gradient.setZero();
  }
  return res;
}

VectorXd UnivariateModel::pointwise_loglik(const VectorXd& params) const {
  require_finite(params, dim());
  VectorXd ll(m_);
  for (int i = 0; i < m_; ++i) {
    double d = 0.0;
    level1(i, params(p_ + 1 + i), ll(i), d);
  }
  return ll;
}

std::vector<int> UnivariateModel::observed_areas() const {
  std::vector<int> idx(m_);
  for (int i = 0; i < m_; ++i) idx[i] = i;
  return idx;
}

// ---------------------------------------------------------------------------
// Multivariate normal hierarchical logistic model

MultivariateLogitModel::MultivariateLogitModel(MultivariateData data, Priors priors)
    : data_(std::move(data)), priors_(priors) {
  K_ = data_.K;
  m_ = static_cast<int>(data_.X.size());
  if (K_ < 1) throw DataError("MV_LOGIT needs at least one dimension");
  if (m_ == 0) throw DataError("model needs at least one area");
  if (static_cast<int>(data_.y.size()) != m_ || static_cast<int>(data_.sigma.size()) != m_)
    throw DataError("y, sigma and X must have one entry per area");
  q_ = static_cast<int>(data_.X.front().cols());
  n_rho_ = priors_.zero_correlation ? 0 : correlation_count(K_);
  sigma_inv_.resize(m_);
  sigma_logdet_.assign(m_, 0.0);
  for (int i = 0; i < m_; ++i) {
    if (data_.X[i].rows() != K_ || data_.X[i].cols() != q_)
      throw DataError(fmt::format("area {}: design matrix must be {} x {}", i + 1, K_, q_));
    if (data_.y[i].has_value() != data_.sigma[i].has_value())
      throw DataError(fmt::format("area {}: y and sigma must be both present or both absent", i + 1));
    if (!data_.y[i]) continue;
    if (data_.y[i]->size() != K_ || data_.sigma[i]->rows() != K_ || data_.sigma[i]->cols() != K_)
      throw DataError(fmt::format("area {}: y/sigma dimension mismatch", i + 1));
    Eigen::LLT<MatrixXd> llt(*data_.sigma[i]);
    if (llt.info() != Eigen::Success) throw DataError(fmt::format("area {}: sampling covariance is not positive definite", i + 1));
    sigma_inv_[i] = llt.solve(MatrixXd::Identity(K_, K_));
    sigma_logdet_[i] = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }
}

std::vector<std::string> MultivariateLogitModel::parameter_names() const {
  std::vector<std::string> names;
  for (int j = 0; j < q_; ++j) names.push_back(fmt::format("beta[{}]", j + 1));
  names.emplace_back("log_sigma");
  if (n_rho_ > 0) {
    for (int k = 0; k < K_; ++k)
      for (int k2 = k + 1; k2 < K_; ++k2) names.push_back(fmt::format("logit_rho[{},{}]", k + 1, k2 + 1));
  }
  for (int i = 0; i < m_; ++i)
    for (int k = 0; k < K_; ++k) names.push_back(fmt::format("Lambda[{},{}]", i + 1, k + 1));
  return names;
}

std::vector<std::string> MultivariateLogitModel::output_names() const {
  std::vector<std::string> names;
  for (int j = 0; j < q_; ++j) names.push_back(fmt::format("beta[{}]", j + 1));
  names.emplace_back("sigma");
  if (n_rho_ > 0) {
    for (int k = 0; k < K_; ++k)
      for (int k2 = k + 1; k2 < K_; ++k2) names.push_back(fmt::format("rho[{},{}]", k + 1, k2 + 1));
  }
  for (int i = 0; i < m_; ++i)
    for (int k = 0; k < K_; ++k) names.push_back(fmt::format("theta[{},{}]", i + 1, k + 1));
  return names;
}

VectorXd MultivariateLogitModel::outputs(const VectorXd& params) const {
  VectorXd out = params;
  out(q_) = std::exp(params(q_));
  for (int j = 0; j < n_rho_; ++j) out(q_ + 1 + j) = inv_logit(params(q_ + 1 + j));
  const int off = q_ + 1 + n_rho_;
  for (int j = 0; j < m_ * K_; ++j) out(off + j) = inv_logit(params(off + j));
  return out;
}

LogDensityResult MultivariateLogitModel::log_density(const VectorXd& params) const {
  require_finite(params, dim());
  LogDensityResult res;
  res.gradient = VectorXd::Zero(dim());
  const VectorXd beta = params.head(q_);
  const double u = params(q_);
  const double sigma2 = std::exp(2.0 * u);
  const int off = q_ + 1 + n_rho_;

  VectorXd rho = VectorXd::Zero(correlation_count(K_));
  for (int j = 0; j < n_rho_; ++j) rho(j) = inv_logit(params(q_ + 1 + j));
  const auto corr = build_correlation(rho, K_);
  if (!corr.is_pd) {
    res.value = kNegInf;
    return res;
  }
  Eigen::LLT<MatrixXd> llt(corr.R);
  const MatrixXd R_inv = llt.solve(MatrixXd::Identity(K_, K_));
  const double R_logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();

  double value = 0.0;
  double grad_u = 0.0;
  MatrixXd scatter = MatrixXd::Zero(K_, K_);
  for (int i = 0; i < m_; ++i) {
    const VectorXd lambda = params.segment(off + i * K_, K_);
    auto g_lambda = res.gradient.segment(off + i * K_, K_);

    if (data_.y[i]) {
      const VectorXd theta = lambda.unaryExpr([](double x) { return inv_logit(x); });
      const VectorXd r1 = *data_.y[i] - theta;
      const VectorXd w1 = *sigma_inv_[i] * r1;
      value += -K_ * kLogSqrtTwoPi - 0.5 * sigma_logdet_[i] - 0.5 * r1.dot(w1);
      g_lambda += (w1.array() * theta.array() * (1.0 - theta.array())).matrix();
    }

    const VectorXd r2 = lambda - data_.X[i] * beta;
    const VectorXd w2 = R_inv * r2;
    const double quad = r2.dot(w2);
    value += -K_ * kLogSqrtTwoPi - K_ * u - 0.5 * R_logdet - 0.5 * quad / sigma2;
    g_lambda -= w2 / sigma2;
    res.gradient.head(q_) += data_.X[i].transpose() * w2 / sigma2;
    grad_u += -K_ + quad / sigma2;
    scatter += r2 * r2.transpose();
  }

  if (n_rho_ > 0) {
    const MatrixXd G = -0.5 * m_ * R_inv + 0.5 * R_inv * scatter * R_inv / sigma2;
    int j = 0;
    for (int k = 0; k < K_; ++k) {
      for (int k2 = k + 1; k2 < K_; ++k2, ++j) {
        const double r = rho(j);
        // Uniform(0,1) prior has zero log density; the logit transform adds log r(1-r).
        value += std::log(r) + std::log1p(-r);
        res.gradient(q_ + 1 + j) = 2.0 * G(k, k2) * r * (1.0 - r) + (1.0 - 2.0 * r);
      }
    }
  }

  value += normal_prior(beta, priors_.coeff_scale, res.gradient.head(q_));
  value += half_cauchy_log_scale(u, priors_.sd_scale, grad_u);
  res.gradient(q_) = grad_u;
  res.value = value;
  if (!std::isfinite(res.value) || !res.gradient.allFinite()) {
    res.value = kNegInf;
    res.gradient.setZero();
  }
  return res;
}

VectorXd MultivariateLogitModel::pointwise_loglik(const VectorXd& params) const {
  require_finite(params, dim());
  const auto observed = observed_areas();
  const int off = q_ + 1 + n_rho_;
  VectorXd ll(observed.size());
  for (std::size_t j = 0; j < observed.size(); ++j) {
    const int i = observed[j];
    const VectorXd theta = params.segment(off + i * K_, K_).unaryExpr([](double x) { return inv_logit(x); });
    const VectorXd r = *data_.y[i] - theta;
    ll(j) = -K_ * kLogSqrtTwoPi - 0.5 * sigma_logdet_[i] - 0.5 * r.dot(*sigma_inv_[i] * r);
  }
  return ll;
}

std::vector<int> MultivariateLogitModel::observed_areas() const {
  std::vector<int> idx;
  for (int i = 0; i < m_; ++i)
    if (data_.y[i]) idx.push_back(i);
  return idx;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Model> make_univariate(ModelFamily family, AreaLevelData data, Priors priors) {
  return std::make_unique<UnivariateModel>(family, std::move(data), priors);
}

LogDensityResult logpost_fh(const VectorXd& params, const AreaLevelData& data, const Priors& priors) {
  return UnivariateModel(ModelFamily::kFH, data, priors).log_density(params);
}

LogDensityResult logpost_nl(const VectorXd& params, const AreaLevelData& data, const Priors& priors) {
  return UnivariateModel(ModelFamily::kNL, data, priors).log_density(params);
}

LogDensityResult logpost_nl_rs(const VectorXd& params, const AreaLevelData& data, const Priors& priors) {
  return UnivariateModel(ModelFamily::kNLRS, data, priors).log_density(params);
}

LogDensityResult logpost_nl_plugin(const VectorXd& params, const AreaLevelData& data, const Priors& priors) {
  return UnivariateModel(ModelFamily::kNLPlugin, data, priors).log_density(params);
}

LogDensityResult logpost_mv_logit(const VectorXd& params, const MultivariateData& data, const Priors& priors) {
  return MultivariateLogitModel(data, priors).log_density(params);
}

MatrixXd pointwise_loglik(const Model& model, const MatrixXd& draws) {
  if (draws.cols() != model.dim())
    throw DataError(fmt::format("draws have {} columns but the {} model has {} parameters", draws.cols(),
                                to_string(model.family()), model.dim()));
  const auto n_obs = static_cast<Eigen::Index>(model.observed_areas().size());
  MatrixXd ll(draws.rows(), n_obs);
  for (Eigen::Index r = 0; r < draws.rows(); ++r) ll.row(r) = model.pointwise_loglik(draws.row(r).transpose()).transpose();
  return ll;
}

}  // namespace povmap
