#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace povmap {

template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using VectorXd = Eigen::VectorXd;
using MatrixXd = Eigen::MatrixXd;
using VectorXdRef = Eigen::Ref<const Eigen::VectorXd>;
using MatrixXdRef = Eigen::Ref<const Eigen::MatrixXd>;

// Error categories map onto the CLI exit codes (2 usage/config, 3 data, 4 numerical).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Scalar helpers shared by the models, the sampler and the simulator.

template <class Scalar>
inline Scalar inv_logit(Scalar x) {
  using std::exp;
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-x));
  const Scalar e = exp(x);
  return e / (Scalar(1) + e);
}

template <class Scalar>
inline Scalar logit(Scalar p) {
  using std::log;
  return log(p / (Scalar(1) - p));
}

/// log(1 + exp(x)) without overflow.
template <class Scalar>
inline Scalar softplus(Scalar x) {
  using std::exp;
  using std::log1p;
  if (x > Scalar(0)) return x + log1p(exp(-x));
  return log1p(exp(x));
}

/// log(inv_logit(x))
template <class Scalar>
inline Scalar log_inv_logit(Scalar x) {
  return -softplus(-x);
}

/// log(1 - inv_logit(x))
template <class Scalar>
inline Scalar log1m_inv_logit(Scalar x) {
  return -softplus(x);
}

template <class Derived>
inline typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar mx = x.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((x.array() - mx).exp().sum());
}

inline constexpr double kLogSqrtTwoPi = 0.91893853320467274178;
inline constexpr double kPi = 3.14159265358979323846;

}  // namespace povmap
