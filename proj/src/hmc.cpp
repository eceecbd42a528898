#include "povmap/hmc.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace povmap {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMaxDeltaH = 1000.0;

double log_add(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double mx = std::max(a, b);
  return mx + std::log(std::exp(a - mx) + std::exp(b - mx));
}

// Evaluates the target, mapping invalid points and numerical exceptions to -inf.
void evaluate(const LogDensityFn& target, PhasePoint& z) {
  if (!z.q.allFinite()) {
    z.logp = -kInf;
    z.grad = VectorXd::Zero(z.q.size());
    return;
  }
  try {
    auto res = target(z.q);
    z.logp = res.value;
    z.grad = std::move(res.gradient);
  } catch (const NumericalError&) {
    z.logp = -kInf;
    z.grad = VectorXd::Zero(z.q.size());
  }
  if (!std::isfinite(z.logp) || !z.grad.allFinite()) {
    z.logp = -kInf;
    z.grad = VectorXd::Zero(z.q.size());
  }
}

class DualAveraging {
 public:
  explicit DualAveraging(double delta) : delta_(delta) {}

  void restart(double epsilon) {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
    mu_ = std::log(10.0 * epsilon);
  }

  double learn(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / gamma_;
    const double x_eta = std::pow(static_cast<double>(counter_), -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }

  double final_step() const { return std::exp(x_bar_); }

 private:
  double delta_;
  double gamma_ = 0.05;
  double kappa_ = 0.75;
  double t0_ = 10.0;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  int counter_ = 0;
};

// Running mean/variance (Welford).
class VarianceEstimator {
 public:
  explicit VarianceEstimator(int dim) : mean_(VectorXd::Zero(dim)), m2_(VectorXd::Zero(dim)) {}
  void restart() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }
  void add(const VectorXd& q) {
    ++n_;
    const VectorXd delta = q - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += (delta.array() * (q - mean_).array()).matrix();
  }
  int count() const { return n_; }
  VectorXd variance() const { return m2_ / static_cast<double>(n_ - 1); }

 private:
  int n_ = 0;
  VectorXd mean_;
  VectorXd m2_;
};

// Warmup schedule: an initial fast buffer, doubling slow windows for the metric, a terminal fast buffer.
class WarmupWindows {
 public:
  explicit WarmupWindows(int num_warmup) : num_warmup_(num_warmup) {
    if (num_warmup < 20) {
      enabled_ = false;
      return;
    }
    if (init_buffer_ + base_window_ + term_buffer_ > num_warmup) {
      init_buffer_ = static_cast<int>(0.15 * num_warmup);
      term_buffer_ = static_cast<int>(0.1 * num_warmup);
      base_window_ = num_warmup - (init_buffer_ + term_buffer_);
    }
    window_size_ = base_window_;
    next_window_end_ = init_buffer_ + window_size_ - 1;
  }

  bool in_window() const {
    return enabled_ && counter_ >= init_buffer_ && counter_ < num_warmup_ - term_buffer_ && counter_ != num_warmup_;
  }
  bool window_end() const { return enabled_ && counter_ == next_window_end_ && counter_ != num_warmup_; }

  void compute_next_window() {
    if (next_window_end_ == num_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_end_ = counter_ + window_size_;
    if (next_window_end_ != num_warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_end_ + 2 * window_size_;
      if (boundary >= num_warmup_ - term_buffer_) next_window_end_ = num_warmup_ - term_buffer_ - 1;
    }
  }

  void advance() { ++counter_; }

 private:
  int num_warmup_;
  bool enabled_ = true;
  int init_buffer_ = 75;
  int term_buffer_ = 50;
  int base_window_ = 25;
  int window_size_ = 0;
  int next_window_end_ = 0;
  int counter_ = 0;
};

class Chain {
 public:
  Chain(const LogDensityFn& target, int dim, const SamplerConfig& cfg, int chain_id)
      : target_(target),
        dim_(dim),
        cfg_(cfg),
        rng_(make_chain_rng(cfg.seed, chain_id)),
        inv_metric_(VectorXd::Ones(dim)),
        max_depth_(std::max(0, static_cast<int>(std::floor(std::log2(std::max(1, cfg.max_leapfrog)))))) {}

  void initialize() {
    std::uniform_real_distribution<double> unif(-cfg_.init_radius, cfg_.init_radius);
    for (int attempt = 0; attempt < 100; ++attempt) {
      z_.q = VectorXd::NullaryExpr(dim_, [&] { return unif(rng_); });
      evaluate(target_, z_);
      if (std::isfinite(z_.logp)) return;
    }
    throw NumericalError("cannot initialize: no finite log density found after 100 random starts");
  }

  MatrixXd run(int& divergences, double& step, VectorXd& inv_metric, double& mean_accept) {
    initialize();
    z_.p = VectorXd::Zero(dim_);
    epsilon_ = 1.0;
    init_stepsize();
    DualAveraging adapt(cfg_.target_accept);
    adapt.restart(epsilon_);
    WarmupWindows windows(cfg_.warmup);
    VarianceEstimator estimator(dim_);

    const int kept = cfg_.post_warmup();
    MatrixXd draws(kept, dim_);
    divergences = 0;
    double accept_sum = 0.0;
    for (int it = 0; it < cfg_.iterations; ++it) {
      const double accept_stat = cfg_.nuts ? nuts_transition() : static_transition();
      if (it < cfg_.warmup) {
        epsilon_ = adapt.learn(accept_stat);
        if (windows.in_window()) estimator.add(z_.q);
        if (windows.window_end()) {
          windows.compute_next_window();
          const auto n = static_cast<double>(estimator.count());
          inv_metric_ = (n / (n + 5.0)) * estimator.variance().array() + 1e-3 * (5.0 / (n + 5.0));
          estimator.restart();
          init_stepsize();
          adapt.restart(epsilon_);
        }
        windows.advance();
        if (it == cfg_.warmup - 1) epsilon_ = adapt.final_step();
      } else {
        draws.row(it - cfg_.warmup) = z_.q.transpose();
        if (divergent_) ++divergences;
        accept_sum += accept_stat;
      }
    }
    if (kept > 0 && divergences == kept)
      throw NumericalError(fmt::format("every post-warmup transition diverged ({} of {}); final step size {:.3g}",
                                       divergences, kept, epsilon_));
    step = epsilon_;
    inv_metric = inv_metric_;
    mean_accept = kept > 0 ? accept_sum / kept : 0.0;
    return draws;
  }

 private:
  double kinetic(const VectorXd& p) const { return 0.5 * p.dot(inv_metric_.cwiseProduct(p)); }
  double hamiltonian(const PhasePoint& z) const {
    const double h = -z.logp + kinetic(z.p);
    return std::isnan(h) ? kInf : h;
  }
  VectorXd p_sharp(const PhasePoint& z) const { return inv_metric_.cwiseProduct(z.p); }

  void sample_momentum(PhasePoint& z) {
    for (int j = 0; j < dim_; ++j) z.p(j) = normal_(rng_) / std::sqrt(inv_metric_(j));
  }

  void init_stepsize() {
    const PhasePoint start = z_;
    PhasePoint z = start;
    sample_momentum(z);
    double H0 = hamiltonian(z);
    leapfrog(target_, inv_metric_, epsilon_, z);
    double delta_H = H0 - hamiltonian(z);
    const int direction = delta_H > std::log(0.8) ? 1 : -1;
    while (true) {
      z = start;
      sample_momentum(z);
      H0 = hamiltonian(z);
      leapfrog(target_, inv_metric_, epsilon_, z);
      delta_H = H0 - hamiltonian(z);
      if (direction == 1 && !(delta_H > std::log(0.8))) break;
      if (direction == -1 && !(delta_H < std::log(0.8))) break;
      epsilon_ = direction == 1 ? 2.0 * epsilon_ : 0.5 * epsilon_;
      if (epsilon_ > 1e7) throw NumericalError("step size search diverged: posterior appears improper");
      if (epsilon_ == 0.0) throw NumericalError("step size search collapsed to zero");
    }
  }

  double static_transition() {
    PhasePoint z = z_;
    sample_momentum(z);
    const double H0 = hamiltonian(z);
    divergent_ = false;
    for (int s = 0; s < cfg_.fixed_steps; ++s) {
      leapfrog(target_, inv_metric_, epsilon_, z);
      if (hamiltonian(z) - H0 > kMaxDeltaH) {
        divergent_ = true;
        break;
      }
    }
    const double h = divergent_ ? kInf : hamiltonian(z);
    const double accept = std::min(1.0, std::exp(H0 - h));
    if (uniform_(rng_) < accept) z_ = std::move(z);
    return accept;
  }

  static bool criterion(const VectorXd& p_sharp_minus, const VectorXd& p_sharp_plus, const VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
  }

  double nuts_transition() {
    PhasePoint z = z_;
    sample_momentum(z);
    divergent_ = false;

    PhasePoint z_fwd = z;
    PhasePoint z_bck = z;
    PhasePoint z_sample = z;
    PhasePoint z_propose = z;

    VectorXd p_fwd_fwd = z.p, p_fwd_bck = z.p, p_bck_fwd = z.p, p_bck_bck = z.p;
    VectorXd ps_fwd_fwd = p_sharp(z), ps_fwd_bck = ps_fwd_fwd, ps_bck_fwd = ps_fwd_fwd, ps_bck_bck = ps_fwd_fwd;
    VectorXd rho = z.p;

    double log_sum_weight = 0.0;
    const double H0 = hamiltonian(z);
    int n_leapfrog = 0;
    double sum_metro_prob = 0.0;

    for (int depth = 0; depth < max_depth_;) {
      VectorXd rho_fwd = VectorXd::Zero(dim_);
      VectorXd rho_bck = VectorXd::Zero(dim_);
      bool valid = false;
      double log_sum_weight_subtree = -kInf;

      if (uniform_(rng_) > 0.5) {
        z = z_fwd;
        rho_bck = rho;
        p_bck_fwd = p_fwd_bck;
        ps_bck_fwd = ps_fwd_bck;
        valid = build_tree(depth, z, z_propose, ps_fwd_bck, ps_fwd_fwd, rho_fwd, p_fwd_bck, p_fwd_fwd, H0, 1.0,
                           n_leapfrog, log_sum_weight_subtree, sum_metro_prob);
        z_fwd = z;
      } else {
        z = z_bck;
        rho_fwd = rho;
        p_fwd_bck = p_bck_fwd;
        ps_fwd_bck = ps_bck_fwd;
        valid = build_tree(depth, z, z_propose, ps_bck_fwd, ps_bck_bck, rho_bck, p_bck_fwd, p_bck_bck, H0, -1.0,
                           n_leapfrog, log_sum_weight_subtree, sum_metro_prob);
        z_bck = z;
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample = z_propose;
      } else if (uniform_(rng_) < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample = z_propose;
      }
      log_sum_weight = log_add(log_sum_weight, log_sum_weight_subtree);

      rho = rho_bck + rho_fwd;
      bool persist = criterion(ps_bck_bck, ps_fwd_fwd, rho);
      VectorXd rho_ext = rho_bck + p_fwd_bck;
      persist = persist && criterion(ps_bck_bck, ps_fwd_bck, rho_ext);
      rho_ext = rho_fwd + p_bck_fwd;
      persist = persist && criterion(ps_bck_fwd, ps_fwd_fwd, rho_ext);
      if (!persist) break;
    }

    z_ = std::move(z_sample);
    return n_leapfrog > 0 ? sum_metro_prob / n_leapfrog : 0.0;
  }

  bool build_tree(int depth, PhasePoint& z, PhasePoint& z_propose, VectorXd& ps_beg, VectorXd& ps_end, VectorXd& rho,
                  VectorXd& p_beg, VectorXd& p_end, double H0, double sign, int& n_leapfrog,
                  double& log_sum_weight, double& sum_metro_prob) {
    if (depth == 0) {
      leapfrog(target_, inv_metric_, sign * epsilon_, z);
      ++n_leapfrog;
      const double h = hamiltonian(z);
      if (h - H0 > kMaxDeltaH) divergent_ = true;
      log_sum_weight = log_add(log_sum_weight, H0 - h);
      sum_metro_prob += H0 - h > 0 ? 1.0 : std::exp(H0 - h);
      z_propose = z;
      ps_beg = p_sharp(z);
      ps_end = ps_beg;
      rho += z.p;
      p_beg = z.p;
      p_end = p_beg;
      return !divergent_;
    }

    double log_sum_weight_init = -kInf;
    VectorXd p_init_end(dim_), ps_init_end(dim_);
    VectorXd rho_init = VectorXd::Zero(dim_);
    if (!build_tree(depth - 1, z, z_propose, ps_beg, ps_init_end, rho_init, p_beg, p_init_end, H0, sign, n_leapfrog,
                    log_sum_weight_init, sum_metro_prob))
      return false;

    PhasePoint z_propose_final = z;
    double log_sum_weight_final = -kInf;
    VectorXd p_final_beg(dim_), ps_final_beg(dim_);
    VectorXd rho_final = VectorXd::Zero(dim_);
    if (!build_tree(depth - 1, z, z_propose_final, ps_final_beg, ps_end, rho_final, p_final_beg, p_end, H0, sign,
                    n_leapfrog, log_sum_weight_final, sum_metro_prob))
      return false;

    const double log_sum_weight_subtree = log_add(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_add(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = z_propose_final;
    } else if (uniform_(rng_) < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = z_propose_final;
    }

    const VectorXd rho_subtree = rho_init + rho_final;
    rho += rho_subtree;
    bool persist = criterion(ps_beg, ps_end, rho_subtree);
    VectorXd rho_ext = rho_init + p_final_beg;
    persist = persist && criterion(ps_beg, ps_final_beg, rho_ext);
    rho_ext = rho_final + p_init_end;
    persist = persist && criterion(ps_init_end, ps_end, rho_ext);
    return persist;
  }

  const LogDensityFn& target_;
  int dim_;
  const SamplerConfig& cfg_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  VectorXd inv_metric_;
  int max_depth_;
  double epsilon_ = 1.0;
  bool divergent_ = false;
  PhasePoint z_;
};

}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1) throw UsageError("chains must be at least 1");
  if (warmup < 0 || iterations <= warmup) throw UsageError("iterations must exceed warmup");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw UsageError("target_accept must lie in (0, 1)");
  if (max_leapfrog < 1) throw UsageError("max_leapfrog must be positive");
  if (!(init_radius > 0.0)) throw UsageError("init_radius must be positive");
  if (fixed_steps < 1) throw UsageError("fixed_steps must be positive");
}

int PosteriorDraws::total_divergences() const {
  int total = 0;
  for (int d : divergences) total += d;
  return total;
}

MatrixXd PosteriorDraws::stacked() const {
  MatrixXd out(num_chains() * draws_per_chain(), dim());
  for (int c = 0; c < num_chains(); ++c) out.middleRows(c * draws_per_chain(), draws_per_chain()) = chains[c];
  return out;
}

MatrixXd PosteriorDraws::parameter(int index) const {
  MatrixXd out(draws_per_chain(), num_chains());
  for (int c = 0; c < num_chains(); ++c) out.col(c) = chains[c].col(index);
  return out;
}

int PosteriorDraws::index_of(const std::string& name) const {
  const auto it = std::find(parameter_names.begin(), parameter_names.end(), name);
  if (it == parameter_names.end()) throw DataError("no parameter named '" + name + "' in draws");
  return static_cast<int>(it - parameter_names.begin());
}

PosteriorDraws PosteriorDraws::map(const std::function<VectorXd(const VectorXd&)>& fn,
                                   std::vector<std::string> names) const {
  PosteriorDraws out = *this;
  out.parameter_names = std::move(names);
  for (int c = 0; c < num_chains(); ++c) {
    MatrixXd mapped(draws_per_chain(), static_cast<Eigen::Index>(out.parameter_names.size()));
    for (int r = 0; r < draws_per_chain(); ++r) mapped.row(r) = fn(chains[c].row(r).transpose()).transpose();
    out.chains[c] = std::move(mapped);
  }
  return out;
}

std::mt19937_64 make_chain_rng(std::uint64_t seed, int chain, int stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(chain), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

void leapfrog(const LogDensityFn& target, const VectorXd& inv_metric, double step, PhasePoint& z) {
  z.p += 0.5 * step * z.grad;
  z.q += step * inv_metric.cwiseProduct(z.p);
  evaluate(target, z);
  z.p += 0.5 * step * z.grad;
}

PosteriorDraws sample(const LogDensityFn& target, int dim, const SamplerConfig& config,
                      std::vector<std::string> parameter_names) {
  config.validate();
  if (dim < 1) throw UsageError("sampler dimension must be positive");
  PosteriorDraws out;
  const int n_chains = config.chains;
  out.chains.resize(n_chains);
  out.divergences.assign(n_chains, 0);
  out.step_size.assign(n_chains, 0.0);
  out.inv_metric.resize(n_chains);
  out.mean_accept.assign(n_chains, 0.0);
  if (parameter_names.empty()) {
    for (int j = 0; j < dim; ++j) parameter_names.push_back(fmt::format("param_{}", j + 1));
  }
  out.parameter_names = std::move(parameter_names);

  std::vector<std::exception_ptr> errors(n_chains);
  auto run_chain = [&](int c) {
    try {
      Chain chain(target, dim, config, c);
      out.chains[c] = chain.run(out.divergences[c], out.step_size[c], out.inv_metric[c], out.mean_accept[c]);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };

  const int threads = std::clamp(config.threads > 0 ? config.threads : n_chains, 1, n_chains);
  if (threads == 1) {
    for (int c = 0; c < n_chains; ++c) run_chain(c);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (int c = next++; c < n_chains; c = next++) run_chain(c);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

PosteriorDraws sample(const Model& model, const SamplerConfig& config) {
  return sample([&model](const VectorXd& q) { return model.log_density(q); }, model.dim(), config,
                model.parameter_names());
}

GradientCheckReport gradient_check(const LogDensityFn& target, const std::vector<VectorXd>& points, double h) {
  GradientCheckReport report;
  for (std::size_t pt = 0; pt < points.size(); ++pt) {
    const VectorXd& x = points[pt];
    const auto analytic = target(x).gradient;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      VectorXd xp = x;
      VectorXd xm = x;
      xp(j) += h;
      xm(j) -= h;
      const double numeric = (target(xp).value - target(xm).value) / (2.0 * h);
      const double err = std::abs(analytic(j) - numeric) / std::max(std::abs(numeric), 1.0);
      if (report.point < 0 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.point = static_cast<int>(pt);
        report.coordinate = static_cast<int>(j);
        report.analytic = analytic(j);
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace povmap
