#include "stless/blackbox.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "stless/error.hpp"
#include "stless/normal.hpp"

namespace stless::blackbox {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Vector standard_normal(std::size_t size, Rng& rng) {
  Vector z(static_cast<Eigen::Index>(size));
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return z;
}


double max_slope_to(double theta, double rho, std::span<const double> thetas, std::span<const double> rhos) {
  double m = 0.0;
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const double d = circular_distance(theta, thetas[i]);
    if (d > 1e-12) m = std::max(m, std::abs(rho - rhos[i]) / d);
  }
  return m;
}

}  // namespace

FunctionRun::FunctionRun(std::size_t dim, std::vector<std::string> channels, int horizon, Fn fn, bool serial)
    : dim_(dim), channels_(std::move(channels)), horizon_(horizon), fn_(std::move(fn)), serial_(serial) {
  if (dim_ == 0) throw ValidationError("run function needs a positive input dimension");
  if (channels_.empty()) throw ValidationError("run function needs at least one channel");
  if (horizon_ < 1) throw ValidationError("run function horizon must be positive");
  if (!fn_) throw ValidationError("run function is empty");
}

stl::Signal FunctionRun::run(const Vector& w) {
  if (static_cast<std::size_t>(w.size()) != dim_) throw SimulationError("input vector has the wrong length");
  std::vector<double> y = fn_(w);
  if (y.size() != channels_.size() * static_cast<std::size_t>(horizon_))
    throw SimulationError("run function returned " + std::to_string(y.size()) + " values, expected " +
                          std::to_string(channels_.size() * static_cast<std::size_t>(horizon_)));
  return stl::Signal(channels_, std::move(y));
}

std::unique_ptr<RunFunction> identity_run(std::vector<std::string> channels, int horizon) {
  const std::size_t dim = channels.size() * static_cast<std::size_t>(horizon);
  return std::make_unique<FunctionRun>(
      dim, std::move(channels), horizon, [](const Vector& w) { return std::vector<double>(w.data(), w.data() + w.size()); });
}

EllipseRobustness::EllipseRobustness(Vector anchor, Vector auxiliary, Evaluate evaluate)
    : anchor_(std::move(anchor)), auxiliary_(std::move(auxiliary)), evaluate_(std::move(evaluate)) {
  if (anchor_.size() != auxiliary_.size()) throw ValidationError("ellipse vectors differ in length");
}

void EllipseRobustness::set_anchor_robustness(double rho) { cache_[std::bit_cast<std::uint64_t>(0.0)] = rho; }

Vector EllipseRobustness::point(double theta) const {
  const double t = wrap_angle(theta);
  if (t == 0.0) return anchor_;
  return anchor_ * std::cos(t) + auxiliary_ * std::sin(t);
}

double EllipseRobustness::operator()(double theta) {
  const double t = wrap_angle(theta);
  const auto key = std::bit_cast<std::uint64_t>(t);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const double rho = evaluate_(point(t));
  ++evaluations_;
  cache_.emplace(key, rho);
  return rho;
}

double initial_lipschitz(EllipseRobustness& f) {
  constexpr int probes = 8;
  const double step = kTwoPi / probes;
  double values[probes];
  for (int i = 0; i < probes; ++i) values[i] = f(i * step);
  double slope = 0.0;
  for (int i = 0; i < probes; ++i) slope = std::max(slope, std::abs(values[(i + 1) % probes] - values[i]) / step);
  return std::max(2.0 * slope, 1e-3);
}

AngularDomain lipschitz_domain(std::span<const double> thetas, std::span<const double> rhos, double level, double M) {
  AngularDomain d = AngularDomain::full();
  for (std::size_t i = 0; i < thetas.size(); ++i)
    if (rhos[i] < level) d = d.minus(thetas[i], (level - rhos[i]) / M);
  return d;
}

AngleResult lipschitz_sample(EllipseRobustness& f, double level, LipschitzState& state, Rng& rng) {
  std::vector<double> thetas{0.0}, rhos{f(0.0)};
  if (rhos[0] < level) throw ValidationError("anchor is outside the superlevel set");
  if (!(state.M > 0.0)) {
    state.M = initial_lipschitz(f);
    for (int i = 1; i < 8; ++i) {
      thetas.push_back(i * kTwoPi / 8);
      rhos.push_back(f(thetas.back()));
    }
  }

  AngularDomain domain = lipschitz_domain(thetas, rhos, level, state.M);
  for (int c = 0; c < state.max_candidates; ++c) {
    if (domain.measure() <= 0.0) {
      state.M *= 1.0 + state.eps_inflate;
      ++state.inflations;
      domain = lipschitz_domain(thetas, rhos, level, state.M);
      continue;
    }
    const double theta = domain.sample(rng);
    const double rho = f(theta);
    if (rho >= level) return {theta, rho, false};

    const double slope = max_slope_to(theta, rho, thetas, rhos);
    thetas.push_back(theta);
    rhos.push_back(rho);
    if (slope > state.M) {
      state.M = (1.0 + state.eps_inflate) * slope;
      ++state.inflations;
      domain = lipschitz_domain(thetas, rhos, level, state.M);
    } else {
      domain = domain.minus(theta, (level - rho) / state.M);
    }
  }
  ++state.stalls;
  return {0.0, rhos[0], true};
}

Acquisition parse_acquisition(const std::string& text) {
  if (text == "ucb" || text == "UCB") return Acquisition::ucb;
  if (text == "ei" || text == "EI") return Acquisition::ei;
  if (text == "poi" || text == "POI") return Acquisition::poi;
  throw ValidationError("unknown acquisition '" + text + "' (expected ucb, ei or poi)");
}

std::string to_string(Acquisition a) {
  switch (a) {
    case Acquisition::ucb: return "ucb";
    case Acquisition::ei: return "ei";
    case Acquisition::poi: return "poi";
  }
  return {};
}

void BoConfig::validate() const {
  if (n_bo < 1) throw ValidationError("n_bo must be at least 1");
  if (kappa < 0.0) throw ValidationError("kappa must be non-negative");
  if (grid < 16) throw ValidationError("bo grid must have at least 16 points");
  if (max_rounds < 1) throw ValidationError("max_rounds must be at least 1");
  if (margin < 0.0) throw ValidationError("margin must be non-negative");
}

void CircularGp::add(double theta, double rho) {
  thetas_.push_back(wrap_angle(theta));
  rhos_.push_back(rho);
  refit();
}

double CircularGp::kernel(double a, double b) const {
  // Squared chord length is 2 - 2 cos(a - b).
  return sf2_ * std::exp(-(1.0 - std::cos(a - b)) / (ell_ * ell_));
}

void CircularGp::refit() {
  const std::size_t n = thetas_.size();
  double mean = 0.0;
  for (double r : rhos_) mean += r;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double r : rhos_) var += (r - mean) * (r - mean);
  var = n > 1 ? var / static_cast<double>(n - 1) : 0.0;
  prior_ = mean;
  // The sample variance of a few nearby observations understates how far the
  // function can swing between them, so the amplitude is floored by their range.
  const auto [lo, hi] = std::minmax_element(rhos_.begin(), rhos_.end());
  sf2_ = std::max(var, (*hi - *lo) * (*hi - *lo));
  if (sf2_ <= 0.0) sf2_ = std::max(1.0, mean * mean);

  std::vector<double> dists;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dists.push_back(circular_distance(thetas_[i], thetas_[j]));
  if (dists.size() < 3) {
    ell_ = std::numbers::pi / 4;
  } else {
    const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    ell_ = std::max(0.5 * *mid, 1e-3);
  }
  sn2_ = 1e-6 * sf2_;

  Eigen::MatrixXd K(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) K(i, j) = kernel(thetas_[i], thetas_[j]);
  K.diagonal().array() += sn2_;
  llt_.compute(K);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) y(i) = rhos_[i] - prior_;
  alpha_ = llt_.solve(y);
}

CircularGp::Prediction CircularGp::predict(double theta) const {
  if (thetas_.empty()) return {0.0, 1.0};
  const std::size_t n = thetas_.size();
  Eigen::VectorXd k(n);
  for (std::size_t i = 0; i < n; ++i) k(i) = kernel(theta, thetas_[i]);
  const double mean = prior_ + k.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(k);
  const double var = std::max(0.0, sf2_ - v.squaredNorm());
  return {mean, std::sqrt(var)};
}

CircularGp::GridPrediction CircularGp::predict_grid(int grid) const {
  GridPrediction out;
  const std::size_t n = thetas_.size();
  if (n == 0) {
    out.mean = Eigen::VectorXd::Zero(grid);
    out.sd = Eigen::VectorXd::Ones(grid);
    return out;
  }
  const Eigen::ArrayXd g = Eigen::ArrayXd::LinSpaced(grid, 0.0, kTwoPi * (grid - 1) / grid);
  Eigen::ArrayXd t(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) t(static_cast<Eigen::Index>(i)) = thetas_[i];
  // cos(a - b) = cos a cos b + sin a sin b, evaluated as two outer products.
  const Eigen::MatrixXd c = t.cos().matrix() * g.cos().matrix().transpose() +
                            t.sin().matrix() * g.sin().matrix().transpose();
  Eigen::MatrixXd k = (sf2_ * ((c.array() - 1.0) / (ell_ * ell_)).exp()).matrix();
  out.mean = (k.transpose() * alpha_).array() + prior_;
  llt_.matrixL().solveInPlace(k);
  out.sd = (sf2_ - k.colwise().squaredNorm().transpose().array()).max(0.0).sqrt();
  return out;
}

double acquisition_value(Acquisition type, const CircularGp::Prediction& p, double best, double kappa, double xi) {
  switch (type) {
    case Acquisition::ucb: return p.mean + kappa * p.sd;
    case Acquisition::ei: {
      if (p.sd <= 0.0) return std::max(0.0, p.mean - best - xi);
      const double z = (p.mean - best - xi) / p.sd;
      return (p.mean - best - xi) * normal::cdf(z) + p.sd * normal::pdf(z);
    }
    case Acquisition::poi: {
      if (p.sd <= 0.0) return p.mean - best - xi > 0.0 ? 1.0 : 0.0;
      return normal::cdf((p.mean - best - xi) / p.sd);
    }
  }
  return 0.0;
}

AngularDomain predicted_domain(const CircularGp& gp, double level, int grid) {
  return predicted_domain(gp.predict_grid(grid).mean, level);
}

AngularDomain predicted_domain(const Eigen::VectorXd& grid_mean, double level) {
  const int grid = static_cast<int>(grid_mean.size());
  const double h = kTwoPi / grid;
  std::vector<double> excess(static_cast<std::size_t>(grid));
  for (int g = 0; g < grid; ++g) excess[static_cast<std::size_t>(g)] = grid_mean(g) - level;

  // Crossing between grid points g and g + 1, by linear interpolation.
  const auto crossing = [&](int g) {
    const double a = excess[static_cast<std::size_t>(g)], b = excess[static_cast<std::size_t>((g + 1) % grid)];
    return (g + a / (a - b)) * h;
  };
  std::vector<AngularDomain::Arc> arcs;
  bool all = true;
  for (double e : excess) all = all && e >= 0.0;
  if (all) return AngularDomain::full();

  // Start scanning just after an infeasible grid point so arcs never straddle the start.
  int start = 0;
  while (excess[static_cast<std::size_t>(start)] >= 0.0) ++start;
  double open = 0.0;
  bool inside = false;
  for (int i = 0; i < grid; ++i) {
    const int g = (start + i) % grid;
    const bool here = excess[static_cast<std::size_t>(g)] >= 0.0;
    const bool next = excess[static_cast<std::size_t>((g + 1) % grid)] >= 0.0;
    if (!here && next) {
      open = crossing(g);
      inside = true;
    } else if (here && !next && inside) {
      double close = crossing(g);
      arcs.push_back({wrap_angle(open), wrap_angle(close)});
      inside = false;
    }
  }
  return AngularDomain::from_arcs(std::move(arcs));
}

AngleResult bo_sample(EllipseRobustness& f, double level, const BoConfig& config, Rng& rng) {
  config.validate();
  const double rho0 = f(0.0);
  if (rho0 < level) throw ValidationError("anchor is outside the superlevel set");
  CircularGp gp;
  gp.add(0.0, rho0);  // theta = 2pi is the same point of the circle
  const double sigma_max = config.sigma_max >= 0.0 ? config.sigma_max : 0.1 * (rho0 - level + 1e-9);
  double kappa = config.kappa, xi = config.xi;
  int suggestions = 0;
  const double h = kTwoPi / config.grid;

  for (int round = 0; round < config.max_rounds; ++round) {
    const CircularGp::GridPrediction pred = gp.predict_grid(config.grid);
    const AngularDomain domain = predicted_domain(pred.mean + config.margin * pred.sd, level);
    bool valid = !domain.empty();
    if (valid) {
      double worst = 0.0;
      for (int g = 0; g < config.grid; ++g)
        if (domain.contains(g * h)) worst = std::max(worst, pred.sd(g));
      valid = worst <= sigma_max;
    }
    const bool forced = suggestions >= 2 * config.n_bo;
    if ((valid || forced) && !domain.empty()) {
      const double theta = domain.sample(rng);
      const double rho = f(theta);
      if (rho >= level) return {theta, rho, false};
      gp.add(theta, rho);
      continue;
    }

    double best_rho = kNegInf;
    for (double t : gp.thetas()) best_rho = std::max(best_rho, f(t));
    double best_value = kNegInf, best_theta = -1.0;
    // Grid points within half a cell of a registered angle are not suggested again.
    std::vector<char> taken(static_cast<std::size_t>(config.grid), 0);
    for (double r : gp.thetas()) {
      const double cell = r / h;
      const int lo = static_cast<int>(std::floor(cell)), hi = lo + 1;
      if (cell - lo < 0.5) taken[static_cast<std::size_t>(lo % config.grid)] = 1;
      if (hi - cell < 0.5) taken[static_cast<std::size_t>(hi % config.grid)] = 1;
    }
    for (int g = 0; g < config.grid; ++g) {
      const double t = g * h;
      if (taken[static_cast<std::size_t>(g)]) continue;
      const double a = acquisition_value(config.acquisition, {pred.mean(g), pred.sd(g)}, best_rho, kappa, xi);
      if (a > best_value) {
        best_value = a;
        best_theta = t;
      }
    }
    if (best_theta < 0.0) break;
    const double rho = f(best_theta);
    gp.add(best_theta, rho);
    if (++suggestions == config.n_bo) {
      kappa = 1.0;
      xi = 0.0;
    }
  }
  return {0.0, rho0, true};
}

Method parse_method(const std::string& text) {
  if (text == "lipschitz") return Method::lipschitz;
  if (text == "bo") return Method::bo;
  throw ValidationError("unknown black-box sampler '" + text + "' (expected lipschitz or bo)");
}

std::string to_string(Method m) { return m == Method::lipschitz ? "lipschitz" : "bo"; }

void BlackboxConfig::validate() const {
  if (!(eps_inflate > 0.0)) throw ValidationError("eps_inflate must be positive");
  if (budget == 0) throw ValidationError("budget must be positive");
  bo.validate();
}

BlackboxSampler::BlackboxSampler(RunFunction& run, stl::Formula failure, warp::Warp warp, BlackboxConfig config)
    : run_(run), failure_(std::move(failure)), warp_(std::move(warp)), config_(std::move(config)) {
  config_.validate();
  if (warp_.dim() != run_.dim())
    throw ValidationError("bijector dimension " + std::to_string(warp_.dim()) + " does not match the run input " +
                          std::to_string(run_.dim()));
  if (failure_.horizon() > run_.horizon())
    throw ValidationError("formula horizon " + std::to_string(failure_.horizon()) + " exceeds the simulated " +
                          std::to_string(run_.horizon()) + " steps");
  lipschitz_.M = config_.lipschitz_m;
  lipschitz_.eps_inflate = config_.eps_inflate;
}

double BlackboxSampler::evaluate(const Vector& x) {
  if (calls_.load() >= config_.budget)
    throw BudgetError("simulation budget of " + std::to_string(config_.budget) + " runs exhausted");
  ++calls_;
  const stl::Signal y = run_.run(warp_.forward(x));
  if (y.width() != run_.channels().size()) throw SimulationError("simulator returned the wrong number of channels");
  return stl::robustness(y, failure_, 0);
}

Sample BlackboxSampler::draw(Rng& rng) {
  Vector x = standard_normal(run_.dim(), rng);
  const double rho = evaluate(x);
  const double weight = warp_.weight(x);
  return {std::move(x), rho, weight};
}

Sample BlackboxSampler::step(const Sample& current, double level, Rng& rng) {
  EllipseRobustness f(current.x, standard_normal(run_.dim(), rng), [this](const Vector& v) { return evaluate(v); });
  f.set_anchor_robustness(current.robustness);
  AngleResult r;
  if (!std::isfinite(level)) {
    r.theta = rng.uniform(0.0, kTwoPi);
    r.robustness = f(r.theta);
  } else if (config_.method == Method::lipschitz) {
    r = lipschitz_sample(f, level, lipschitz_, rng);
  } else {
    r = bo_sample(f, level, config_.bo, rng);
  }
  if (r.stalled) {
    ++stalled_;
    return current;
  }
  Vector x = f.point(r.theta);
  const double weight = warp_.weight(x);
  return {std::move(x), r.robustness, weight};
}

hdr::VerificationResult blackbox_verify(RunFunction& run, const stl::Formula& failure, const warp::Warp& warp,
                                        const BlackboxConfig& config, const hdr::HdrConfig& hdr_config) {
  BlackboxSampler sampler(run, failure, warp, config);
  return hdr::verify(sampler, hdr_config);
}

}  // namespace stless::blackbox
