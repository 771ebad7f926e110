#include "stless/ess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stless/error.hpp"

namespace stless::ess {
namespace {

constexpr double kMergeTol = 1e-12;

void push_roots(double p, double s, double d, std::vector<double>& out) {
  const double r = std::hypot(p, s);
  if (r == 0.0 || std::abs(d) > r) return;
  const double base = std::atan2(s, p);
  const double delta = std::acos(std::clamp(-d / r, -1.0, 1.0));
  out.push_back(wrap_angle(base + delta));
  if (delta > 0.0) out.push_back(wrap_angle(base - delta));
}

Vector standard_normal(Eigen::Index size, Rng& rng) {
  Vector z(size);
  for (Eigen::Index i = 0; i < size; ++i) z(i) = rng.normal();
  return z;
}

}  // namespace

std::vector<double> hyperplane_roots(const Ellipse& e, const Vector& a, double c) {
  std::vector<double> out;
  push_roots(a.dot(e.anchor), a.dot(e.auxiliary), a.dot(e.mean) + c, out);
  std::sort(out.begin(), out.end());
  return out;
}

LinearProblem::LinearProblem(stl::Formula formula, int n, int steps, std::vector<lin::Hyperplane> planes)
    : formula_(std::move(formula)), n_(n), steps_(steps), planes_(std::move(planes)) {
  if (n_ < 1 || steps_ < 1) throw ValidationError("trajectory layout must be positive");
  if (formula_.horizon() > steps_)
    throw ValidationError("formula horizon " + std::to_string(formula_.horizon()) + " exceeds trajectory length " +
                          std::to_string(steps_));
}

LinearProblem LinearProblem::from_states(stl::Formula formula, std::span<const std::string> state_names,
                                         int steps) {
  auto planes = lin::lift_predicates(formula, state_names, state_names, steps);
  const int n = static_cast<int>(state_names.size());
  return LinearProblem(std::move(formula), n, steps, std::move(planes));
}

double LinearProblem::robustness(const Vector& x) const {
  const std::size_t used = static_cast<std::size_t>(n_) * static_cast<std::size_t>(steps_);
  return stl::robustness(std::span<const double>(x.data(), used), static_cast<std::size_t>(n_), formula_, 0);
}

std::vector<double> candidate_roots(const Ellipse& e, const LinearProblem& problem, double level) {
  std::vector<double> roots;
  const int n = problem.n();
  for (const auto& h : problem.planes()) {
    const auto seg = [&](const Vector& v) { return h.local.dot(v.segment(h.time * n, n)); };
    const double p = seg(e.anchor), s = seg(e.auxiliary), base = seg(e.mean) + h.offset;
    push_roots(p, s, base - level, roots);
    if (level != 0.0) push_roots(p, s, base + level, roots);
  }
  std::sort(roots.begin(), roots.end());
  std::vector<double> merged;
  for (double r : roots)
    if (merged.empty() || r - merged.back() > kMergeTol) merged.push_back(r);
  if (merged.size() > 1 && merged.front() + kTwoPi - merged.back() <= kMergeTol) merged.pop_back();
  return merged;
}

AngularDomain active_segments(const Ellipse& e, const LinearProblem& problem, double level) {
  if (!std::isfinite(level)) return AngularDomain::full();
  const double anchor_rho = problem.robustness(e.point(0.0));
  if (anchor_rho < level - 1e-9 * (1.0 + std::abs(level)))
    throw ValidationError("anchor is outside the superlevel set (robustness " + std::to_string(anchor_rho) +
                          " < level " + std::to_string(level) + ")");
  const auto roots = candidate_roots(e, problem, level);
  if (roots.empty()) return AngularDomain::full();

  std::vector<AngularDomain::Arc> feasible;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    const double lo = roots[i];
    const double hi = i + 1 < roots.size() ? roots[i + 1] : roots.front() + kTwoPi;
    const double mid = 0.5 * (lo + hi);
    if (problem.robustness(e.point(mid)) >= level) feasible.push_back({lo, hi > kTwoPi ? hi - kTwoPi : hi});
  }
  return AngularDomain::from_arcs(std::move(feasible));
}

Vector ess_step(const Vector& current, const Vector& mean, const Matrix& factor, const LinearProblem& problem,
                double level, Rng& rng, StepStats* stats) {
  if (std::isfinite(level) && problem.robustness(current) < level)
    throw ValidationError("ESS step started outside the superlevel set");
  Ellipse e{current - mean, factor * standard_normal(factor.cols(), rng), mean};
  const AngularDomain domain = active_segments(e, problem, level);
  const double u = rng.uniform();
  if (stats) {
    ++stats->gaussian_draws;
    ++stats->angle_draws;
  }
  if (domain.empty()) {
    if (stats) ++stats->stalled;
    return current;
  }
  Vector next = e.point(domain.at_fraction(u));
  // A draw within rounding distance of an arc end can land a hair below the level.
  if (std::isfinite(level) && problem.robustness(next) < level) {
    if (stats) ++stats->stalled;
    return current;
  }
  return next;
}

std::vector<Vector> chain(const Vector& seed, int count, int skip, const Vector& mean, const Matrix& factor,
                          const LinearProblem& problem, double level, Rng& rng, StepStats* stats) {
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  Vector x = seed;
  for (int i = 0; i < count; ++i) {
    for (int k = 0; k <= skip; ++k) x = ess_step(x, mean, factor, problem, level, rng, stats);
    out.push_back(x);
  }
  return out;
}

LinearEssSampler::LinearEssSampler(Vector mean, Matrix factor, LinearProblem problem)
    : mean_(std::move(mean)), factor_(std::move(factor)), problem_(std::move(problem)) {
  if (factor_.rows() != mean_.size()) throw ValidationError("covariance factor does not match the mean");
  if (mean_.size() < static_cast<Eigen::Index>(problem_.n()) * problem_.steps())
    throw ValidationError("Gaussian is smaller than the monitored trajectory");
}

Sample LinearEssSampler::draw(Rng& rng) {
  ++evaluations_;
  Vector x = mean_ + factor_ * standard_normal(factor_.cols(), rng);
  const double rho = problem_.robustness(x);
  return {std::move(x), rho, 1.0};
}

Sample LinearEssSampler::step(const Sample& current, double level, Rng& rng) {
  ++evaluations_;
  Vector x = ess_step(current.x, mean_, factor_, problem_, level, rng);
  const double rho = problem_.robustness(x);
  return {std::move(x), rho, 1.0};
}

}  // namespace stless::ess
