#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <vector>

#include "stless/angular_domain.hpp"
#include "stless/lin_gauss.hpp"
#include "stless/rng.hpp"
#include "stless/sampler.hpp"
#include "stless/stl.hpp"

namespace stless::ess {

using lin::Matrix;
using lin::Vector;

/// point(theta) = mean + anchor cos(theta) + auxiliary sin(theta), with anchor
/// and auxiliary both centered at the mean.
struct Ellipse {
  Vector anchor;
  Vector auxiliary;
  Vector mean;

  Vector point(double theta) const { return mean + anchor * std::cos(theta) + auxiliary * std::sin(theta); }
};

/// Angles in [0, 2pi) where a . point(theta) + c == 0 (zero, one or two).
std::vector<double> hyperplane_roots(const Ellipse& e, const Vector& a, double c);

/// Failure formula over a stacked trajectory plus its lifted hyperplanes. The
/// sampled vector may be longer than n * steps; trailing coordinates are
/// carried along but not monitored.
class LinearProblem {
 public:
  LinearProblem(stl::Formula formula, int n, int steps, std::vector<lin::Hyperplane> planes);

  /// Convenience: lifts the formula's predicates from the state names.
  static LinearProblem from_states(stl::Formula formula, std::span<const std::string> state_names, int steps);

  double robustness(const Vector& x) const;
  const stl::Formula& formula() const noexcept { return formula_; }
  const std::vector<lin::Hyperplane>& planes() const noexcept { return planes_; }
  int n() const noexcept { return n_; }
  int steps() const noexcept { return steps_; }

 private:
  stl::Formula formula_;
  int n_;
  int steps_;
  std::vector<lin::Hyperplane> planes_;
};

/// All roots of every hyperplane shifted to +level and -level, sorted
/// cyclically and merged within 1e-12 rad.
std::vector<double> candidate_roots(const Ellipse& e, const LinearProblem& problem, double level);

/// Arcs of the ellipse on which robustness >= level, classified at each arc
/// midpoint. Throws ValidationError if the anchor (theta = 0) is infeasible.
AngularDomain active_segments(const Ellipse& e, const LinearProblem& problem, double level);

struct StepStats {
  std::size_t gaussian_draws = 0;
  std::size_t angle_draws = 0;
  std::size_t stalled = 0;  // degenerate steps that kept the current point
};

/// One rejection-free elliptical slice step inside {robustness >= level}.
/// `factor` maps standard normals to N(0, cov).
Vector ess_step(const Vector& current, const Vector& mean, const Matrix& factor, const LinearProblem& problem,
                double level, Rng& rng, StepStats* stats = nullptr);

/// `count` retained states, with `skip` discarded steps before each one.
std::vector<Vector> chain(const Vector& seed, int count, int skip, const Vector& mean, const Matrix& factor,
                          const LinearProblem& problem, double level, Rng& rng, StepStats* stats = nullptr);

/// Closed-form ESS over a Gaussian N(mean, factor factor^T).
class LinearEssSampler final : public LevelSampler {
 public:
  LinearEssSampler(Vector mean, Matrix factor, LinearProblem problem);
  LinearEssSampler(const lin::TrajectoryGaussian& g, LinearProblem problem)
      : LinearEssSampler(g.mean, g.factor, std::move(problem)) {}

  Sample draw(Rng& rng) override;
  Sample step(const Sample& current, double level, Rng& rng) override;
  std::size_t simulations() const override { return evaluations_.load(); }
  bool concurrent() const override { return true; }

  const LinearProblem& problem() const noexcept { return problem_; }
  const Vector& mean() const noexcept { return mean_; }
  const Matrix& factor() const noexcept { return factor_; }

 private:
  Vector mean_;
  Matrix factor_;
  LinearProblem problem_;
  std::atomic<std::size_t> evaluations_{0};
};

}  // namespace stless::ess
