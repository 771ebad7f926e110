#pragma once

#include <Eigen/Dense>
#include <cstddef>

#include "stless/rng.hpp"

namespace stless {

/// A point of the sampled space with its robustness under the failure formula
/// and its warping weight.
struct Sample {
  Eigen::VectorXd x;
  double robustness = 0.0;
  double weight = 1.0;
};

/// What the nesting ladder needs from a sampler: independent draws from the
/// base distribution, and one Markov step that stays inside the superlevel
/// set {robustness >= level}.
class LevelSampler {
 public:
  virtual ~LevelSampler() = default;

  virtual Sample draw(Rng& rng) = 0;
  virtual Sample step(const Sample& current, double level, Rng& rng) = 0;

  /// Trajectory / simulator evaluations performed so far.
  virtual std::size_t simulations() const = 0;

  /// Whether draw/step may be called concurrently from several chains.
  virtual bool concurrent() const { return false; }
};

}  // namespace stless
