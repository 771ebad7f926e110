#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "stless/hdr.hpp"
#include "stless/lin_gauss.hpp"
#include "stless/stl.hpp"

namespace stless::synth {

using lin::Matrix;
using lin::Vector;

/// Inverse of a covariance, or its pseudo-inverse (eigenvalues below
/// 1e-9 * max dropped) when it is singular.
struct Precision {
  Matrix inverse;
  bool pseudo = false;
};
Precision precision(const Matrix& cov);

/// Sample mean of P (x - mean): the score of N(x; mean, cov) w.r.t. the mean,
/// averaged over failure samples. Multiplying by p gives dp/dmean.
Vector grad_mu(const std::vector<Vector>& samples, const Vector& mean, const Precision& prec);

/// Sample mean of 0.5 (P d d^T P - P) with d = x - mean, symmetrized.
Matrix grad_sigma(const std::vector<Vector>& samples, const Vector& mean, const Precision& prec);

/// Score w.r.t. one system parameter by the chain rule:
/// dmean . grad_mu + <dcov, grad_sigma>.
double grad_parameter(const lin::Sensitivity& s, const Vector& g_mu, const Matrix& g_sigma);

struct SynthesisProblem {
  lin::LtvSystem system;
  stl::Formula failure;                    // robustness >= 0 marks a failing trajectory
  std::vector<lin::Parameter> parameters;  // gamma
  int direction = -1;                      // -1 lowers the failure probability, +1 raises it
  double alpha = 0.1;
  int n_samples = 500;
  int max_iterations = 100;
  double target_p = 0.0;  // stop once the estimate falls to or below this
  hdr::HdrConfig hdr;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthesisRecord {
  int iteration = 0;
  std::vector<double> gamma;
  double p = 0.0;
  double variance = 0.0;
  std::vector<double> direction;  // E[score | failure] = (dp/dgamma) / p
  std::vector<double> gradient;   // p * direction
  std::vector<double> step;       // applied change of gamma
  double gradient_norm = 0.0;     // |gradient|
  std::size_t simulations = 0;
  int nestings = 0;
  bool pseudo_inverse = false;
};

struct SynthesisTrace {
  std::vector<SynthesisRecord> records;
  std::vector<double> final_gamma;
  std::string status;  // "max_iterations", "target_reached", "gradient_vanished", "no_failure_sample"
  std::string message;
};

/// Iterates gamma <- gamma + direction * alpha * E[score | failure], with a
/// fresh verification and fresh failure samples at every iterate.
SynthesisTrace synthesize(const SynthesisProblem& problem);

struct InitialControls {
  bool found = false;
  std::vector<Vector> references;  // one m-vector per step
  double robustness = 0.0;
  double p_estimate = 0.0;
};

/// Searches for a reference sequence under which the noise-free plant satisfies
/// `spec`: references are drawn from N(current reference, control_cov) per
/// step and the ladder is run on {robustness(spec) >= 0}.
InitialControls find_initial_controls(const lin::LtvSystem& system, const stl::Formula& spec,
                                      const Matrix& control_cov, const hdr::HdrConfig& config);

}  // namespace stless::synth
