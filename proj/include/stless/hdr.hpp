#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "stless/error.hpp"
#include "stless/rng.hpp"
#include "stless/sampler.hpp"

namespace stless::hdr {

struct HdrConfig {
  int n_ess = 250;        // retained samples per nesting
  int n_skip = 5;         // discarded steps between retained samples
  int chains = 10;        // Markov chains per nesting; retained samples are split evenly
  std::uint64_t seed = 0;
  int max_nestings = 200;
  int retries = 3;        // reruns of a nesting (with doubled n_ess) when the threshold stalls
  int threads = 1;        // used only by samplers that allow concurrent chains
  int final_samples = -1; // fresh failure samples after the ladder; -1 means n_ess

  void validate() const;
};

/// The ladder: thresholds[0] = -inf < thresholds[1] < ... < thresholds[K] = 0.
/// samples[k] lie in {robustness >= thresholds[k]} and conditionals[k] is the
/// weighted fraction of them reaching thresholds[k + 1].
struct NestingLadder {
  std::vector<double> thresholds;
  std::vector<double> conditionals;
  std::vector<std::vector<Sample>> samples;
  std::vector<int> attempts;  // runs per nesting, 1 unless it was retried

  std::size_t nestings() const noexcept { return conditionals.size(); }
  std::vector<int> sizes() const;
};

struct VerificationResult {
  double p_estimate = 0.0;
  double variance = 0.0;
  NestingLadder ladder;
  std::size_t simulations = 0;
  std::vector<Sample> failure_samples;
  HdrConfig config;
};

/// Thrown when the ladder cannot progress; carries what was built so far.
class LadderStall : public LadderError {
 public:
  LadderStall(const std::string& message, NestingLadder partial, std::size_t simulations)
      : LadderError(message), partial_(std::move(partial)), simulations_(simulations) {}

  const NestingLadder& partial() const noexcept { return partial_; }
  std::size_t simulations() const noexcept { return simulations_; }

 private:
  NestingLadder partial_;
  std::size_t simulations_;
};

/// min(0, median). The median of an even count averages the middle pair.
double next_threshold(std::span<const double> robustness);

/// prod(p(1-p)/n + p^2) - prod(p^2), clamped at zero.
double variance(std::span<const double> conditionals, int n_ess);

/// Same, with a sample count per nesting.
double variance(std::span<const double> conditionals, std::span<const int> sizes);

/// exp(-2 delta^2 ln(lambda)^2 n / K): chance that the estimate exceeds
/// lambda times the true value.
double error_bound(double lambda, double delta, int n_ess, int nestings);

/// Smallest n_ess with error_bound(...) <= eps, at least 1.
int required_samples(double lambda, double delta, int nestings, double eps);

/// Runs `count` retained samples at `level`, split across `chains` chains,
/// each starting from a seed drawn uniformly from `seeds` (systematically:
/// the starts are spread evenly through the list). Chain j uses the
/// stream rng.split(j); results are concatenated in chain order.
std::vector<Sample> sample_level(LevelSampler& sampler, std::span<const Sample> seeds, double level, int count,
                                 int n_skip, int chains, int threads, const Rng& rng);

/// The adaptive ladder on {robustness >= 0}.
VerificationResult verify(LevelSampler& sampler, const HdrConfig& config);

/// Fresh samples from {robustness >= 0}, seeded from a finished verification.
std::vector<Sample> sample_failures(LevelSampler& sampler, const VerificationResult& result, int count,
                                    const HdrConfig& config, const Rng& rng);

struct McEstimate {
  std::size_t trials = 0;
  std::size_t failures = 0;
  double p_hat = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string method;  // "normal" or "clopper-pearson"
};

/// 95% interval for failures out of trials: normal approximation, or exact
/// Clopper-Pearson when fewer than 5 failures were seen.
McEstimate binomial_estimate(std::size_t failures, std::size_t trials);

/// Plain Monte Carlo with independent base draws; failure is robustness >= 0.
McEstimate mc_estimate(LevelSampler& sampler, std::size_t trials, std::uint64_t seed);

}  // namespace stless::hdr
