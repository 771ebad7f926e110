#include "stless/hdr.hpp"

#include <algorithm>
#include <atomic>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "stless/warp.hpp"

namespace stless::hdr {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> robustness_of(const std::vector<Sample>& samples) {
  std::vector<double> r;
  r.reserve(samples.size());
  for (const Sample& s : samples) r.push_back(s.robustness);
  return r;
}

std::vector<double> weights_of(const std::vector<Sample>& samples) {
  std::vector<double> w;
  w.reserve(samples.size());
  for (const Sample& s : samples) w.push_back(s.weight);
  return w;
}

std::vector<Sample> run_chain(LevelSampler& sampler, const Sample* start, double level, int count, int n_skip,
                              Rng rng) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  if (count <= 0) return out;
  if (!std::isfinite(level)) {
    for (int i = 0; i < count; ++i) out.push_back(sampler.draw(rng));
    return out;
  }
  Sample x = *start;
  for (int i = 0; i < count; ++i) {
    for (int k = 0; k <= n_skip; ++k) x = sampler.step(x, level, rng);
    out.push_back(x);
  }
  return out;
}

bool strictly_above(double next, double level) {
  if (!std::isfinite(level)) return true;
  return next > level + 1e-12 * std::max(1.0, std::abs(level));
}

}  // namespace

void HdrConfig::validate() const {
  if (n_ess < 2) throw ValidationError("n_ess must be at least 2");
  if (n_skip < 0) throw ValidationError("n_skip must be non-negative");
  if (chains < 1) throw ValidationError("chains must be at least 1");
  if (max_nestings < 1) throw ValidationError("max_nestings must be at least 1");
  if (retries < 0) throw ValidationError("retries must be non-negative");
  if (threads < 1) throw ValidationError("threads must be at least 1");
  if (final_samples < -1) throw ValidationError("final_samples must be -1 (n_ess) or non-negative");
}

std::vector<int> NestingLadder::sizes() const {
  std::vector<int> out;
  for (std::size_t k = 0; k < conditionals.size(); ++k) out.push_back(static_cast<int>(samples[k].size()));
  return out;
}

double next_threshold(std::span<const double> robustness) {
  if (robustness.size() < 2) throw ValidationError("threshold needs at least two samples");
  std::vector<double> v(robustness.begin(), robustness.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double median = v[mid];
  if (v.size() % 2 == 0) {
    const double below = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (below + median);
  }
  return std::min(0.0, median);
}

double variance(std::span<const double> conditionals, std::span<const int> sizes) {
  if (conditionals.size() != sizes.size()) throw ValidationError("one sample size per nesting is required");
  double second = 1.0, first_sq = 1.0;
  for (std::size_t k = 0; k < conditionals.size(); ++k) {
    const double p = conditionals[k];
    if (sizes[k] < 1) throw ValidationError("sample sizes must be positive");
    second *= p * (1.0 - p) / sizes[k] + p * p;
    first_sq *= p * p;
  }
  return std::max(0.0, second - first_sq);
}

double variance(std::span<const double> conditionals, int n_ess) {
  const std::vector<int> sizes(conditionals.size(), n_ess);
  return variance(conditionals, sizes);
}

double error_bound(double lambda, double delta, int n_ess, int nestings) {
  if (!(lambda > 1.0)) throw ValidationError("lambda must exceed 1");
  if (!(delta > 0.0 && delta <= 1.0)) throw ValidationError("delta must lie in (0, 1]");
  if (n_ess < 1 || nestings < 1) throw ValidationError("n_ess and the nesting count must be positive");
  const double l = std::log(lambda);
  return std::exp(-2.0 * delta * delta * l * l * n_ess / nestings);
}

int required_samples(double lambda, double delta, int nestings, double eps) {
  if (!(lambda > 1.0)) throw ValidationError("lambda must exceed 1");
  if (!(delta > 0.0 && delta <= 1.0)) throw ValidationError("delta must lie in (0, 1]");
  if (nestings < 1) throw ValidationError("the nesting count must be positive");
  if (!(eps > 0.0 && eps <= 1.0)) throw ValidationError("eps must lie in (0, 1]");
  const double l = std::log(lambda);
  const double n = -std::log(eps) * nestings / (2.0 * delta * delta * l * l);
  return std::max(1, static_cast<int>(std::ceil(n - 1e-9 * std::max(1.0, n))));
}

std::vector<Sample> sample_level(LevelSampler& sampler, std::span<const Sample> seeds, double level, int count,
                                 int n_skip, int chains, int threads, const Rng& rng) {
  if (std::isfinite(level) && seeds.empty()) throw LadderError("no seed lies in the current level");
  chains = std::max(1, std::min(chains, std::max(count, 1)));
  std::vector<int> share(static_cast<std::size_t>(chains), count / chains);
  for (int j = 0; j < count % chains; ++j) ++share[static_cast<std::size_t>(j)];

  // Systematic choice of starts: each chain's seed is uniform over `seeds`,
  // while jointly the starts are spread evenly through the list.
  std::vector<const Sample*> starts(static_cast<std::size_t>(chains), nullptr);
  if (!seeds.empty()) {
    const double u = rng.split("starts").uniform();
    for (int j = 0; j < chains; ++j) {
      const auto i = static_cast<std::size_t>((j + u) * static_cast<double>(seeds.size()) / chains);
      starts[static_cast<std::size_t>(j)] = &seeds[std::min(i, seeds.size() - 1)];
    }
  }

  std::vector<std::vector<Sample>> parts(static_cast<std::size_t>(chains));
  const int workers = sampler.concurrent() ? std::min(threads, chains) : 1;
  if (workers <= 1) {
    for (int j = 0; j < chains; ++j)
      parts[static_cast<std::size_t>(j)] =
          run_chain(sampler, starts[static_cast<std::size_t>(j)], level, share[static_cast<std::size_t>(j)], n_skip,
                    rng.split(static_cast<std::uint64_t>(j)));
  } else {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (int j = next++; j < chains; j = next++) {
          try {
            parts[static_cast<std::size_t>(j)] = run_chain(sampler, starts[static_cast<std::size_t>(j)], level,
                                                           share[static_cast<std::size_t>(j)], n_skip,
                                                           rng.split(static_cast<std::uint64_t>(j)));
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(out));
  return out;
}

VerificationResult verify(LevelSampler& sampler, const HdrConfig& config) {
  config.validate();
  const Rng root(config.seed);
  const Rng nesting_rng = root.split("nesting");
  const std::size_t start_sims = sampler.simulations();

  VerificationResult result;
  result.config = config;
  NestingLadder& ladder = result.ladder;
  ladder.thresholds.push_back(kNegInf);

  std::vector<Sample> seeds;  // members of the current level that start its chains
  double level = kNegInf;
  for (int k = 0;; ++k) {
    if (k >= config.max_nestings)
      throw LadderStall("no failure level reached within " + std::to_string(config.max_nestings) + " nestings",
                        ladder, sampler.simulations() - start_sims);
    int count = config.n_ess;
    int attempt = 0;
    std::vector<Sample> samples;
    double next = 0.0;
    for (;; ++attempt) {
      Rng stream = nesting_rng.split(static_cast<std::uint64_t>(k));
      if (attempt > 0) stream = stream.split("retry").split(static_cast<std::uint64_t>(attempt));
      samples = sample_level(sampler, seeds, level, count, config.n_skip, config.chains, config.threads, stream);
      const auto rho = robustness_of(samples);
      next = next_threshold(rho);
      if (strictly_above(next, level)) break;
      if (attempt >= config.retries)
        throw LadderStall("threshold stalled at " + std::to_string(level) + " after " + std::to_string(attempt + 1) +
                              " attempts",
                          ladder, sampler.simulations() - start_sims);
      count *= 2;
    }

    const auto rho = robustness_of(samples);
    const auto weights = weights_of(samples);
    const double p = warp::weighted_conditional(weights, rho, next);
    ladder.conditionals.push_back(p);
    ladder.thresholds.push_back(next);
    ladder.attempts.push_back(attempt + 1);

    seeds.clear();
    for (const Sample& s : samples)
      if (s.robustness >= next) seeds.push_back(s);
    ladder.samples.push_back(std::move(samples));
    level = next;
    if (next >= 0.0) break;
  }

  double p = 1.0;
  for (double c : ladder.conditionals) p *= c;
  result.p_estimate = p;
  result.variance = variance(ladder.conditionals, ladder.sizes());

  const int extra = config.final_samples < 0 ? config.n_ess : config.final_samples;
  if (extra > 0 && !seeds.empty())
    result.failure_samples =
        sample_level(sampler, seeds, 0.0, extra, config.n_skip, config.chains, config.threads, root.split("final"));
  result.simulations = sampler.simulations() - start_sims;
  return result;
}

std::vector<Sample> sample_failures(LevelSampler& sampler, const VerificationResult& result, int count,
                                    const HdrConfig& config, const Rng& rng) {
  std::vector<Sample> seeds = result.failure_samples;
  if (seeds.empty() && !result.ladder.samples.empty())
    for (const Sample& s : result.ladder.samples.back())
      if (s.robustness >= 0.0) seeds.push_back(s);
  if (seeds.empty()) throw LadderError("the verification holds no failure sample to start from");
  return sample_level(sampler, seeds, 0.0, count, config.n_skip, config.chains, config.threads, rng);
}

McEstimate binomial_estimate(std::size_t failures, std::size_t trials) {
  if (trials == 0) throw ValidationError("at least one trial is required");
  if (failures > trials) throw ValidationError("more failures than trials");
  McEstimate e;
  e.trials = trials;
  e.failures = failures;
  const double n = static_cast<double>(trials), f = static_cast<double>(failures);
  e.p_hat = f / n;
  if (failures < 5) {
    e.method = "clopper-pearson";
    e.ci_low = failures == 0 ? 0.0 : boost::math::ibeta_inv(f, n - f + 1.0, 0.025);
    e.ci_high = failures == trials ? 1.0 : boost::math::ibeta_inv(f + 1.0, n - f, 0.975);
  } else {
    e.method = "normal";
    const double half = 1.959963984540054 * std::sqrt(e.p_hat * (1.0 - e.p_hat) / n);
    e.ci_low = std::max(0.0, e.p_hat - half);
    e.ci_high = std::min(1.0, e.p_hat + half);
  }
  return e;
}

McEstimate mc_estimate(LevelSampler& sampler, std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw ValidationError("at least one trial is required");
  Rng rng = Rng(seed).split("mc");
  std::size_t failures = 0;
  for (std::size_t i = 0; i < trials; ++i)
    if (sampler.draw(rng).robustness >= 0.0) ++failures;
  return binomial_estimate(failures, trials);
}

}  // namespace stless::hdr
