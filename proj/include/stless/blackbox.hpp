#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "stless/angular_domain.hpp"
#include "stless/hdr.hpp"
#include "stless/rng.hpp"
#include "stless/sampler.hpp"
#include "stless/stl.hpp"
#include "stless/warp.hpp"

namespace stless::blackbox {

using Vector = Eigen::VectorXd;

/// Deterministic map from an uncertainty vector w (length dim()) to an output
/// signal with horizon() rows over channels().
class RunFunction {
 public:
  virtual ~RunFunction() = default;
  virtual std::size_t dim() const = 0;
  virtual const std::vector<std::string>& channels() const = 0;
  virtual int horizon() const = 0;
  /// Whether run() must not be called from several threads at once.
  virtual bool serial() const { return true; }
  virtual stl::Signal run(const Vector& w) = 0;
};

/// In-process run function. `fn` returns horizon * channels values, row-major.
class FunctionRun final : public RunFunction {
 public:
  using Fn = std::function<std::vector<double>(const Vector&)>;
  FunctionRun(std::size_t dim, std::vector<std::string> channels, int horizon, Fn fn, bool serial = false);

  std::size_t dim() const override { return dim_; }
  const std::vector<std::string>& channels() const override { return channels_; }
  int horizon() const override { return horizon_; }
  bool serial() const override { return serial_; }
  stl::Signal run(const Vector& w) override;

 private:
  std::size_t dim_;
  std::vector<std::string> channels_;
  int horizon_;
  Fn fn_;
  bool serial_;
};

/// y = w reshaped into `horizon` rows of `channels.size()` values.
std::unique_ptr<RunFunction> identity_run(std::vector<std::string> channels, int horizon = 1);

/// Robustness along the ellipse w(theta) = anchor cos(theta) + auxiliary sin(theta)
/// (base space has zero mean). Every cache miss costs one call of `evaluate`;
/// values are cached by the bits of theta wrapped to [0, 2pi).
class EllipseRobustness {
 public:
  using Evaluate = std::function<double(const Vector&)>;
  EllipseRobustness(Vector anchor, Vector auxiliary, Evaluate evaluate);

  /// Seeds the cache at theta = 0 with a value already known.
  void set_anchor_robustness(double rho);

  double operator()(double theta);
  Vector point(double theta) const;
  std::size_t evaluations() const noexcept { return evaluations_; }

 private:
  Vector anchor_, auxiliary_;
  Evaluate evaluate_;
  std::unordered_map<std::uint64_t, double> cache_;
  std::size_t evaluations_ = 0;
};

/// Lipschitz elimination state. `M` is robustness per radian and persists
/// across ellipses; M <= 0 means "estimate on first use".
struct LipschitzState {
  double M = 0.0;
  double eps_inflate = 0.5;
  int max_candidates = 10000;

  // Diagnostics.
  std::size_t inflations = 0;
  std::size_t stalls = 0;
};

struct AngleResult {
  double theta = 0.0;
  double robustness = 0.0;
  bool stalled = false;  // no feasible angle found; theta = 0 returned
};

/// 2 * max slope over 8 consecutive probe pairs around the ellipse, floored at 1e-3.
double initial_lipschitz(EllipseRobustness& f);

/// Candidate domain: the circle minus the arc of radius (level - rho_i) / M
/// around every infeasible history point.
AngularDomain lipschitz_domain(std::span<const double> thetas, std::span<const double> rhos, double level, double M);

/// Draws candidate angles uniformly from the surviving domain until one is
/// feasible, removing the provably infeasible arc around each miss.
AngleResult lipschitz_sample(EllipseRobustness& f, double level, LipschitzState& state, Rng& rng);

enum class Acquisition { ucb, ei, poi };
Acquisition parse_acquisition(const std::string& text);
std::string to_string(Acquisition a);

struct BoConfig {
  int n_bo = 10;
  double kappa = 2.576;
  double xi = 0.0;
  Acquisition acquisition = Acquisition::ucb;
  double sigma_max = -1.0;  // < 0: 0.1 * (rho(0) - level + 1e-9)
  int grid = 720;
  int max_rounds = 200;
  double margin = 2.0;  // proposal arcs are where mean + margin * sd >= level

  void validate() const;
};

/// GP regression on the circle: squared-exponential kernel of the chordal
/// distance 2 sin(d / 2), constant prior mean. Hyperparameters are refreshed
/// from the data on every registration: length-scale half the median pairwise
/// distance, signal variance max(sample variance, range^2), jitter 1e-6 of it.
class CircularGp {
 public:
  void add(double theta, double rho);
  std::size_t size() const noexcept { return thetas_.size(); }
  const std::vector<double>& thetas() const noexcept { return thetas_; }

  struct Prediction {
    double mean;
    double sd;
  };
  Prediction predict(double theta) const;

  /// Posterior at theta_g = 2 pi g / grid for g = 0 .. grid - 1.
  struct GridPrediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd sd;
  };
  GridPrediction predict_grid(int grid) const;

  double length_scale() const noexcept { return ell_; }
  double signal_variance() const noexcept { return sf2_; }

 private:
  void refit();
  double kernel(double a, double b) const;

  std::vector<double> thetas_, rhos_;
  double ell_ = 1.0, sf2_ = 1.0, sn2_ = 1e-6, prior_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
};

double acquisition_value(Acquisition type, const CircularGp::Prediction& p, double best, double kappa, double xi);

/// Arcs where the posterior mean is at least `level`, from a uniform grid with
/// linear interpolation of the crossings.
AngularDomain predicted_domain(const CircularGp& gp, double level, int grid);
AngularDomain predicted_domain(const Eigen::VectorXd& grid_mean, double level);

AngleResult bo_sample(EllipseRobustness& f, double level, const BoConfig& config, Rng& rng);

enum class Method { lipschitz, bo };
Method parse_method(const std::string& text);
std::string to_string(Method m);

struct BlackboxConfig {
  Method method = Method::lipschitz;
  double lipschitz_m = 0.0;  // <= 0: estimated
  double eps_inflate = 0.5;
  BoConfig bo;
  std::size_t budget = 1000000;  // run-function calls per sampler

  void validate() const;
};

/// ESS in base space x ~ N(0, I); the run function sees w = warp.forward(x).
/// Robustness is that of `failure` on the simulated signal.
class BlackboxSampler final : public LevelSampler {
 public:
  BlackboxSampler(RunFunction& run, stl::Formula failure, warp::Warp warp, BlackboxConfig config);

  Sample draw(Rng& rng) override;
  Sample step(const Sample& current, double level, Rng& rng) override;
  std::size_t simulations() const override { return calls_.load(); }

  /// One simulation at base-space x.
  double evaluate(const Vector& x);
  Vector uncertainty(const Vector& x) const { return warp_.forward(x); }

  const LipschitzState& lipschitz() const noexcept { return lipschitz_; }
  std::size_t stalled_steps() const noexcept { return stalled_; }
  const warp::Warp& warp() const noexcept { return warp_; }

 private:
  RunFunction& run_;
  stl::Formula failure_;
  warp::Warp warp_;
  BlackboxConfig config_;
  LipschitzState lipschitz_;
  std::atomic<std::size_t> calls_{0};
  std::size_t stalled_ = 0;
};

hdr::VerificationResult blackbox_verify(RunFunction& run, const stl::Formula& failure, const warp::Warp& warp,
                                        const BlackboxConfig& config, const hdr::HdrConfig& hdr_config);

}  // namespace stless::blackbox
