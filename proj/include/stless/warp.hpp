#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stless::warp {

using Vector = Eigen::VectorXd;

/// One-dimensional distribution usable as an inverse-CDF target and as a
/// reference density for weights.
class Marginal {
 public:
  enum class Kind { normal, uniform, exponential, truncated_normal };

  static Marginal normal(double mean = 0.0, double sd = 1.0);
  static Marginal uniform(double lo, double hi);
  static Marginal exponential(double rate);
  /// N(mean, sd^2) restricted to [lo, hi]; either bound may be infinite.
  static Marginal truncated_normal(double lo, double hi, double mean = 0.0, double sd = 1.0);

  Kind kind() const noexcept { return kind_; }
  std::string describe() const;

  double log_pdf(double w) const;
  /// The quantile of this law at Phi(x), evaluated without forming Phi(x)
  /// where that would lose tail precision.
  double from_normal(double x) const;
  double to_normal(double w) const;

 private:
  Marginal(Kind kind, double a, double b, double mean, double sd);
  Kind kind_;
  double a_, b_;      // bounds (uniform, truncated) or rate (exponential in a_)
  double mean_, sd_;  // normal / truncated_normal location and scale
};

/// Strictly increasing map of the real line onto a target interval.
class ScalarMap {
 public:
  virtual ~ScalarMap() = default;
  virtual double forward(double x) const = 0;
  virtual double inverse(double w) const = 0;
  virtual double log_derivative(double x) const = 0;
  virtual std::string describe() const = 0;
};

std::shared_ptr<const ScalarMap> identity_map();
std::shared_ptr<const ScalarMap> affine_map(double scale, double offset);
std::shared_ptr<const ScalarMap> inverse_cdf_map(Marginal target);

/// Monotone piecewise-cubic interpolant (Fritsch-Carlson slopes) through the
/// knots, extended linearly beyond the end knots. Both knot sequences must be
/// strictly increasing.
std::shared_ptr<const ScalarMap> spline_map(std::vector<double> x_knots, std::vector<double> w_knots);

/// Bijection from base space (x ~ N(0, I)) to uncertainty space.
class Bijector {
 public:
  virtual ~Bijector() = default;
  virtual std::size_t dim() const = 0;
  virtual Vector forward(const Vector& x) const = 0;
  virtual Vector inverse(const Vector& w) const = 0;
  /// log |det dw/dx| at x.
  virtual double log_det_jacobian(const Vector& x) const = 0;
  virtual std::string describe() const = 0;
};

/// Independent scalar maps per coordinate.
class Elementwise final : public Bijector {
 public:
  explicit Elementwise(std::vector<std::shared_ptr<const ScalarMap>> maps);

  std::size_t dim() const override { return maps_.size(); }
  Vector forward(const Vector& x) const override;
  Vector inverse(const Vector& w) const override;
  double log_det_jacobian(const Vector& x) const override;
  std::string describe() const override;

  const std::vector<std::shared_ptr<const ScalarMap>>& maps() const noexcept { return maps_; }

 private:
  std::vector<std::shared_ptr<const ScalarMap>> maps_;
};

/// Applies parts in order: forward = b_k o ... o b_1.
class Compose final : public Bijector {
 public:
  explicit Compose(std::vector<std::shared_ptr<const Bijector>> parts);

  std::size_t dim() const override { return dim_; }
  Vector forward(const Vector& x) const override;
  Vector inverse(const Vector& w) const override;
  double log_det_jacobian(const Vector& x) const override;
  std::string describe() const override;

 private:
  std::vector<std::shared_ptr<const Bijector>> parts_;
  std::size_t dim_;
};

std::shared_ptr<const Bijector> identity(std::size_t dim);
std::shared_ptr<const Bijector> affine(const Vector& scale, const Vector& offset);
std::shared_ptr<const Bijector> componentwise_inverse_cdf(std::vector<Marginal> targets);
std::shared_ptr<const Bijector> compose(std::vector<std::shared_ptr<const Bijector>> parts);

/// How samples drawn in base space are weighted in the conditional ratios.
///
/// density_ratio: alpha = p_target(w) |det dw/dx| / N(x; 0, I). With no
///   explicit target the pushforward density is used and alpha is exactly 1.
///   With a target (per-coordinate marginals) it corrects an approximate
///   bijector, e.g. a tabulated spline fitted to data.
/// jacobian: alpha = |det dw/dx|, taken literally.
/// none: alpha = 1.
enum class WeightMode { none, density_ratio, jacobian };

WeightMode parse_weight_mode(const std::string& text);
std::string to_string(WeightMode mode);

class Warp {
 public:
  Warp(std::shared_ptr<const Bijector> bijector, WeightMode mode = WeightMode::density_ratio,
       std::optional<std::vector<Marginal>> target = std::nullopt);

  std::size_t dim() const { return bijector_->dim(); }
  const Bijector& bijector() const { return *bijector_; }
  WeightMode mode() const noexcept { return mode_; }
  bool has_target() const noexcept { return target_.has_value(); }

  Vector forward(const Vector& x) const { return bijector_->forward(x); }
  double log_weight(const Vector& x) const;
  double weight(const Vector& x) const;

 private:
  std::shared_ptr<const Bijector> bijector_;
  WeightMode mode_;
  std::optional<std::vector<Marginal>> target_;
};

struct WeightedSample {
  Vector x;
  Vector w;
  double weight = 1.0;
};

/// sum(alpha * in_next) / sum(alpha), over samples that all lie in the
/// previous level. Throws ValidationError if the weights sum to zero.
double weighted_conditional(std::span<const double> weights, const std::vector<bool>& in_next);

/// Same, with membership robustness >= level.
double weighted_conditional(std::span<const double> weights, std::span<const double> robustness, double level);

}  // namespace stless::warp
