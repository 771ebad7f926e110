#include "stless/warp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "stless/error.hpp"
#include "stless/normal.hpp"

namespace stless::warp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

class IdentityMap final : public ScalarMap {
 public:
  double forward(double x) const override { return x; }
  double inverse(double w) const override { return w; }
  double log_derivative(double) const override { return 0.0; }
  std::string describe() const override { return "identity"; }
};

class AffineMap final : public ScalarMap {
 public:
  AffineMap(double scale, double offset) : scale_(scale), offset_(offset), log_scale_(std::log(scale)) {}
  double forward(double x) const override { return scale_ * x + offset_; }
  double inverse(double w) const override { return (w - offset_) / scale_; }
  double log_derivative(double) const override { return log_scale_; }
  std::string describe() const override { return "affine(" + fmt(scale_) + ", " + fmt(offset_) + ")"; }

 private:
  double scale_, offset_, log_scale_;
};

class InverseCdfMap final : public ScalarMap {
 public:
  explicit InverseCdfMap(Marginal target) : target_(target) {}
  double forward(double x) const override { return target_.from_normal(x); }
  double inverse(double w) const override { return target_.to_normal(w); }
  double log_derivative(double x) const override {
    return normal::log_pdf(x) - target_.log_pdf(target_.from_normal(x));
  }
  std::string describe() const override { return "inverse_cdf(" + target_.describe() + ")"; }

 private:
  Marginal target_;
};

class SplineMap final : public ScalarMap {
 public:
  SplineMap(std::vector<double> xs, std::vector<double> ws) : x_(std::move(xs)), w_(std::move(ws)) {
    if (x_.size() < 2 || x_.size() != w_.size()) throw ValidationError("spline needs at least two matching knots");
    const std::size_t n = x_.size();
    std::vector<double> h(n - 1), delta(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      h[k] = x_[k + 1] - x_[k];
      const double dw = w_[k + 1] - w_[k];
      if (!(h[k] > 0.0) || !(dw > 0.0)) throw ValidationError("spline knots must be strictly increasing");
      delta[k] = dw / h[k];
    }
    slope_.assign(n, 0.0);
    slope_.front() = delta.front();
    slope_.back() = delta.back();
    for (std::size_t k = 1; k + 1 < n; ++k) {
      const double h0 = h[k - 1], h1 = h[k];
      slope_[k] = 3.0 * (h0 + h1) / ((2.0 * h1 + h0) / delta[k - 1] + (h1 + 2.0 * h0) / delta[k]);
    }
  }

  double forward(double x) const override {
    if (x <= x_.front()) return w_.front() + slope_.front() * (x - x_.front());
    if (x >= x_.back()) return w_.back() + slope_.back() * (x - x_.back());
    const std::size_t k = segment(x);
    const double h = x_[k + 1] - x_[k], t = (x - x_[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * w_[k] + (t3 - 2 * t2 + t) * h * slope_[k] + (-2 * t3 + 3 * t2) * w_[k + 1] +
           (t3 - t2) * h * slope_[k + 1];
  }

  double derivative(double x) const {
    if (x <= x_.front()) return slope_.front();
    if (x >= x_.back()) return slope_.back();
    const std::size_t k = segment(x);
    const double h = x_[k + 1] - x_[k], t = (x - x_[k]) / h;
    const double t2 = t * t;
    return (6 * t2 - 6 * t) * w_[k] / h + (3 * t2 - 4 * t + 1) * slope_[k] + (-6 * t2 + 6 * t) * w_[k + 1] / h +
           (3 * t2 - 2 * t) * slope_[k + 1];
  }

  double log_derivative(double x) const override { return std::log(derivative(x)); }

  double inverse(double w) const override {
    if (w <= w_.front()) return x_.front() + (w - w_.front()) / slope_.front();
    if (w >= w_.back()) return x_.back() + (w - w_.back()) / slope_.back();
    const auto it = std::upper_bound(w_.begin(), w_.end(), w);
    const std::size_t k = static_cast<std::size_t>(it - w_.begin()) - 1;
    double lo = x_[k], hi = x_[k + 1];
    double x = lo + (w - w_[k]) / (w_[k + 1] - w_[k]) * (hi - lo);
    for (int iter = 0; iter < 100; ++iter) {
      const double r = forward(x) - w;
      if (r == 0.0) break;
      (r > 0.0 ? hi : lo) = x;
      const double d = derivative(x);
      double next = d > 0.0 ? x - r / d : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (next == x || hi - lo <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(x))) break;
      x = next;
    }
    return x;
  }

  std::string describe() const override { return "spline(" + std::to_string(x_.size()) + " knots)"; }

 private:
  std::size_t segment(double x) const {
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    return std::min(static_cast<std::size_t>(it - x_.begin()) - 1, x_.size() - 2);
  }

  std::vector<double> x_, w_, slope_;
};

}  // namespace

Marginal::Marginal(Kind kind, double a, double b, double mean, double sd)
    : kind_(kind), a_(a), b_(b), mean_(mean), sd_(sd) {}

Marginal Marginal::normal(double mean, double sd) {
  if (!(sd > 0.0) || !std::isfinite(mean)) throw ValidationError("normal needs finite mean and sd > 0");
  return {Kind::normal, -kInf, kInf, mean, sd};
}

Marginal Marginal::uniform(double lo, double hi) {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw ValidationError("uniform needs finite a < b");
  return {Kind::uniform, lo, hi, 0.0, 1.0};
}

Marginal Marginal::exponential(double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw ValidationError("exponential needs rate > 0");
  return {Kind::exponential, rate, 0.0, 0.0, 1.0};
}

Marginal Marginal::truncated_normal(double lo, double hi, double mean, double sd) {
  if (!(lo < hi)) throw ValidationError("truncated_normal needs lo < hi");
  if (!(sd > 0.0) || !std::isfinite(mean)) throw ValidationError("truncated_normal needs finite mean and sd > 0");
  return {Kind::truncated_normal, lo, hi, mean, sd};
}

std::string Marginal::describe() const {
  switch (kind_) {
    case Kind::normal: return "normal(" + fmt(mean_) + ", " + fmt(sd_) + ")";
    case Kind::uniform: return "uniform(" + fmt(a_) + ", " + fmt(b_) + ")";
    case Kind::exponential: return "exponential(" + fmt(a_) + ")";
    case Kind::truncated_normal:
      return "truncated_normal(" + fmt(a_) + ", " + fmt(b_) + ", " + fmt(mean_) + ", " + fmt(sd_) + ")";
  }
  return {};
}

double Marginal::log_pdf(double w) const {
  switch (kind_) {
    case Kind::normal: return normal::log_pdf((w - mean_) / sd_) - std::log(sd_);
    case Kind::uniform: return (w >= a_ && w <= b_) ? -std::log(b_ - a_) : -kInf;
    case Kind::exponential: return w >= 0.0 ? std::log(a_) - a_ * w : -kInf;
    case Kind::truncated_normal: {
      if (w < a_ || w > b_) return -kInf;
      const double alpha = (a_ - mean_) / sd_, beta = (b_ - mean_) / sd_;
      double log_mass;
      if (alpha > 0.0) {
        log_mass = std::isinf(beta) ? normal::log_sf(alpha) : std::log(normal::sf(alpha) - normal::sf(beta));
      } else {
        log_mass = std::isinf(alpha) ? normal::log_cdf(beta) : std::log(normal::cdf(beta) - normal::cdf(alpha));
      }
      return normal::log_pdf((w - mean_) / sd_) - std::log(sd_) - log_mass;
    }
  }
  return -kInf;
}

double Marginal::from_normal(double x) const {
  switch (kind_) {
    case Kind::normal: return mean_ + sd_ * x;
    case Kind::uniform: return std::clamp(a_ + (b_ - a_) * normal::cdf(x), a_, b_);
    case Kind::exponential: {
      const double neg_log_s = x > 0.0 ? -normal::log_sf(x) : -std::log1p(-normal::cdf(x));
      return neg_log_s / a_;
    }
    case Kind::truncated_normal: {
      const double alpha = (a_ - mean_) / sd_, beta = (b_ - mean_) / sd_;
      double z;
      if (alpha > 0.0) {
        const double sa = normal::sf(alpha), sb = normal::sf(beta);
        z = normal::isf(sb + normal::sf(x) * (sa - sb));
      } else {
        const double ca = normal::cdf(alpha), cb = normal::cdf(beta);
        z = normal::quantile(ca + normal::cdf(x) * (cb - ca));
      }
      return mean_ + sd_ * std::clamp(z, alpha, beta);
    }
  }
  return x;
}

double Marginal::to_normal(double w) const {
  switch (kind_) {
    case Kind::normal: return (w - mean_) / sd_;
    case Kind::uniform: return normal::quantile((w - a_) / (b_ - a_));
    case Kind::exponential: {
      const double r = a_ * w;
      const double s = std::exp(-r);
      return s < 0.5 ? normal::isf(s) : normal::quantile(-std::expm1(-r));
    }
    case Kind::truncated_normal: {
      const double alpha = (a_ - mean_) / sd_, beta = (b_ - mean_) / sd_;
      const double z = (w - mean_) / sd_;
      if (alpha > 0.0) {
        const double sa = normal::sf(alpha), sb = normal::sf(beta);
        return normal::isf((normal::sf(z) - sb) / (sa - sb));
      }
      const double ca = normal::cdf(alpha), cb = normal::cdf(beta);
      return normal::quantile((normal::cdf(z) - ca) / (cb - ca));
    }
  }
  return w;
}

std::shared_ptr<const ScalarMap> identity_map() {
  static const auto instance = std::make_shared<const IdentityMap>();
  return instance;
}

std::shared_ptr<const ScalarMap> affine_map(double scale, double offset) {
  if (!(scale > 0.0) || !std::isfinite(scale) || !std::isfinite(offset))
    throw ValidationError("affine map needs a finite positive scale and finite offset");
  return std::make_shared<const AffineMap>(scale, offset);
}

std::shared_ptr<const ScalarMap> inverse_cdf_map(Marginal target) {
  return std::make_shared<const InverseCdfMap>(target);
}

std::shared_ptr<const ScalarMap> spline_map(std::vector<double> x_knots, std::vector<double> w_knots) {
  return std::make_shared<const SplineMap>(std::move(x_knots), std::move(w_knots));
}

Elementwise::Elementwise(std::vector<std::shared_ptr<const ScalarMap>> maps) : maps_(std::move(maps)) {
  if (maps_.empty()) throw ValidationError("bijector needs at least one coordinate");
  for (const auto& m : maps_)
    if (!m) throw ValidationError("null scalar map");
}

Vector Elementwise::forward(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != maps_.size()) throw ValidationError("bijector input has wrong length");
  Vector w(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) w(i) = maps_[static_cast<std::size_t>(i)]->forward(x(i));
  return w;
}

Vector Elementwise::inverse(const Vector& w) const {
  if (static_cast<std::size_t>(w.size()) != maps_.size()) throw ValidationError("bijector input has wrong length");
  Vector x(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) x(i) = maps_[static_cast<std::size_t>(i)]->inverse(w(i));
  return x;
}

double Elementwise::log_det_jacobian(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != maps_.size()) throw ValidationError("bijector input has wrong length");
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += maps_[static_cast<std::size_t>(i)]->log_derivative(x(i));
  return s;
}

std::string Elementwise::describe() const {
  std::string out = "elementwise[";
  for (std::size_t i = 0; i < maps_.size(); ++i) out += (i ? ", " : "") + maps_[i]->describe();
  return out + "]";
}

Compose::Compose(std::vector<std::shared_ptr<const Bijector>> parts) : parts_(std::move(parts)) {
  if (parts_.empty()) throw ValidationError("compose needs at least one part");
  dim_ = parts_.front()->dim();
  for (const auto& p : parts_)
    if (!p || p->dim() != dim_) throw ValidationError("composed bijectors must share a dimension");
}

Vector Compose::forward(const Vector& x) const {
  Vector v = x;
  for (const auto& p : parts_) v = p->forward(v);
  return v;
}

Vector Compose::inverse(const Vector& w) const {
  Vector v = w;
  for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) v = (*it)->inverse(v);
  return v;
}

double Compose::log_det_jacobian(const Vector& x) const {
  double s = 0.0;
  Vector v = x;
  for (const auto& p : parts_) {
    s += p->log_det_jacobian(v);
    v = p->forward(v);
  }
  return s;
}

std::string Compose::describe() const {
  std::string out = "compose[";
  for (std::size_t i = 0; i < parts_.size(); ++i) out += (i ? ", " : "") + parts_[i]->describe();
  return out + "]";
}

std::shared_ptr<const Bijector> identity(std::size_t dim) {
  return std::make_shared<const Elementwise>(std::vector<std::shared_ptr<const ScalarMap>>(dim, identity_map()));
}

std::shared_ptr<const Bijector> affine(const Vector& scale, const Vector& offset) {
  if (scale.size() != offset.size()) throw ValidationError("affine scale and offset lengths differ");
  std::vector<std::shared_ptr<const ScalarMap>> maps;
  for (Eigen::Index i = 0; i < scale.size(); ++i) maps.push_back(affine_map(scale(i), offset(i)));
  return std::make_shared<const Elementwise>(std::move(maps));
}

std::shared_ptr<const Bijector> componentwise_inverse_cdf(std::vector<Marginal> targets) {
  std::vector<std::shared_ptr<const ScalarMap>> maps;
  for (const Marginal& m : targets) maps.push_back(inverse_cdf_map(m));
  return std::make_shared<const Elementwise>(std::move(maps));
}

std::shared_ptr<const Bijector> compose(std::vector<std::shared_ptr<const Bijector>> parts) {
  return std::make_shared<const Compose>(std::move(parts));
}

WeightMode parse_weight_mode(const std::string& text) {
  if (text == "none") return WeightMode::none;
  if (text == "density_ratio") return WeightMode::density_ratio;
  if (text == "jacobian") return WeightMode::jacobian;
  throw ValidationError("unknown weight mode '" + text + "' (expected none, density_ratio or jacobian)");
}

std::string to_string(WeightMode mode) {
  switch (mode) {
    case WeightMode::none: return "none";
    case WeightMode::density_ratio: return "density_ratio";
    case WeightMode::jacobian: return "jacobian";
  }
  return {};
}

Warp::Warp(std::shared_ptr<const Bijector> bijector, WeightMode mode, std::optional<std::vector<Marginal>> target)
    : bijector_(std::move(bijector)), mode_(mode), target_(std::move(target)) {
  if (!bijector_) throw ValidationError("warp needs a bijector");
  if (target_ && target_->size() != bijector_->dim())
    throw ValidationError("target marginals do not match the bijector dimension");
}

double Warp::log_weight(const Vector& x) const {
  switch (mode_) {
    case WeightMode::none: return 0.0;
    case WeightMode::jacobian: return bijector_->log_det_jacobian(x);
    case WeightMode::density_ratio: {
      if (!target_) return 0.0;
      const Vector w = bijector_->forward(x);
      double s = bijector_->log_det_jacobian(x);
      for (Eigen::Index i = 0; i < x.size(); ++i)
        s += (*target_)[static_cast<std::size_t>(i)].log_pdf(w(i)) - normal::log_pdf(x(i));
      return s;
    }
  }
  return 0.0;
}

double Warp::weight(const Vector& x) const { return std::exp(log_weight(x)); }

double weighted_conditional(std::span<const double> weights, const std::vector<bool>& in_next) {
  if (weights.size() != in_next.size()) throw ValidationError("weights and memberships differ in length");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    den += weights[i];
    if (in_next[i]) num += weights[i];
  }
  if (!(den > 0.0)) throw ValidationError("weights sum to zero");
  return num / den;
}

double weighted_conditional(std::span<const double> weights, std::span<const double> robustness, double level) {
  if (weights.size() != robustness.size()) throw ValidationError("weights and robustness differ in length");
  std::vector<bool> in(robustness.size());
  for (std::size_t i = 0; i < robustness.size(); ++i) in[i] = robustness[i] >= level;
  return weighted_conditional(weights, in);
}

}  // namespace stless::warp
