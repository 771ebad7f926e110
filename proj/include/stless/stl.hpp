#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stless::stl {

/// Discrete-time signal: `length()` rows (time steps) by `width()` named channels,
/// stored row-major.
class Signal {
 public:
  Signal(std::vector<std::string> channels, std::vector<double> values);

  std::size_t length() const noexcept { return width_ == 0 ? 0 : values_.size() / width_; }
  std::size_t width() const noexcept { return width_; }
  double operator()(std::size_t t, std::size_t channel) const { return values_[t * width_ + channel]; }
  std::span<const double> row(std::size_t t) const { return {values_.data() + t * width_, width_}; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<std::string>& channels() const noexcept { return channels_; }

  Signal truncated(std::size_t rows) const;

 private:
  std::vector<std::string> channels_;
  std::vector<double> values_;
  std::size_t width_;
};

/// Affine predicate `coeffs . s_t + offset >= 0` over the signal channels.
struct LinearPredicate {
  std::vector<double> coeffs;
  double offset = 0.0;
  std::string label;

  double evaluate(std::span<const double> row) const;
  bool same_constraint(const LinearPredicate& other) const;
};

/// Closed interval of discrete steps.
struct Interval {
  int lo = 0;
  int hi = 0;
  bool operator==(const Interval&) const = default;
};

enum class Op { predicate, negation, conjunction, disjunction, always, eventually, until };

/// Immutable STL formula. Copies share the underlying tree.
class Formula {
 public:
  static Formula predicate(LinearPredicate p);
  static Formula negation(Formula f);
  static Formula conjunction(Formula a, Formula b);
  static Formula disjunction(Formula a, Formula b);
  static Formula always(Interval window, Formula f);
  static Formula eventually(Interval window, Formula f);
  static Formula until(Interval window, Formula a, Formula b);

  Op op() const;
  const LinearPredicate& pred() const;
  std::size_t arity() const;
  const Formula& child(std::size_t i) const;
  Interval interval() const;
  int horizon() const;  // cached at construction

  // Structural equality; predicate labels are ignored.
  bool operator==(const Formula& other) const;

 private:
  struct Node;
  explicit Formula(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

Formula parse(std::string_view text, std::span<const std::string> channels);
std::string render(const Formula& phi, std::span<const std::string> channels);

/// Minimum number of samples needed to evaluate the formula at t = 0.
int horizon(const Formula& phi);

std::size_t node_count(const Formula& phi);

/// Quantitative semantics at time t. Throws ValidationError when the signal is
/// shorter than t + horizon(phi) or the predicate widths do not match.
double robustness(const Signal& s, const Formula& phi, std::size_t t = 0);

/// Same, over raw row-major samples; `rows * width` values.
double robustness(std::span<const double> values, std::size_t width, const Formula& phi,
                  std::size_t t = 0);

/// Logical complement; double negations are removed.
Formula negate(const Formula& phi);

struct PredicateWindow {
  LinearPredicate predicate;
  std::vector<int> times;  // sorted absolute time indices
};

/// Distinct predicates with every absolute time at which their value can
/// influence the robustness at t = 0. Identical constraints appearing at
/// several leaves are merged into one entry.
std::vector<PredicateWindow> collect_predicates(const Formula& phi);

}  // namespace stless::stl
