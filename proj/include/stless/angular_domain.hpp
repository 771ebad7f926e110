#pragma once

#include <numbers>
#include <vector>

#include "stless/rng.hpp"

namespace stless {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Maps any angle onto [0, 2pi).
double wrap_angle(double theta);

/// Shortest distance between two angles on the circle.
double circular_distance(double a, double b);

/// Union of disjoint half-open arcs [lo, hi) of the circle [0, 2pi). An arc
/// crossing zero is stored as two pieces; touching arcs are merged.
class AngularDomain {
 public:
  struct Arc {
    double lo;
    double hi;
  };

  AngularDomain() = default;
  static AngularDomain full();

  /// Arcs may be given in any order; lo > hi denotes an arc wrapping through 0.
  static AngularDomain from_arcs(std::vector<Arc> arcs);

  const std::vector<Arc>& arcs() const noexcept { return arcs_; }
  bool empty() const noexcept { return arcs_.empty(); }
  double measure() const;
  bool contains(double theta) const;

  /// Angle at cumulative measure fraction u in [0, 1).
  double at_fraction(double u) const;
  double sample(Rng& rng) const { return at_fraction(rng.uniform()); }

  /// Removes the open arc (center - radius, center + radius).
  AngularDomain minus(double center, double radius) const;

 private:
  std::vector<Arc> arcs_;
};

}  // namespace stless
