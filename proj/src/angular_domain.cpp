#include "stless/angular_domain.hpp"

#include <algorithm>
#include <cmath>

namespace stless {

double wrap_angle(double theta) {
  double r = std::fmod(theta, kTwoPi);
  if (r < 0) r += kTwoPi;
  if (r >= kTwoPi) r = 0.0;
  return r;
}

double circular_distance(double a, double b) {
  const double d = std::abs(wrap_angle(a) - wrap_angle(b));
  return std::min(d, kTwoPi - d);
}

AngularDomain AngularDomain::full() {
  AngularDomain d;
  d.arcs_.push_back({0.0, kTwoPi});
  return d;
}

AngularDomain AngularDomain::from_arcs(std::vector<Arc> arcs) {
  std::vector<Arc> pieces;
  for (const Arc& a : arcs) {
    if (a.lo <= a.hi) {
      if (a.hi > a.lo) pieces.push_back({std::max(a.lo, 0.0), std::min(a.hi, kTwoPi)});
    } else {
      pieces.push_back({a.lo, kTwoPi});
      pieces.push_back({0.0, a.hi});
    }
  }
  std::sort(pieces.begin(), pieces.end(), [](const Arc& x, const Arc& y) { return x.lo < y.lo; });
  AngularDomain d;
  for (const Arc& p : pieces) {
    if (!(p.hi > p.lo)) continue;
    if (!d.arcs_.empty() && p.lo <= d.arcs_.back().hi) {
      d.arcs_.back().hi = std::max(d.arcs_.back().hi, p.hi);
    } else {
      d.arcs_.push_back(p);
    }
  }
  return d;
}

double AngularDomain::measure() const {
  double m = 0.0;
  for (const Arc& a : arcs_) m += a.hi - a.lo;
  return m;
}

bool AngularDomain::contains(double theta) const {
  const double t = wrap_angle(theta);
  return std::any_of(arcs_.begin(), arcs_.end(), [t](const Arc& a) { return t >= a.lo && t < a.hi; });
}

double AngularDomain::at_fraction(double u) const {
  double target = u * measure();
  for (const Arc& a : arcs_) {
    const double len = a.hi - a.lo;
    if (target < len) return a.lo + target;
    target -= len;
  }
  return arcs_.empty() ? 0.0 : std::nextafter(arcs_.back().hi, arcs_.back().lo);
}

AngularDomain AngularDomain::minus(double center, double radius) const {
  if (radius <= 0.0) return *this;
  if (2.0 * radius >= kTwoPi) return {};
  const double lo = wrap_angle(center - radius);
  const double hi = lo + 2.0 * radius;
  // Removed set as pieces within [0, 2pi).
  std::vector<Arc> cut;
  if (hi <= kTwoPi) {
    cut.push_back({lo, hi});
  } else {
    cut.push_back({lo, kTwoPi});
    cut.push_back({0.0, hi - kTwoPi});
  }
  std::vector<Arc> kept;
  for (const Arc& a : arcs_) {
    std::vector<Arc> parts{a};
    for (const Arc& c : cut) {
      std::vector<Arc> next;
      for (const Arc& p : parts) {
        if (c.hi <= p.lo || c.lo >= p.hi) {
          next.push_back(p);
          continue;
        }
        // The open cut keeps its endpoints; they have measure zero so the
        // half-open representation drops them.
        if (p.lo < c.lo) next.push_back({p.lo, c.lo});
        if (c.hi < p.hi) next.push_back({c.hi, p.hi});
      }
      parts = std::move(next);
    }
    kept.insert(kept.end(), parts.begin(), parts.end());
  }
  return from_arcs(std::move(kept));
}

}  // namespace stless
