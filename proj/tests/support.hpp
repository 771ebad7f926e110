#pragma once
// Hand-rolled generators and brute-force oracles shared by the test suites.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "stless/lin_gauss.hpp"
#include "stless/rng.hpp"
#include "stless/stl.hpp"

namespace testing {

using stless::Rng;
using stless::stl::Formula;
using stless::stl::Interval;
using stless::stl::LinearPredicate;
using stless::stl::Op;

inline std::vector<std::string> channel_names(std::size_t q) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < q; ++i) out.push_back("c" + std::to_string(i));
  return out;
}

inline LinearPredicate random_predicate(Rng& rng, std::size_t q) {
  LinearPredicate p;
  p.coeffs.assign(q, 0.0);
  // At least one non-zero coefficient, the rest sparse.
  p.coeffs[rng.index(q)] = rng.uniform(-2.0, 2.0);
  for (auto& c : p.coeffs)
    if (rng.uniform() < 0.3) c = rng.uniform(-2.0, 2.0);
  if (std::all_of(p.coeffs.begin(), p.coeffs.end(), [](double c) { return c == 0.0; })) p.coeffs[0] = 1.0;
  p.offset = rng.uniform(-1.0, 1.0);
  return p;
}

inline Interval random_interval(Rng& rng, int max_hi) {
  const int a = static_cast<int>(rng.index(static_cast<std::size_t>(max_hi) + 1));
  const int b = a + static_cast<int>(rng.index(static_cast<std::size_t>(max_hi - a) + 1));
  return {a, b};
}

/// Random formula of the given maximum depth; intervals stay short so that
/// horizons fit in signals of length <= 20.
inline Formula random_formula(Rng& rng, int depth, std::size_t q, int max_hi = 4) {
  if (depth == 0 || rng.uniform() < 0.2) return Formula::predicate(random_predicate(rng, q));
  switch (rng.index(6)) {
    case 0: return Formula::negation(random_formula(rng, depth - 1, q, max_hi));
    case 1: return Formula::conjunction(random_formula(rng, depth - 1, q, max_hi), random_formula(rng, depth - 1, q, max_hi));
    case 2: return Formula::disjunction(random_formula(rng, depth - 1, q, max_hi), random_formula(rng, depth - 1, q, max_hi));
    case 3: return Formula::always(random_interval(rng, max_hi), random_formula(rng, depth - 1, q, max_hi));
    case 4: return Formula::eventually(random_interval(rng, max_hi), random_formula(rng, depth - 1, q, max_hi));
    default:
      return Formula::until(random_interval(rng, max_hi), random_formula(rng, depth - 1, q, max_hi),
                            random_formula(rng, depth - 1, q, max_hi));
  }
}

inline stless::stl::Signal random_signal(Rng& rng, std::size_t rows, std::size_t q) {
  std::vector<double> v(rows * q);
  for (auto& x : v) x = rng.uniform(-3.0, 3.0);
  return {channel_names(q), std::move(v)};
}

/// Quantitative semantics straight from the recursive definition, no memo.
inline double brute_robustness(const stless::stl::Signal& s, const Formula& f, std::size_t t) {
  const double inf = std::numeric_limits<double>::infinity();
  switch (f.op()) {
    case Op::predicate: {
      double v = f.pred().offset;
      for (std::size_t c = 0; c < s.width(); ++c) v += f.pred().coeffs[c] * s(t, c);
      return v;
    }
    case Op::negation: return -brute_robustness(s, f.child(0), t);
    case Op::conjunction: return std::min(brute_robustness(s, f.child(0), t), brute_robustness(s, f.child(1), t));
    case Op::disjunction: return std::max(brute_robustness(s, f.child(0), t), brute_robustness(s, f.child(1), t));
    case Op::always: {
      double r = inf;
      for (int k = f.interval().lo; k <= f.interval().hi; ++k) r = std::min(r, brute_robustness(s, f.child(0), t + k));
      return r;
    }
    case Op::eventually: {
      double r = -inf;
      for (int k = f.interval().lo; k <= f.interval().hi; ++k) r = std::max(r, brute_robustness(s, f.child(0), t + k));
      return r;
    }
    case Op::until: {
      double r = -inf;
      for (std::size_t tau = t + f.interval().lo; tau <= t + f.interval().hi; ++tau) {
        double m = brute_robustness(s, f.child(1), tau);
        for (std::size_t u = t; u <= tau; ++u) m = std::min(m, brute_robustness(s, f.child(0), u));
        r = std::max(r, m);
      }
      return r;
    }
  }
  return 0.0;
}

/// Boolean semantics, written independently of the quantitative one.
inline bool satisfies(const stless::stl::Signal& s, const Formula& f, std::size_t t) {
  switch (f.op()) {
    case Op::predicate: {
      double v = f.pred().offset;
      for (std::size_t c = 0; c < s.width(); ++c) v += f.pred().coeffs[c] * s(t, c);
      return v >= 0.0;
    }
    case Op::negation: return !satisfies(s, f.child(0), t);
    case Op::conjunction: return satisfies(s, f.child(0), t) && satisfies(s, f.child(1), t);
    case Op::disjunction: return satisfies(s, f.child(0), t) || satisfies(s, f.child(1), t);
    case Op::always:
      for (int k = f.interval().lo; k <= f.interval().hi; ++k)
        if (!satisfies(s, f.child(0), t + k)) return false;
      return true;
    case Op::eventually:
      for (int k = f.interval().lo; k <= f.interval().hi; ++k)
        if (satisfies(s, f.child(0), t + k)) return true;
      return false;
    case Op::until:
      for (std::size_t tau = t + f.interval().lo; tau <= t + f.interval().hi; ++tau) {
        if (!satisfies(s, f.child(1), tau)) continue;
        bool hold = true;
        for (std::size_t u = t; u <= tau && hold; ++u) hold = satisfies(s, f.child(0), u);
        if (hold) return true;
      }
      return false;
  }
  return false;
}

inline Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.uniform(-1.0, 1.0);
  return m;
}

inline Eigen::MatrixXd random_spd(Rng& rng, int n, double jitter = 0.1) {
  const Eigen::MatrixXd g = random_matrix(rng, n, n, 0.7);
  return g * g.transpose() + jitter * Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::VectorXd random_vector(Rng& rng, int n, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.uniform(-1.0, 1.0);
  return v;
}

/// Small random LTV system with every ingredient switched on.
inline stless::lin::LtvSystem random_system(Rng& rng, int n, int m, int q, int steps,
                                            stless::lin::Feedback feedback) {
  using namespace stless::lin;
  LtvSystem s;
  for (int i = 0; i < n; ++i) s.state_names.push_back("x" + std::to_string(i + 1));
  s.steps = steps;
  for (int t = 0; t < steps; ++t) {
    s.A.push_back(Eigen::MatrixXd::Identity(n, n) * 0.8 + random_matrix(rng, n, n, 0.2));
    s.B.push_back(random_matrix(rng, n, m, 0.5));
    s.C.push_back(random_matrix(rng, q, n, 1.0));
    s.w_mean.push_back(random_vector(rng, n, 0.1));
    s.w_cov.push_back(random_spd(rng, n, 0.05) * 0.2);
    s.v_mean.push_back(random_vector(rng, q, 0.1));
    s.v_cov.push_back(random_spd(rng, q, 0.05) * 0.1);
    s.reference.push_back(random_vector(rng, m, 1.0));
    s.K.push_back(random_matrix(rng, m, feedback == Feedback::measurement ? q : n, 0.3));
    s.L.push_back(random_matrix(rng, n, q, 0.2));
  }
  s.x0_mean = random_vector(rng, n, 1.0);
  s.x0_cov = random_spd(rng, n, 0.1);
  s.feedback = feedback;
  if (feedback == Feedback::state_estimate) s.xhat0 = s.x0_mean + random_vector(rng, n, 0.3);
  if (feedback == Feedback::open_loop) {
    s.K.clear();
    s.L.clear();
  }
  if (feedback == Feedback::measurement) s.L.clear();
  return s;
}

}  // namespace testing

namespace testing {

/// Random linear instance for the ellipse tests: a Gaussian over a stacked
/// trajectory, a formula over its states, an ellipse whose anchor satisfies
/// the formula at `level`.
struct LinearInstance {
  std::vector<std::string> names;
  int steps = 1;
  Formula formula = Formula::predicate({{1.0}, 0.0, ""});
  Eigen::VectorXd mean;
  Eigen::MatrixXd factor;
  Eigen::VectorXd anchor;  // feasible point
  Eigen::VectorXd auxiliary;
  double level = 0.0;
};

inline LinearInstance random_linear_instance(Rng& rng) {
  LinearInstance in;
  const int n = 1 + static_cast<int>(rng.index(3));
  for (int i = 0; i < n; ++i) in.names.push_back("x" + std::to_string(i + 1));
  do {
    in.formula = random_formula(rng, 3, static_cast<std::size_t>(n), 2);
  } while (in.formula.horizon() > 6);
  in.steps = in.formula.horizon() + static_cast<int>(rng.index(2));
  const int d = n * in.steps;
  in.mean = random_vector(rng, d, 0.5);
  in.factor = random_matrix(rng, d, d, 0.8);
  in.anchor = random_vector(rng, d, 2.0);
  in.auxiliary = in.factor * random_vector(rng, d, 1.5);
  return in;
}

}  // namespace testing
