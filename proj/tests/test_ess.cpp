#include <doctest.h>

#include <numbers>

#include "stless/error.hpp"
#include "stless/ess.hpp"
#include "stless/normal.hpp"
#include "support.hpp"

using namespace stless;
using namespace stless::ess;

namespace {

constexpr double kPi = std::numbers::pi;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

LinearProblem single(const std::string& text, const std::vector<std::string>& names, int steps = 1) {
  return LinearProblem::from_states(stl::parse(text, names), names, steps);
}

// Rebuilds a formula with every predicate transformed.
template <class F>
stl::Formula map_predicates(const stl::Formula& f, F&& fn) {
  using stl::Op;
  switch (f.op()) {
    case Op::predicate: return stl::Formula::predicate(fn(f.pred()));
    case Op::negation: return stl::Formula::negation(map_predicates(f.child(0), fn));
    case Op::conjunction: return stl::Formula::conjunction(map_predicates(f.child(0), fn), map_predicates(f.child(1), fn));
    case Op::disjunction: return stl::Formula::disjunction(map_predicates(f.child(0), fn), map_predicates(f.child(1), fn));
    case Op::always: return stl::Formula::always(f.interval(), map_predicates(f.child(0), fn));
    case Op::eventually: return stl::Formula::eventually(f.interval(), map_predicates(f.child(0), fn));
    case Op::until:
      return stl::Formula::until(f.interval(), map_predicates(f.child(0), fn), map_predicates(f.child(1), fn));
  }
  return f;
}

// Mean and batch-means standard error of a correlated sequence.
std::pair<double, double> batch_mean(const std::vector<double>& v, int batches = 50) {
  const std::size_t len = v.size() / static_cast<std::size_t>(batches);
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += v[static_cast<std::size_t>(b) * len + i];
    means.push_back(s / static_cast<double>(len));
  }
  double m = 0.0;
  for (double x : means) m += x;
  m /= batches;
  double var = 0.0;
  for (double x : means) var += (x - m) * (x - m);
  var /= (batches - 1);
  return {m, std::sqrt(var / batches)};
}

double lag1(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    den += (v[i] - m) * (v[i] - m);
    if (i + 1 < v.size()) num += (v[i] - m) * (v[i + 1] - m);
  }
  return num / den;
}

}  // namespace

TEST_CASE("hyperplane roots on the unit circle") {
  const Ellipse e{vec({1, 0}), vec({0, 1}), vec({0, 0})};
  auto r = hyperplane_roots(e, vec({1, 0}), 0.0);
  std::sort(r.begin(), r.end());
  REQUIRE(r.size() == 2);
  CHECK(r[0] == doctest::Approx(kPi / 2));
  CHECK(r[1] == doctest::Approx(3 * kPi / 2));
  CHECK(hyperplane_roots(e, vec({1, 0}), -2.0).empty());
  CHECK(hyperplane_roots(e, vec({0, 0}), 1.0).empty());
}

TEST_CASE("hyperplane roots have tiny residuals") {
  Rng rng(21);
  int found = 0;
  for (int i = 0; i < 2000; ++i) {
    const int d = 1 + static_cast<int>(rng.index(5));
    const Ellipse e{testing::random_vector(rng, d, 2.0), testing::random_vector(rng, d, 2.0),
                    testing::random_vector(rng, d, 1.0)};
    const Vector a = testing::random_vector(rng, d, 1.0);
    const double c = rng.uniform(-2.0, 2.0);
    for (double t : hyperplane_roots(e, a, c)) {
      REQUIRE(t >= 0.0);
      REQUIRE(t < kTwoPi);
      REQUIRE(std::abs(a.dot(e.point(t)) + c) <= 1e-9);
      ++found;
    }
  }
  CHECK(found > 1000);
}

TEST_CASE("active segments worked examples") {
  const std::vector<std::string> names{"x1", "x2"};
  const Ellipse e{vec({1, 0}), vec({0, 1}), vec({0, 0})};

  const AngularDomain half = active_segments(e, single("x1 >= 0", names), 0.0);
  REQUIRE(half.arcs().size() == 2);
  CHECK(half.measure() == doctest::Approx(kPi));
  CHECK(half.contains(0.1));
  CHECK(half.contains(kTwoPi - 0.1));
  CHECK_FALSE(half.contains(kPi));
  CHECK(half.arcs()[0].hi == doctest::Approx(kPi / 2));
  CHECK(half.arcs()[1].lo == doctest::Approx(3 * kPi / 2));

  const AngularDomain full = active_segments(e, single("x1 >= -5", names), 0.0);
  CHECK(full.measure() == doctest::Approx(kTwoPi));

  CHECK_THROWS_AS(active_segments(e, single("x1 >= 2", names), 0.0), ValidationError);
}

TEST_CASE("no sign change of robustness inside any classified arc") {
  Rng rng(22);
  int arcs = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = testing::random_linear_instance(rng);
    const LinearProblem problem = LinearProblem::from_states(in.formula, in.names, in.steps);
    const Ellipse e{in.anchor - in.mean, in.auxiliary, in.mean};
    const double level = problem.robustness(in.anchor) - rng.uniform(0.0, 1.0);
    const AngularDomain domain = active_segments(e, problem, level);
    const auto roots = candidate_roots(e, problem, level);
    arcs += static_cast<int>(domain.arcs().size());
    for (int g = 0; g < 10000; ++g) {
      const double t = kTwoPi * (g + 0.5) / 10000;
      bool near_root = false;
      for (double r : roots) near_root = near_root || circular_distance(t, r) < 1e-9;
      if (near_root) continue;
      const double rho = problem.robustness(e.point(t));
      REQUIRE((rho >= level) == domain.contains(t));
    }
  }
  CHECK(arcs > 200);
}

TEST_CASE("each step draws one Gaussian and one angle") {
  const std::vector<std::string> names{"x"};
  const LinearProblem problem = single("x >= 1", names);
  Rng rng(23);
  StepStats stats;
  const auto out = chain(vec({1.5}), 250, 5, vec({0}), Matrix::Identity(1, 1), problem, 0.0, rng, &stats);
  CHECK(out.size() == 250);
  CHECK(stats.gaussian_draws == 1500);
  CHECK(stats.angle_draws == 1500);
  CHECK(stats.stalled == 0);
  for (const auto& x : out) CHECK(problem.robustness(x) >= 0.0);
}

TEST_CASE("truncated Gaussian chain recovers the truncated mean") {
  const std::vector<std::string> names{"x"};
  const LinearProblem problem = single("x >= 1", names);
  Rng rng(24);
  const auto out = chain(vec({1.2}), 100000, 0, vec({0}), Matrix::Identity(1, 1), problem, 0.0, rng);
  std::vector<double> v;
  for (const auto& x : out) {
    REQUIRE(x(0) >= 1.0 - 1e-12);
    v.push_back(x(0));
  }
  const double exact = normal::pdf(1.0) / normal::sf(1.0);
  CHECK(exact == doctest::Approx(1.5251).epsilon(1e-4));
  const auto [m, se] = batch_mean(v);
  CHECK(std::abs(m - exact) <= 3.0 * se);
}

TEST_CASE("skipping steps lowers the lag-one autocorrelation") {
  const std::vector<std::string> names{"x"};
  const LinearProblem problem = single("x >= 1", names);
  Rng rng(25);
  double dense = 0.0, thinned = 0.0;
  for (int r = 0; r < 20; ++r) {
    Rng a = rng.split(static_cast<std::uint64_t>(2 * r)), b = rng.split(static_cast<std::uint64_t>(2 * r + 1));
    std::vector<double> v0, v5;
    for (const auto& x : chain(vec({1.2}), 500, 0, vec({0}), Matrix::Identity(1, 1), problem, 0.0, a)) v0.push_back(x(0));
    for (const auto& x : chain(vec({1.2}), 500, 5, vec({0}), Matrix::Identity(1, 1), problem, 0.0, b)) v5.push_back(x(0));
    dense += lag1(v0);
    thinned += lag1(v5);
  }
  CHECK(thinned < dense);
}

TEST_CASE("unconstrained steps keep N(mean, cov)") {
  const std::vector<std::string> names{"x1", "x2"};
  const LinearProblem problem = single("x1 >= 0", names);
  const Vector mean = vec({1.0, -2.0});
  Matrix cov(2, 2);
  cov << 2.0, 0.6, 0.6, 0.5;
  const Matrix factor = lin::covariance_factor(cov);
  Rng rng(26);
  const double level = -std::numeric_limits<double>::infinity();
  Vector x = mean;
  const int M = 100000;
  Vector sum = Vector::Zero(2);
  Matrix sq = Matrix::Zero(2, 2);
  for (int i = 0; i < M; ++i) {
    x = ess_step(x, mean, factor, problem, level, rng);
    sum += x;
    sq += (x - mean) * (x - mean).transpose();
  }
  const Vector m = sum / M;
  const Matrix c = sq / M;
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(m(i) - mean(i)) <= 4.0 * std::sqrt(cov(i, i) / M));
    for (int j = 0; j < 2; ++j)
      CHECK(std::abs(c(i, j) - cov(i, j)) <= 4.0 * std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / M));
  }
}

TEST_CASE("chains are equivariant under a joint affine change of coordinates") {
  const std::vector<std::string> names{"x1", "x2"};
  Rng gen(27);
  for (int trial = 0; trial < 20; ++trial) {
    const stl::Formula f = testing::random_formula(gen, 2, 2, 0);
    const Vector mean = testing::random_vector(gen, 2);
    const Matrix factor = testing::random_spd(gen, 2, 0.3);
    Matrix T = testing::random_matrix(gen, 2, 2) + 2.0 * Matrix::Identity(2, 2);
    const Vector b = testing::random_vector(gen, 2);
    const Matrix Tinv_t = T.inverse().transpose();
    const stl::Formula g = map_predicates(f, [&](const stl::LinearPredicate& p) {
      const Vector a = Tinv_t * Eigen::Map<const Vector>(p.coeffs.data(), 2);
      stl::LinearPredicate q;
      q.coeffs = {a(0), a(1)};
      q.offset = p.offset - a.dot(b);
      return q;
    });
    const LinearProblem pf(f, 2, 1, lin::lift_predicates(f, names, names, 1));
    const LinearProblem pg(g, 2, 1, lin::lift_predicates(g, names, names, 1));
    Rng probe(99);
    Vector x;
    double level;
    do {
      x = mean + factor * Vector(vec({probe.normal(), probe.normal()}));
      level = pf.robustness(x) - 0.5;
    } while (false);
    Vector y = T * x + b;
    Rng r1(static_cast<std::uint64_t>(trial)), r2(static_cast<std::uint64_t>(trial));
    for (int k = 0; k < 50; ++k) {
      x = ess_step(x, mean, factor, pf, level, r1);
      y = ess_step(y, T * mean + b, T * factor, pg, level, r2);
      REQUIRE(pf.robustness(x) == doctest::Approx(pg.robustness(y)).epsilon(1e-7));
    }
  }
}

TEST_CASE("sampler counts every trajectory evaluation") {
  const std::vector<std::string> names{"x"};
  LinearEssSampler s(vec({0}), Matrix::Identity(1, 1), single("x >= 1", names));
  Rng rng(28);
  Sample a = s.draw(rng);
  while (a.robustness < 0.0) a = s.draw(rng);
  const std::size_t before = s.simulations();
  for (int i = 0; i < 10; ++i) a = s.step(a, 0.0, rng);
  CHECK(s.simulations() == before + 10);
  CHECK(a.robustness >= 0.0);
  CHECK(a.weight == 1.0);
  CHECK_THROWS_AS(s.step({vec({0.0}), -1.0, 1.0}, 0.0, rng), ValidationError);
}
