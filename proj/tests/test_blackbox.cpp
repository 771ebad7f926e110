#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "stless/angular_domain.hpp"
#include "stless/blackbox.hpp"
#include "stless/error.hpp"
#include "stless/ess.hpp"
#include "stless/hdr.hpp"
#include "stless/normal.hpp"
#include "support.hpp"

using namespace stless;
using namespace stless::blackbox;

namespace {

const std::vector<std::string> kNames{"x1", "x2"};

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Robustness of a formula on the identity run, evaluated along an ellipse.
EllipseRobustness on_identity(const stl::Formula& f, const Vector& anchor, const Vector& aux, int* calls = nullptr) {
  return EllipseRobustness(anchor, aux, [f, calls](const Vector& w) {
    if (calls) ++*calls;
    return stl::robustness(stl::Signal(kNames, {w(0), w(1)}), f);
  });
}

// Exact Lipschitz constant in theta of a formula on the identity run: the
// largest amplitude among its predicates along the ellipse.
double true_lipschitz(const stl::Formula& f, const Vector& anchor, const Vector& aux) {
  double m = 0.0;
  for (const auto& w : stl::collect_predicates(f)) {
    const Vector a = Eigen::Map<const Vector>(w.predicate.coeffs.data(), 2);
    m = std::max(m, std::hypot(a.dot(anchor), a.dot(aux)));
  }
  return m;
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

std::vector<double> first_coordinate(LevelSampler& s, const Sample& start, double level, int count, std::uint64_t seed) {
  const std::vector<Sample> seeds{start};
  std::vector<double> out;
  for (const Sample& x : hdr::sample_level(s, seeds, level, count, 5, 10, 1, Rng(seed).split("chains")))
    out.push_back(x.x(0));
  return out;
}

}  // namespace

TEST_CASE("angular domain arithmetic") {
  const AngularDomain full = AngularDomain::full();
  CHECK(full.measure() == doctest::Approx(kTwoPi));
  const AngularDomain cut = full.minus(0.0, 0.5);
  CHECK(cut.measure() == doctest::Approx(kTwoPi - 1.0));
  CHECK_FALSE(cut.contains(0.0));
  CHECK_FALSE(cut.contains(kTwoPi - 0.1));
  CHECK(cut.contains(0.6));
  const AngularDomain wrap = AngularDomain::from_arcs({{6.0, 0.5}});
  CHECK(wrap.arcs().size() == 2);
  CHECK(wrap.measure() == doctest::Approx(0.5 + kTwoPi - 6.0));
  CHECK(wrap.contains(0.1));
  const AngularDomain merged = AngularDomain::from_arcs({{1.0, 2.0}, {2.0, 3.0}});
  CHECK(merged.arcs().size() == 1);
  CHECK(merged.at_fraction(0.5) == doctest::Approx(2.0));
  CHECK(full.minus(1.0, 4.0).empty());
  CHECK(wrap_angle(-0.5) == doctest::Approx(kTwoPi - 0.5));
  CHECK(circular_distance(0.1, kTwoPi - 0.1) == doctest::Approx(0.2));
}

TEST_CASE("robustness along an ellipse on the identity run") {
  const stl::Formula f = stl::parse("x1 >= 0", kNames);
  int calls = 0;
  const Vector w0 = vec({0.7, -1.0}), w1 = vec({-0.3, 2.0});
  auto r = on_identity(f, w0, w1, &calls);
  for (double t : {0.0, 0.4, 2.0, 5.5})
    CHECK(r(t) == doctest::Approx(w0(0) * std::cos(t) + w1(0) * std::sin(t)));
  CHECK(r(0.0) == 0.7);
  CHECK(calls == 4);
  r(0.4);
  r(kTwoPi);
  r(0.4 + kTwoPi * 0);
  CHECK(calls == 4);
  CHECK(r.evaluations() == 4);
  CHECK(r.point(0.0) == w0);
}

TEST_CASE("elimination with a valid constant never removes a feasible angle") {
  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    const stl::Formula f = testing::random_formula(rng, 2, 2, 0);
    const Vector w0 = testing::random_vector(rng, 2, 2.0), w1 = testing::random_vector(rng, 2, 2.0);
    auto r = on_identity(f, w0, w1);
    const double level = r(0.0) - rng.uniform(0.0, 1.0);
    const double M = true_lipschitz(f, w0, w1) * (1.0 + 1e-9) + 1e-12;
    std::vector<double> thetas{0.0}, rhos{r(0.0)};
    for (int k = 0; k < 10; ++k) {
      thetas.push_back(rng.uniform(0.0, kTwoPi));
      rhos.push_back(r(thetas.back()));
    }
    const AngularDomain d = lipschitz_domain(thetas, rhos, level, M);
    REQUIRE(d.contains(0.0));
    for (int g = 0; g < 2000; ++g) {
      const double t = kTwoPi * g / 2000;
      if (r(t) >= level + 1e-9) REQUIRE(d.contains(t));
    }
  }
}

TEST_CASE("Lipschitz sampler returns feasible angles and keeps its constant") {
  const stl::Formula f = stl::parse("x1 >= 1 | x2 >= 1.5", kNames);
  Rng rng(42);
  LipschitzState state;
  for (int i = 0; i < 200; ++i) {
    const Vector w0 = vec({1.0 + rng.uniform(0.0, 1.0), rng.normal()});
    auto r = on_identity(f, w0, testing::random_vector(rng, 2, 2.0));
    const AngleResult a = lipschitz_sample(r, 0.0, state, rng);
    REQUIRE_FALSE(a.stalled);
    REQUIRE(a.robustness >= 0.0);
    REQUIRE(r(a.theta) == a.robustness);
    REQUIRE(state.M > 0.0);
  }
  CHECK(state.stalls == 0);

  // An anchor that is itself feasible at the first candidate costs two simulations.
  LipschitzState known;
  known.M = 1.0;
  int calls = 0;
  auto easy = on_identity(stl::parse("x1 >= -100", kNames), vec({1.0, 0.0}), vec({0.0, 1.0}), &calls);
  const AngleResult a = lipschitz_sample(easy, 0.0, known, rng);
  CHECK_FALSE(a.stalled);
  CHECK(calls == 2);
  CHECK_THROWS_AS(lipschitz_sample(easy, 1000.0, known, rng), ValidationError);
}

TEST_CASE("GP posterior interpolates and recovers analytic arcs") {
  Rng rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const stl::LinearPredicate p{{rng.uniform(-2, 2), rng.uniform(-2, 2)}, rng.uniform(-0.5, 0.5), ""};
    const stl::Formula f = stl::Formula::predicate(p);
    const Vector w0 = testing::random_vector(rng, 2, 2.0), w1 = testing::random_vector(rng, 2, 2.0);
    auto r = on_identity(f, w0, w1);
    CircularGp gp;
    for (int k = 0; k < 16; ++k) gp.add(kTwoPi * k / 16, r(kTwoPi * k / 16));
    for (int k = 0; k < 16; ++k) {
      const auto pr = gp.predict(kTwoPi * k / 16);
      REQUIRE(pr.mean == doctest::Approx(r(kTwoPi * k / 16)).epsilon(1e-3).scale(1.0));
      REQUIRE(pr.sd >= 0.0);
    }
    const auto grid = gp.predict_grid(64);
    for (int g = 0; g < 64; ++g) {
      const auto pr = gp.predict(kTwoPi * g / 64);
      REQUIRE(grid.mean(g) == doctest::Approx(pr.mean).epsilon(1e-9).scale(1.0));
      REQUIRE(grid.sd(g) == doctest::Approx(pr.sd).epsilon(1e-6).scale(1.0));
    }

    const double level = r(0.0) - rng.uniform(0.0, 1.0);
    const ess::Ellipse e{w0, w1, Vector::Zero(2)};
    const auto exact = ess::hyperplane_roots(e, vec({p.coeffs[0], p.coeffs[1]}), p.offset - level);
    const AngularDomain est = predicted_domain(gp, level, 720);
    // Every exact boundary lies within 0.05 rad of an estimated one, and vice versa.
    std::vector<double> ends;
    for (const auto& arc : est.arcs())
      for (double t : {arc.lo, arc.hi})
        if (t > 1e-12 && t < kTwoPi - 1e-12) ends.push_back(t);
    REQUIRE(ends.size() == exact.size());
    for (double t : exact) {
      double best = 10.0;
      for (double u : ends) best = std::min(best, circular_distance(t, u));
      REQUIRE(best <= 0.05);
    }
  }
}

TEST_CASE("BO sampler registers the anchor once and returns feasible angles") {
  const stl::Formula f = stl::parse("x1 >= 1 | x2 >= 1.5", kNames);
  Rng rng(44);
  BoConfig cfg;
  for (int i = 0; i < 100; ++i) {
    const Vector w0 = vec({1.0 + rng.uniform(0.0, 1.0), rng.normal()});
    auto r = on_identity(f, w0, testing::random_vector(rng, 2, 2.0));
    const AngleResult a = bo_sample(r, 0.0, cfg, rng);
    REQUIRE_FALSE(a.stalled);
    REQUIRE(a.robustness >= 0.0);
    REQUIRE(r(a.theta) == a.robustness);
  }
  CHECK(acquisition_value(Acquisition::ucb, {1.0, 0.5}, 0.0, 2.0, 0.0) == 2.0);
  CHECK(acquisition_value(Acquisition::poi, {0.0, 1.0}, 0.0, 0.0, 0.0) == doctest::Approx(0.5));
  CHECK(acquisition_value(Acquisition::ei, {0.0, 1.0}, 0.0, 0.0, 0.0) == doctest::Approx(normal::pdf(0.0)));
  CHECK(parse_acquisition("EI") == Acquisition::ei);
  CHECK_THROWS_AS(parse_acquisition("foo"), ValidationError);
}

TEST_CASE("simulation accounting and budget") {
  int calls = 0;
  FunctionRun run(2, kNames, 1, [&](const Vector& w) {
    ++calls;
    return std::vector<double>{w(0), w(1)};
  });
  const stl::Formula f = stl::parse("(x1 >= 2 & x2 >= 2) | (x1 <= -2 & x2 >= 2)", kNames);
  hdr::HdrConfig h;
  h.seed = 3;
  h.n_skip = 2;
  BlackboxSampler s(run, f, warp::Warp(warp::identity(2)), {});
  const auto r = hdr::verify(s, h);
  CHECK(r.simulations == static_cast<std::size_t>(calls));
  CHECK(s.simulations() == static_cast<std::size_t>(calls));
  for (const Sample& x : r.failure_samples) {
    REQUIRE(x.robustness >= 0.0);
    REQUIRE(stl::robustness(run.run(x.x), f) == x.robustness);
  }

  BlackboxConfig small;
  small.budget = 100;
  BlackboxSampler capped(run, f, warp::Warp(warp::identity(2)), small);
  CHECK_THROWS_AS(hdr::verify(capped, h), BudgetError);
  CHECK(capped.simulations() == 100);
}

TEST_CASE("sampler construction checks shapes") {
  auto run = identity_run(kNames, 2);
  CHECK(run->dim() == 4);
  CHECK_THROWS_AS(BlackboxSampler(*run, stl::parse("x1 >= 0", kNames), warp::Warp(warp::identity(3)), {}),
                  ValidationError);
  CHECK_THROWS_AS(BlackboxSampler(*run, stl::parse("G[0,2] x1 >= 0", kNames), warp::Warp(warp::identity(4)), {}),
                  ValidationError);
  BlackboxConfig bad;
  bad.bo.n_bo = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK(parse_method(to_string(Method::bo)) == Method::bo);
}

TEST_CASE("nonlinear run function") {
  FunctionRun run(2, kNames, 1, [](const Vector& w) { return std::vector<double>{w(0) * w(0), w(1)}; });
  const stl::Formula f = stl::parse("x1 >= 4 & x2 >= 2", kNames);
  const double exact = 2.0 * normal::sf(2.0) * normal::sf(2.0);
  double sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    hdr::HdrConfig h;
    h.seed = seed;
    h.n_skip = 2;
    h.final_samples = 0;
    sum += blackbox_verify(run, f, warp::Warp(warp::identity(2)), {}, h).p_estimate;
  }
  CHECK(sum / 10 > exact / 2);
  CHECK(sum / 10 < exact * 2);
}

TEST_CASE("black-box chains match the closed-form linear chain in distribution") {
  const stl::Formula f = stl::parse("x1 >= 1", kNames);
  auto run = identity_run(kNames);
  ess::LinearEssSampler linear(Vector::Zero(2), Eigen::MatrixXd::Identity(2, 2),
                               ess::LinearProblem::from_states(f, kNames, 1));
  BlackboxConfig lip, bo;
  bo.method = Method::bo;
  bo.bo.n_bo = 5;
  BlackboxSampler sl(*run, f, warp::Warp(warp::identity(2)), lip);
  BlackboxSampler sb(*run, f, warp::Warp(warp::identity(2)), bo);
  const Sample start{vec({1.5, 0.0}), 0.5, 1.0};
  const auto a = first_coordinate(linear, start, 0.0, 2000, 1);
  const auto b = first_coordinate(sl, start, 0.0, 2000, 2);
  const auto c = first_coordinate(sb, start, 0.0, 2000, 3);
  // Critical value of the two-sample statistic at significance 0.01.
  const double crit = 1.628 * std::sqrt(2.0 / 2000);
  CHECK(ks(a, b) < crit);
  CHECK(ks(a, c) < crit);
}
