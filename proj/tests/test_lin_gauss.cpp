#include <doctest.h>

#include "stless/error.hpp"
#include "stless/lin_gauss.hpp"
#include "support.hpp"

using namespace stless;
using namespace stless::lin;

namespace {

Vector gaussian(Rng& rng, const Vector& mean, const Matrix& factor) {
  Vector z(factor.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + factor * z;
}

template <class V>
const auto& at(const std::vector<V>& v, int t) {
  return v.size() == 1 ? v.front() : v[static_cast<std::size_t>(t)];
}

// Direct simulation of the closed loop, independent of the unrolled maps.
Vector simulate(const LtvSystem& s, Rng& rng) {
  const int n = s.n(), N = s.steps;
  Vector x = gaussian(rng, s.x0_mean, covariance_factor(s.x0_cov));
  Vector xh = s.xhat0 ? *s.xhat0 : s.x0_mean;
  Vector traj(n * N);
  for (int t = 0; t < N; ++t) {
    traj.segment(t * n, n) = x;
    Vector y;
    if (s.q() > 0) y = at(s.C, t) * x + gaussian(rng, at(s.v_mean, t), covariance_factor(at(s.v_cov, t)));
    Vector u = Vector::Zero(s.m());
    if (s.m() > 0) {
      u = at(s.reference, t);
      if (s.feedback == Feedback::state_estimate) u -= at(s.K, t) * xh;
      if (s.feedback == Feedback::measurement) u -= at(s.K, t) * y;
    }
    const Vector w = gaussian(rng, at(s.w_mean, t), covariance_factor(at(s.w_cov, t)));
    const Vector xn = at(s.A, t) * x + at(s.B, t) * u + w;
    if (s.feedback == Feedback::state_estimate)
      xh = at(s.A, t) * xh + at(s.B, t) * u + at(s.L, t) * (y - at(s.C, t) * xh);
    x = xn;
  }
  return traj;
}

LtvSystem scalar(int steps) {
  LtvSystem s;
  s.state_names = {"x"};
  s.steps = steps;
  s.A = {Matrix::Identity(1, 1)};
  s.x0_mean = Vector::Zero(1);
  return s;
}

double rel(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(b.norm(), 1e-8); }

}  // namespace

TEST_CASE("random constant propagates") {
  LtvSystem s = scalar(3);
  s.x0_mean << 2.0;
  s.x0_cov = Matrix::Ones(1, 1);
  const TrajectoryGaussian g = unroll(s);
  CHECK(g.mean.isApprox(Vector::Constant(3, 2.0)));
  CHECK(g.cov.isApprox(Matrix::Ones(3, 3)));
}

TEST_CASE("random walk variance grows linearly") {
  LtvSystem s = scalar(3);
  s.w_cov = {Matrix::Ones(1, 1)};
  const TrajectoryGaussian g = unroll(s);
  CHECK(g.cov.diagonal().isApprox(Vector::LinSpaced(3, 0.0, 2.0)));
  CHECK(g.cov(0, 0) == 0.0);
  CHECK(g.factor.rows() == 3);
  CHECK((g.factor * g.factor.transpose()).isApprox(g.cov, 1e-8));
}

TEST_CASE("unroll matches Monte Carlo simulation of the recursion") {
  Rng rng(11);
  const Feedback modes[] = {Feedback::open_loop, Feedback::state_estimate, Feedback::measurement};
  for (Feedback fb : modes) {
    CAPTURE(static_cast<int>(fb));
    const int n = 2, N = 4;
    const LtvSystem s = testing::random_system(rng, n, 1, 2, N, fb);
    const TrajectoryGaussian g = unroll(s);
    const int M = 200000;
    Vector sum = Vector::Zero(n * N);
    Matrix sq = Matrix::Zero(n * N, n * N);
    Rng sim = rng.split("mc");
    for (int i = 0; i < M; ++i) {
      const Vector x = simulate(s, sim);
      sum += x;
      sq.noalias() += x * x.transpose();
    }
    const Vector mean = sum / M;
    const Matrix cov = sq / M - mean * mean.transpose();
    for (int i = 0; i < n * N; ++i) {
      const double se = std::sqrt(g.cov(i, i) / M);
      REQUIRE(std::abs(mean(i) - g.mean(i)) <= 5.0 * se + 1e-12);
      for (int j = 0; j < n * N; ++j) {
        const double se_c = std::sqrt((g.cov(i, i) * g.cov(j, j) + g.cov(i, j) * g.cov(i, j)) / M);
        REQUIRE(std::abs(cov(i, j) - g.cov(i, j)) <= 5.0 * se_c + 1e-9);
      }
    }
  }
}

TEST_CASE("input maps reproduce the mean and covariance") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Feedback fb = trial % 3 == 0 ? Feedback::open_loop : trial % 3 == 1 ? Feedback::state_estimate : Feedback::measurement;
    const int n = 1 + static_cast<int>(rng.index(3)), N = 1 + static_cast<int>(rng.index(8));
    const LtvSystem s = testing::random_system(rng, n, 1 + static_cast<int>(rng.index(2)), 1 + static_cast<int>(rng.index(2)), N, fb);
    const TrajectoryGaussian g = unroll(s);
    const int m = s.m(), q = s.q();
    Vector r(m * N), mv(q * N), mw(n * N);
    Matrix Sv = Matrix::Zero(q * N, q * N), Sw = Matrix::Zero(n * N, n * N);
    for (int t = 0; t < N; ++t) {
      r.segment(t * m, m) = s.reference[static_cast<std::size_t>(t)];
      mv.segment(t * q, q) = s.v_mean[static_cast<std::size_t>(t)];
      mw.segment(t * n, n) = s.w_mean[static_cast<std::size_t>(t)];
      Sv.block(t * q, t * q, q, q) = s.v_cov[static_cast<std::size_t>(t)];
      Sw.block(t * n, t * n, n, n) = s.w_cov[static_cast<std::size_t>(t)];
    }
    const Vector xh = s.xhat0 ? *s.xhat0 : s.x0_mean;
    const Vector mean = g.phi_0 * s.x0_mean + g.phi_xhat * xh + g.phi_r * r + g.phi_v * mv + g.phi_w * mw;
    const Matrix cov = g.phi_0 * s.x0_cov * g.phi_0.transpose() + g.phi_v * Sv * g.phi_v.transpose() +
                       g.phi_w * Sw * g.phi_w.transpose();
    REQUIRE(rel(mean, g.mean) < 1e-12);
    REQUIRE(rel(cov, g.cov) < 1e-12);
    REQUIRE(rel(g.factor * g.factor.transpose(), g.cov) < 1e-8);
  }
}

TEST_CASE("observer feedback with zero gain is open loop") {
  Rng rng(13);
  LtvSystem s = testing::random_system(rng, 2, 1, 2, 5, Feedback::state_estimate);
  for (auto& k : s.K) k.setZero();
  LtvSystem open = s;
  open.feedback = Feedback::open_loop;
  open.K.clear();
  open.L.clear();
  const TrajectoryGaussian a = unroll(s), b = unroll(open);
  CHECK(rel(a.mean, b.mean) < 1e-14);
  CHECK(rel(a.cov, b.cov) < 1e-14);
}

TEST_CASE("validation rejects inconsistent systems") {
  LtvSystem s = scalar(3);
  s.A = {Matrix::Identity(1, 1), Matrix::Identity(1, 1)};
  CHECK_THROWS_AS(unroll(s), ValidationError);
  s = scalar(3);
  s.x0_cov = -Matrix::Identity(1, 1);
  CHECK_THROWS_AS(unroll(s), ValidationError);
  s = scalar(3);
  s.A = {Matrix::Identity(2, 2)};
  CHECK_THROWS_AS(unroll(s), ValidationError);
  s = scalar(0);
  CHECK_THROWS_AS(unroll(s), ValidationError);
}

TEST_CASE("covariance factor handles singular covariances") {
  Matrix c(3, 3);
  c << 1, 1, 0, 1, 1, 0, 0, 0, 2;
  const Matrix f = covariance_factor(c);
  CHECK(rel(f * f.transpose(), c) < 1e-10);
  CHECK(covariance_factor(Matrix::Zero(2, 2)).isZero());
}

TEST_CASE("lift_predicates selects coordinates") {
  const std::vector<std::string> names{"x1", "x2"};
  auto planes = lift_predicates(stl::parse("F[1,1] x1 >= 0", names), names, names, 2);
  REQUIRE(planes.size() == 1);
  CHECK(planes[0].dense(2) == (Vector(4) << 0, 0, 1, 0).finished());
  CHECK(planes[0].offset == 0.0);

  planes = lift_predicates(stl::parse("x1 - x2 + 3 >= 0", names), names, names, 2);
  REQUIRE(planes.size() == 1);
  CHECK(planes[0].dense(2) == (Vector(4) << 1, -1, 0, 0).finished());
  CHECK(planes[0].offset == 3.0);

  const auto phi = stl::parse("G[0,2] x1 >= 1 | F[1,3] x2 <= 0", names);
  std::size_t expected = 0;
  for (const auto& w : stl::collect_predicates(phi)) expected += w.times.size();
  CHECK(lift_predicates(phi, names, names, 4).size() == expected);

  const std::vector<std::string> with_y{"x1", "x2", "y"};
  CHECK_THROWS_AS(lift_predicates(stl::parse("y >= 0", with_y), with_y, names, 2), ValidationError);
  CHECK_THROWS_AS(lift_predicates(stl::parse("F[0,3] x1 >= 0", names), names, names, 2), ValidationError);
}

TEST_CASE("reference sensitivity is a column of the reference map") {
  Rng rng(14);
  const LtvSystem s = testing::random_system(rng, 2, 2, 2, 4, Feedback::state_estimate);
  const TrajectoryGaussian g = unroll(s);
  for (int t = 0; t < 4; ++t)
    for (int i = 0; i < 2; ++i) {
      const Sensitivity d = sensitivity(s, {Parameter::Kind::reference, i, 0, t});
      CHECK(rel(d.dmean, g.phi_r.col(t * 2 + i)) < 1e-12);
      CHECK(d.dcov.isZero());
    }
}

TEST_CASE("sensitivities agree with central differences") {
  Rng rng(15);
  const double h = 1e-6;
  const Feedback modes[] = {Feedback::state_estimate, Feedback::measurement, Feedback::open_loop};
  for (Feedback fb : modes) {
    for (int trial = 0; trial < 4; ++trial) {
      const LtvSystem s = testing::random_system(rng, 2, 2, 2, 5, fb);
      std::vector<Parameter> params{{Parameter::Kind::reference, 1, 0, -1},
                                    {Parameter::Kind::initial_mean, 0, 0, -1},
                                    {Parameter::Kind::process_mean, 1, 0, 2},
                                    {Parameter::Kind::measurement_mean, 0, 0, -1}};
      if (fb != Feedback::open_loop) {
        params.push_back({Parameter::Kind::gain, 0, 1, -1});
        params.push_back({Parameter::Kind::gain, 1, 0, 3});
      }
      for (const Parameter& p : params) {
        CAPTURE(p.describe());
        const Sensitivity d = sensitivity(s, p);
        LtvSystem up = s, down = s;
        shift_parameter(up, p, h);
        shift_parameter(down, p, -h);
        const TrajectoryGaussian gu = unroll(up), gd = unroll(down);
        const Vector fd_mean = (gu.mean - gd.mean) / (2 * h);
        const Matrix fd_cov = (gu.cov - gd.cov) / (2 * h);
        if (fd_mean.norm() > 1e-6) REQUIRE(rel(d.dmean, fd_mean) <= 1e-5);
        else REQUIRE(d.dmean.norm() <= 1e-6);
        if (fd_cov.norm() > 1e-6) REQUIRE(rel(d.dcov, fd_cov) <= 1e-5);
        else REQUIRE(d.dcov.norm() <= 1e-6);
      }
    }
  }
}

TEST_CASE("parameters read back what was written") {
  Rng rng(16);
  LtvSystem s = testing::random_system(rng, 2, 2, 2, 3, Feedback::state_estimate);
  const Parameter k{Parameter::Kind::gain, 1, 0, 2};
  set_parameter(s, k, 0.25);
  CHECK(get_parameter(s, k) == 0.25);
  const Parameter all{Parameter::Kind::reference, 0, 0, -1};
  const double before = s.reference[1](0);
  shift_parameter(s, all, 0.5);
  CHECK(s.reference[1](0) == doctest::Approx(before + 0.5));
  CHECK_THROWS_AS(sensitivity(s, {Parameter::Kind::gain, 5, 0, -1}), ValidationError);
}
