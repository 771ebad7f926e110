#include "stless/lin_gauss.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "stless/error.hpp"

namespace stless::lin {
namespace {

template <typename T>
const T& at(const std::vector<T>& v, int t) {
  return v.size() == 1 ? v.front() : v[static_cast<std::size_t>(t)];
}

template <typename T>
std::vector<T>& expanded(std::vector<T>& v, int steps) {
  if (v.size() == 1 && steps > 1) v.assign(static_cast<std::size_t>(steps), v.front());
  return v;
}

void check_per_step(const char* name, std::size_t size, int steps, bool required) {
  if (size == 0 && !required) return;
  if (size != 1 && size != static_cast<std::size_t>(steps))
    throw ValidationError(std::string(name) + " must hold 1 or " + std::to_string(steps) + " entries, got " +
                          std::to_string(size));
}

void check_shape(const char* name, const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() != rows || m.cols() != cols)
    throw ValidationError(std::string(name) + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                          ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
}

void check_psd(const char* name, const Matrix& cov) {
  if (cov.size() == 0) return;
  if ((cov - cov.transpose()).norm() > 1e-12 * std::max(1.0, cov.norm()))
    throw ValidationError(std::string(name) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-9 * scale)
    throw ValidationError(std::string(name) + " is not positive semidefinite");
}

// Column layout of the stacked input vector xi = [x0; xhat0; r; v; w].
struct Layout {
  int n, m, q, steps;
  int x0() const { return 0; }
  int xhat() const { return n; }
  int r(int t) const { return 2 * n + m * t; }
  int v(int t) const { return 2 * n + m * steps + q * t; }
  int w(int t) const { return 2 * n + (m + q) * steps + n * t; }
  int dim() const { return 2 * n + (m + q + n) * steps; }
};

struct Rollout {
  Matrix phi;   // (n*steps) x dim
  Matrix dphi;  // derivative w.r.t. a gain entry (empty if not requested)
};

Matrix selector(int rows, int dim, int col) {
  Matrix s = Matrix::Zero(rows, dim);
  for (int i = 0; i < rows; ++i) s(i, col + i) = 1.0;
  return s;
}

// Unrolls the closed loop as linear maps of xi. With `gain` set, also
// propagates the derivative w.r.t. that gain entry.
Rollout rollout(const LtvSystem& sys, const Parameter* gain) {
  const Layout lay{sys.n(), sys.m(), sys.q(), sys.steps};
  const int n = lay.n, D = lay.dim();
  Rollout out;
  out.phi = Matrix::Zero(n * sys.steps, D);
  if (gain) out.dphi = Matrix::Zero(n * sys.steps, D);

  Matrix X = selector(n, D, lay.x0());
  Matrix Xh = selector(n, D, lay.xhat());
  Matrix dX = Matrix::Zero(n, D), dXh = Matrix::Zero(n, D);

  for (int t = 0; t < sys.steps; ++t) {
    out.phi.middleRows(t * n, n) = X;
    if (gain) out.dphi.middleRows(t * n, n) = dX;
    if (t + 1 == sys.steps) break;

    const Matrix& A = at(sys.A, t);
    Matrix U = Matrix::Zero(lay.m, D), dU = Matrix::Zero(lay.m, D);
    if (lay.m > 0) U = selector(lay.m, D, lay.r(t));
    Matrix Y, dY;
    if (lay.q > 0) {
      Y = at(sys.C, t) * X + selector(lay.q, D, lay.v(t));
      dY = at(sys.C, t) * dX;
    }
    const bool gain_active = gain && (gain->step < 0 || gain->step == t);
    if (sys.feedback != Feedback::open_loop && lay.m > 0) {
      const Matrix& K = at(sys.K, t);
      const Matrix& fb = sys.feedback == Feedback::state_estimate ? Xh : Y;
      const Matrix& dfb = sys.feedback == Feedback::state_estimate ? dXh : dY;
      U -= K * fb;
      if (gain) {
        dU = -K * dfb;
        if (gain_active) dU.row(gain->row) -= fb.row(gain->col);
      }
    }

    Matrix Xn = A * X + selector(n, D, lay.w(t));
    Matrix dXn = A * dX;
    if (lay.m > 0) {
      Xn += at(sys.B, t) * U;
      dXn += at(sys.B, t) * dU;
    }
    if (sys.feedback == Feedback::state_estimate) {
      const Matrix& L = at(sys.L, t);
      const Matrix& C = at(sys.C, t);
      Matrix Xhn = A * Xh + L * (Y - C * Xh);
      Matrix dXhn = A * dXh + L * (dY - C * dXh);
      if (lay.m > 0) {
        Xhn += at(sys.B, t) * U;
        dXhn += at(sys.B, t) * dU;
      }
      Xh = std::move(Xhn);
      dXh = std::move(dXhn);
    }
    X = std::move(Xn);
    dX = std::move(dXn);
  }
  return out;
}

Vector input_mean(const LtvSystem& sys, const Layout& lay) {
  Vector m = Vector::Zero(lay.dim());
  m.segment(lay.x0(), lay.n) = sys.x0_mean;
  m.segment(lay.xhat(), lay.n) = sys.xhat0 ? *sys.xhat0 : sys.x0_mean;
  for (int t = 0; t < sys.steps; ++t) {
    if (lay.m > 0 && !sys.reference.empty()) m.segment(lay.r(t), lay.m) = at(sys.reference, t);
    if (lay.q > 0 && !sys.v_mean.empty()) m.segment(lay.v(t), lay.q) = at(sys.v_mean, t);
    if (!sys.w_mean.empty()) m.segment(lay.w(t), lay.n) = at(sys.w_mean, t);
  }
  return m;
}

Matrix input_cov(const LtvSystem& sys, const Layout& lay) {
  Matrix S = Matrix::Zero(lay.dim(), lay.dim());
  if (sys.x0_cov.size() > 0) S.block(lay.x0(), lay.x0(), lay.n, lay.n) = sys.x0_cov;
  for (int t = 0; t < sys.steps; ++t) {
    if (lay.q > 0 && !sys.v_cov.empty()) S.block(lay.v(t), lay.v(t), lay.q, lay.q) = at(sys.v_cov, t);
    if (!sys.w_cov.empty()) S.block(lay.w(t), lay.w(t), lay.n, lay.n) = at(sys.w_cov, t);
  }
  return S;
}

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

void LtvSystem::validate() const {
  const int nn = n();
  if (nn == 0) throw ValidationError("system has no states");
  if (steps < 1) throw ValidationError("trajectory horizon must be at least 1");
  check_per_step("A", A.size(), steps, true);
  check_per_step("B", B.size(), steps, false);
  check_per_step("C", C.size(), steps, false);
  check_per_step("w_mean", w_mean.size(), steps, false);
  check_per_step("w_cov", w_cov.size(), steps, false);
  check_per_step("v_mean", v_mean.size(), steps, false);
  check_per_step("v_cov", v_cov.size(), steps, false);
  check_per_step("reference", reference.size(), steps, false);
  const int mm = m(), qq = q();
  for (const auto& a : A) check_shape("A", a, nn, nn);
  for (const auto& b : B) check_shape("B", b, nn, mm);
  for (const auto& c : C) check_shape("C", c, qq, nn);
  for (const auto& w : w_mean)
    if (w.size() != nn) throw ValidationError("w_mean has wrong length");
  for (const auto& w : w_cov) {
    check_shape("w_cov", w, nn, nn);
    check_psd("w_cov", w);
  }
  for (const auto& v : v_mean)
    if (v.size() != qq) throw ValidationError("v_mean has wrong length");
  for (const auto& v : v_cov) {
    check_shape("v_cov", v, qq, qq);
    check_psd("v_cov", v);
  }
  if (x0_mean.size() != nn) throw ValidationError("x0_mean has wrong length");
  if (x0_cov.size() > 0) {
    check_shape("x0_cov", x0_cov, nn, nn);
    check_psd("x0_cov", x0_cov);
  }
  if (xhat0 && xhat0->size() != nn) throw ValidationError("xhat0 has wrong length");
  for (const auto& r : reference)
    if (r.size() != mm) throw ValidationError("reference has wrong length");
  if (feedback != Feedback::open_loop) {
    if (mm == 0) throw ValidationError("feedback requires an input matrix B");
    check_per_step("K", K.size(), steps, true);
    const int kcols = feedback == Feedback::state_estimate ? nn : qq;
    for (const auto& k : K) check_shape("K", k, mm, kcols);
    if (feedback == Feedback::measurement && qq == 0) throw ValidationError("measurement feedback requires C");
  }
  if (feedback == Feedback::state_estimate) {
    if (qq == 0) throw ValidationError("state-estimate feedback requires C");
    check_per_step("L", L.size(), steps, true);
    for (const auto& l : L) check_shape("L", l, nn, qq);
  }
}

Matrix covariance_factor(const Matrix& cov) {
  const Matrix sym = symmetrized(cov);
  Eigen::LLT<Matrix> llt(sym);
  if (llt.info() == Eigen::Success) {
    const Eigen::VectorXd d = Matrix(llt.matrixL()).diagonal();
    // Reject numerically singular factorizations; they hide negative directions.
    if (d.size() == 0 || d.minCoeff() > 1e-9 * std::max(1.0, d.maxCoeff())) return llt.matrixL();
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Vector ev = es.eigenvalues();
  const double tol = 1e-9 * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) <= tol ? 0.0 : std::sqrt(ev(i));
  return es.eigenvectors() * ev.asDiagonal();
}

TrajectoryGaussian unroll(const LtvSystem& sys) {
  sys.validate();
  const Layout lay{sys.n(), sys.m(), sys.q(), sys.steps};
  const Rollout ro = rollout(sys, nullptr);
  TrajectoryGaussian g;
  g.n = lay.n;
  g.steps = sys.steps;
  g.phi_0 = ro.phi.middleCols(lay.x0(), lay.n);
  g.phi_xhat = ro.phi.middleCols(lay.xhat(), lay.n);
  g.phi_r = ro.phi.middleCols(2 * lay.n, lay.m * sys.steps);
  g.phi_v = ro.phi.middleCols(lay.v(0), lay.q * sys.steps);
  g.phi_w = ro.phi.middleCols(lay.w(0), lay.n * sys.steps);
  g.mean = ro.phi * input_mean(sys, lay);
  g.cov = symmetrized(ro.phi * input_cov(sys, lay) * ro.phi.transpose());
  g.factor = covariance_factor(g.cov);
  return g;
}

Vector Hyperplane::dense(int steps) const {
  Vector a = Vector::Zero(local.size() * steps);
  a.segment(time * local.size(), local.size()) = local;
  return a;
}

std::vector<Hyperplane> lift_predicates(const stl::Formula& phi, std::span<const std::string> channels,
                                        std::span<const std::string> state_names, int steps) {
  const int n = static_cast<int>(state_names.size());
  std::vector<Hyperplane> out;
  for (const auto& pw : stl::collect_predicates(phi)) {
    Vector local = Vector::Zero(n);
    for (std::size_t c = 0; c < pw.predicate.coeffs.size(); ++c) {
      if (pw.predicate.coeffs[c] == 0.0) continue;
      if (c >= channels.size()) throw ValidationError("predicate has more coefficients than channels");
      const auto it = std::find(state_names.begin(), state_names.end(), channels[c]);
      if (it == state_names.end())
        throw ValidationError("channel '" + channels[c] + "' is not a state coordinate");
      local(it - state_names.begin()) += pw.predicate.coeffs[c];
    }
    for (int t : pw.times) {
      if (t >= steps)
        throw ValidationError("predicate '" + pw.predicate.label + "' is referenced at step " + std::to_string(t) +
                              " beyond the trajectory horizon " + std::to_string(steps));
      out.push_back({t, local, pw.predicate.offset, pw.predicate.label});
    }
  }
  return out;
}

std::string Parameter::describe() const {
  std::string s;
  switch (kind) {
    case Kind::reference: s = "r[" + std::to_string(row) + "]"; break;
    case Kind::gain: s = "K[" + std::to_string(row) + "," + std::to_string(col) + "]"; break;
    case Kind::initial_mean: s = "x0_mean[" + std::to_string(row) + "]"; break;
    case Kind::process_mean: s = "w_mean[" + std::to_string(row) + "]"; break;
    case Kind::measurement_mean: s = "v_mean[" + std::to_string(row) + "]"; break;
  }
  if (step >= 0) s += "@" + std::to_string(step);
  return s;
}

Sensitivity sensitivity(const LtvSystem& sys, const Parameter& p) {
  sys.validate();
  const Layout lay{sys.n(), sys.m(), sys.q(), sys.steps};
  if (p.step >= sys.steps) throw ValidationError("parameter step outside the horizon");
  Sensitivity s;
  const int nN = lay.n * sys.steps;
  s.dcov = Matrix::Zero(nN, nN);

  if (p.kind == Parameter::Kind::gain) {
    if (sys.feedback == Feedback::open_loop) throw ValidationError("open-loop system has no gain parameters");
    const int kcols = sys.feedback == Feedback::state_estimate ? lay.n : lay.q;
    if (p.row < 0 || p.row >= lay.m || p.col < 0 || p.col >= kcols) throw ValidationError("gain index out of range");
    const Rollout ro = rollout(sys, &p);
    const Matrix S = input_cov(sys, lay);
    s.dmean = ro.dphi * input_mean(sys, lay);
    const Matrix cross = ro.dphi * S * ro.phi.transpose();
    s.dcov = cross + cross.transpose();
    return s;
  }

  // Everything else enters linearly through the input mean only.
  Vector dm = Vector::Zero(lay.dim());
  auto mark = [&](auto offset_of, int width) {
    if (p.row < 0 || p.row >= width) throw ValidationError("parameter index out of range");
    for (int t = 0; t < sys.steps; ++t)
      if (p.step < 0 || p.step == t) dm(offset_of(t) + p.row) = 1.0;
  };
  switch (p.kind) {
    case Parameter::Kind::reference:
      mark([&](int t) { return lay.r(t); }, lay.m);
      break;
    case Parameter::Kind::measurement_mean:
      mark([&](int t) { return lay.v(t); }, lay.q);
      break;
    case Parameter::Kind::process_mean:
      mark([&](int t) { return lay.w(t); }, lay.n);
      break;
    case Parameter::Kind::initial_mean:
      if (p.row < 0 || p.row >= lay.n) throw ValidationError("parameter index out of range");
      dm(lay.x0() + p.row) = 1.0;
      if (!sys.xhat0) dm(lay.xhat() + p.row) = 1.0;
      break;
    case Parameter::Kind::gain:
      break;
  }
  s.dmean = rollout(sys, nullptr).phi * dm;
  return s;
}

double get_parameter(const LtvSystem& sys, const Parameter& p) {
  const int t = std::max(p.step, 0);
  switch (p.kind) {
    case Parameter::Kind::reference: return at(sys.reference, t)(p.row);
    case Parameter::Kind::gain: return at(sys.K, t)(p.row, p.col);
    case Parameter::Kind::initial_mean: return sys.x0_mean(p.row);
    case Parameter::Kind::process_mean: return at(sys.w_mean, t)(p.row);
    case Parameter::Kind::measurement_mean: return at(sys.v_mean, t)(p.row);
  }
  return 0.0;
}

void set_parameter(LtvSystem& sys, const Parameter& p, double value) {
  auto assign_vec = [&](std::vector<Vector>& v, int width) {
    if (v.empty()) v.assign(1, Vector::Zero(width));
    if (p.step < 0) {
      for (auto& e : v) e(p.row) = value;
    } else {
      expanded(v, sys.steps)[static_cast<std::size_t>(p.step)](p.row) = value;
    }
  };
  switch (p.kind) {
    case Parameter::Kind::reference: assign_vec(sys.reference, sys.m()); break;
    case Parameter::Kind::process_mean: assign_vec(sys.w_mean, sys.n()); break;
    case Parameter::Kind::measurement_mean: assign_vec(sys.v_mean, sys.q()); break;
    case Parameter::Kind::initial_mean: sys.x0_mean(p.row) = value; break;
    case Parameter::Kind::gain:
      if (p.step < 0) {
        for (auto& k : sys.K) k(p.row, p.col) = value;
      } else {
        expanded(sys.K, sys.steps)[static_cast<std::size_t>(p.step)](p.row, p.col) = value;
      }
      break;
  }
}

void shift_parameter(LtvSystem& sys, const Parameter& p, double delta) {
  if (p.step >= 0 || p.kind == Parameter::Kind::initial_mean) {
    set_parameter(sys, p, get_parameter(sys, p) + delta);
    return;
  }
  auto shift_vec = [&](std::vector<Vector>& v, int width) {
    if (v.empty()) v.assign(1, Vector::Zero(width));
    for (auto& e : v) e(p.row) += delta;
  };
  switch (p.kind) {
    case Parameter::Kind::reference: shift_vec(sys.reference, sys.m()); break;
    case Parameter::Kind::process_mean: shift_vec(sys.w_mean, sys.n()); break;
    case Parameter::Kind::measurement_mean: shift_vec(sys.v_mean, sys.q()); break;
    case Parameter::Kind::gain:
      for (auto& k : sys.K) k(p.row, p.col) += delta;
      break;
    case Parameter::Kind::initial_mean: break;
  }
}

}  // namespace stless::lin
