#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stless/stl.hpp"

namespace stless::lin {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Feedback { open_loop, state_estimate, measurement };

/// Discrete linear time-variant plant with Gaussian process/measurement noise,
/// optional Luenberger observer and linear feedback.
///
///   x_{t+1} = A_t x_t + B_t u_t + w_t,      y_t = C_t x_t + v_t
///   xh_{t+1} = A_t xh_t + B_t u_t + L_t (y_t - C_t xh_t)
///   u_t = r_t                 (open_loop)
///   u_t = r_t - K_t xh_t      (state_estimate)
///   u_t = r_t - K_t y_t       (measurement)
///
/// Every per-step array holds either one entry (broadcast over all steps) or
/// exactly `steps` entries.
struct LtvSystem {
  std::vector<std::string> state_names;  // defines n
  int steps = 1;                         // trajectory length N

  std::vector<Matrix> A, B, C;
  std::vector<Vector> w_mean;
  std::vector<Matrix> w_cov;
  std::vector<Vector> v_mean;
  std::vector<Matrix> v_cov;
  Vector x0_mean;
  Matrix x0_cov;

  Feedback feedback = Feedback::open_loop;
  std::vector<Matrix> K, L;
  std::vector<Vector> reference;
  std::optional<Vector> xhat0;  // observer start; x0_mean when unset

  int n() const { return static_cast<int>(state_names.size()); }
  int m() const { return B.empty() ? 0 : static_cast<int>(B.front().cols()); }
  int q() const { return C.empty() ? 0 : static_cast<int>(C.front().rows()); }

  /// Throws ValidationError on inconsistent dimensions or non-PSD covariances.
  void validate() const;
};

/// Exact Gaussian of the stacked trajectory [x_0; ...; x_{N-1}] together with
/// the linear maps from each input block to the trajectory.
struct TrajectoryGaussian {
  int n = 0;
  int steps = 0;
  Vector mean;
  Matrix cov;
  Matrix factor;  // factor * factor^T == cov

  Matrix phi_0;     // initial state
  Matrix phi_xhat;  // initial observer estimate (zero unless state_estimate)
  Matrix phi_r;     // stacked references
  Matrix phi_v;     // stacked measurement noise
  Matrix phi_w;     // stacked process noise

  int dim() const { return static_cast<int>(mean.size()); }
};

TrajectoryGaussian unroll(const LtvSystem& sys);

/// F with F F^T = cov. Cholesky when strictly positive definite, otherwise an
/// eigendecomposition with eigenvalues below 1e-9 * max|eig| clipped to zero.
Matrix covariance_factor(const Matrix& cov);

/// A predicate lifted to trajectory space: local . x_time + offset.
struct Hyperplane {
  int time = 0;
  Vector local;  // length n
  double offset = 0.0;
  std::string label;

  double value(const Vector& traj) const { return local.dot(traj.segment(time * local.size(), local.size())) + offset; }
  Vector dense(int steps) const;
};

/// One hyperplane per (distinct predicate, admissible time). Channels must be
/// state coordinates wherever a predicate has a non-zero coefficient.
std::vector<Hyperplane> lift_predicates(const stl::Formula& phi, std::span<const std::string> channels,
                                        std::span<const std::string> state_names, int steps);

struct Parameter {
  enum class Kind { reference, gain, initial_mean, process_mean, measurement_mean };
  Kind kind = Kind::reference;
  int row = 0;
  int col = 0;    // gain only
  int step = -1;  // -1: the same entry at every step, moved jointly

  std::string describe() const;
};

struct Sensitivity {
  Vector dmean;
  Matrix dcov;
};

/// Exact derivative of unroll(sys).mean / .cov w.r.t. one scalar parameter, by
/// forward accumulation through the closed-loop recursion.
Sensitivity sensitivity(const LtvSystem& sys, const Parameter& p);

/// Reads a parameter value / writes a new one into the system.
double get_parameter(const LtvSystem& sys, const Parameter& p);
void set_parameter(LtvSystem& sys, const Parameter& p, double value);

/// Adds delta to every entry the parameter covers (all steps when step < 0).
void shift_parameter(LtvSystem& sys, const Parameter& p, double delta);

}  // namespace stless::lin
