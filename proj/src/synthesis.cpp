#include "stless/synthesis.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "stless/error.hpp"
#include "stless/ess.hpp"

namespace stless::synth {

Precision precision(const Matrix& cov) {
  if (cov.rows() != cov.cols() || cov.rows() == 0) throw ValidationError("covariance must be square and non-empty");
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) {
    const double min_diag = llt.matrixL().toDenseMatrix().diagonal().minCoeff();
    const double max_diag = llt.matrixL().toDenseMatrix().diagonal().maxCoeff();
    if (min_diag > 1e-6 * max_diag) return {llt.solve(Matrix::Identity(cov.rows(), cov.cols())), false};
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Vector& ev = es.eigenvalues();
  const double cutoff = 1e-9 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  Vector inv = Vector::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cutoff) inv(i) = 1.0 / ev(i);
  const Matrix& V = es.eigenvectors();
  return {V * inv.asDiagonal() * V.transpose(), true};
}

Vector grad_mu(const std::vector<Vector>& samples, const Vector& mean, const Precision& prec) {
  if (samples.empty()) throw ValidationError("gradient needs at least one sample");
  Vector acc = Vector::Zero(mean.size());
  for (const Vector& x : samples) acc += x.head(mean.size()) - mean;
  return prec.inverse * (acc / static_cast<double>(samples.size()));
}

Matrix grad_sigma(const std::vector<Vector>& samples, const Vector& mean, const Precision& prec) {
  if (samples.empty()) throw ValidationError("gradient needs at least one sample");
  Matrix outer = Matrix::Zero(mean.size(), mean.size());
  for (const Vector& x : samples) {
    const Vector d = x.head(mean.size()) - mean;
    outer.noalias() += d * d.transpose();
  }
  outer /= static_cast<double>(samples.size());
  const Matrix& P = prec.inverse;
  const Matrix g = 0.5 * (P * outer * P - P);
  return 0.5 * (g + g.transpose());
}

double grad_parameter(const lin::Sensitivity& s, const Vector& g_mu, const Matrix& g_sigma) {
  double g = s.dmean.dot(g_mu);
  if (s.dcov.size() > 0) g += (s.dcov.array() * g_sigma.array()).sum();
  return g;
}

void SynthesisProblem::validate() const {
  system.validate();
  if (parameters.empty()) throw ValidationError("synthesis needs at least one parameter");
  if (direction != 1 && direction != -1) throw ValidationError("direction must be +1 or -1");
  if (!(alpha > 0.0)) throw ValidationError("learning rate must be positive");
  if (n_samples < 1) throw ValidationError("n_samples must be at least 1");
  if (max_iterations < 1) throw ValidationError("max_iterations must be at least 1");
  hdr.validate();
}

SynthesisTrace synthesize(const SynthesisProblem& problem) {
  problem.validate();
  const Rng root(problem.seed);
  lin::LtvSystem sys = problem.system;
  SynthesisTrace trace;
  trace.status = "max_iterations";

  const auto gamma_of = [&] {
    std::vector<double> g;
    for (const auto& p : problem.parameters) g.push_back(lin::get_parameter(sys, p));
    return g;
  };

  for (int it = 0; it < problem.max_iterations; ++it) {
    const lin::TrajectoryGaussian tg = lin::unroll(sys);
    ess::LinearEssSampler sampler(tg, ess::LinearProblem::from_states(problem.failure, sys.state_names, sys.steps));
    hdr::HdrConfig cfg = problem.hdr;
    cfg.seed = root.split("verify").split(static_cast<std::uint64_t>(it)).seed();
    cfg.final_samples = 0;

    SynthesisRecord rec;
    rec.iteration = it;
    rec.gamma = gamma_of();
    hdr::VerificationResult res;
    std::vector<Sample> fresh;
    try {
      res = hdr::verify(sampler, cfg);
      fresh = hdr::sample_failures(sampler, res, problem.n_samples, cfg,
                                   root.split("gradient").split(static_cast<std::uint64_t>(it)));
    } catch (const LadderError& e) {
      trace.status = "no_failure_sample";
      trace.message = e.what();
      break;
    }
    rec.p = res.p_estimate;
    rec.variance = res.variance;
    rec.nestings = static_cast<int>(res.ladder.nestings());
    rec.simulations = sampler.simulations();

    std::vector<Vector> xs;
    xs.reserve(fresh.size());
    for (auto& s : fresh) xs.push_back(std::move(s.x));
    const Precision prec = precision(tg.cov);
    rec.pseudo_inverse = prec.pseudo;
    const Vector g_mu = grad_mu(xs, tg.mean, prec);
    const Matrix g_sigma = grad_sigma(xs, tg.mean, prec);

    double norm2 = 0.0;
    for (const auto& p : problem.parameters) {
      const double d = grad_parameter(lin::sensitivity(sys, p), g_mu, g_sigma);
      rec.direction.push_back(d);
      rec.gradient.push_back(rec.p * d);
      rec.step.push_back(problem.direction * problem.alpha * d);
      norm2 += rec.p * d * rec.p * d;
    }
    rec.gradient_norm = std::sqrt(norm2);
    trace.records.push_back(rec);

    if (rec.p <= problem.target_p) {
      trace.status = "target_reached";
      break;
    }
    if (rec.gradient_norm < 1e-12 && rec.p > 0.0) {
      // p * |direction| below 1e-12: nothing left to follow.
      trace.status = "gradient_vanished";
      break;
    }
    for (std::size_t j = 0; j < problem.parameters.size(); ++j)
      lin::shift_parameter(sys, problem.parameters[j], rec.step[j]);
  }
  trace.final_gamma = gamma_of();
  return trace;
}

InitialControls find_initial_controls(const lin::LtvSystem& system, const stl::Formula& spec,
                                      const Matrix& control_cov, const hdr::HdrConfig& config) {
  lin::LtvSystem sys = system;
  sys.validate();
  const int n = sys.n(), m = sys.m(), N = sys.steps;
  if (m == 0) throw ValidationError("the system has no inputs to search over");
  if (control_cov.rows() != m || control_cov.cols() != m) throw ValidationError("control covariance must be m x m");

  // Noise-free plant: only the references are uncertain.
  for (auto& c : sys.w_cov) c.setZero();
  for (auto& c : sys.v_cov) c.setZero();
  if (sys.x0_cov.size() > 0) sys.x0_cov.setZero();
  const lin::TrajectoryGaussian tg = lin::unroll(sys);

  const Matrix fu = lin::covariance_factor(control_cov);
  Matrix Fu = Matrix::Zero(m * N, m * N);
  for (int t = 0; t < N; ++t) Fu.block(t * m, t * m, m, m) = fu;

  // Joint Gaussian of [trajectory; references] with factor [phi_r; I] Fu.
  Vector mean(n * N + m * N);
  mean.head(n * N) = tg.mean;
  for (int t = 0; t < N; ++t)
    mean.segment(n * N + t * m, m) = sys.reference.empty() ? Vector::Zero(m) : sys.reference[sys.reference.size() == 1 ? 0 : static_cast<std::size_t>(t)];
  Matrix factor(n * N + m * N, m * N);
  factor.topRows(n * N) = tg.phi_r * Fu;
  factor.bottomRows(m * N) = Fu;

  ess::LinearEssSampler sampler(mean, factor, ess::LinearProblem::from_states(spec, sys.state_names, N));
  InitialControls out;
  hdr::VerificationResult res;
  try {
    res = hdr::verify(sampler, config);
  } catch (const LadderError&) {
    return out;
  }
  std::vector<Sample> candidates = res.failure_samples;
  if (candidates.empty())
    for (const Sample& s : res.ladder.samples.back())
      if (s.robustness >= 0.0) candidates.push_back(s);
  if (candidates.empty()) return out;

  const Sample& best = candidates.front();
  out.found = true;
  out.robustness = best.robustness;
  out.p_estimate = res.p_estimate;
  for (int t = 0; t < N; ++t) out.references.push_back(best.x.segment(n * N + t * m, m));
  return out;
}

}  // namespace stless::synth
