#include "stless/config.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

#include "stless/error.hpp"

namespace stless::config {
namespace {

using lin::Matrix;
using lin::Vector;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ValidationError(where + ": " + what);
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  return j.get<double>();
}

Vector parse_vector(const json& j, const std::string& where) {
  if (!j.is_array()) fail(where, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], where);
  return v;
}

Matrix parse_matrix(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) fail(where, "expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) fail(where, "rows must be arrays of equal length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number(j[r][c], where);
  }
  return m;
}

bool is_3d(const json& j) { return j.is_array() && !j.empty() && j[0].is_array() && !j[0].empty() && j[0][0].is_array(); }
bool is_2d(const json& j) { return j.is_array() && !j.empty() && j[0].is_array(); }

std::vector<Matrix> parse_matrices(const json& j, const std::string& where) {
  std::vector<Matrix> out;
  if (is_3d(j)) {
    for (std::size_t t = 0; t < j.size(); ++t) out.push_back(parse_matrix(j[t], where + "[" + std::to_string(t) + "]"));
  } else {
    out.push_back(parse_matrix(j, where));
  }
  return out;
}

std::vector<Vector> parse_vectors(const json& j, const std::string& where) {
  std::vector<Vector> out;
  if (is_2d(j)) {
    for (std::size_t t = 0; t < j.size(); ++t) out.push_back(parse_vector(j[t], where + "[" + std::to_string(t) + "]"));
  } else {
    out.push_back(parse_vector(j, where));
  }
  return out;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json matrices_json(const std::vector<Matrix>& ms) {
  if (ms.size() == 1) return matrix_json(ms.front());
  json out = json::array();
  for (const auto& m : ms) out.push_back(matrix_json(m));
  return out;
}

json vectors_json(const std::vector<Vector>& vs) {
  if (vs.size() == 1) return vector_json(vs.front());
  json out = json::array();
  for (const auto& v : vs) out.push_back(vector_json(v));
  return out;
}

double bound_value(const json& j, const char* key, double fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  if (j[key].is_string()) {
    const std::string s = j[key].get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  return number(j[key], key);
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config field '") + key + "' has the wrong type");
  }
}

std::string feedback_name(lin::Feedback f) {
  switch (f) {
    case lin::Feedback::open_loop: return "open_loop";
    case lin::Feedback::state_estimate: return "state_estimate";
    case lin::Feedback::measurement: return "measurement";
  }
  return {};
}

std::string kind_name(lin::Parameter::Kind k) {
  switch (k) {
    case lin::Parameter::Kind::reference: return "reference";
    case lin::Parameter::Kind::gain: return "gain";
    case lin::Parameter::Kind::initial_mean: return "initial_mean";
    case lin::Parameter::Kind::process_mean: return "process_mean";
    case lin::Parameter::Kind::measurement_mean: return "measurement_mean";
  }
  return {};
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

lin::LtvSystem parse_system(const json& j) {
  if (!j.is_object()) throw ValidationError("system description must be a JSON object");
  lin::LtvSystem s;
  if (!j.contains("states")) fail("system", "missing 'states'");
  s.state_names = j["states"].get<std::vector<std::string>>();
  s.steps = get_or<int>(j, "steps", 1);
  if (!j.contains("A")) fail("system", "missing 'A'");
  s.A = parse_matrices(j["A"], "A");
  if (j.contains("B")) s.B = parse_matrices(j["B"], "B");
  if (j.contains("C")) s.C = parse_matrices(j["C"], "C");
  if (j.contains("w_mean")) s.w_mean = parse_vectors(j["w_mean"], "w_mean");
  if (j.contains("w_cov")) s.w_cov = parse_matrices(j["w_cov"], "w_cov");
  if (j.contains("v_mean")) s.v_mean = parse_vectors(j["v_mean"], "v_mean");
  if (j.contains("v_cov")) s.v_cov = parse_matrices(j["v_cov"], "v_cov");
  if (!j.contains("x0_mean")) fail("system", "missing 'x0_mean'");
  s.x0_mean = parse_vector(j["x0_mean"], "x0_mean");
  if (j.contains("x0_cov")) s.x0_cov = parse_matrix(j["x0_cov"], "x0_cov");
  const std::string fb = get_or<std::string>(j, "feedback", "open_loop");
  if (fb == "open_loop") s.feedback = lin::Feedback::open_loop;
  else if (fb == "state_estimate") s.feedback = lin::Feedback::state_estimate;
  else if (fb == "measurement") s.feedback = lin::Feedback::measurement;
  else fail("feedback", "expected open_loop, state_estimate or measurement");
  if (j.contains("K")) s.K = parse_matrices(j["K"], "K");
  if (j.contains("L")) s.L = parse_matrices(j["L"], "L");
  if (j.contains("reference")) s.reference = parse_vectors(j["reference"], "reference");
  if (j.contains("xhat0")) s.xhat0 = parse_vector(j["xhat0"], "xhat0");
  s.validate();
  return s;
}

json system_to_json(const lin::LtvSystem& s) {
  json j;
  j["states"] = s.state_names;
  j["steps"] = s.steps;
  j["A"] = matrices_json(s.A);
  if (!s.B.empty()) j["B"] = matrices_json(s.B);
  if (!s.C.empty()) j["C"] = matrices_json(s.C);
  if (!s.w_mean.empty()) j["w_mean"] = vectors_json(s.w_mean);
  if (!s.w_cov.empty()) j["w_cov"] = matrices_json(s.w_cov);
  if (!s.v_mean.empty()) j["v_mean"] = vectors_json(s.v_mean);
  if (!s.v_cov.empty()) j["v_cov"] = matrices_json(s.v_cov);
  j["x0_mean"] = vector_json(s.x0_mean);
  if (s.x0_cov.size() > 0) j["x0_cov"] = matrix_json(s.x0_cov);
  j["feedback"] = feedback_name(s.feedback);
  if (!s.K.empty()) j["K"] = matrices_json(s.K);
  if (!s.L.empty()) j["L"] = matrices_json(s.L);
  if (!s.reference.empty()) j["reference"] = vectors_json(s.reference);
  if (s.xhat0) j["xhat0"] = vector_json(*s.xhat0);
  return j;
}

lin::Parameter parse_parameter(const json& j) {
  lin::Parameter p;
  const std::string kind = get_or<std::string>(j, "kind", "");
  if (kind == "reference") p.kind = lin::Parameter::Kind::reference;
  else if (kind == "gain") p.kind = lin::Parameter::Kind::gain;
  else if (kind == "initial_mean" || kind == "mean") p.kind = lin::Parameter::Kind::initial_mean;
  else if (kind == "process_mean") p.kind = lin::Parameter::Kind::process_mean;
  else if (kind == "measurement_mean") p.kind = lin::Parameter::Kind::measurement_mean;
  else fail("parameter", "unknown kind '" + kind + "'");
  p.row = get_or<int>(j, "row", 0);
  p.col = get_or<int>(j, "col", 0);
  p.step = get_or<int>(j, "step", -1);
  return p;
}

json parameter_to_json(const lin::Parameter& p) {
  json j{{"kind", kind_name(p.kind)}, {"row", p.row}, {"step", p.step}};
  if (p.kind == lin::Parameter::Kind::gain) j["col"] = p.col;
  return j;
}

warp::Marginal parse_marginal(const json& j) {
  const std::string family = get_or<std::string>(j, "family", "");
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (family == "normal") return warp::Marginal::normal(get_or<double>(j, "mean", 0.0), get_or<double>(j, "sd", 1.0));
  if (family == "uniform") return warp::Marginal::uniform(bound_value(j, "lo", 0.0), bound_value(j, "hi", 1.0));
  if (family == "exponential") return warp::Marginal::exponential(get_or<double>(j, "rate", 1.0));
  if (family == "truncated_normal")
    return warp::Marginal::truncated_normal(bound_value(j, "lo", -inf), bound_value(j, "hi", inf),
                                            get_or<double>(j, "mean", 0.0), get_or<double>(j, "sd", 1.0));
  fail("marginal", "unknown family '" + family + "'");
}

std::shared_ptr<const warp::Bijector> parse_bijector(const json& blocks, std::size_t dim) {
  if (blocks.is_null() || (blocks.is_array() && blocks.empty())) return warp::identity(dim);
  if (!blocks.is_array()) throw ValidationError("bijector must be a list of blocks");
  std::vector<std::shared_ptr<const warp::Bijector>> parts;
  for (const json& b : blocks) {
    std::size_t first = 0, last = dim - 1;
    if (b.contains("coords")) {
      const auto c = b["coords"].get<std::vector<std::size_t>>();
      if (c.size() != 2 || c[0] > c[1] || c[1] >= dim) fail("bijector", "coords must be [first, last] within range");
      first = c[0];
      last = c[1];
    }
    std::vector<std::shared_ptr<const warp::ScalarMap>> maps(dim, warp::identity_map());
    const std::string kind = get_or<std::string>(b, "kind", "");
    for (std::size_t i = first; i <= last; ++i) {
      const std::size_t k = i - first;
      const auto pick = [&](const char* key, double fallback) {
        if (!b.contains(key)) return fallback;
        return b[key].is_array() ? number(b[key].at(k), key) : number(b[key], key);
      };
      if (kind == "affine") maps[i] = warp::affine_map(pick("scale", 1.0), pick("offset", 0.0));
      else if (kind == "inverse_cdf") maps[i] = warp::inverse_cdf_map(parse_marginal(b));
      else if (kind == "spline")
        maps[i] = warp::spline_map(b.at("x").get<std::vector<double>>(), b.at("w").get<std::vector<double>>());
      else fail("bijector", "unknown kind '" + kind + "' (expected affine, inverse_cdf or spline)");
    }
    parts.push_back(std::make_shared<const warp::Elementwise>(std::move(maps)));
  }
  return parts.size() == 1 ? parts.front() : warp::compose(std::move(parts));
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

JobConfig parse_job(const json& j, const std::filesystem::path& base) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  const auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base / p; };
  JobConfig c;
  c.mode = get_or<std::string>(j, "mode", "");
  c.spec = get_or<std::string>(j, "spec", "");
  if (j.contains("spec_file")) c.spec = read_text_file(resolve(j["spec_file"].get<std::string>()));
  c.failure = get_or<std::string>(j, "failure", "");
  if (j.contains("system")) c.system = parse_system(j["system"]);
  if (j.contains("system_file")) c.system = parse_system(read_json_file(resolve(j["system_file"].get<std::string>())));
  if (j.contains("simulator")) {
    const json& s = j["simulator"];
    Simulator sim;
    sim.builtin = get_or<std::string>(s, "builtin", "");
    sim.command = get_or<std::vector<std::string>>(s, "command", {});
    sim.channels = get_or<std::vector<std::string>>(s, "channels", {});
    sim.horizon = get_or<int>(s, "horizon", 1);
    if (sim.builtin.empty() && sim.command.empty()) fail("simulator", "needs 'builtin' or 'command'");
    if (!sim.builtin.empty() && sim.builtin != "identity") fail("simulator", "unknown builtin '" + sim.builtin + "'");
    if (sim.builtin == "identity" && sim.channels.empty()) fail("simulator", "identity needs 'channels'");
    c.simulator = std::move(sim);
  }

  const json s = j.value("sampler", json::object());
  c.hdr.n_ess = get_or<int>(s, "n_ess", c.hdr.n_ess);
  c.hdr.n_skip = get_or<int>(s, "n_skip", c.hdr.n_skip);
  c.hdr.chains = get_or<int>(s, "chains", c.hdr.chains);
  c.hdr.max_nestings = get_or<int>(s, "max_nestings", c.hdr.max_nestings);
  c.hdr.retries = get_or<int>(s, "retries", c.hdr.retries);
  c.hdr.final_samples = get_or<int>(s, "final_samples", c.hdr.final_samples);
  c.hdr.seed = get_or<std::uint64_t>(j, "seed", 0);
  c.hdr.threads = get_or<int>(j, "threads", 1);
  c.blackbox.method = blackbox::parse_method(get_or<std::string>(s, "method", "lipschitz"));
  c.blackbox.lipschitz_m = get_or<double>(s, "lipschitz_m", c.blackbox.lipschitz_m);
  c.blackbox.eps_inflate = get_or<double>(s, "eps_inflate", c.blackbox.eps_inflate);
  c.blackbox.budget = get_or<std::size_t>(s, "budget", c.blackbox.budget);
  c.blackbox.bo.n_bo = get_or<int>(s, "n_bo", c.blackbox.bo.n_bo);
  c.blackbox.bo.kappa = get_or<double>(s, "kappa", c.blackbox.bo.kappa);
  c.blackbox.bo.xi = get_or<double>(s, "xi", c.blackbox.bo.xi);
  c.blackbox.bo.acquisition = blackbox::parse_acquisition(get_or<std::string>(s, "acquisition", "ucb"));
  c.blackbox.bo.sigma_max = get_or<double>(s, "sigma_max", c.blackbox.bo.sigma_max);
  c.blackbox.bo.grid = get_or<int>(s, "grid", c.blackbox.bo.grid);
  c.blackbox.bo.margin = get_or<double>(s, "margin", c.blackbox.bo.margin);

  if (j.contains("bijector")) c.bijector = j["bijector"];
  c.weights = warp::parse_weight_mode(get_or<std::string>(j, "weights", "density_ratio"));
  if (j.contains("target")) c.target = j["target"];

  const json syn = j.value("synthesis", json::object());
  if (syn.contains("parameters"))
    for (const json& p : syn["parameters"]) c.parameters.push_back(parse_parameter(p));
  c.direction = get_or<int>(syn, "direction", c.direction);
  c.alpha = get_or<double>(syn, "alpha", c.alpha);
  c.n_samples = get_or<int>(syn, "n_samples", c.n_samples);
  c.max_iterations = get_or<int>(syn, "max_iterations", c.max_iterations);
  c.target_p = get_or<double>(syn, "target_p", c.target_p);

  c.trials = get_or<std::size_t>(j, "trials", c.trials);
  c.count = get_or<int>(j, "count", c.count);
  c.source = get_or<std::string>(j, "source", c.system ? "linear" : "blackbox");
  const json o = j.value("output", json::object());
  c.output.report = get_or<std::string>(o, "report", "");
  c.output.samples = get_or<std::string>(o, "samples", "");
  c.output.trace = get_or<std::string>(o, "trace", "");
  return c;
}

json to_json(const JobConfig& c) {
  json j;
  j["mode"] = c.mode;
  if (!c.spec.empty()) j["spec"] = c.spec;
  if (!c.failure.empty()) j["failure"] = c.failure;
  if (c.system) j["system"] = system_to_json(*c.system);
  if (c.simulator) {
    json s;
    if (!c.simulator->builtin.empty()) {
      s["builtin"] = c.simulator->builtin;
      s["channels"] = c.simulator->channels;
      s["horizon"] = c.simulator->horizon;
    } else {
      s["command"] = c.simulator->command;
    }
    j["simulator"] = s;
  }
  j["sampler"] = {{"n_ess", c.hdr.n_ess},
                  {"n_skip", c.hdr.n_skip},
                  {"chains", c.hdr.chains},
                  {"max_nestings", c.hdr.max_nestings},
                  {"retries", c.hdr.retries},
                  {"final_samples", c.hdr.final_samples},
                  {"method", blackbox::to_string(c.blackbox.method)},
                  {"lipschitz_m", c.blackbox.lipschitz_m},
                  {"eps_inflate", c.blackbox.eps_inflate},
                  {"budget", c.blackbox.budget},
                  {"n_bo", c.blackbox.bo.n_bo},
                  {"kappa", c.blackbox.bo.kappa},
                  {"xi", c.blackbox.bo.xi},
                  {"acquisition", blackbox::to_string(c.blackbox.bo.acquisition)},
                  {"sigma_max", c.blackbox.bo.sigma_max},
                  {"grid", c.blackbox.bo.grid},
                  {"margin", c.blackbox.bo.margin}};
  j["seed"] = c.hdr.seed;
  j["threads"] = c.hdr.threads;
  j["bijector"] = c.bijector;
  j["weights"] = warp::to_string(c.weights);
  j["target"] = c.target;
  json params = json::array();
  for (const auto& p : c.parameters) params.push_back(parameter_to_json(p));
  j["synthesis"] = {{"parameters", params},       {"direction", c.direction},
                    {"alpha", c.alpha},           {"n_samples", c.n_samples},
                    {"max_iterations", c.max_iterations}, {"target_p", c.target_p}};
  j["trials"] = c.trials;
  j["count"] = c.count;
  j["source"] = c.source;
  j["output"] = {{"report", c.output.report}, {"samples", c.output.samples}, {"trace", c.output.trace}};
  return j;
}

stl::Formula failure_formula(const JobConfig& c, std::span<const std::string> channels) {
  if (!c.failure.empty()) return stl::parse(c.failure, channels);
  if (!c.spec.empty()) return stl::negate(stl::parse(c.spec, channels));
  throw ValidationError("config needs 'spec', 'spec_file' or 'failure'");
}

warp::Warp make_warp(const JobConfig& c, std::size_t dim) {
  std::optional<std::vector<warp::Marginal>> target;
  if (!c.target.is_null()) {
    if (!c.target.is_array() || c.target.size() != dim) throw ValidationError("target needs one marginal per coordinate");
    target.emplace();
    for (const json& m : c.target) target->push_back(parse_marginal(m));
  }
  return warp::Warp(parse_bijector(c.bijector, dim), c.weights, std::move(target));
}

json ladder_to_json(const hdr::NestingLadder& ladder) {
  json thresholds = json::array();
  for (double t : ladder.thresholds) thresholds.push_back(std::isfinite(t) ? json(t) : json("-inf"));
  return {{"thresholds", thresholds},
          {"conditionals", ladder.conditionals},
          {"sizes", ladder.sizes()},
          {"attempts", ladder.attempts}};
}

json verification_report(const JobConfig& c, const hdr::VerificationResult& r) {
  const int K = static_cast<int>(r.ladder.nestings());
  json bound = {{"lambda", 2.0}, {"delta", 0.5}, {"n_ess", c.hdr.n_ess}, {"nestings", K}};
  bound["value"] = K > 0 ? hdr::error_bound(2.0, 0.5, c.hdr.n_ess, K) : 1.0;
  return {{"schema", 1},
          {"mode", c.mode},
          {"p_estimate", r.p_estimate},
          {"variance", r.variance},
          {"std_error", std::sqrt(r.variance)},
          {"nestings", K},
          {"ladder", ladder_to_json(r.ladder)},
          {"simulations", r.simulations},
          {"failure_samples", r.failure_samples.size()},
          {"bound", bound},
          {"config", to_json(c)}};
}

json mc_report(const JobConfig& c, const hdr::McEstimate& e) {
  return {{"schema", 1},         {"mode", c.mode},       {"p_estimate", e.p_hat},  {"trials", e.trials},
          {"failures", e.failures}, {"ci_low", e.ci_low}, {"ci_high", e.ci_high}, {"ci_method", e.method},
          {"config", to_json(c)}};
}

json trace_record(const synth::SynthesisRecord& r) {
  return {{"iteration", r.iteration}, {"gamma", r.gamma},         {"p", r.p},
          {"variance", r.variance},   {"direction", r.direction}, {"gradient", r.gradient},
          {"step", r.step},           {"gradient_norm", r.gradient_norm}, {"simulations", r.simulations},
          {"nestings", r.nestings},   {"pseudo_inverse", r.pseudo_inverse}};
}

void write_samples_csv(std::ostream& out, const std::vector<std::string>& columns,
                       const std::vector<Sample>& samples, const std::function<Eigen::VectorXd(const Sample&)>& row) {
  out << "index,robustness,weight";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out << i << ',' << format_double(samples[i].robustness) << ',' << format_double(samples[i].weight);
    const Eigen::VectorXd v = row(samples[i]);
    for (Eigen::Index k = 0; k < v.size(); ++k) out << ',' << format_double(v(k));
    out << '\n';
  }
}

}  // namespace stless::config
