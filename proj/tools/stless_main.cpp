// Command-line front end: verify-linear, verify-blackbox, synthesize, mc,
// bound and sample-failures.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include "stless/blackbox.hpp"
#include "stless/config.hpp"
#include "stless/error.hpp"
#include "stless/ess.hpp"
#include "stless/hdr.hpp"
#include "stless/simulator_process.hpp"
#include "stless/synthesis.hpp"

using namespace stless;
using config::json;

namespace {

enum Exit { kOk = 0, kValidation = 1, kBudget = 2, kProtocol = 3 };

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, n_ess, n_skip, chains, count;
  std::optional<std::size_t> trials;
  std::optional<std::string> method, report, samples, trace, spec, failure;
};

config::JobConfig load(const std::string& mode, const Overrides& o) {
  const std::filesystem::path path(o.config_path);
  json j = config::read_json_file(path);
  config::JobConfig c = config::parse_job(j, path.parent_path());
  c.mode = mode;
  if (o.seed) c.hdr.seed = *o.seed;
  if (o.threads) c.hdr.threads = *o.threads;
  if (o.n_ess) c.hdr.n_ess = *o.n_ess;
  if (o.n_skip) c.hdr.n_skip = *o.n_skip;
  if (o.chains) c.hdr.chains = *o.chains;
  if (o.count) c.count = *o.count;
  if (o.trials) c.trials = *o.trials;
  if (o.method) c.blackbox.method = blackbox::parse_method(*o.method);
  if (o.report) c.output.report = *o.report;
  if (o.samples) c.output.samples = *o.samples;
  if (o.trace) c.output.trace = *o.trace;
  if (o.spec) {
    c.spec = *o.spec;
    c.failure.clear();
  }
  if (o.failure) c.failure = *o.failure;
  c.hdr.validate();
  c.blackbox.validate();
  return c;
}

void emit(const json& report, const std::string& path) {
  if (path.empty()) {
    std::cout << report.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << report.dump(2) << '\n';
}

// Everything a sampler-based mode needs, with the owning objects kept alive.
struct Setup {
  std::unique_ptr<blackbox::RunFunction> run;
  std::unique_ptr<LevelSampler> sampler;
  std::vector<std::string> columns;
  std::function<Eigen::VectorXd(const Sample&)> row;
};

Setup linear_setup(const config::JobConfig& c) {
  if (!c.system) throw ValidationError("this mode needs 'system' or 'system_file'");
  const lin::LtvSystem& sys = *c.system;
  Setup s;
  const stl::Formula failure = config::failure_formula(c, sys.state_names);
  s.sampler = std::make_unique<ess::LinearEssSampler>(
      lin::unroll(sys), ess::LinearProblem::from_states(failure, sys.state_names, sys.steps));
  for (int t = 0; t < sys.steps; ++t)
    for (const auto& name : sys.state_names) s.columns.push_back(name + "@" + std::to_string(t));
  s.row = [](const Sample& x) { return x.x; };
  return s;
}

Setup blackbox_setup(const config::JobConfig& c) {
  if (!c.simulator) throw ValidationError("this mode needs 'simulator'");
  Setup s;
  if (c.simulator->builtin == "identity") {
    s.run = blackbox::identity_run(c.simulator->channels, c.simulator->horizon);
  } else {
    s.run = std::make_unique<wire::SimulatorProcess>(c.simulator->command);
  }
  const stl::Formula failure = config::failure_formula(c, s.run->channels());
  auto sampler = std::make_unique<blackbox::BlackboxSampler>(*s.run, failure, config::make_warp(c, s.run->dim()),
                                                             c.blackbox);
  for (std::size_t i = 0; i < s.run->dim(); ++i) s.columns.push_back("w" + std::to_string(i + 1));
  const auto* raw = sampler.get();
  s.row = [raw](const Sample& x) { return raw->uncertainty(x.x); };
  s.sampler = std::move(sampler);
  return s;
}

void write_samples(const config::JobConfig& c, const Setup& s, const std::vector<Sample>& samples, bool to_stdout) {
  if (c.output.samples.empty()) {
    if (to_stdout) config::write_samples_csv(std::cout, s.columns, samples, s.row);
    return;
  }
  std::ofstream out(c.output.samples);
  if (!out) throw ValidationError("cannot write '" + c.output.samples + "'");
  config::write_samples_csv(out, s.columns, samples, s.row);
}

int run_verify(const config::JobConfig& c, bool linear) {
  Setup s = linear ? linear_setup(c) : blackbox_setup(c);
  const hdr::VerificationResult r = hdr::verify(*s.sampler, c.hdr);
  emit(config::verification_report(c, r), c.output.report);
  write_samples(c, s, r.failure_samples, false);
  std::cerr << "p_estimate " << config::format_double(r.p_estimate) << " (" << r.ladder.nestings() << " nestings, "
            << r.simulations << " simulations)\n";
  return kOk;
}

int run_sample_failures(const config::JobConfig& c) {
  Setup s = c.source == "linear" ? linear_setup(c) : blackbox_setup(c);
  hdr::HdrConfig cfg = c.hdr;
  cfg.final_samples = 0;
  const hdr::VerificationResult r = hdr::verify(*s.sampler, cfg);
  const auto samples = hdr::sample_failures(*s.sampler, r, c.count, cfg, Rng(c.hdr.seed).split("failures"));
  write_samples(c, s, samples, true);
  if (!c.output.report.empty()) emit(config::verification_report(c, r), c.output.report);
  return kOk;
}

int run_mc(const config::JobConfig& c) {
  Setup s = c.source == "linear" ? linear_setup(c) : blackbox_setup(c);
  const hdr::McEstimate e = hdr::mc_estimate(*s.sampler, c.trials, c.hdr.seed);
  emit(config::mc_report(c, e), c.output.report);
  return kOk;
}

int run_synthesize(const config::JobConfig& c) {
  if (!c.system) throw ValidationError("synthesize needs 'system' or 'system_file'");
  const synth::SynthesisProblem p{*c.system,      config::failure_formula(c, c.system->state_names),
                                  c.parameters,   c.direction,
                                  c.alpha,        c.n_samples,
                                  c.max_iterations, c.target_p,
                                  c.hdr,          c.hdr.seed};
  const synth::SynthesisTrace trace = synth::synthesize(p);

  std::ofstream trace_file;
  std::ostream* out = &std::cout;
  if (!c.output.trace.empty()) {
    trace_file.open(c.output.trace);
    if (!trace_file) throw ValidationError("cannot write '" + c.output.trace + "'");
    out = &trace_file;
  }
  for (const auto& r : trace.records) *out << config::trace_record(r).dump() << '\n';
  json report = {{"schema", 1},
                 {"mode", c.mode},
                 {"status", trace.status},
                 {"iterations", trace.records.size()},
                 {"final_gamma", trace.final_gamma},
                 {"final_p", trace.records.empty() ? json(nullptr) : json(trace.records.back().p)},
                 {"config", config::to_json(c)}};
  if (!trace.message.empty()) report["message"] = trace.message;
  if (!c.output.report.empty()) emit(report, c.output.report);
  std::cerr << "status " << trace.status << " after " << trace.records.size() << " iterations\n";
  return trace.status == "no_failure_sample" ? kBudget : kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << '\n';
    return kProtocol;
  } catch (const SimulationError& e) {
    std::cerr << "simulation error: " << e.what() << '\n';
    return kProtocol;
  } catch (const BudgetError& e) {
    std::cerr << "budget exhausted: " << e.what() << '\n';
    return kBudget;
  } catch (const LadderError& e) {
    std::cerr << "ladder failed: " << e.what() << '\n';
    return kBudget;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
}

void add_job_options(CLI::App* sub, Overrides& o) {
  sub->add_option("config", o.config_path, "Job configuration (JSON)")->required();
  sub->add_option("--seed", o.seed, "Root seed");
  sub->add_option("--threads", o.threads, "Worker threads for concurrent chains");
  sub->add_option("--n-ess", o.n_ess, "Retained samples per nesting");
  sub->add_option("--n-skip", o.n_skip, "Discarded steps between retained samples");
  sub->add_option("--chains", o.chains, "Chains per nesting");
  sub->add_option("--method", o.method, "Black-box sampler: lipschitz or bo");
  sub->add_option("--spec", o.spec, "Requirement formula (its negation is the failure set)");
  sub->add_option("--failure", o.failure, "Failure formula");
  sub->add_option("--report", o.report, "Report path (stdout when absent)");
  sub->add_option("--samples", o.samples, "Failure samples CSV path");
  sub->add_option("--trace", o.trace, "Synthesis trace path (JSON lines)");
  sub->add_option("--count", o.count, "Samples to draw (sample-failures)");
  sub->add_option("--trials", o.trials, "Monte Carlo trials (mc)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rare-event failure probabilities of stochastic systems under STL specifications"};
  app.require_subcommand(1);

  Overrides o;
  const char* job_modes[] = {"verify-linear", "verify-blackbox", "synthesize", "mc", "sample-failures"};
  const char* descriptions[] = {"Estimate the failure probability of a linear Gaussian system",
                                "Estimate the failure probability through a run function",
                                "Descend the failure probability over system parameters",
                                "Plain Monte Carlo baseline", "Draw fresh samples from the failure set"};
  std::vector<CLI::App*> subs;
  for (int i = 0; i < 5; ++i) {
    subs.push_back(app.add_subcommand(job_modes[i], descriptions[i]));
    add_job_options(subs.back(), o);
  }

  double lambda = 2.0, delta = 0.5, eps = -1.0;
  int ness = 250, k = 10;
  CLI::App* bound = app.add_subcommand("bound", "Multiplicative error bound of the ladder estimate");
  bound->add_option("--lambda", lambda, "Overestimation factor (> 1)")->capture_default_str();
  bound->add_option("--delta", delta, "Slack in (0, 1]")->capture_default_str();
  bound->add_option("--ness", ness, "Samples per nesting")->capture_default_str();
  bound->add_option("--k", k, "Number of nestings")->capture_default_str();
  bound->add_option("--eps", eps, "Also report the samples per nesting needed for this bound");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  if (bound->parsed()) {
    return guarded([&] {
      const double b = hdr::error_bound(lambda, delta, ness, k);
      std::printf("%.4e\n", b);
      if (eps > 0.0) std::printf("required_samples %d\n", hdr::required_samples(lambda, delta, k, eps));
      return int(kOk);
    });
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const std::string mode = job_modes[i];
    return guarded([&] {
      const config::JobConfig c = load(mode, o);
      if (mode == "verify-linear") return run_verify(c, true);
      if (mode == "verify-blackbox") return run_verify(c, false);
      if (mode == "synthesize") return run_synthesize(c);
      if (mode == "mc") return run_mc(c);
      return run_sample_failures(c);
    });
  }
  return kValidation;
}
