#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stless/blackbox.hpp"
#include "stless/hdr.hpp"
#include "stless/lin_gauss.hpp"
#include "stless/synthesis.hpp"
#include "stless/warp.hpp"

namespace stless::config {

using nlohmann::json;

/// System description: matrices are row-major nested arrays; a 2-D array is
/// broadcast over all steps, a 3-D array gives one matrix per step (vectors
/// likewise with 1-D / 2-D arrays).
lin::LtvSystem parse_system(const json& j);
json system_to_json(const lin::LtvSystem& sys);

lin::Parameter parse_parameter(const json& j);
json parameter_to_json(const lin::Parameter& p);

warp::Marginal parse_marginal(const json& j);

/// Ordered list of blocks {kind, ..., coords: [first, last]} composed in
/// order; coordinates a block does not cover pass through unchanged. An
/// empty list is the identity.
std::shared_ptr<const warp::Bijector> parse_bijector(const json& blocks, std::size_t dim);

struct Simulator {
  std::string builtin;               // "identity" or empty
  std::vector<std::string> command;  // child process argv
  std::vector<std::string> channels; // builtin only
  int horizon = 1;                   // builtin only
};

struct Outputs {
  std::string report;
  std::string samples;
  std::string trace;
};

struct JobConfig {
  std::string mode;
  std::string spec;     // requirement; the failure formula is its negation
  std::string failure;  // failure formula given directly (wins over spec)
  std::optional<lin::LtvSystem> system;
  std::optional<Simulator> simulator;
  hdr::HdrConfig hdr;
  blackbox::BlackboxConfig blackbox;
  json bijector = json::array();
  warp::WeightMode weights = warp::WeightMode::density_ratio;
  json target;  // per-coordinate marginals, or null

  // synthesize
  std::vector<lin::Parameter> parameters;
  int direction = -1;
  double alpha = 0.1;
  int n_samples = 500;
  int max_iterations = 100;
  double target_p = 0.0;

  std::size_t trials = 100000;  // mc
  int count = 100;              // sample-failures
  std::string source = "linear";  // mc / sample-failures: "linear" or "blackbox"
  Outputs output;
};

/// Parses a job document. `base` resolves relative spec_file/system_file paths.
JobConfig parse_job(const json& j, const std::filesystem::path& base = {});

/// Resolved configuration including every default.
json to_json(const JobConfig& c);

json read_json_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Channels the formula is written over: state names in linear modes,
/// simulator channels otherwise.
stl::Formula failure_formula(const JobConfig& c, std::span<const std::string> channels);

/// Bijector, weight mode and optional target from the job, over `dim` coordinates.
warp::Warp make_warp(const JobConfig& c, std::size_t dim);

json ladder_to_json(const hdr::NestingLadder& ladder);
json verification_report(const JobConfig& c, const hdr::VerificationResult& r);
json mc_report(const JobConfig& c, const hdr::McEstimate& e);
json trace_record(const synth::SynthesisRecord& r);

/// One row per sample: index, robustness, weight, then the named columns.
void write_samples_csv(std::ostream& out, const std::vector<std::string>& columns,
                       const std::vector<Sample>& samples, const std::function<Eigen::VectorXd(const Sample&)>& row);

/// Shortest text that reads back as the same double.
std::string format_double(double v);

}  // namespace stless::config
