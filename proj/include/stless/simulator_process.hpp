#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "stless/blackbox.hpp"

namespace stless::wire {

/// Handshake a simulator emits on start-up.
struct Hello {
  std::size_t l = 0;
  std::vector<std::string> channels;
  int horizon = 0;
  bool serial = true;
};

/// Newline-terminated JSON messages of the simulator protocol. Floats are
/// printed in shortest round-trip form.
std::string encode_hello(const Hello& hello);
std::string encode_run(std::uint64_t id, const Eigen::VectorXd& w);
std::string encode_signal(std::uint64_t id, const stl::Signal& y);
std::string encode_error(std::uint64_t id, std::string_view message);

/// Throws ProtocolError on malformed input.
Hello decode_hello(std::string_view line);

struct RunRequest {
  std::uint64_t id = 0;
  std::vector<double> w;
};
RunRequest decode_run(std::string_view line);

/// Decodes the reply to request `id`: a signal of `horizon` rows over
/// `channels`, or a SimulationError carrying the simulator's message.
/// Any other deviation is a ProtocolError.
stl::Signal decode_reply(std::string_view line, std::uint64_t id, const std::vector<std::string>& channels,
                         int horizon);

/// A child process speaking the protocol over its standard input and output.
/// Requests are issued one at a time.
class SimulatorProcess final : public blackbox::RunFunction {
 public:
  /// `argv[0]` is looked up on PATH unless it contains a slash.
  explicit SimulatorProcess(const std::vector<std::string>& argv);
  ~SimulatorProcess() override;
  SimulatorProcess(const SimulatorProcess&) = delete;
  SimulatorProcess& operator=(const SimulatorProcess&) = delete;

  std::size_t dim() const override { return hello_.l; }
  const std::vector<std::string>& channels() const override { return hello_.channels; }
  int horizon() const override { return hello_.horizon; }
  bool serial() const override { return true; }
  stl::Signal run(const Eigen::VectorXd& w) override;

  const Hello& hello() const noexcept { return hello_; }
  std::uint64_t requests() const noexcept { return next_id_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  Hello hello_;
  std::uint64_t next_id_ = 0;
  std::mutex mutex_;
};

}  // namespace stless::wire
