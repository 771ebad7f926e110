#include "stless/simulator_process.hpp"

#include <boost/process.hpp>
#include <cmath>
#include <json.hpp>

#include "stless/error.hpp"

namespace bp = boost::process;
using nlohmann::json;

namespace stless::wire {
namespace {

json parse_line(std::string_view line) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw ProtocolError("simulator message is not a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ProtocolError(std::string("simulator sent invalid JSON: ") + e.what());
  }
}

std::string type_of(const json& j) {
  const auto it = j.find("type");
  if (it == j.end() || !it->is_string()) throw ProtocolError("simulator message has no string 'type'");
  return it->get<std::string>();
}

template <class T>
T field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) throw ProtocolError(std::string("simulator message lacks '") + name + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ProtocolError(std::string("simulator field '") + name + "' has the wrong type");
  }
}

std::uint64_t id_of(const json& j) {
  const auto it = j.find("id");
  if (it == j.end() || !it->is_number_integer() || it->get<std::int64_t>() < 0)
    throw ProtocolError("simulator message lacks a non-negative integer 'id'");
  return it->get<std::uint64_t>();
}

std::string dump(const json& j) { return j.dump() + "\n"; }

}  // namespace

std::string encode_hello(const Hello& hello) {
  return dump({{"type", "hello"}, {"l", hello.l}, {"channels", hello.channels}, {"horizon", hello.horizon},
               {"serial", hello.serial}});
}

std::string encode_run(std::uint64_t id, const Eigen::VectorXd& w) {
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (!std::isfinite(w(i))) throw ValidationError("uncertainty vectors must be finite to cross the wire");
  return dump({{"type", "run"}, {"id", id}, {"w", std::vector<double>(w.data(), w.data() + w.size())}});
}

std::string encode_signal(std::uint64_t id, const stl::Signal& y) {
  json rows = json::array();
  for (std::size_t t = 0; t < y.length(); ++t) {
    const auto r = y.row(t);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return dump({{"type", "signal"}, {"id", id}, {"y", std::move(rows)}});
}

std::string encode_error(std::uint64_t id, std::string_view message) {
  return dump({{"type", "error"}, {"id", id}, {"message", std::string(message)}});
}

Hello decode_hello(std::string_view line) {
  const json j = parse_line(line);
  if (type_of(j) != "hello") throw ProtocolError("expected a hello message, got '" + type_of(j) + "'");
  Hello h;
  const auto l = field<std::int64_t>(j, "l");
  h.channels = field<std::vector<std::string>>(j, "channels");
  h.horizon = field<int>(j, "horizon");
  h.serial = j.contains("serial") ? field<bool>(j, "serial") : true;
  if (l < 1) throw ProtocolError("hello declares a non-positive input dimension");
  if (h.channels.empty()) throw ProtocolError("hello declares no channels");
  if (h.horizon < 1) throw ProtocolError("hello declares a non-positive horizon");
  h.l = static_cast<std::size_t>(l);
  return h;
}

RunRequest decode_run(std::string_view line) {
  const json j = parse_line(line);
  if (type_of(j) != "run") throw ProtocolError("expected a run message, got '" + type_of(j) + "'");
  return {id_of(j), field<std::vector<double>>(j, "w")};
}

stl::Signal decode_reply(std::string_view line, std::uint64_t id, const std::vector<std::string>& channels,
                         int horizon) {
  const json j = parse_line(line);
  const std::string type = type_of(j);
  if (type == "error") {
    if (id_of(j) != id) throw ProtocolError("error reply carries id " + std::to_string(id_of(j)) + ", expected " +
                                            std::to_string(id));
    throw SimulationError("simulator failed: " + field<std::string>(j, "message"));
  }
  if (type != "signal") throw ProtocolError("expected a signal message, got '" + type + "'");
  if (id_of(j) != id)
    throw ProtocolError("signal reply carries id " + std::to_string(id_of(j)) + ", expected " + std::to_string(id));
  const auto it = j.find("y");
  if (it == j.end() || !it->is_array()) throw ProtocolError("signal reply lacks the 'y' array");
  if (it->size() != static_cast<std::size_t>(horizon))
    throw ProtocolError("signal has " + std::to_string(it->size()) + " rows, expected " + std::to_string(horizon));
  std::vector<double> values;
  values.reserve(channels.size() * static_cast<std::size_t>(horizon));
  for (const json& row : *it) {
    if (!row.is_array() || row.size() != channels.size())
      throw ProtocolError("signal row does not have " + std::to_string(channels.size()) + " values");
    for (const json& v : row) {
      if (!v.is_number()) throw ProtocolError("signal values must be numbers");
      values.push_back(v.get<double>());
    }
  }
  return stl::Signal(channels, std::move(values));
}

struct SimulatorProcess::Impl {
  bp::opstream to_child;
  bp::ipstream from_child;
  bp::child child;

  std::string read_line() {
    std::string line;
    if (!std::getline(from_child, line)) throw ProtocolError("simulator closed its output");
    return line;
  }
};

SimulatorProcess::SimulatorProcess(const std::vector<std::string>& argv) : impl_(std::make_unique<Impl>()) {
  if (argv.empty()) throw ValidationError("simulator command is empty");
  boost::filesystem::path exe = argv.front();
  if (argv.front().find('/') == std::string::npos) {
    exe = bp::search_path(argv.front());
    if (exe.empty()) throw ProtocolError("simulator executable '" + argv.front() + "' not found on PATH");
  }
  const std::vector<std::string> args(argv.begin() + 1, argv.end());
  try {
    impl_->child = bp::child(exe, bp::args(args), bp::std_in < impl_->to_child, bp::std_out > impl_->from_child);
  } catch (const bp::process_error& e) {
    throw ProtocolError(std::string("could not start simulator: ") + e.what());
  }
  hello_ = decode_hello(impl_->read_line());
}

SimulatorProcess::~SimulatorProcess() {
  try {
    impl_->to_child.pipe().close();
    std::error_code ec;
    if (impl_->child.valid()) {
      if (!impl_->child.wait_for(std::chrono::seconds(5), ec)) impl_->child.terminate(ec);
    }
  } catch (...) {
  }
}

stl::Signal SimulatorProcess::run(const Eigen::VectorXd& w) {
  std::lock_guard lock(mutex_);
  if (static_cast<std::size_t>(w.size()) != hello_.l)
    throw ValidationError("uncertainty vector has length " + std::to_string(w.size()) + ", simulator expects " +
                          std::to_string(hello_.l));
  const std::uint64_t id = next_id_++;
  impl_->to_child << encode_run(id, w) << std::flush;
  if (!impl_->to_child) throw ProtocolError("could not write to the simulator");
  return decode_reply(impl_->read_line(), id, hello_.channels, hello_.horizon);
}

}  // namespace stless::wire
