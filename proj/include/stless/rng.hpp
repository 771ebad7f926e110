#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace stless {

/// Seeded random stream. Sub-streams are derived from the seed (not from the
/// current engine state), so a component drawing more numbers never perturbs
/// the streams handed to other components.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng split(std::string_view name) const;
  Rng split(std::uint64_t index) const;

  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal();
  std::size_t index(std::size_t n);  // uniform over [0, n)

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace stless
