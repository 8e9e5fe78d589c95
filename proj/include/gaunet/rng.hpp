#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace gau {

// Seeded RNG handle. All sampling in the project goes through one of these so
// that runs are reproducible and checkpoint-resumable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  // uniform integer in [0, n)
  long uniform_int(long n) { return std::uniform_int_distribution<long>(0, n - 1)(engine_); }

  std::mt19937_64& engine() { return engine_; }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (is.fail()) throw std::runtime_error("bad rng state string");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace gau
