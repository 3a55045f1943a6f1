#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace accar {

// Structural misuse (bad shapes, bad arguments) throws std::invalid_argument.
// These two mark conditions the CLI maps to dedicated exit codes.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

#define ACCAR_CHECK(cond, msg) \
  do {                         \
    if (!(cond)) throw std::invalid_argument(std::string("accar: ") + (msg)); \
  } while (0)

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) r += (i ? "," : "") + std::to_string(s[i]);
  return r + "]";
}

// Deterministic RNG wrapper. mt19937_64 has a standard-defined sequence, and
// its text serialization round-trips exactly, so trainer state can be
// checkpointed bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  double uniform(double lo, double hi) {
    // Derive from raw bits rather than std::uniform_real_distribution, whose
    // algorithm is implementation-defined.
    const double u = double(eng_() >> 11) * 0x1.0p-53;  // [0,1)
    return lo + (hi - lo) * u;
  }

  double normal() {
    // Marsaglia polar method, deterministic across platforms.
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  // Uniform integer in [0, n).
  int64_t below(int64_t n) {
    ACCAR_CHECK(n > 0, "Rng::below needs n > 0");
    return int64_t(eng_() % uint64_t(n));
  }

  uint64_t raw() { return eng_(); }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_ << ' ' << (have_spare_ ? 1 : 0) << ' ';
    os.precision(17);
    os << spare_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    int hs = 0;
    is >> eng_ >> hs >> spare_;
    ACCAR_CHECK(!is.fail(), "bad Rng state string");
    have_spare_ = hs != 0;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace accar
