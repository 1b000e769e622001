#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace netkoop {

// splitmix64 step (Vigna); used for seed mixing only.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from (master, a, b). Counter-based, so
// trajectory j of snapshot i always gets the same stream regardless of
// execution order or thread count.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0) {
  std::uint64_t s = master;
  std::uint64_t h = splitmix64(s);
  s = h ^ (a * 0xd1342543de82ef95ULL);
  h = splitmix64(s);
  s = h ^ (b * 0xaf251af3b0f025b5ULL);
  return splitmix64(s);
}

// mt19937_64 with explicit float/int draws. The standard pins the engine's
// output sequence but not the distributions', so the conversions live here
// to keep results identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1); safe for log()
  double u01_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  double exponential(double rate) { return -std::log(u01_open()) / rate; }

  double normal() {
    // Box-Muller, one value per call (second discarded for simplicity)
    double u1 = u01_open();
    double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // uniform integer in [0, n); multiply-shift, bias < n/2^64
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return u01() < p; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace netkoop
