#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace imgscc {

// Deterministic keyed random streams.  Every Monte Carlo loop in the library
// draws from a stream keyed by (seed, purpose, replicate index), so results
// do not depend on thread count or iteration order.  One uniform is consumed
// per variate of any kind; that draw budget is part of the output contract.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Inverse standard normal CDF (Wichura's PPND16 rational approximations,
// accurate to full double precision on (0,1)).
inline double inv_normal_cdf(double p) {
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
              6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
            1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
          1.3314166789178437745e+2) * r + 3.3871328727963666080e+0);
    const double den =
        (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
              3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
            5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
          4.2313330701600911252e+1) * r + 1.0);
    return q * num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  if (r <= 0.0) return (q < 0.0) ? -std::numeric_limits<double>::infinity()
                                 : std::numeric_limits<double>::infinity();
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
            3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
          4.63033784615654529590e+0) * r + 1.42343711074968357734e+0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
          2.05319162663775882187e+0) * r + 1.0);
    val = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
          5.46378491116411436990e+0) * r + 6.65790464350110377720e+0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    val = num / den;
  }
  return (q < 0.0) ? -val : val;
}

// xoshiro256++ generator seeded through splitmix64 from a (seed, key) pair.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t key1 = 0, std::uint64_t key2 = 0,
            std::uint64_t key3 = 0) {
    std::uint64_t mix = seed;
    mix ^= 0x9e3779b97f4a7c15ULL + (key1 << 1);
    std::uint64_t h = splitmix64(mix);
    mix ^= h + 0x632be59bd9b4e019ULL + (key2 << 2);
    h = splitmix64(mix);
    mix ^= h + 0xd6e8feb86659fd93ULL + (key3 << 3);
    for (auto& word : s_) word = splitmix64(mix);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on the open interval (0,1); never returns an exact endpoint.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() { return inv_normal_cdf(uniform01()); }

  // Rademacher sign in {-1.0, +1.0}; consumes one uniform.
  double rademacher() { return (uniform01() < 0.5) ? -1.0 : 1.0; }

  // Integer uniform on [0, bound) by rejection-free scaling; consumes one draw.
  std::uint64_t bounded(std::uint64_t bound) {
    return static_cast<std::uint64_t>(uniform01() * static_cast<double>(bound)) % bound;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

// Purpose tags keep independent parts of a run on disjoint streams.
namespace rngtag {
inline constexpr std::uint64_t kDataGen = 101;
inline constexpr std::uint64_t kQuantile = 202;
inline constexpr std::uint64_t kBootstrap = 303;
inline constexpr std::uint64_t kFolds = 404;
inline constexpr std::uint64_t kSignFlip = 505;
}  // namespace rngtag

}  // namespace imgscc
