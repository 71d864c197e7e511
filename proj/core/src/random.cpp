#include "sveb/random.hpp"

#include <cmath>
#include <limits>

#include "sveb/errors.hpp"
#include "sveb/special_functions.hpp"

namespace sveb {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_key(std::uint64_t key, std::uint64_t id) {
  return splitmix64(key ^ splitmix64(id + 0x632BE59BD9B4E019ULL));
}

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85;

void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::uint64_t key64) {
  std::uint32_t k0 = static_cast<std::uint32_t>(key64);
  std::uint32_t k1 = static_cast<std::uint32_t>(key64 >> 32);
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
    k0 += kPhiloxW0;
    k1 += kPhiloxW1;
  }
  return ctr;
}

}  // namespace

RandomStream::RandomStream(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
    : key_(splitmix64(seed)) {
  for (std::uint64_t id : path) key_ = derive_key(key_, id);
}

RandomStream RandomStream::substream(std::uint64_t id) const {
  RandomStream child(0);
  child.key_ = derive_key(key_, id);
  return child;
}

void RandomStream::refill() {
  const std::array<std::uint32_t, 4> ctr = {static_cast<std::uint32_t>(counter_),
                                            static_cast<std::uint32_t>(counter_ >> 32), 0u, 0u};
  block_ = philox4x32_10(ctr, key_);
  ++counter_;
  used_ = 0;
}

std::uint32_t RandomStream::next_u32() {
  if (used_ == 4) refill();
  return block_[used_++];
}

std::uint64_t RandomStream::next_u64() {
  const std::uint64_t hi = next_u32();
  return (hi << 32) | next_u32();
}

double RandomStream::uniform() {
  // 53 random bits, centred in their cell so 0 and 1 are never returned.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomStream::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * f;
  has_spare_normal_ = true;
  return u * f;
}

double RandomStream::log_gamma_variate(double shape) {
  if (!(shape > 0.0) || !std::isfinite(shape)) throw InvalidInput("gamma: shape must be positive");
  if (shape < 1.0) {
    // G(a) = G(a + 1) * U^(1/a)
    const double boosted = log_gamma_variate(shape + 1.0);
    return boosted + std::log(uniform()) / shape;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return std::log(d * v);
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

double RandomStream::gamma(double shape) { return std::exp(log_gamma_variate(shape)); }

double RandomStream::beta(double a, double b) {
  const double la = log_gamma_variate(a);
  const double lb = log_gamma_variate(b);
  // X / (X + Y) = 1 / (1 + exp(lb - la))
  return 1.0 / (1.0 + std::exp(lb - la));
}

std::int64_t RandomStream::poisson(double mean) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) throw InvalidInput("poisson: mean must be >= 0");
  if (mean == 0.0) return 0;
  if (mean < 10.0) {
    const double limit = std::exp(-mean);
    double prod = uniform();
    std::int64_t k = 0;
    while (prod > limit) {
      prod *= uniform();
      ++k;
    }
    return k;
  }
  // PTRS (Hormann 1993).
  const double slam = std::sqrt(mean);
  const double loglam = std::log(mean);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = uniform() - 0.5;
    double v = uniform();
    const double us = 0.5 - std::fabs(u);
    const double kd = std::floor((2.0 * a / us + b) * u + mean + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(kd);
    if (kd < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -mean + kd * loglam - special::log_gamma(kd + 1.0)) {
      return static_cast<std::int64_t>(kd);
    }
  }
}

std::int64_t RandomStream::binomial(std::int64_t trials, double prob) {
  if (trials < 0) throw InvalidInput("binomial: trials must be >= 0");
  if (!(prob >= 0.0 && prob <= 1.0)) throw InvalidInput("binomial: prob must lie in [0, 1]");
  if (trials == 0 || prob == 0.0) return 0;
  if (prob == 1.0) return trials;
  const bool flip = prob > 0.5;
  const double p = flip ? 1.0 - prob : prob;
  const double q = 1.0 - p;
  const double n = static_cast<double>(trials);
  std::int64_t k;
  if (n * p < 10.0) {
    // Sequential inversion from k = 0.
    const double ratio = p / q;
    double pk = std::exp(n * std::log1p(-p));
    double u = uniform();
    k = 0;
    while (u > pk && k < trials) {
      u -= pk;
      pk *= ratio * static_cast<double>(trials - k) / static_cast<double>(k + 1);
      ++k;
    }
  } else {
    // BTRS transformed rejection (Hormann 1993).
    const double spq = std::sqrt(n * p * q);
    const double b = 1.15 + 2.53 * spq;
    const double a = -0.0873 + 0.0248 * b + 0.01 * p;
    const double c = n * p + 0.5;
    const double vr = 0.92 - 4.2 / b;
    const double alpha = (2.83 + 5.1 / b) * spq;
    const double lpq = std::log(p / q);
    const double mode = std::floor((n + 1.0) * p);
    const double h = special::log_gamma(mode + 1.0) + special::log_gamma(n - mode + 1.0);
    for (;;) {
      const double u = uniform() - 0.5;
      double v = uniform();
      const double us = 0.5 - std::fabs(u);
      const double kd = std::floor((2.0 * a / us + b) * u + c);
      if (kd < 0.0 || kd > n) continue;
      if (us >= 0.07 && v <= vr) {
        k = static_cast<std::int64_t>(kd);
        break;
      }
      v = std::log(v * alpha / (a / (us * us) + b));
      if (v <= h - special::log_gamma(kd + 1.0) - special::log_gamma(n - kd + 1.0) + (kd - mode) * lpq) {
        k = static_cast<std::int64_t>(kd);
        break;
      }
    }
  }
  return flip ? trials - k : k;
}

}  // namespace sveb
