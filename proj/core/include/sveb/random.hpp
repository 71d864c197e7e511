#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace sveb {

/// Counter-based random stream (Philox-4x32-10).
///
/// A stream is identified by a 64-bit key derived from a seed and an
/// optional path of stream ids, e.g. RandomStream(seed, {replicate, area}).
/// Two streams with different paths are statistically independent, and the
/// output of a stream depends only on its key and how many values have been
/// drawn from it. This is what makes bootstrap and simulation results
/// identical for any worker count.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {});

  /// Independent child stream; does not advance this stream.
  [[nodiscard]] RandomStream substream(std::uint64_t id) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal (Marsaglia polar method).
  double normal();
  /// Gamma(shape, rate = 1), Marsaglia-Tsang; shape < 1 via the u^(1/shape) boost.
  double gamma(double shape);
  /// log of a Gamma(shape, 1) variate; stays finite for tiny shapes.
  double log_gamma_variate(double shape);
  /// Beta(a, b) as a ratio of gammas.
  double beta(double a, double b);
  /// Poisson(mean): inversion below mean 10, PTRS transformed rejection above.
  std::int64_t poisson(double mean);
  /// Binomial(trials, prob): inversion when trials * min(p, 1-p) < 10, BTRS otherwise.
  std::int64_t binomial(std::int64_t trials, double prob);

  [[nodiscard]] std::uint64_t key() const { return key_; }

 private:
  void refill();

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace sveb
