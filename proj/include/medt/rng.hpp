#pragma once

#include <cstdint>
#include <vector>

namespace medt {

// Counter-seeded xoshiro256** stream.  Everything is hand-rolled so that
// sampled values are bit-identical across platforms and standard libraries;
// std:: distributions are implementation-defined and would break the
// byte-compare guarantees on study outputs.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  // Derives an independent stream for (tag, index), e.g. one per replicate.
  Rng fork(uint64_t tag, uint64_t index = 0) const;

  uint64_t next_u64();
  double uniform01();                         // [0, 1)
  bool bernoulli(double p);
  int categorical(const double* probs, int k);  // CDF walk
  double normal();                              // inverse-CDF transform

 private:
  uint64_t s_[4];
};

uint64_t splitmix64(uint64_t x);

// Standard normal quantile (Wichura's PPND16), |error| < 1e-15 for
// p in (0, 1).
double normal_quantile(double p);

}  // namespace medt
