#pragma once

#include <cstdint>

namespace camogen {

// Deterministic, platform-independent RNG. We deliberately avoid the std
// distributions: their output is implementation-defined, and corpus bytes
// must be reproducible from (seed, index) alone.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    double uniform();                      // [0,1)
    double uniform(double lo, double hi);  // [lo,hi)
    double normal();                       // standard Gaussian (Box-Muller)
    int uniform_int(int n);                // [0,n)

    // Independent child stream keyed by (this stream's seed, key). Used for
    // per-sample streams so parallel generation stays deterministic.
    Rng fork(uint64_t key) const;

private:
    uint64_t state_[4];
    uint64_t seed_;
};

uint64_t splitmix64(uint64_t& x);

}  // namespace camogen
