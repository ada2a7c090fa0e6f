#include "camogen/core/rng.hpp"

#include <cmath>

namespace camogen {

uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {
inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(uint64_t seed) : seed_(seed) {
    uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
}

// xoshiro256**
uint64_t Rng::next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // Box-Muller, one value per pair of draws; u1 in (0,1] avoids log(0)
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

int Rng::uniform_int(int n) {
    // rejection-free modulo is biased; n is always small here so use
    // Lemire-style multiply-shift on the top bits
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >> 64);
}

Rng Rng::fork(uint64_t key) const {
    uint64_t mix = seed_;
    uint64_t a = splitmix64(mix);
    mix ^= key * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL;
    uint64_t b = splitmix64(mix);
    return Rng(a ^ rotl(b, 32) ^ key);
}

}  // namespace camogen
