#include "camogen/simd/simd.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace camogen::simd {

const Kernels& scalar_kernels();
#ifdef CAMOGEN_BUILD_AVX2
const Kernels& avx2_kernels();
#endif
#ifdef CAMOGEN_BUILD_NEON
const Kernels& neon_kernels();
#endif

const char* isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar: return "scalar";
        case Isa::avx2: return "avx2";
        case Isa::neon: return "neon";
    }
    return "?";
}

bool isa_available(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
#if defined(CAMOGEN_BUILD_AVX2) && (defined(__x86_64__) || defined(_M_X64))
            return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
            return false;
#endif
        case Isa::neon:
#ifdef CAMOGEN_BUILD_NEON
            return true;  // mandatory on aarch64
#else
            return false;
#endif
    }
    return false;
}

const Kernels& kernels_for(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return scalar_kernels();
        case Isa::avx2:
#ifdef CAMOGEN_BUILD_AVX2
            return avx2_kernels();
#else
            break;
#endif
        case Isa::neon:
#ifdef CAMOGEN_BUILD_NEON
            return neon_kernels();
#else
            break;
#endif
    }
    throw std::runtime_error("requested SIMD ISA not built on this platform");
}

namespace {

Isa pick_isa() {
    if (const char* env = std::getenv("CAMOGEN_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
        if (std::strcmp(env, "avx2") == 0 && isa_available(Isa::avx2)) return Isa::avx2;
        if (std::strcmp(env, "neon") == 0 && isa_available(Isa::neon)) return Isa::neon;
        // unknown or unavailable request falls through to auto-detect
    }
    if (isa_available(Isa::avx2)) return Isa::avx2;
    if (isa_available(Isa::neon)) return Isa::neon;
    return Isa::scalar;
}

Isa g_isa = pick_isa();

}  // namespace

const Kernels& active() { return kernels_for(g_isa); }
Isa active_isa() { return g_isa; }
void force_isa(Isa isa) {
    if (!isa_available(isa)) throw std::runtime_error("ISA not available on this host");
    g_isa = isa;
}

}  // namespace camogen::simd
