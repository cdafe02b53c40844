#include "tvmerge/cpu_features.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <cpuid.h>
#endif

namespace tvmerge {

#if defined(__x86_64__) || defined(__i386__)

// ymm state must be OS-enabled before any AVX/F16C instruction is legal
static bool ymm_state_enabled() {
    unsigned eax, edx;
    __asm__("xgetbv" : "=a"(eax), "=d"(edx) : "c"(0u));
    return (eax & 0x6u) == 0x6u;
}

static CpuFeatures detect() {
    CpuFeatures f;
    unsigned eax = 0, ebx = 0, ecx = 0, edx = 0;
    if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return f;
    const bool osxsave = ecx & (1u << 27);
    const bool avx = ecx & (1u << 28);
    const bool f16c = ecx & (1u << 29);
    if (!osxsave || !avx || !ymm_state_enabled()) return f;

    unsigned eax7 = 0, ebx7 = 0, ecx7 = 0, edx7 = 0;
    if (__get_cpuid_count(7, 0, &eax7, &ebx7, &ecx7, &edx7)) f.avx2 = ebx7 & (1u << 5);
    f.f16c = f16c;
    return f;
}

#elif defined(__aarch64__)

static CpuFeatures detect() {
    CpuFeatures f;
    f.neon = true;  // baseline on AArch64
    return f;
}

#else

static CpuFeatures detect() { return CpuFeatures{}; }

#endif

const CpuFeatures& CpuFeatures::get() {
    static const CpuFeatures features = detect();
    return features;
}

}  // namespace tvmerge
