#include <cstdlib>
#include <string>
#include <string_view>

#include "tvmerge/cpu_features.hpp"
#include "tvmerge/kernels.hpp"
#include "tvmerge/log.hpp"

namespace tvmerge::kern {

static const Ops& select() {
    const char* env = std::getenv("MERGE_SIMD");
    const std::string_view mode = env ? env : "auto";

    if (mode == "scalar") return scalar_ops();

#if defined(__x86_64__)
    const auto& caps = CpuFeatures::get();
    if (mode == "avx2" || mode == "auto") {
        if (caps.avx2 && caps.f16c) return avx2_ops();
        if (mode == "avx2") log::warn("MERGE_SIMD=avx2 requested but cpu lacks avx2/f16c; using scalar kernels");
    }
#elif defined(__aarch64__)
    if (mode == "neon" || mode == "auto") return neon_ops();
#endif

    if (mode != "auto" && mode != "scalar") log::warn("unknown MERGE_SIMD value; using scalar kernels");
    return scalar_ops();
}

const Ops& ops() {
    static const Ops& selected = [&]() -> const Ops& {
        const Ops& o = select();
        log::debug(std::string("kernel variant: ") + o.name);
        return o;
    }();
    return selected;
}

}  // namespace tvmerge::kern
