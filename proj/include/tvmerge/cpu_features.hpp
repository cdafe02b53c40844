#pragma once

namespace tvmerge {

struct CpuFeatures {
    bool avx2 = false;
    bool f16c = false;
    bool neon = false;

    static const CpuFeatures& get();
};

}  // namespace tvmerge
