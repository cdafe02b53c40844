#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tvmerge/dtype.hpp"

namespace tvmerge {

// Synthetic checkpoint family: one base plus `models` fine-tuned variants
// with controlled per-layer structure. Each block contributes
//   blk.<b>.dense.weight [64 x 64], blk.<b>.attn.weight [64 x 256],
//   blk.<b>.proj.weight [256 x 64], blk.<b>.bias [64].
struct FixtureSpec {
    std::string out_dir;
    int models = 3;
    std::uint64_t seed = 0;
    int blocks = 1;
    std::int64_t delta_rank = 4;   // rank of the structured delta component
    double sparsity = 0.7;         // fraction of noise entries left at zero
    bool orthogonal_deltas = false;  // exactly orthogonal equal-mass rank components across models
    int outliers = 8;              // heavy-tailed spikes injected per 2-D layer
    double outlier_scale = 2.0;
    double noise_scale = 0.05;
    double delta_scale = 0.5;
    DType dtype = DType::F32;
};

// Writes base.st and model_<i>.st; returns all paths, base first.
// Deterministic: the same spec yields byte-identical files.
std::vector<std::string> gen_fixtures(const FixtureSpec& spec);

}  // namespace tvmerge
