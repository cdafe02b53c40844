#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace tvmerge {

// Task vector after mask-and-rescale. The mask is kept explicitly: a
// surviving entry may legitimately hold 0. Unselected entries are exactly 0.
struct MaskedDelta {
    std::vector<double> values;
    std::vector<std::uint8_t> mask;
    double mask_density = 1.0;  // fraction of entries the mask retains
};

// Elementwise operators; tensors of any rank are treated as flat arrays.

std::vector<double> weight_average(std::span<const std::span<const double>> layers,
                                   std::span<const double> weights);

std::vector<double> task_arithmetic(std::span<const double> base,
                                    std::span<const std::span<const double>> deltas, double lambda);

// Keeps the ceil(density * N) largest-magnitude entries; ties at the cutoff
// keep the smaller flat index.
MaskedDelta topk_mask(std::span<const double> delta, double density);

// Per coordinate: elect the sign of the sum (exact zero drops the
// coordinate), then average the entries agreeing with the elected sign.
std::vector<double> ties_combine(std::span<const MaskedDelta> masked, double lambda);

// Each entry is zeroed independently with probability drop_p; survivors are
// rescaled by 1/(1-drop_p). Pass a seed derived via rng::derive_seed(seed,
// layer_name, model_index) for reproducible merges.
MaskedDelta dare_drop(std::span<const double> delta, double drop_p, std::uint64_t stream_seed);

// Zeroes the top_discard fraction of largest-magnitude entries and the
// bottom_discard fraction of smallest; the middle band passes unscaled.
MaskedDelta breadcrumbs_mask(std::span<const double> delta, double top_discard, double bottom_discard);

}  // namespace tvmerge
