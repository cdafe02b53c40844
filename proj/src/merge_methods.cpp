#include "tvmerge/merge_methods.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tvmerge/errors.hpp"
#include "tvmerge/kernels.hpp"
#include "tvmerge/log.hpp"
#include "tvmerge/rng.hpp"

namespace tvmerge {

std::vector<double> weight_average(std::span<const std::span<const double>> layers,
                                   std::span<const double> weights) {
    if (layers.empty()) throw MergeError(ErrorKind::InvalidArgument, "weight_average needs >= 1 layer");
    if (layers.size() != weights.size())
        throw MergeError(ErrorKind::LengthMismatch, "weights count does not match layer count");
    const std::size_t n = layers[0].size();
    for (const auto& l : layers)
        if (l.size() != n) throw MergeError(ErrorKind::ShapeMismatch, "weight_average inputs differ in shape");
    for (double w : weights)
        if (!std::isfinite(w)) throw MergeError(ErrorKind::InvalidArgument, "non-finite weight");

    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<double> norm(weights.begin(), weights.end());
    if (std::fabs(wsum - 1.0) > 1e-12) {
        if (wsum == 0.0) throw MergeError(ErrorKind::InvalidArgument, "weights sum to zero");
        log::warn("weights sum to " + std::to_string(wsum) + "; normalizing to 1");
        for (auto& w : norm) w /= wsum;
    }

    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < layers.size(); ++i)
        kern::ops().axpy(norm[i], layers[i].data(), out.data(), n);
    return out;
}

std::vector<double> task_arithmetic(std::span<const double> base,
                                    std::span<const std::span<const double>> deltas, double lambda) {
    for (const auto& d : deltas)
        if (d.size() != base.size())
            throw MergeError(ErrorKind::ShapeMismatch, "task_arithmetic inputs differ in shape");
    std::vector<double> out(base.begin(), base.end());
    for (const auto& d : deltas) kern::ops().axpy(lambda, d.data(), out.data(), base.size());
    return out;
}

MaskedDelta topk_mask(std::span<const double> delta, double density) {
    if (density <= 0.0 || density > 1.0)
        throw MergeError(ErrorKind::InvalidArgument, "density must be in (0, 1]");
    const std::size_t n = delta.size();
    MaskedDelta out;
    out.values.assign(n, 0.0);
    out.mask.assign(n, 0);
    if (n == 0) {
        out.mask_density = 1.0;
        return out;
    }
    const std::size_t keep = static_cast<std::size_t>(std::ceil(density * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // sort by (|v| desc, index asc); only the top `keep` matter
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          const double fa = std::fabs(delta[a]), fb = std::fabs(delta[b]);
                          if (fa != fb) return fa > fb;
                          return a < b;
                      });
    for (std::size_t i = 0; i < keep; ++i) {
        out.values[order[i]] = delta[order[i]];
        out.mask[order[i]] = 1;
    }
    out.mask_density = static_cast<double>(keep) / static_cast<double>(n);
    return out;
}

std::vector<double> ties_combine(std::span<const MaskedDelta> masked, double lambda) {
    if (masked.empty()) throw MergeError(ErrorKind::InvalidArgument, "ties_combine needs >= 1 model");
    const std::size_t n = masked[0].values.size();
    for (const auto& m : masked)
        if (m.values.size() != n) throw MergeError(ErrorKind::ShapeMismatch, "ties_combine inputs differ in shape");

    std::vector<double> out(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
        double sum = 0.0;
        for (const auto& m : masked) sum += m.values[c];
        if (sum == 0.0) continue;  // no elected sign
        const double sign = sum > 0.0 ? 1.0 : -1.0;
        double agree_sum = 0.0;
        std::size_t agree_count = 0;
        for (const auto& m : masked) {
            const double v = m.values[c];
            if (v * sign > 0.0) {
                agree_sum += v;
                ++agree_count;
            }
        }
        out[c] = lambda * agree_sum / static_cast<double>(agree_count);
    }
    return out;
}

MaskedDelta dare_drop(std::span<const double> delta, double drop_p, std::uint64_t stream_seed) {
    if (drop_p < 0.0 || drop_p >= 1.0)
        throw MergeError(ErrorKind::InvalidArgument, "drop_p must be in [0, 1)");
    const std::size_t n = delta.size();
    MaskedDelta out;
    out.values.assign(n, 0.0);
    out.mask.assign(n, 0);

    std::mt19937_64 eng(rng::splitmix64(stream_seed));
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double rescale = 1.0 / (1.0 - drop_p);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (uniform(eng) < drop_p) continue;
        out.values[i] = delta[i] * rescale;
        out.mask[i] = 1;
        ++kept;
    }
    out.mask_density = n == 0 ? 1.0 : static_cast<double>(kept) / static_cast<double>(n);
    return out;
}

MaskedDelta breadcrumbs_mask(std::span<const double> delta, double top_discard, double bottom_discard) {
    if (top_discard < 0.0 || bottom_discard < 0.0 || top_discard + bottom_discard >= 1.0)
        throw MergeError(ErrorKind::InvalidFractions, "discard fractions must be >= 0 and sum below 1");
    const std::size_t n = delta.size();
    MaskedDelta out;
    out.values.assign(delta.begin(), delta.end());
    out.mask.assign(n, 1);
    if (n == 0) {
        out.mask_density = 1.0;
        return out;
    }

    const std::size_t n_top = static_cast<std::size_t>(std::floor(top_discard * static_cast<double>(n)));
    const std::size_t n_bot = static_cast<std::size_t>(std::floor(bottom_discard * static_cast<double>(n)));

    // one global magnitude order keeps the two discard bands disjoint
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double fa = std::fabs(delta[a]), fb = std::fabs(delta[b]);
        if (fa != fb) return fa < fb;
        return a < b;
    });
    for (std::size_t i = 0; i < n_bot; ++i) {
        out.values[order[i]] = 0.0;
        out.mask[order[i]] = 0;
    }
    for (std::size_t i = 0; i < n_top; ++i) {
        out.values[order[n - 1 - i]] = 0.0;
        out.mask[order[n - 1 - i]] = 0;
    }
    out.mask_density = static_cast<double>(n - n_top - n_bot) / static_cast<double>(n);
    return out;
}

}  // namespace tvmerge
