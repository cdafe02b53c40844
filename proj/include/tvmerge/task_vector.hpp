#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvmerge/mat.hpp"

namespace tvmerge {

// Row-wise mean and population standard deviation of |delta|.
struct RowStats {
    std::vector<double> mu;
    std::vector<double> sigma;
};

struct LayerStats {
    std::vector<double> alpha;     // per-model aggregation weights, sum 1
    double omega = 0.0;            // sparsity consensus in [0,1]
    std::int64_t rank_k = 1;       // sparsity-adaptive rank
    std::int64_t retained_rank = 1;  // after feasibility clamping
};

struct ResmParams {
    double gamma0 = 0.2;
    double gamma = 0.6;
    double epsilon = 0.1;
    double sigma_mult = 3.0;
    double scale = 1.0;  // scaling factor applied to the summed merged update
    std::optional<std::int64_t> rank_override;
    bool invert_alpha = false;  // reverse the weighting: heavy-outlier models get less weight

    void validate() const;  // warns when gamma0 + gamma > 1
};

Mat delta(const Mat& model_layer, const Mat& base_layer);

RowStats row_stats(const Mat& d);

// Hard-thresholding with per-row tau = mu + sigma_mult * sigma. Entries with
// |x| strictly below tau are zeroed; entries exactly at tau survive.
Mat threshold_mask(const Mat& d, const RowStats& stats, double sigma_mult);

// L1-normalized outlier masses across models. When no model has any mass the
// weights fall back to uniform 1/n.
std::vector<double> outlier_weights(std::span<const Mat> deltas, double sigma_mult, bool invert = false);

// Fraction of entries with |x| < epsilon over all models.
double layer_sparsity(std::span<const Mat> deltas, double epsilon);

// floor(d * (gamma0 + gamma * omega)) clamped to [1, d].
std::int64_t dynamic_rank(std::int64_t d, double omega, double gamma0, double gamma);

}  // namespace tvmerge
