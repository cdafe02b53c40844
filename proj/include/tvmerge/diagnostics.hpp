#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tvmerge/mat.hpp"

namespace tvmerge::diag {

// Monte-Carlo estimate of the conflict probability between two random unit
// directions in dimension k. Reports both the signed-threshold probability
// P(u.v > eps) and E|u.v|; the 2.5/sqrt(k) bound is checked against both
// since the concentration argument concerns the absolute dot product.
struct ConflictEstimate {
    std::int64_t k = 1;
    double epsilon_conflict = 0.3;
    std::int64_t trials = 0;
    double p_hat = 0.0;          // fraction of trials with u.v > epsilon
    double expected_abs_dot = 0.0;
    double bound = 0.0;          // 2.5 / sqrt(k)
    double se_p = 0.0;           // standard error of p_hat
    double se_abs = 0.0;         // standard error of expected_abs_dot

    bool p_within_bound() const { return p_hat <= bound + 3.0 * se_p; }
    bool abs_within_bound() const { return expected_abs_dot <= bound + 3.0 * se_abs; }
};

double conflict_bound(std::int64_t k);

// Trial randomness is derived from (seed, trial index): estimates do not
// depend on thread count or scheduling.
ConflictEstimate conflict_mc(std::int64_t k, double epsilon_conflict, std::int64_t trials,
                             std::uint64_t seed, unsigned threads = 0);

// Effective rank (at the given energy fraction) of the mean task matrix per
// layer, plus per-model profiles.
struct RankProfile {
    std::map<std::string, std::int64_t> mean_delta_rank;
    std::map<std::string, std::vector<std::int64_t>> per_model_rank;
};

RankProfile rank_profile(const std::map<std::string, std::vector<Mat>>& deltas_by_layer, double energy);

// Per model and layer: how much mass the row-wise outlier threshold keeps.
struct OutlierLayerReport {
    std::vector<double> outlier_fraction;  // per model: entries strictly above tau
    std::vector<double> outlier_l1_mass;   // per model: L1 mass kept by the threshold
    std::vector<double> alpha;
    // spectrum view (enabled by mask_singular_outliers): singular values of
    // each delta exceeding mean + sigma_mult * std of its spectrum
    std::vector<std::vector<double>> singular_outliers;
};

std::map<std::string, OutlierLayerReport> outlier_profile(
    const std::map<std::string, std::vector<Mat>>& deltas_by_layer, double sigma_mult,
    bool mask_singular_outliers = false);

}  // namespace tvmerge::diag
