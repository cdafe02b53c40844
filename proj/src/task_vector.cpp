#include "tvmerge/task_vector.hpp"

#include <cmath>

#include "tvmerge/kernels.hpp"
#include "tvmerge/log.hpp"

namespace tvmerge {

void ResmParams::validate() const {
    if (gamma0 <= 0 || gamma <= 0) throw MergeError(ErrorKind::InvalidArgument, "gamma0 and gamma must be > 0");
    if (epsilon <= 0) throw MergeError(ErrorKind::InvalidArgument, "epsilon must be > 0");
    if (rank_override && *rank_override < 1)
        throw MergeError(ErrorKind::InvalidArgument, "rank_override must be >= 1");
    if (gamma0 + gamma > 1.0)
        log::warn("gamma0 + gamma > 1; dynamic rank will saturate at the layer dimension");
}

Mat delta(const Mat& model_layer, const Mat& base_layer) {
    if (!model_layer.same_shape(base_layer))
        throw MergeError(ErrorKind::ShapeMismatch, "delta operands differ in shape");
    Mat out(model_layer.rows(), model_layer.cols());
    kern::ops().sub(model_layer.data(), base_layer.data(), out.data(), out.size());
    return out;
}

RowStats row_stats(const Mat& d) {
    if (d.rows() == 0 || d.cols() == 0) throw MergeError(ErrorKind::EmptyMatrix, "row_stats on empty matrix");
    const auto& k = kern::ops();
    const double inv_cols = 1.0 / static_cast<double>(d.cols());
    RowStats stats;
    stats.mu.resize(d.rows());
    stats.sigma.resize(d.rows());
    for (std::size_t r = 0; r < d.rows(); ++r) {
        double sum_abs = 0.0, sum_sq = 0.0;
        k.abs_moments(d.row(r), d.cols(), &sum_abs, &sum_sq);
        const double mu = sum_abs * inv_cols;
        const double var = sum_sq * inv_cols - mu * mu;
        stats.mu[r] = mu;
        stats.sigma[r] = var > 0.0 ? std::sqrt(var) : 0.0;  // clamp round-off
    }
    return stats;
}

Mat threshold_mask(const Mat& d, const RowStats& stats, double sigma_mult) {
    if (stats.mu.size() != d.rows())
        throw MergeError(ErrorKind::ShapeMismatch, "row stats do not match matrix");
    const auto& k = kern::ops();
    Mat out(d.rows(), d.cols());
    for (std::size_t r = 0; r < d.rows(); ++r) {
        const double tau = stats.mu[r] + sigma_mult * stats.sigma[r];
        k.threshold_keep(d.row(r), out.row(r), d.cols(), tau);
    }
    return out;
}

// Per-model outlier L1 mass: sum over rows of ||Threshold(row, tau_r)||_1.
static double outlier_mass(const Mat& d, double sigma_mult) {
    const auto& k = kern::ops();
    const RowStats stats = row_stats(d);
    double mass = 0.0;
    for (std::size_t r = 0; r < d.rows(); ++r) {
        const double tau = stats.mu[r] + sigma_mult * stats.sigma[r];
        mass += k.masked_abs_sum(d.row(r), d.cols(), tau);
    }
    return mass;
}

std::vector<double> outlier_weights(std::span<const Mat> deltas, double sigma_mult, bool invert) {
    if (deltas.empty()) throw MergeError(ErrorKind::InvalidArgument, "outlier_weights needs >= 1 model");
    for (std::size_t i = 1; i < deltas.size(); ++i)
        if (!deltas[i].same_shape(deltas[0]))
            throw MergeError(ErrorKind::ShapeMismatch, "outlier_weights deltas differ in shape");

    const std::size_t n = deltas.size();
    std::vector<double> mass(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mass[i] = outlier_mass(deltas[i], sigma_mult);
        total += mass[i];
    }

    std::vector<double> alpha(n);
    if (total <= 0.0) {
        // 0/0 in the normalization: no model has outlier mass, weight uniformly
        for (auto& a : alpha) a = 1.0 / static_cast<double>(n);
        return alpha;
    }
    if (!invert) {
        for (std::size_t i = 0; i < n; ++i) alpha[i] = mass[i] / total;
        return alpha;
    }
    // inverted semantics: weight shrinks with outlier mass, still summing to 1
    if (n == 1) {
        alpha[0] = 1.0;
        return alpha;
    }
    const double denom = static_cast<double>(n - 1) * total;
    for (std::size_t i = 0; i < n; ++i) alpha[i] = (total - mass[i]) / denom;
    return alpha;
}

double layer_sparsity(std::span<const Mat> deltas, double epsilon) {
    if (deltas.empty()) throw MergeError(ErrorKind::InvalidArgument, "layer_sparsity needs >= 1 model");
    if (epsilon <= 0) throw MergeError(ErrorKind::InvalidArgument, "epsilon must be > 0");
    const auto& k = kern::ops();
    std::size_t below = 0, total = 0;
    for (const Mat& d : deltas) {
        below += k.count_below(d.data(), d.size(), epsilon);
        total += d.size();
    }
    if (total == 0) throw MergeError(ErrorKind::EmptyMatrix, "layer_sparsity on empty matrices");
    return static_cast<double>(below) / static_cast<double>(total);
}

std::int64_t dynamic_rank(std::int64_t d, double omega, double gamma0, double gamma) {
    if (d < 1) throw MergeError(ErrorKind::InvalidArgument, "dynamic_rank needs d >= 1");
    const double raw = static_cast<double>(d) * (gamma0 + gamma * omega);
    std::int64_t k = static_cast<std::int64_t>(std::floor(raw));
    if (k < 1) k = 1;
    if (k > d) k = d;
    return k;
}

}  // namespace tvmerge
