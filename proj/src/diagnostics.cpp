#include "tvmerge/diagnostics.hpp"

#include <cmath>
#include <random>

#include "tvmerge/kernels.hpp"
#include "tvmerge/linalg.hpp"
#include "tvmerge/parallel.hpp"
#include "tvmerge/rng.hpp"
#include "tvmerge/task_vector.hpp"

namespace tvmerge::diag {

double conflict_bound(std::int64_t k) {
    if (k < 1) throw MergeError(ErrorKind::InvalidArgument, "k must be >= 1");
    return 2.5 / std::sqrt(static_cast<double>(k));
}

namespace {

struct ChunkAccum {
    std::int64_t conflicts = 0;
    double sum_abs = 0.0;
    double sum_abs_sq = 0.0;
};

void run_chunk(std::int64_t k, double epsilon, std::uint64_t seed, std::int64_t first, std::int64_t last,
               ChunkAccum& acc, std::vector<double>& u, std::vector<double>& v) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::int64_t t = first; t < last; ++t) {
        std::mt19937_64 eng(rng::mix(seed, static_cast<std::uint64_t>(t)));
        for (auto& x : u) x = normal(eng);
        for (auto& x : v) x = normal(eng);
        const std::size_t n = static_cast<std::size_t>(k);
        const double nu = std::sqrt(kern::ops().dot(u.data(), u.data(), n));
        const double nv = std::sqrt(kern::ops().dot(v.data(), v.data(), n));
        const double d = kern::ops().dot(u.data(), v.data(), n) / (nu * nv);
        if (d > epsilon) ++acc.conflicts;
        const double a = std::fabs(d);
        acc.sum_abs += a;
        acc.sum_abs_sq += a * a;
    }
}

}  // namespace

ConflictEstimate conflict_mc(std::int64_t k, double epsilon_conflict, std::int64_t trials,
                             std::uint64_t seed, unsigned threads) {
    if (k < 1) throw MergeError(ErrorKind::InvalidArgument, "k must be >= 1");
    if (trials < 1) throw MergeError(ErrorKind::InvalidArgument, "trials must be >= 1");

    // fixed-size chunks; combining per-chunk sums in chunk order keeps the
    // estimate independent of the worker count
    constexpr std::int64_t kChunk = 4096;
    const std::size_t n_chunks = static_cast<std::size_t>((trials + kChunk - 1) / kChunk);
    std::vector<ChunkAccum> chunks(n_chunks);

    parallel_for(n_chunks, threads, [&](std::size_t c) {
        std::vector<double> u(static_cast<std::size_t>(k)), v(static_cast<std::size_t>(k));
        const std::int64_t first = static_cast<std::int64_t>(c) * kChunk;
        const std::int64_t last = std::min<std::int64_t>(first + kChunk, trials);
        run_chunk(k, epsilon_conflict, seed, first, last, chunks[c], u, v);
    });

    std::int64_t conflicts = 0;
    double sum_abs = 0.0, sum_abs_sq = 0.0;
    for (const auto& c : chunks) {
        conflicts += c.conflicts;
        sum_abs += c.sum_abs;
        sum_abs_sq += c.sum_abs_sq;
    }

    ConflictEstimate est;
    est.k = k;
    est.epsilon_conflict = epsilon_conflict;
    est.trials = trials;
    est.bound = conflict_bound(k);
    const double nt = static_cast<double>(trials);
    est.p_hat = static_cast<double>(conflicts) / nt;
    est.expected_abs_dot = sum_abs / nt;
    est.se_p = std::sqrt(std::max(est.p_hat * (1.0 - est.p_hat), 0.0) / nt);
    const double var_abs = std::max(sum_abs_sq / nt - est.expected_abs_dot * est.expected_abs_dot, 0.0);
    est.se_abs = std::sqrt(var_abs / nt);
    return est;
}

RankProfile rank_profile(const std::map<std::string, std::vector<Mat>>& deltas_by_layer, double energy) {
    if (energy <= 0.0 || energy > 1.0) throw MergeError(ErrorKind::InvalidArgument, "energy must be in (0, 1]");

    RankProfile profile;
    for (const auto& [layer, deltas] : deltas_by_layer) {
        if (deltas.empty()) continue;
        Mat mean(deltas[0].rows(), deltas[0].cols());
        const double w = 1.0 / static_cast<double>(deltas.size());
        std::vector<std::int64_t> per_model;
        for (const Mat& d : deltas) {
            kern::ops().axpy(w, d.data(), mean.data(), mean.size());
            per_model.push_back(linalg::effective_rank(linalg::svd(d).s, energy));
        }
        profile.mean_delta_rank[layer] = linalg::effective_rank(linalg::svd(mean).s, energy);
        profile.per_model_rank[layer] = std::move(per_model);
    }
    return profile;
}

std::map<std::string, OutlierLayerReport> outlier_profile(
    const std::map<std::string, std::vector<Mat>>& deltas_by_layer, double sigma_mult,
    bool mask_singular_outliers) {
    std::map<std::string, OutlierLayerReport> out;
    const auto& k = kern::ops();

    for (const auto& [layer, deltas] : deltas_by_layer) {
        OutlierLayerReport rep;
        for (const Mat& d : deltas) {
            const RowStats stats = row_stats(d);
            double mass = 0.0;
            std::size_t above = 0;
            for (std::size_t r = 0; r < d.rows(); ++r) {
                const double tau = stats.mu[r] + sigma_mult * stats.sigma[r];
                mass += k.masked_abs_sum(d.row(r), d.cols(), tau);
                const double* row = d.row(r);
                // strictly above, so an all-zero row (tau = 0) reports none
                for (std::size_t c = 0; c < d.cols(); ++c)
                    if (std::fabs(row[c]) > tau) ++above;
            }
            rep.outlier_fraction.push_back(static_cast<double>(above) / static_cast<double>(d.size()));
            rep.outlier_l1_mass.push_back(mass);

            if (mask_singular_outliers) {
                const auto s = linalg::svd(d).s;
                double mu = 0.0, sq = 0.0;
                for (double v : s) {
                    mu += v;
                    sq += v * v;
                }
                mu /= static_cast<double>(s.size());
                const double var = std::max(sq / static_cast<double>(s.size()) - mu * mu, 0.0);
                const double tau = mu + sigma_mult * std::sqrt(var);
                std::vector<double> extremes;
                for (double v : s)
                    if (v > tau) extremes.push_back(v);
                rep.singular_outliers.push_back(std::move(extremes));
            }
        }
        rep.alpha = outlier_weights(deltas, sigma_mult);
        out[layer] = std::move(rep);
    }
    return out;
}

}  // namespace tvmerge::diag
