#include "tvmerge/tsv_merge.hpp"

#include <atomic>
#include <cmath>
#include <json.hpp>

#include "tvmerge/kernels.hpp"
#include "tvmerge/linalg.hpp"
#include "tvmerge/log.hpp"
#include "tvmerge/merge_methods.hpp"
#include "tvmerge/parallel.hpp"
#include "tvmerge/rng.hpp"

namespace tvmerge {

namespace {

// Columns [i*r, (i+1)*r) of each factor matrix, concatenated across models.
Mat concat_columns(std::span<const linalg::SvdFactors> factors, bool left, std::int64_t r) {
    const std::size_t rows = left ? factors[0].u.rows() : factors[0].v.rows();
    const std::size_t rr = static_cast<std::size_t>(r);
    Mat out(rows, factors.size() * rr);
    for (std::size_t i = 0; i < factors.size(); ++i) {
        const Mat& src = left ? factors[i].u : factors[i].v;
        for (std::size_t row = 0; row < rows; ++row)
            for (std::size_t c = 0; c < rr; ++c) out(row, i * rr + c) = src(row, c);
    }
    return out;
}

Mat block_columns(const Mat& concat, std::size_t block, std::int64_t r) {
    const std::size_t rr = static_cast<std::size_t>(r);
    Mat out(concat.rows(), rr);
    for (std::size_t row = 0; row < concat.rows(); ++row)
        for (std::size_t c = 0; c < rr; ++c) out(row, c) = concat(row, block * rr + c);
    return out;
}

struct JointBasis {
    Mat u_perp;  // rows x (n_active*r)
    Mat v_perp;  // cols x (n_active*r)
    std::int64_t rank;
    bool halved = false;
};

// Joint Procrustes of the concatenated per-model singular vectors. Stacks of
// near-duplicate models can be numerically rank-deficient; one retry with the
// rank halved keeps those merges alive.
JointBasis joint_orthogonalize(std::span<const linalg::SvdFactors> factors, std::int64_t r,
                               std::vector<std::string>& warnings) {
    auto attempt = [&](std::int64_t rank) -> JointBasis {
        return JointBasis{linalg::orthogonalize(concat_columns(factors, true, rank)),
                          linalg::orthogonalize(concat_columns(factors, false, rank)), rank, false};
    };
    try {
        return attempt(r);
    } catch (const MergeError& e) {
        if (e.kind() != ErrorKind::RankDeficient || r <= 1) throw;
        const std::int64_t halved = r / 2;
        log::warn("concatenated singular vectors rank-deficient; retrying with rank " + std::to_string(halved));
        warnings.push_back("rank halved to " + std::to_string(halved) + " after rank-deficient concatenation");
        JointBasis basis = attempt(halved);
        basis.halved = true;
        return basis;
    }
}

// Models whose task vector is exactly zero contribute nothing to the merged
// update, and their arbitrary null-space singular vectors would only poison
// the joint orthogonalization. They are dropped from the concatenation.
std::vector<std::size_t> active_models(std::span<const linalg::SvdFactors> factors) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < factors.size(); ++i)
        if (!factors[i].s.empty() && factors[i].s[0] > 0.0) active.push_back(i);
    return active;
}

void check_layer_inputs(const Mat& base_layer, std::span<const Mat> deltas) {
    if (deltas.empty()) throw MergeError(ErrorKind::InvalidArgument, "no task vectors given");
    for (const Mat& d : deltas)
        if (!d.same_shape(base_layer)) throw MergeError(ErrorKind::ShapeMismatch, "task vector shape differs from base");
}

// merged = base + scale * sum_i U_i diag(s_i) V_i^T
Mat accumulate_blocks(const Mat& base_layer, const JointBasis& basis,
                      std::span<const std::vector<double>> spectra, double scale) {
    Mat merged = base_layer;
    const std::size_t n = spectra.size();
    for (std::size_t i = 0; i < n; ++i) {
        linalg::SvdFactors block;
        block.u = block_columns(basis.u_perp, i, basis.rank);
        block.v = block_columns(basis.v_perp, i, basis.rank);
        block.s.assign(spectra[i].begin(), spectra[i].begin() + basis.rank);
        const Mat update = linalg::reconstruct(block);
        kern::ops().axpy(scale, update.data(), merged.data(), merged.size());
    }
    return merged;
}

}  // namespace

LayerMergeOutcome tsvm_layer(const Mat& base_layer, std::span<const Mat> deltas, std::int64_t k_fixed) {
    check_layer_inputs(base_layer, deltas);
    const std::int64_t n = static_cast<std::int64_t>(deltas.size());
    const std::int64_t d = static_cast<std::int64_t>(std::min(base_layer.rows(), base_layer.cols()));
    if (d < n)
        throw MergeError(ErrorKind::DegenerateLayer,
                         "min dimension " + std::to_string(d) + " cannot host " + std::to_string(n) +
                             " orthonormal blocks");
    if (k_fixed < 1) throw MergeError(ErrorKind::RankOutOfRange, "k_fixed must be >= 1");

    LayerMergeOutcome out;
    std::int64_t k = k_fixed;
    const std::int64_t feasible = d / n;
    if (k > feasible) {
        log::warn("k_fixed " + std::to_string(k) + " infeasible for " + std::to_string(n) +
                  " models; clamping to " + std::to_string(feasible));
        out.warnings.push_back("k_fixed clamped to " + std::to_string(feasible));
        out.clamped = true;
        k = feasible;
    }

    std::vector<linalg::SvdFactors> truncated;
    truncated.reserve(deltas.size());
    for (const Mat& delta : deltas) truncated.push_back(linalg::truncate(linalg::svd(delta), k));

    const auto active = active_models(truncated);
    out.retained_rank = k;
    if (active.empty()) {  // every task vector is zero
        out.merged = base_layer;
        return out;
    }

    std::vector<linalg::SvdFactors> act;
    std::vector<std::vector<double>> spectra;
    for (std::size_t i : active) {
        act.push_back(truncated[i]);
        spectra.push_back(truncated[i].s);
    }

    const JointBasis basis = joint_orthogonalize(act, k, out.warnings);
    if (basis.halved) out.clamped = true;

    out.merged = accumulate_blocks(base_layer, basis, spectra, 1.0);
    out.retained_rank = basis.rank;
    return out;
}

LayerMergeOutcome resm_layer(const Mat& base_layer, std::span<const Mat> deltas, const ResmParams& params) {
    check_layer_inputs(base_layer, deltas);
    params.validate();
    const std::int64_t n = static_cast<std::int64_t>(deltas.size());
    const std::int64_t d = static_cast<std::int64_t>(std::min(base_layer.rows(), base_layer.cols()));
    if (d < n)
        throw MergeError(ErrorKind::DegenerateLayer,
                         "min dimension " + std::to_string(d) + " cannot host " + std::to_string(n) +
                             " orthonormal blocks");

    LayerMergeOutcome out;
    LayerStats stats;

    // Statistics come from the full, untruncated deltas.
    stats.alpha = outlier_weights(deltas, params.sigma_mult, params.invert_alpha);
    stats.omega = layer_sparsity(deltas, params.epsilon);
    stats.rank_k = dynamic_rank(d, stats.omega, params.gamma0, params.gamma);

    std::int64_t requested = stats.rank_k;
    if (params.rank_override) {
        requested = std::min(*params.rank_override, d);
        if (requested != *params.rank_override)
            out.warnings.push_back("rank_override clamped to " + std::to_string(requested));
    }
    const std::int64_t feasible = d / n;
    std::int64_t r = std::min(requested, feasible);
    if (r < 1) r = 1;
    if (r < requested) {
        log::warn("retained rank clamped from " + std::to_string(requested) + " to " + std::to_string(r) +
                  " so " + std::to_string(n) + " blocks stay jointly orthonormal");
        out.warnings.push_back("retained rank clamped to " + std::to_string(r));
        out.clamped = true;
    }

    std::vector<linalg::SvdFactors> factors;
    factors.reserve(deltas.size());
    for (const Mat& delta : deltas) factors.push_back(linalg::truncate(linalg::svd(delta), r));

    const auto active = active_models(factors);
    if (active.empty()) {  // every task vector is zero
        out.merged = base_layer;
        stats.retained_rank = r;
        out.retained_rank = r;
        out.stats = std::move(stats);
        return out;
    }

    // Reweight the spectra by alpha, then slice to the retained rank.
    std::vector<linalg::SvdFactors> act;
    std::vector<std::vector<double>> spectra;
    for (std::size_t i : active) {
        act.push_back(factors[i]);
        std::vector<double> s = factors[i].s;
        for (double& v : s) v *= stats.alpha[i];
        spectra.push_back(std::move(s));
    }

    const JointBasis basis = joint_orthogonalize(act, r, out.warnings);
    if (basis.halved) out.clamped = true;

    out.merged = accumulate_blocks(base_layer, basis, spectra, params.scale);
    stats.retained_rank = basis.rank;
    out.retained_rank = basis.rank;
    out.stats = std::move(stats);
    return out;
}

// ---------------------------------------------------------------------------
// Whole-checkpoint orchestration
// ---------------------------------------------------------------------------

namespace {

struct InputGauge {
    std::atomic<std::size_t> current{0};
    std::atomic<std::size_t> peak{0};

    void add(std::size_t bytes) {
        const std::size_t now = current.fetch_add(bytes) + bytes;
        std::size_t seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
    }
    void remove(std::size_t bytes) { current.fetch_sub(bytes); }
};

std::vector<double> alpha_for_vectors(std::span<const Mat> deltas, const ResmParams& params) {
    return outlier_weights(deltas, params.sigma_mult, params.invert_alpha);
}

// Weighted task arithmetic used for rank-0/1 tensors and degenerate layers.
Mat weighted_ta(const Mat& base, std::span<const Mat> deltas, std::span<const double> weights, double scale) {
    Mat out = base;
    for (std::size_t i = 0; i < deltas.size(); ++i)
        kern::ops().axpy(scale * weights[i], deltas[i].data(), out.data(), out.size());
    return out;
}

struct LayerResult {
    TensorRecord record;
    LayerReport report;
};

LayerResult merge_one_tensor(const ManifestEntry& entry, const TensorSource& base,
                             std::span<const TensorSource* const> models, const MergePlan& plan,
                             InputGauge& gauge) {
    const std::size_t n = models.size();

    LayerReport report;
    report.layer = entry.name;
    report.method = to_string(plan.method);

    // high-rank tensors: copy from base or fail
    if (entry.shape.size() > 2) {
        if (!plan.passthrough_high_rank)
            throw MergeError(ErrorKind::ShapeMismatch,
                             "rank-" + std::to_string(entry.shape.size()) +
                                 " tensor cannot be merged; set passthrough_high_rank to copy it from the base");
        TensorRecord rec = base.load(entry.name);
        report.method = "base_passthrough";
        report.warnings.push_back("rank > 2 tensor copied from base");
        report.rows = entry.shape[0];
        report.cols = static_cast<std::int64_t>(rec.element_count() / static_cast<std::size_t>(entry.shape[0]));
        return {std::move(rec), std::move(report)};
    }

    TensorRecord base_rec = base.load(entry.name);
    const Mat base_mat = base_rec.to_mat();
    gauge.add(base_rec.bytes.size());

    std::vector<Mat> model_mats;
    model_mats.reserve(n);
    std::size_t model_bytes = 0;
    for (const TensorSource* src : models) {
        TensorRecord rec = src->load(entry.name);  // materialized one at a time
        model_bytes += rec.bytes.size();
        gauge.add(rec.bytes.size());
        model_mats.push_back(rec.to_mat());
    }

    report.rows = static_cast<std::int64_t>(base_mat.rows());
    report.cols = static_cast<std::int64_t>(base_mat.cols());

    const bool svd_method = plan.method == MergeMethod::Tsvm || plan.method == MergeMethod::Resm;

    Mat merged;
    if (!svd_method) {
        // elementwise operators treat every rank as a flat array
        const std::size_t count = base_mat.size();
        std::vector<Mat> deltas;
        if (plan.method != MergeMethod::WeightAverage) {
            deltas.reserve(n);
            for (const Mat& m : model_mats) deltas.push_back(delta(m, base_mat));
        }
        auto delta_span = [&](std::size_t i) {
            return std::span<const double>(deltas[i].values().data(), count);
        };

        switch (plan.method) {
            case MergeMethod::WeightAverage: {
                std::vector<double> weights =
                    plan.weights ? *plan.weights : std::vector<double>(n, 1.0 / static_cast<double>(n));
                std::vector<std::span<const double>> layers;
                for (const Mat& m : model_mats) layers.emplace_back(m.values().data(), count);
                merged = Mat(base_mat.rows(), base_mat.cols(), weight_average(layers, weights));
                break;
            }
            case MergeMethod::TaskArithmetic: {
                std::vector<std::span<const double>> spans;
                for (std::size_t i = 0; i < n; ++i) spans.push_back(delta_span(i));
                merged = Mat(base_mat.rows(), base_mat.cols(),
                             task_arithmetic({base_mat.values().data(), count}, spans, plan.lambda));
                break;
            }
            case MergeMethod::Ties:
            case MergeMethod::Dare:
            case MergeMethod::DareTies:
            case MergeMethod::Breadcrumbs:
            case MergeMethod::BreadcrumbsTies: {
                std::vector<MaskedDelta> masked;
                masked.reserve(n);
                for (std::size_t i = 0; i < n; ++i) {
                    switch (plan.method) {
                        case MergeMethod::Ties:
                            masked.push_back(topk_mask(delta_span(i), plan.density));
                            break;
                        case MergeMethod::Dare:
                        case MergeMethod::DareTies:
                            masked.push_back(dare_drop(delta_span(i), plan.drop_p,
                                                       rng::derive_seed(plan.seed, entry.name, i + 1)));
                            break;
                        default:
                            masked.push_back(breadcrumbs_mask(delta_span(i), plan.top_discard, plan.bottom_discard));
                            break;
                    }
                }
                std::vector<double> update(count, 0.0);
                const bool elect = plan.method == MergeMethod::Ties || plan.method == MergeMethod::DareTies ||
                                   plan.method == MergeMethod::BreadcrumbsTies;
                if (elect) {
                    update = ties_combine(masked, plan.lambda);
                } else {
                    for (const auto& m : masked)
                        kern::ops().axpy(plan.lambda, m.values.data(), update.data(), count);
                }
                merged = base_mat;
                kern::ops().axpy(1.0, update.data(), merged.data(), count);
                break;
            }
            default:
                throw MergeError(ErrorKind::InvalidArgument, "unhandled method");
        }
    } else {
        std::vector<Mat> deltas;
        deltas.reserve(n);
        for (const Mat& m : model_mats) deltas.push_back(delta(m, base_mat));

        const bool is_resm = plan.method == MergeMethod::Resm;
        const double vp_scale = is_resm ? plan.resm.scale : plan.lambda;
        const std::int64_t min_dim =
            static_cast<std::int64_t>(std::min(base_mat.rows(), base_mat.cols()));

        if (entry.shape.size() < 2) {
            // vector policy for rank-0/1 tensors
            switch (plan.effective_vector_policy()) {
                case VectorPolicy::BasePassthrough:
                    merged = base_mat;
                    report.method = std::string(to_string(plan.method)) + "+base_passthrough";
                    break;
                case VectorPolicy::UniformTa: {
                    std::vector<double> w(n, 1.0 / static_cast<double>(n));
                    merged = weighted_ta(base_mat, deltas, w, vp_scale);
                    report.method = std::string(to_string(plan.method)) + "+uniform_ta";
                    break;
                }
                case VectorPolicy::AlphaTa: {
                    const std::vector<double> alpha = alpha_for_vectors(deltas, plan.resm);
                    merged = weighted_ta(base_mat, deltas, alpha, vp_scale);
                    report.alpha = alpha;
                    report.method = std::string(to_string(plan.method)) + "+alpha_ta";
                    break;
                }
            }
        } else if (min_dim < static_cast<std::int64_t>(n)) {
            // no feasible joint orthonormal split; fall back to weighted task arithmetic
            std::vector<double> w;
            if (is_resm) {
                w = alpha_for_vectors(deltas, plan.resm);
                report.alpha = w;
            } else {
                w.assign(n, 1.0 / static_cast<double>(n));
            }
            merged = weighted_ta(base_mat, deltas, w, vp_scale);
            report.method = std::string(to_string(plan.method)) + "+degenerate_ta";
            report.warnings.push_back("layer min dimension below model count; used weighted task arithmetic");
            log::warn(entry.name + ": " + report.warnings.back());
        } else {
            LayerMergeOutcome outcome;
            if (is_resm) {
                outcome = resm_layer(base_mat, deltas, plan.resm);
                report.omega = outcome.stats->omega;
                report.k_l = outcome.stats->rank_k;
                report.alpha = outcome.stats->alpha;
            } else {
                const std::int64_t k = plan.k_fixed ? *plan.k_fixed : min_dim / static_cast<std::int64_t>(n);
                outcome = tsvm_layer(base_mat, deltas, k);
            }
            report.retained_rank = outcome.retained_rank;
            report.clamped = outcome.clamped;
            for (auto& w : outcome.warnings) report.warnings.push_back(std::move(w));
            merged = std::move(outcome.merged);
        }
    }

    gauge.remove(base_rec.bytes.size() + model_bytes);

    TensorRecord rec =
        TensorRecord::from_f64(entry.name, base_rec.dtype, base_rec.shape, merged.values());
    return {std::move(rec), std::move(report)};
}

}  // namespace

MergeOutput merge_model(const TensorSource& base, std::span<const TensorSource* const> models,
                        const MergePlan& plan) {
    if (models.empty()) throw MergeError(ErrorKind::InvalidArgument, "at least one model is required");

    std::vector<const TensorSource*> all;
    all.push_back(&base);
    for (const TensorSource* m : models) all.push_back(m);
    const LayerManifest manifest = validate_compat(all);

    InputGauge gauge;
    std::vector<LayerResult> results(manifest.entries.size());
    const unsigned threads = plan.threads ? *plan.threads : default_threads();

    parallel_for(manifest.entries.size(), threads, [&](std::size_t i) {
        const ManifestEntry& entry = manifest.entries[i];
        try {
            results[i] = merge_one_tensor(entry, base, models, plan, gauge);
        } catch (const MergeError& e) {
            MergeError::rethrow_with_context(e, entry.name);
        }
    });

    MergeOutput out;
    out.checkpoint.metadata = base.metadata();
    for (auto& r : results) {
        out.report.layers.push_back(std::move(r.report));
        out.checkpoint.records[r.record.name] = std::move(r.record);
    }
    out.peak_input_bytes = gauge.peak.load();
    return out;
}

std::string MergeReport::to_json() const {
    nlohmann::ordered_json doc;
    doc["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : layers) {
        nlohmann::ordered_json e;
        e["layer"] = l.layer;
        e["method"] = l.method;
        e["rows"] = l.rows;
        e["cols"] = l.cols;
        e["omega"] = l.omega ? nlohmann::ordered_json(*l.omega) : nlohmann::ordered_json(nullptr);
        e["k_l"] = l.k_l ? nlohmann::ordered_json(*l.k_l) : nlohmann::ordered_json(nullptr);
        e["retained_rank"] =
            l.retained_rank ? nlohmann::ordered_json(*l.retained_rank) : nlohmann::ordered_json(nullptr);
        e["alpha"] = l.alpha ? nlohmann::ordered_json(*l.alpha) : nlohmann::ordered_json(nullptr);
        e["clamped"] = l.clamped;
        e["warnings"] = l.warnings;
        doc["layers"].push_back(std::move(e));
    }
    return doc.dump(2);
}

}  // namespace tvmerge
