#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvmerge/mat.hpp"
#include "tvmerge/merge_plan.hpp"
#include "tvmerge/task_vector.hpp"
#include "tvmerge/tensor_store.hpp"

namespace tvmerge {

struct LayerMergeOutcome {
    Mat merged;                              // same shape as the base layer
    std::optional<LayerStats> stats;         // present for RESM
    std::int64_t retained_rank = 0;          // per-model rank actually used
    bool clamped = false;                    // retained rank was feasibility-clamped
    std::vector<std::string> warnings;
};

// TSVM: truncated per-model SVD, joint cross-model orthogonalization of the
// concatenated singular vectors, unweighted sum of the reconstructions.
LayerMergeOutcome tsvm_layer(const Mat& base_layer, std::span<const Mat> deltas, std::int64_t k_fixed);

// RESM: outlier-aware alpha on the full deltas, sparsity-adaptive rank,
// per-model full SVD, joint orthogonalization, alpha-reweighted sum.
LayerMergeOutcome resm_layer(const Mat& base_layer, std::span<const Mat> deltas, const ResmParams& params);

struct LayerReport {
    std::string layer;
    std::string method;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::optional<double> omega;
    std::optional<std::int64_t> k_l;
    std::optional<std::int64_t> retained_rank;
    std::optional<std::vector<double>> alpha;
    bool clamped = false;
    std::vector<std::string> warnings;
};

struct MergeReport {
    std::vector<LayerReport> layers;

    std::string to_json() const;
};

struct MergeOutput {
    Checkpoint checkpoint;
    MergeReport report;
    std::size_t peak_input_bytes = 0;  // high-water mark of concurrently resident input tensors
};

// Applies the plan tensor-by-tensor; layers are processed by a worker pool
// and the result is identical for any thread count. Any per-layer failure
// aborts the run with the offending tensor named in the error.
MergeOutput merge_model(const TensorSource& base, std::span<const TensorSource* const> models,
                        const MergePlan& plan);

}  // namespace tvmerge
