#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tvmerge/task_vector.hpp"

namespace tvmerge {

enum class MergeMethod {
    WeightAverage,
    TaskArithmetic,
    Ties,
    Dare,
    DareTies,
    Breadcrumbs,
    BreadcrumbsTies,
    Tsvm,
    Resm,
};

const char* to_string(MergeMethod m);
MergeMethod merge_method_from_string(const std::string& s);

// How rank-0/1 tensors are merged under the SVD-based methods.
enum class VectorPolicy { AlphaTa, UniformTa, BasePassthrough };

const char* to_string(VectorPolicy p);
VectorPolicy vector_policy_from_string(const std::string& s);

// Declarative merge configuration; one strict-schema JSON document.
struct MergePlan {
    std::string base_path;
    std::vector<std::string> model_paths;
    MergeMethod method = MergeMethod::WeightAverage;

    std::optional<std::vector<double>> weights;  // weight_average; default uniform
    double lambda = 1.0;                         // task-vector scaling
    double density = 0.2;                        // ties trim density (unverified default)
    double drop_p = 0.5;                         // dare drop rate (unverified default)
    double top_discard = 0.01;                   // breadcrumbs defaults keep an 0.85 band
    double bottom_discard = 0.14;
    std::optional<std::int64_t> k_fixed;         // tsvm; default = per-layer max feasible
    ResmParams resm;
    std::optional<VectorPolicy> vector_policy;   // default: resm -> alpha_ta, tsvm -> uniform_ta
    bool passthrough_high_rank = false;
    std::uint64_t seed = 0;
    std::string output_path;
    std::optional<unsigned> threads;

    VectorPolicy effective_vector_policy() const;

    // Throws ConfigError/InvalidArgument; touches no files.
    void validate() const;

    static MergePlan from_json_text(const std::string& text);
    static MergePlan from_json_file(const std::string& path);
};

}  // namespace tvmerge
