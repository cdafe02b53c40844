#include "tvmerge/merge_plan.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "tvmerge/errors.hpp"

namespace tvmerge {

using nlohmann::json;

const char* to_string(MergeMethod m) {
    switch (m) {
        case MergeMethod::WeightAverage: return "weight_average";
        case MergeMethod::TaskArithmetic: return "task_arithmetic";
        case MergeMethod::Ties: return "ties";
        case MergeMethod::Dare: return "dare";
        case MergeMethod::DareTies: return "dare_ties";
        case MergeMethod::Breadcrumbs: return "breadcrumbs";
        case MergeMethod::BreadcrumbsTies: return "breadcrumbs_ties";
        case MergeMethod::Tsvm: return "tsvm";
        case MergeMethod::Resm: return "resm";
    }
    return "?";
}

MergeMethod merge_method_from_string(const std::string& s) {
    for (MergeMethod m : {MergeMethod::WeightAverage, MergeMethod::TaskArithmetic, MergeMethod::Ties,
                          MergeMethod::Dare, MergeMethod::DareTies, MergeMethod::Breadcrumbs,
                          MergeMethod::BreadcrumbsTies, MergeMethod::Tsvm, MergeMethod::Resm})
        if (s == to_string(m)) return m;
    throw MergeError(ErrorKind::ConfigError, "unknown method \"" + s + "\"");
}

const char* to_string(VectorPolicy p) {
    switch (p) {
        case VectorPolicy::AlphaTa: return "alpha_ta";
        case VectorPolicy::UniformTa: return "uniform_ta";
        case VectorPolicy::BasePassthrough: return "base_passthrough";
    }
    return "?";
}

VectorPolicy vector_policy_from_string(const std::string& s) {
    for (VectorPolicy p : {VectorPolicy::AlphaTa, VectorPolicy::UniformTa, VectorPolicy::BasePassthrough})
        if (s == to_string(p)) return p;
    throw MergeError(ErrorKind::ConfigError, "unknown vector_policy \"" + s + "\"");
}

VectorPolicy MergePlan::effective_vector_policy() const {
    if (vector_policy) return *vector_policy;
    return method == MergeMethod::Resm ? VectorPolicy::AlphaTa : VectorPolicy::UniformTa;
}

void MergePlan::validate() const {
    if (base_path.empty()) throw MergeError(ErrorKind::ConfigError, "base path is required");
    if (model_paths.empty()) throw MergeError(ErrorKind::ConfigError, "at least one model path is required");
    if (output_path.empty()) throw MergeError(ErrorKind::ConfigError, "output path is required");

    if (weights) {
        if (weights->size() != model_paths.size())
            throw MergeError(ErrorKind::LengthMismatch, "weights count does not match model count");
        for (double w : *weights)
            if (!std::isfinite(w)) throw MergeError(ErrorKind::ConfigError, "weights must be finite");
    }
    if (!std::isfinite(lambda)) throw MergeError(ErrorKind::ConfigError, "lambda must be finite");
    if (density <= 0.0 || density > 1.0) throw MergeError(ErrorKind::ConfigError, "density must be in (0, 1]");
    if (drop_p < 0.0 || drop_p >= 1.0) throw MergeError(ErrorKind::ConfigError, "drop_p must be in [0, 1)");
    if (top_discard < 0.0 || bottom_discard < 0.0 || top_discard + bottom_discard >= 1.0)
        throw MergeError(ErrorKind::ConfigError, "discard fractions must be >= 0 and sum below 1");
    if (k_fixed && *k_fixed < 1) throw MergeError(ErrorKind::ConfigError, "k_fixed must be >= 1");
    if (threads && *threads < 1) throw MergeError(ErrorKind::ConfigError, "threads must be >= 1");
    resm.validate();
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, _] : obj.items())
        if (!known.count(key))
            throw MergeError(ErrorKind::ConfigError, "unknown key \"" + key + "\" in " + where);
}

double get_number(const json& obj, const char* key, double fallback) {
    if (!obj.contains(key)) return fallback;
    if (!obj[key].is_number()) throw MergeError(ErrorKind::ConfigError, std::string(key) + " must be a number");
    return obj[key].get<double>();
}

}  // namespace

MergePlan MergePlan::from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw MergeError(ErrorKind::ConfigError, std::string("plan is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw MergeError(ErrorKind::ConfigError, "plan must be a JSON object");

    reject_unknown_keys(doc,
                        {"base", "models", "method", "weights", "lambda", "density", "drop_p", "top_discard",
                         "bottom_discard", "k_fixed", "resm", "vector_policy", "passthrough_high_rank", "seed",
                         "output", "threads"},
                        "plan");

    MergePlan plan;
    if (doc.contains("base")) {
        if (!doc["base"].is_string()) throw MergeError(ErrorKind::ConfigError, "base must be a string path");
        plan.base_path = doc["base"].get<std::string>();
    }
    if (doc.contains("models")) {
        if (!doc["models"].is_array()) throw MergeError(ErrorKind::ConfigError, "models must be an array of paths");
        for (const auto& p : doc["models"]) {
            if (!p.is_string()) throw MergeError(ErrorKind::ConfigError, "models must be an array of paths");
            plan.model_paths.push_back(p.get<std::string>());
        }
    }
    if (doc.contains("method")) {
        if (!doc["method"].is_string()) throw MergeError(ErrorKind::ConfigError, "method must be a string");
        plan.method = merge_method_from_string(doc["method"].get<std::string>());
    }
    if (doc.contains("weights")) {
        if (!doc["weights"].is_array()) throw MergeError(ErrorKind::ConfigError, "weights must be an array");
        std::vector<double> w;
        for (const auto& v : doc["weights"]) {
            if (!v.is_number()) throw MergeError(ErrorKind::ConfigError, "weights must be numbers");
            w.push_back(v.get<double>());
        }
        plan.weights = std::move(w);
    }
    plan.lambda = get_number(doc, "lambda", plan.lambda);
    plan.density = get_number(doc, "density", plan.density);
    plan.drop_p = get_number(doc, "drop_p", plan.drop_p);
    plan.top_discard = get_number(doc, "top_discard", plan.top_discard);
    plan.bottom_discard = get_number(doc, "bottom_discard", plan.bottom_discard);
    if (doc.contains("k_fixed")) {
        if (!doc["k_fixed"].is_number_integer())
            throw MergeError(ErrorKind::ConfigError, "k_fixed must be an integer");
        plan.k_fixed = doc["k_fixed"].get<std::int64_t>();
    }
    if (doc.contains("resm")) {
        const json& r = doc["resm"];
        if (!r.is_object()) throw MergeError(ErrorKind::ConfigError, "resm must be an object");
        reject_unknown_keys(
            r, {"gamma0", "gamma", "epsilon", "sigma_mult", "scale", "rank_override", "invert_alpha"}, "resm");
        plan.resm.gamma0 = get_number(r, "gamma0", plan.resm.gamma0);
        plan.resm.gamma = get_number(r, "gamma", plan.resm.gamma);
        plan.resm.epsilon = get_number(r, "epsilon", plan.resm.epsilon);
        plan.resm.sigma_mult = get_number(r, "sigma_mult", plan.resm.sigma_mult);
        plan.resm.scale = get_number(r, "scale", plan.resm.scale);
        if (r.contains("rank_override") && !r["rank_override"].is_null()) {
            if (!r["rank_override"].is_number_integer())
                throw MergeError(ErrorKind::ConfigError, "rank_override must be an integer");
            plan.resm.rank_override = r["rank_override"].get<std::int64_t>();
        }
        if (r.contains("invert_alpha")) {
            if (!r["invert_alpha"].is_boolean())
                throw MergeError(ErrorKind::ConfigError, "invert_alpha must be a boolean");
            plan.resm.invert_alpha = r["invert_alpha"].get<bool>();
        }
    }
    if (doc.contains("vector_policy")) {
        if (!doc["vector_policy"].is_string())
            throw MergeError(ErrorKind::ConfigError, "vector_policy must be a string");
        plan.vector_policy = vector_policy_from_string(doc["vector_policy"].get<std::string>());
    }
    if (doc.contains("passthrough_high_rank")) {
        if (!doc["passthrough_high_rank"].is_boolean())
            throw MergeError(ErrorKind::ConfigError, "passthrough_high_rank must be a boolean");
        plan.passthrough_high_rank = doc["passthrough_high_rank"].get<bool>();
    }
    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_integer())
            throw MergeError(ErrorKind::ConfigError, "seed must be an integer");
        plan.seed = doc["seed"].get<std::uint64_t>();
    }
    if (doc.contains("output")) {
        if (!doc["output"].is_string()) throw MergeError(ErrorKind::ConfigError, "output must be a string path");
        plan.output_path = doc["output"].get<std::string>();
    }
    if (doc.contains("threads")) {
        if (!doc["threads"].is_number_integer())
            throw MergeError(ErrorKind::ConfigError, "threads must be an integer");
        plan.threads = doc["threads"].get<unsigned>();
    }

    plan.validate();
    return plan;
}

MergePlan MergePlan::from_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MergeError(ErrorKind::ConfigError, "cannot open plan file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json_text(buf.str());
}

}  // namespace tvmerge
