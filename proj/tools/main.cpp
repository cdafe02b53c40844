// Command-line front end: merge, inspect, simulate-conflict, gen-fixtures.

#include <CLI11.hpp>
#include <unistd.h>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tvmerge/diagnostics.hpp"
#include "tvmerge/errors.hpp"
#include "tvmerge/fixtures.hpp"
#include "tvmerge/linalg.hpp"
#include "tvmerge/merge_plan.hpp"
#include "tvmerge/task_vector.hpp"
#include "tvmerge/tensor_store.hpp"
#include "tvmerge/tsv_merge.hpp"

namespace {

using nlohmann::ordered_json;
using namespace tvmerge;

void write_text_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw MergeError(ErrorKind::IoFailure, "cannot open " + tmp);
    out << text;
    out.close();
    if (!out) {
        std::remove(tmp.c_str());
        throw MergeError(ErrorKind::IoFailure, "short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw MergeError(ErrorKind::IoFailure, "rename failed for " + path);
    }
}

int cmd_merge(const std::string& config_path, bool to_stdout) {
    const MergePlan plan = MergePlan::from_json_file(config_path);

    CheckpointFile base(plan.base_path);
    std::vector<CheckpointFile> model_files;
    model_files.reserve(plan.model_paths.size());
    for (const auto& p : plan.model_paths) model_files.emplace_back(p);
    std::vector<const TensorSource*> models;
    for (const auto& f : model_files) models.push_back(&f);

    MergeOutput out = merge_model(base, models, plan);

    write_checkpoint(plan.output_path, out.checkpoint);
    const std::string report_path = plan.output_path + ".report.json";
    try {
        write_text_atomic(report_path, out.report.to_json() + "\n");
    } catch (...) {
        std::remove(plan.output_path.c_str());
        throw;
    }
    if (to_stdout) std::fputs((out.report.to_json() + "\n").c_str(), stdout);
    return 0;
}

// Loads per-layer deltas for every tensor of rank <= 2 (rank 0/1 widen to a
// single-row matrix). Tensors are materialized one layer at a time.
std::map<std::string, std::vector<Mat>> collect_deltas(const CheckpointFile& base,
                                                       const std::vector<CheckpointFile>& models) {
    std::map<std::string, std::vector<Mat>> by_layer;
    for (const auto& info : base.manifest()) {
        if (info.rank() > 2) continue;
        const Mat base_mat = base.load(info.name).to_mat();
        std::vector<Mat> deltas;
        deltas.reserve(models.size());
        for (const auto& m : models) deltas.push_back(delta(m.load(info.name).to_mat(), base_mat));
        by_layer[info.name] = std::move(deltas);
    }
    return by_layer;
}

void emit_series(const std::string& path, const std::vector<std::pair<double, double>>& xy) {
    std::string text;
    for (const auto& [x, y] : xy) {
        char line[64];
        std::snprintf(line, sizeof line, "%.17g %.17g\n", x, y);
        text += line;
    }
    write_text_atomic(path, text);
}

int cmd_inspect(const std::vector<std::string>& paths, bool ranks, bool outliers, bool sparsity,
                double energy, double sigma, double epsilon, bool mask_singular,
                const std::string& out_path, const std::string& plot_prefix, const std::string& csv_path) {
    if (paths.size() < 2)
        throw MergeError(ErrorKind::InvalidArgument, "inspect needs a base and at least one model");
    if (!ranks && !outliers && !sparsity)
        throw MergeError(ErrorKind::InvalidArgument, "nothing to do: pass --ranks, --outliers or --sparsity");

    CheckpointFile base(paths[0]);
    std::vector<CheckpointFile> models;
    for (std::size_t i = 1; i < paths.size(); ++i) models.emplace_back(paths[i]);
    {
        std::vector<const TensorSource*> all{&base};
        for (const auto& m : models) all.push_back(&m);
        validate_compat(all);
    }

    const auto deltas = collect_deltas(base, models);
    ordered_json doc;
    std::string csv = "layer,metric,model,value\n";
    auto csv_row = [&](const std::string& layer, const char* metric, int model, double value) {
        char line[160];
        if (model > 0)
            std::snprintf(line, sizeof line, "%s,%s,%d,%.17g\n", layer.c_str(), metric, model, value);
        else
            std::snprintf(line, sizeof line, "%s,%s,,%.17g\n", layer.c_str(), metric, value);
        csv += line;
    };

    if (ranks) {
        const auto profile = diag::rank_profile(deltas, energy);
        ordered_json r, pm;
        for (const auto& [layer, rank] : profile.mean_delta_rank) r[layer] = rank;
        for (const auto& [layer, per_model] : profile.per_model_rank) pm[layer] = per_model;
        doc["energy"] = energy;
        doc["ranks"] = std::move(r);
        doc["ranks_per_model"] = std::move(pm);
        for (const auto& [layer, rank] : profile.mean_delta_rank) {
            csv_row(layer, "rank", 0, static_cast<double>(rank));
            const auto& per_model = profile.per_model_rank.at(layer);
            for (std::size_t m = 0; m < per_model.size(); ++m)
                csv_row(layer, "rank", static_cast<int>(m + 1), static_cast<double>(per_model[m]));
        }
        if (!plot_prefix.empty()) {
            std::vector<std::pair<double, double>> xy;
            double i = 0;
            for (const auto& [_, rank] : profile.mean_delta_rank)
                xy.emplace_back(i++, static_cast<double>(rank));
            emit_series(plot_prefix + ".ranks.dat", xy);
        }
    }
    if (outliers) {
        const auto profile = diag::outlier_profile(deltas, sigma, mask_singular);
        ordered_json o;
        for (const auto& [layer, rep] : profile) {
            ordered_json e;
            e["alpha"] = rep.alpha;
            e["outlier_fraction"] = rep.outlier_fraction;
            e["outlier_l1_mass"] = rep.outlier_l1_mass;
            if (mask_singular) e["singular_outliers"] = rep.singular_outliers;
            o[layer] = std::move(e);
        }
        doc["sigma"] = sigma;
        doc["outliers"] = std::move(o);
        for (const auto& [layer, rep] : profile)
            for (std::size_t m = 0; m < rep.alpha.size(); ++m) {
                csv_row(layer, "alpha", static_cast<int>(m + 1), rep.alpha[m]);
                csv_row(layer, "outlier_fraction", static_cast<int>(m + 1), rep.outlier_fraction[m]);
                csv_row(layer, "outlier_l1_mass", static_cast<int>(m + 1), rep.outlier_l1_mass[m]);
            }
        if (!plot_prefix.empty() && !profile.empty()) {
            const std::size_t n_models = models.size();
            for (std::size_t m = 0; m < n_models; ++m) {
                std::vector<std::pair<double, double>> xy;
                double i = 0;
                for (const auto& [_, rep] : profile) xy.emplace_back(i++, rep.alpha[m]);
                emit_series(plot_prefix + ".alpha_model_" + std::to_string(m + 1) + ".dat", xy);
            }
        }
    }
    if (sparsity) {
        ordered_json s;
        std::vector<std::pair<double, double>> xy;
        double i = 0;
        for (const auto& [layer, d] : deltas) {
            const double omega = layer_sparsity(d, epsilon);
            s[layer] = omega;
            csv_row(layer, "sparsity", 0, omega);
            xy.emplace_back(i++, omega);
        }
        doc["epsilon"] = epsilon;
        doc["sparsity"] = std::move(s);
        if (!plot_prefix.empty()) emit_series(plot_prefix + ".sparsity.dat", xy);
    }

    if (!csv_path.empty()) write_text_atomic(csv_path, csv);

    const std::string text = doc.dump(2) + "\n";
    if (out_path.empty())
        std::fputs(text.c_str(), stdout);
    else
        write_text_atomic(out_path, text);
    return 0;
}

int cmd_simulate_conflict(const std::vector<std::int64_t>& ks, std::optional<double> epsilon,
                          std::int64_t trials, std::uint64_t seed, unsigned threads) {
    if (ks.empty()) throw MergeError(ErrorKind::InvalidArgument, "--k list is empty");
    for (auto k : ks)
        if (k < 1) throw MergeError(ErrorKind::InvalidArgument, "k must be >= 1");

    for (auto k : ks) {
        const double eps = epsilon ? *epsilon : 1.0 / std::sqrt(static_cast<double>(k));
        const auto est = diag::conflict_mc(k, eps, trials, seed, threads);
        const bool pass = est.p_within_bound() && est.abs_within_bound();
        std::printf("k=%" PRId64 " epsilon=%.6f trials=%" PRId64
                    " p_hat=%.6f E_abs_dot=%.6f bound=%.6f %s\n",
                    est.k, est.epsilon_conflict, est.trials, est.p_hat, est.expected_abs_dot, est.bound,
                    pass ? "pass" : "FAIL");
    }
    return 0;
}

int cmd_gen_fixtures(const FixtureSpec& spec) {
    const auto paths = gen_fixtures(spec);
    for (const auto& p : paths) std::printf("%s\n", p.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"task-vector checkpoint merging toolkit"};
    app.require_subcommand(1);

    // merge
    std::string config_path;
    bool merge_stdout = false;
    auto* merge = app.add_subcommand("merge", "merge checkpoints according to a JSON plan");
    merge->add_option("config", config_path, "path to the merge plan JSON")->required();
    merge->add_flag("--stdout", merge_stdout, "also print the merge report to stdout");

    // inspect
    std::vector<std::string> inspect_paths;
    bool f_ranks = false, f_outliers = false, f_sparsity = false, f_mask_singular = false;
    double energy = 0.95, sigma = 3.0, inspect_epsilon = 0.1;
    std::string inspect_out, plot_prefix, csv_path;
    auto* inspect = app.add_subcommand("inspect", "task-vector diagnostics for base + models");
    inspect->add_option("paths", inspect_paths, "base checkpoint followed by model checkpoints")
        ->required()
        ->expected(-2);
    inspect->add_flag("--ranks", f_ranks, "effective-rank profile of the task vectors");
    inspect->add_flag("--outliers", f_outliers, "row-wise outlier masses and alpha weights");
    inspect->add_flag("--sparsity", f_sparsity, "sparsity consensus per layer");
    inspect->add_flag("--mask-singular-outliers", f_mask_singular,
                      "also report singular values above mean + sigma * std of each spectrum");
    inspect->add_option("--energy", energy, "energy fraction for effective rank (default 0.95)");
    inspect->add_option("--sigma", sigma, "threshold multiplier (default 3.0)");
    inspect->add_option("--epsilon", inspect_epsilon, "sparsity threshold (default 0.1)");
    inspect->add_option("-o,--output", inspect_out, "write the JSON report here instead of stdout");
    inspect->add_option("--plot-data", plot_prefix, "emit (x, y) series files with this prefix");
    inspect->add_option("--csv", csv_path, "also write a flat layer,metric,model,value table here");

    // simulate-conflict
    std::vector<std::int64_t> ks;
    double conflict_epsilon = -1.0;
    std::int64_t trials = 100000;
    std::uint64_t seed = 0;
    unsigned sim_threads = 0;
    auto* sim = app.add_subcommand("simulate-conflict",
                                   "Monte-Carlo check of the 2.5/sqrt(k) conflict bound");
    sim->add_option("--k", ks, "projected dimensions")->required()->delimiter(',');
    sim->add_option("--epsilon", conflict_epsilon,
                    "conflict threshold; omit to use 1/sqrt(k) per dimension");
    sim->add_option("--trials", trials, "trials per dimension (default 100000)");
    sim->add_option("--seed", seed, "rng seed (default 0)");
    sim->add_option("--threads", sim_threads, "worker threads (default: hardware)");

    // gen-fixtures
    FixtureSpec fixture;
    std::string fixture_dtype = "F32";
    auto* gen = app.add_subcommand("gen-fixtures", "write a deterministic synthetic checkpoint family");
    gen->add_option("--out", fixture.out_dir, "output directory (must exist)")->required();
    gen->add_option("--models", fixture.models, "number of fine-tuned models (default 3)");
    gen->add_option("--seed", fixture.seed, "rng seed (default 0)");
    gen->add_option("--blocks", fixture.blocks, "number of layer blocks (default 1)");
    gen->add_option("--rank", fixture.delta_rank, "rank of the structured delta (default 4)");
    gen->add_option("--sparsity", fixture.sparsity, "fraction of noise entries left at zero (default 0.7)");
    gen->add_flag("--orthogonal-deltas", fixture.orthogonal_deltas,
                  "exactly orthogonal equal-mass deltas across models");
    gen->add_option("--outliers", fixture.outliers, "heavy-tailed spikes per 2-D layer (default 8)");
    gen->add_option("--outlier-scale", fixture.outlier_scale, "spike magnitude (default 2.0)");
    gen->add_option("--noise-scale", fixture.noise_scale, "noise stddev (default 0.05)");
    gen->add_option("--delta-scale", fixture.delta_scale, "structured component scale (default 0.5)");
    gen->add_option("--dtype", fixture_dtype, "F32, F16 or BF16 (default F32)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "{\"error\":{\"kind\":\"ConfigError\",\"exit\":2,\"message\":\"%s\"}}\n",
                     e.what());
        return 2;
    }

    try {
        if (merge->parsed()) return cmd_merge(config_path, merge_stdout);
        if (inspect->parsed())
            return cmd_inspect(inspect_paths, f_ranks, f_outliers, f_sparsity, energy, sigma,
                               inspect_epsilon, f_mask_singular, inspect_out, plot_prefix, csv_path);
        if (sim->parsed()) {
            std::optional<double> eps;
            if (conflict_epsilon >= 0.0) eps = conflict_epsilon;
            return cmd_simulate_conflict(ks, eps, trials, seed, sim_threads);
        }
        if (gen->parsed()) {
            fixture.dtype = dtype_from_name(fixture_dtype);
            return cmd_gen_fixtures(fixture);
        }
    } catch (const MergeError& e) {
        const int code = exit_class(e.kind());
        nlohmann::json err{{"error", {{"kind", to_string(e.kind())}, {"exit", code}, {"message", e.what()}}}};
        std::fprintf(stderr, "%s\n", err.dump().c_str());
        return code;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "{\"error\":{\"kind\":\"Internal\",\"exit\":1,\"message\":\"%s\"}}\n", e.what());
        return 1;
    }
    return 0;
}
