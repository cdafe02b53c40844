// Acceptance suite: runs every merge-toolkit contract end to end and prints
// one pass/fail line per criterion. Exit status is the number of failures.

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "oracles.hpp"
#include "tvmerge/diagnostics.hpp"
#include "tvmerge/fixtures.hpp"
#include "tvmerge/linalg.hpp"
#include "tvmerge/merge_methods.hpp"
#include "tvmerge/merge_plan.hpp"
#include "tvmerge/rng.hpp"
#include "tvmerge/task_vector.hpp"
#include "tvmerge/tensor_store.hpp"
#include "tvmerge/tsv_merge.hpp"

namespace fs = std::filesystem;
using namespace tvmerge;
using nlohmann::json;

namespace {

int g_failures = 0;

void report(int num, const char* name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s%s%s\n", pass ? "PASS" : "FAIL", num, name,
                detail.empty() ? "" : " -- ", detail.c_str());
    if (!pass) ++g_failures;
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("tvm_accept_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

int run_cli(const std::string& args, const TempDir& dir) {
    const std::string cmd = std::string(TVMERGE_BIN) + " " + args + " >" + dir.file("cli.out") + " 2>" +
                            dir.file("cli.err");
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

double rel_frob_error(const std::vector<double>& got, const std::vector<double>& want) {
    double dist = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        dist += (got[i] - want[i]) * (got[i] - want[i]);
        norm += want[i] * want[i];
    }
    return std::sqrt(dist) / (norm > 0 ? std::sqrt(norm) : 1.0);
}

char buf[256];

// --- criterion 1: Monte-Carlo conflict bound ------------------------------

void criterion_1() {
    Timer timer;
    bool pass = true;
    std::string detail;
    for (std::int64_t k : {16, 64, 256, 1024}) {
        const double eps = 1.0 / std::sqrt(static_cast<double>(k));
        const auto est = diag::conflict_mc(k, eps, 100000, 7);
        const bool abs_ok = est.abs_within_bound();
        const bool p_ok = est.p_within_bound();
        pass = pass && abs_ok && p_ok;
        std::snprintf(buf, sizeof buf, "k=%" PRId64 " E|uv|=%.4f%s P=%.4f%s thr=%.4f; ", k,
                      est.expected_abs_dot, abs_ok ? "" : "(!)", est.p_hat, p_ok ? "" : "(!)",
                      est.bound + 3.0 * est.se_p);
        detail += buf;
    }
    const double secs = timer.seconds();
    std::snprintf(buf, sizeof buf, "%.1fs", secs);
    detail += buf;
    pass = pass && secs <= 10.0;
    // The signed-threshold probability P(u.v > 1/sqrt(k)) converges to
    // Phi(-1) ~ 0.159 for large k, while the 2.5/sqrt(k) target keeps
    // shrinking, so the k=1024 sub-check cannot hold; it is asserted as
    // stated and reported honestly.
    report(1, "conflict-probability bound at 1e5 trials (<= 10 s)", pass, detail);
}

// --- criterion 2: single-model exactness -----------------------------------

void criterion_2() {
    Timer timer;
    TempDir dir("c2");
    FixtureSpec spec;
    spec.out_dir = dir.path.string();
    spec.models = 1;
    spec.seed = 2;
    const auto paths = gen_fixtures(spec);
    CheckpointFile base(paths[0]);
    CheckpointFile model(paths[1]);
    std::vector<const TensorSource*> models{&model};

    double worst = 0.0;
    for (MergeMethod method : {MergeMethod::Resm, MergeMethod::Tsvm}) {
        MergePlan plan;
        plan.method = method;
        plan.resm.rank_override = 1000000;  // full rank per layer
        plan.resm.scale = 1.0;
        plan.k_fixed = 1000000;  // clamps to the per-layer maximum
        plan.lambda = 1.0;
        const MergeOutput out = merge_model(base, models, plan);
        for (const auto& [name, rec] : out.checkpoint.records)
            worst = std::max(worst, rel_frob_error(rec.to_f64(), model.load(name).to_f64()));
    }
    const double secs = timer.seconds();
    std::snprintf(buf, sizeof buf, "worst per-layer rel err %.2e; %.1fs", worst, secs);
    report(2, "single-model exactness at full rank (<= 1e-4, <= 5 s)", worst <= 1e-4 && secs <= 5.0, buf);
}

// --- criterion 3: orthogonal-delta additivity -------------------------------

void criterion_3() {
    TempDir dir("c3");
    FixtureSpec spec;
    spec.out_dir = dir.path.string();
    spec.models = 2;
    spec.seed = 3;
    spec.orthogonal_deltas = true;
    spec.delta_rank = 1;
    const auto paths = gen_fixtures(spec);
    CheckpointFile base(paths[0]);
    CheckpointFile m1(paths[1]), m2(paths[2]);
    std::vector<const TensorSource*> models{&m1, &m2};

    double worst = 0.0;
    for (MergeMethod method : {MergeMethod::Tsvm, MergeMethod::Resm}) {
        MergePlan plan;
        plan.method = method;
        plan.k_fixed = 1;
        plan.resm.rank_override = 1;
        // alpha is uniform by construction, so recovering delta1 + delta2
        // takes the scaling factor n = 2 (alpha-weighting averages the sum)
        plan.resm.scale = 2.0;
        plan.lambda = 2.0;
        const MergeOutput out = merge_model(base, models, plan);
        for (const auto& [name, rec] : out.checkpoint.records) {
            const auto b = base.load(name).to_f64();
            const auto d1 = m1.load(name).to_f64();
            const auto d2 = m2.load(name).to_f64();
            std::vector<double> want(b.size());
            for (std::size_t i = 0; i < b.size(); ++i) want[i] = d1[i] + d2[i] - b[i];  // base + D1 + D2
            worst = std::max(worst, rel_frob_error(rec.to_f64(), want));
        }
    }
    std::snprintf(buf, sizeof buf, "worst per-layer rel err %.2e", worst);
    report(3, "orthogonal rank-1 deltas add exactly (<= 1e-5)", worst <= 1e-5, buf);
}

// --- criterion 4: alpha contract --------------------------------------------

void criterion_4() {
    TempDir dir("c4");
    FixtureSpec spec;
    spec.out_dir = dir.path.string();
    spec.models = 3;
    spec.seed = 4;
    const auto paths = gen_fixtures(spec);
    CheckpointFile base(paths[0]);
    std::vector<CheckpointFile> models;
    for (int i = 1; i <= 3; ++i) models.emplace_back(paths[i]);

    bool pass = true;
    std::string detail;
    for (const auto& info : base.manifest()) {
        if (info.rank() != 2) continue;
        const Mat base_mat = base.load(info.name).to_mat();
        std::vector<Mat> deltas;
        for (const auto& m : models) deltas.push_back(delta(m.load(info.name).to_mat(), base_mat));

        const auto alpha = outlier_weights(deltas, 3.0);
        double sum = 0.0;
        for (double a : alpha) {
            sum += a;
            pass = pass && a >= 0.0 && a <= 1.0;
        }
        pass = pass && std::fabs(sum - 1.0) <= 1e-12;

        std::vector<Mat> scaled = deltas;
        for (auto& d : scaled)
            for (auto& v : d.values()) v *= 3.25;
        const auto alpha_scaled = outlier_weights(scaled, 3.0);
        for (std::size_t i = 0; i < alpha.size(); ++i)
            pass = pass && std::fabs(alpha[i] - alpha_scaled[i]) <= 1e-10;

        std::vector<Mat> zeroed = deltas;
        zeroed[0] = Mat(base_mat.rows(), base_mat.cols());
        const auto alpha_zeroed = outlier_weights(zeroed, 3.0);
        pass = pass && alpha_zeroed[0] == 0.0 && alpha_zeroed[1] > 0.0 && alpha_zeroed[2] > 0.0;
    }
    report(4, "alpha sums to 1, scale-invariant, zero-delta gets exactly 0", pass, detail);
}

// --- criterion 5: rank law ---------------------------------------------------

void criterion_5() {
    bool pass = dynamic_rank(4096, 0.0, 0.2, 0.6) == 819 && dynamic_rank(4096, 0.5, 0.2, 0.6) == 2048 &&
                dynamic_rank(4096, 1.0, 0.2, 0.6) == 3276;
    std::int64_t prev = 0;
    for (int i = 0; i <= 100; ++i) {
        const std::int64_t k = dynamic_rank(4096, i / 100.0, 0.2, 0.6);
        pass = pass && k >= prev;
        prev = k;
    }
    for (std::int64_t d : {1, 2, 5, 64, 777, 4096})
        for (int i = 0; i <= 20; ++i) {
            const std::int64_t k = dynamic_rank(d, i / 20.0, 0.2, 0.6);
            pass = pass && k >= 1 && k <= d;
        }
    report(5, "dynamic rank floor law: {819, 2048, 3276}, monotone, within [1, d]", pass,
           "d=4096, gamma0=0.2, gamma=0.6");
}

// --- criterion 6: dense vs sparse effective rank ----------------------------

void criterion_6() {
    int wins = 0;
    for (int seed = 0; seed < 100; ++seed) {
        std::mt19937_64 eng(1000 + seed);
        const Mat dense = oracle::random_mat(64, 64, eng);
        Mat sparse(64, 64);
        for (int spike = 0; spike < 3; ++spike) {
            const Mat r1 = oracle::matmul(oracle::random_mat(64, 1, eng), oracle::random_mat(1, 64, eng));
            for (std::size_t i = 0; i < sparse.size(); ++i) sparse.values()[i] += 10.0 * r1.values()[i];
        }
        const Mat noise = oracle::random_mat(64, 64, eng, 0.01);
        for (std::size_t i = 0; i < sparse.size(); ++i) sparse.values()[i] += noise.values()[i];

        const auto dense_rank = linalg::effective_rank(linalg::svd(dense).s, 0.95);
        const auto sparse_rank = linalg::effective_rank(linalg::svd(sparse).s, 0.95);
        if (dense_rank > sparse_rank) ++wins;
    }
    std::snprintf(buf, sizeof buf, "dense > sparse in %d/100 seeded runs", wins);
    report(6, "effective rank separates dense from spiked layers at 95% energy", wins == 100, buf);
}

// --- criterion 7: Procrustes optimality --------------------------------------

void criterion_7() {
    std::mt19937_64 eng(77);
    bool pass = true;
    double worst_defect = 0.0;
    for (int rep = 0; rep < 200 && pass; ++rep) {
        const Mat m = oracle::random_mat(6, 3, eng);
        const Mat mine = linalg::orthogonalize(m);
        worst_defect = std::max(
            worst_defect, oracle::max_abs_offdiag_identity(oracle::matmul(oracle::transpose(mine), mine)));
        const double my_dist = oracle::frob_dist(mine, m);
        for (int cand = 0; cand < 10000; ++cand) {
            const Mat q = oracle::random_orthonormal(6, 3, eng);
            if (oracle::frob_dist(q, m) < my_dist) {
                pass = false;
                break;
            }
        }
    }
    pass = pass && worst_defect <= 1e-6;
    std::snprintf(buf, sizeof buf, "200 matrices x 1e4 candidates, orthonormality defect %.2e", worst_defect);
    report(7, "Procrustes beats every random orthonormal candidate", pass, buf);
}

// --- criterion 8: baseline operator oracles ----------------------------------

void criterion_8() {
    bool pass = true;
    std::string detail;

    // TIES sign election against brute force over all 3^n patterns, n <= 3
    const double mags[3] = {3.0, 1.0, 2.0};
    for (int n = 1; n <= 3 && pass; ++n) {
        int patterns = 1;
        for (int i = 0; i < n; ++i) patterns *= 3;
        for (int p = 0; p < patterns; ++p) {
            std::vector<double> vals;
            int code = p;
            for (int i = 0; i < n; ++i) {
                vals.push_back((code % 3 - 1) * mags[i]);
                code /= 3;
            }
            std::vector<MaskedDelta> masked;
            for (double v : vals) {
                MaskedDelta m;
                m.values = {v};
                m.mask = {1};
                masked.push_back(std::move(m));
            }
            if (ties_combine(masked, 0.7)[0] != oracle::ties_coordinate(vals, 0.7)) pass = false;
        }
    }
    if (!pass) detail += "ties oracle mismatch; ";

    // DARE unbiasedness over 1e5 independently seeded trials
    double sum = 0.0, sumsq = 0.0;
    const int trials = 100000;
    for (int t = 0; t < trials; ++t) {
        const std::vector<double> scalar{2.0};
        const double v = dare_drop(scalar, 0.5, rng::derive_seed(8, "mc", t)).values[0];
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / trials;
    const double se = std::sqrt((sumsq / trials - mean * mean) / trials);
    const bool dare_ok = std::fabs(mean - 2.0) <= 3.0 * se;
    pass = pass && dare_ok;
    std::snprintf(buf, sizeof buf, "dare mean %.4f (3se %.4f); ", mean, 3 * se);
    detail += buf;

    // every operator satisfies theta0 + sum_i w_i m_i (.) delta_i exactly
    std::mt19937_64 eng(88);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t n = 64;
    std::vector<double> base_t(n);
    for (auto& v : base_t) v = normal(eng);
    std::vector<std::vector<double>> deltas(3, std::vector<double>(n));
    for (auto& d : deltas)
        for (auto& v : d) v = normal(eng);

    auto form_holds = [&](const std::vector<double>& merged, const std::vector<std::vector<double>>& w,
                          const std::vector<std::vector<std::uint8_t>>& m) {
        for (std::size_t c = 0; c < n; ++c) {
            double expect = base_t[c];
            for (std::size_t i = 0; i < deltas.size(); ++i)
                expect += w[i][c] * (m[i][c] ? 1.0 : 0.0) * deltas[i][c];
            if (std::fabs(merged[c] - expect) > 1e-12 * (1.0 + std::fabs(expect))) return false;
        }
        return true;
    };

    {
        // task arithmetic
        std::vector<std::span<const double>> spans(deltas.begin(), deltas.end());
        const auto merged = task_arithmetic(base_t, spans, 0.8);
        pass = pass && form_holds(merged, std::vector<std::vector<double>>(3, std::vector<double>(n, 0.8)),
                                  std::vector<std::vector<std::uint8_t>>(3, std::vector<std::uint8_t>(n, 1)));
    }
    {
        // weight average of models
        const std::vector<double> weights{0.2, 0.3, 0.5};
        std::vector<std::vector<double>> models(3, std::vector<double>(n));
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t c = 0; c < n; ++c) models[i][c] = base_t[c] + deltas[i][c];
        std::vector<std::span<const double>> spans(models.begin(), models.end());
        const auto merged = weight_average(spans, weights);
        std::vector<std::vector<double>> w;
        for (double wi : weights) w.emplace_back(n, wi);
        pass = pass && form_holds(merged, w,
                                  std::vector<std::vector<std::uint8_t>>(3, std::vector<std::uint8_t>(n, 1)));
    }
    {
        // dare then scaled sum: scalar weight lambda / (1 - p)
        const double p = 0.4, lambda = 1.1;
        std::vector<double> merged = base_t;
        std::vector<std::vector<std::uint8_t>> m;
        for (std::size_t i = 0; i < 3; ++i) {
            const MaskedDelta md = dare_drop(deltas[i], p, rng::derive_seed(9, "l", i));
            for (std::size_t c = 0; c < n; ++c) merged[c] += lambda * md.values[c];
            m.push_back(md.mask);
        }
        pass = pass && form_holds(
                           merged,
                           std::vector<std::vector<double>>(3, std::vector<double>(n, lambda / (1.0 - p))), m);
    }
    {
        // ties after top-k trim: per-coordinate disjoint-mean weights
        const double lambda = 0.9;
        std::vector<MaskedDelta> masked;
        for (const auto& d : deltas) masked.push_back(topk_mask(d, 0.5));
        const auto combined = ties_combine(masked, lambda);
        std::vector<double> merged = base_t;
        for (std::size_t c = 0; c < n; ++c) merged[c] += combined[c];
        std::vector<std::vector<double>> w(3, std::vector<double>(n, 0.0));
        std::vector<std::vector<std::uint8_t>> m(3, std::vector<std::uint8_t>(n, 0));
        for (std::size_t c = 0; c < n; ++c) {
            double s = 0.0;
            for (const auto& md : masked) s += md.values[c];
            if (s == 0.0) continue;
            const double sign = s > 0 ? 1.0 : -1.0;
            int agree = 0;
            for (const auto& md : masked)
                if (md.values[c] * sign > 0) ++agree;
            for (std::size_t i = 0; i < 3; ++i)
                if (masked[i].values[c] * sign > 0) {
                    m[i][c] = 1;
                    w[i][c] = lambda / agree;
                }
        }
        pass = pass && form_holds(merged, w, m);
    }
    {
        // breadcrumbs band mask, unscaled
        std::vector<double> merged = base_t;
        std::vector<std::vector<std::uint8_t>> m;
        for (const auto& d : deltas) {
            const MaskedDelta md = breadcrumbs_mask(d, 0.1, 0.2);
            for (std::size_t c = 0; c < n; ++c) merged[c] += md.values[c];
            m.push_back(md.mask);
        }
        pass = pass &&
               form_holds(merged, std::vector<std::vector<double>>(3, std::vector<double>(n, 1.0)), m);
    }

    report(8, "ties/dare/masked-form oracles", pass, detail + "masked form exact for all operators");
}

// --- criterion 9: determinism and atomicity ----------------------------------

void criterion_9() {
    TempDir dir("c9");
    FixtureSpec spec;
    spec.out_dir = dir.path.string();
    spec.models = 3;
    spec.seed = 9;
    gen_fixtures(spec);

    bool pass = true;
    std::string detail;

    auto plan_json = [&](int threads, const std::string& out) {
        return json{{"base", dir.file("base.st")},
                    {"models", {dir.file("model_1.st"), dir.file("model_2.st"), dir.file("model_3.st")}},
                    {"method", "resm"},
                    {"seed", 11},
                    {"threads", threads},
                    {"output", out}}
            .dump();
    };
    for (int threads : {1, 2, 8}) {
        std::ofstream(dir.file("plan.json")) << plan_json(threads, dir.file("out_" + std::to_string(threads) + ".st"));
        if (run_cli("merge " + dir.file("plan.json"), dir) != 0) pass = false;
    }
    const std::string bytes1 = slurp(dir.file("out_1.st"));
    pass = pass && !bytes1.empty() && bytes1 == slurp(dir.file("out_2.st")) &&
           bytes1 == slurp(dir.file("out_8.st"));
    if (!pass) detail += "thread-count dependence; ";

    // induced failures must leave no output behind
    std::ofstream(dir.file("bad.json")) << json{{"base", dir.file("base.st")},
                                                {"models", {dir.file("missing.st")}},
                                                {"method", "resm"},
                                                {"output", dir.file("never.st")}}
                                               .dump();
    const int code = run_cli("merge " + dir.file("bad.json"), dir);
    if (code != 5 || fs::exists(dir.file("never.st"))) {
        pass = false;
        detail += "missing-file failure left traces or wrong exit; ";
    }

    Checkpoint nan_model = read_checkpoint(dir.file("model_1.st"));
    auto vals = nan_model.records.at("blk.0.dense.weight").to_f64();
    vals[0] = std::numeric_limits<double>::quiet_NaN();
    nan_model.records["blk.0.dense.weight"] =
        TensorRecord::from_f64("blk.0.dense.weight", DType::F32, {64, 64}, vals);
    write_checkpoint(dir.file("nan.st"), nan_model);
    std::ofstream(dir.file("nan.json")) << json{{"base", dir.file("base.st")},
                                                {"models", {dir.file("nan.st")}},
                                                {"method", "resm"},
                                                {"output", dir.file("out_nan.st")}}
                                               .dump();
    const int nan_code = run_cli("merge " + dir.file("nan.json"), dir);
    if (nan_code != 4 || fs::exists(dir.file("out_nan.st"))) {
        pass = false;
        detail += "numerical failure left traces or wrong exit; ";
    }

    report(9, "byte-identical across 1/2/8 threads; failures leave no output", pass,
           detail.empty() ? "exit codes 5 and 4 observed" : detail);
}

// --- criterion 10: container round-trips --------------------------------------

void criterion_10() {
    Timer timer;
    TempDir dir("c10");
    std::mt19937_64 eng(4242);
    std::uniform_int_distribution<int> dim(1, 9);
    std::uniform_int_distribution<int> rank(0, 2);
    std::uniform_int_distribution<int> count(1, 4);
    std::uniform_int_distribution<int> dtype_pick(0, 2);
    std::uniform_int_distribution<int> byte(0, 255);

    bool pass = true;
    for (int iter = 0; iter < 1000 && pass; ++iter) {
        Checkpoint ckpt;
        const int tensors = count(eng);
        for (int t = 0; t < tensors; ++t) {
            TensorRecord rec;
            rec.name = "t" + std::to_string(t);
            rec.dtype = static_cast<DType>(dtype_pick(eng));
            const int r = rank(eng);
            std::size_t n = 1;
            for (int d = 0; d < r; ++d) {
                rec.shape.push_back(dim(eng));
                n *= static_cast<std::size_t>(rec.shape.back());
            }
            rec.bytes.resize(n * dtype_width(rec.dtype));
            for (auto& b : rec.bytes) b = static_cast<std::uint8_t>(byte(eng));
            ckpt.records[rec.name] = rec;
        }
        if (iter % 3 == 0) ckpt.metadata["iter"] = std::to_string(iter);

        write_checkpoint(dir.file("a.st"), ckpt);
        write_checkpoint(dir.file("b.st"), read_checkpoint(dir.file("a.st")));
        if (slurp(dir.file("a.st")) != slurp(dir.file("b.st"))) pass = false;
    }
    std::snprintf(buf, sizeof buf, "1000 randomized mixed-dtype checkpoints; %.1fs", timer.seconds());
    report(10, "write-read-write byte identity", pass, buf);
}

}  // namespace

int main() {
    ::setenv("MERGE_LOG", "error", 0);  // keep criterion lines readable; reports still carry warnings
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    std::printf("%d/10 criteria passed\n", 10 - g_failures);
    return g_failures;
}
