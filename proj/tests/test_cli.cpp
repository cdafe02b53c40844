#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <sys/wait.h>

#include "tvmerge/tensor_store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("tvm_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

RunResult run(const std::string& args, const TempDir& dir) {
    const std::string out_file = dir.file("cmd.out");
    const std::string err_file = dir.file("cmd.err");
    const std::string cmd =
        std::string(TVMERGE_BIN) + " " + args + " >" + out_file + " 2>" + err_file;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::string fixture_dir(const TempDir& dir, const std::string& extra = "") {
    const std::string fx = dir.file("fx" + extra);
    fs::create_directories(fx);
    return fx;
}

}  // namespace

TEST_CASE("gen-fixtures is deterministic per seed") {
    TempDir dir;
    const std::string a = fixture_dir(dir, "_a"), b = fixture_dir(dir, "_b"), c = fixture_dir(dir, "_c");
    CHECK(run("gen-fixtures --out " + a + " --seed 5", dir).code == 0);
    CHECK(run("gen-fixtures --out " + b + " --seed 5", dir).code == 0);
    CHECK(run("gen-fixtures --out " + c + " --seed 6", dir).code == 0);
    CHECK(slurp(a + "/base.st") == slurp(b + "/base.st"));
    CHECK(slurp(a + "/model_1.st") == slurp(b + "/model_1.st"));
    CHECK(slurp(a + "/base.st") != slurp(c + "/base.st"));
}

TEST_CASE("merge weight_average produces an output and a full report") {
    TempDir dir;
    const std::string fx = fixture_dir(dir);
    REQUIRE(run("gen-fixtures --out " + fx + " --models 2 --seed 1", dir).code == 0);

    const std::string out = dir.file("merged.st");
    write_file(dir.file("plan.json"), json{{"base", fx + "/base.st"},
                                           {"models", {fx + "/model_1.st", fx + "/model_2.st"}},
                                           {"method", "weight_average"},
                                           {"weights", {0.5, 0.5}},
                                           {"output", out}}
                                         .dump());
    const RunResult r = run("merge " + dir.file("plan.json"), dir);
    CHECK(r.code == 0);
    CHECK(fs::exists(out));
    REQUIRE(fs::exists(out + ".report.json"));

    const json report = json::parse(slurp(out + ".report.json"));
    const tvmerge::Checkpoint base = tvmerge::read_checkpoint(fx + "/base.st");
    CHECK(report["layers"].size() == base.records.size());  // every tensor is listed
}

TEST_CASE("merge resm with full rank override reproduces a single model end to end") {
    TempDir dir;
    const std::string fx = fixture_dir(dir);
    REQUIRE(run("gen-fixtures --out " + fx + " --models 1 --seed 2", dir).code == 0);

    const std::string out = dir.file("merged.st");
    write_file(dir.file("plan.json"),
               json{{"base", fx + "/base.st"},
                    {"models", {fx + "/model_1.st"}},
                    {"method", "resm"},
                    {"resm", {{"rank_override", 1000000}, {"scale", 1.0}}},
                    {"output", out}}
                   .dump());
    REQUIRE(run("merge " + dir.file("plan.json"), dir).code == 0);

    const auto merged = tvmerge::read_checkpoint(out);
    const auto model = tvmerge::read_checkpoint(fx + "/model_1.st");
    for (const auto& [name, rec] : model.records) {
        const auto a = merged.records.at(name).to_f64();
        const auto b = rec.to_f64();
        double dist = 0.0, norm = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dist += (a[i] - b[i]) * (a[i] - b[i]);
            norm += b[i] * b[i];
        }
        CHECK(std::sqrt(dist) <= 1e-4 * std::sqrt(norm));
    }
}

TEST_CASE("merge failures keep the filesystem clean") {
    TempDir dir;
    const std::string fx = fixture_dir(dir);
    REQUIRE(run("gen-fixtures --out " + fx + " --models 1 --seed 3", dir).code == 0);
    const std::string out = dir.file("merged.st");

    SUBCASE("missing model file exits 5") {
        write_file(dir.file("plan.json"), json{{"base", fx + "/base.st"},
                                               {"models", {fx + "/nope.st"}},
                                               {"method", "weight_average"},
                                               {"output", out}}
                                              .dump());
        const RunResult r = run("merge " + dir.file("plan.json"), dir);
        CHECK(r.code == 5);
        CHECK_FALSE(fs::exists(out));
        CHECK(r.err.find("IoFailure") != std::string::npos);  // machine-readable error line
    }
    SUBCASE("misspelled plan key exits 2 and names the key") {
        write_file(dir.file("plan.json"), json{{"base", fx + "/base.st"},
                                               {"models", {fx + "/model_1.st"}},
                                               {"method", "ties"},
                                               {"densty", 0.2},
                                               {"output", out}}
                                              .dump());
        const RunResult r = run("merge " + dir.file("plan.json"), dir);
        CHECK(r.code == 2);
        CHECK(r.err.find("densty") != std::string::npos);
        CHECK_FALSE(fs::exists(out));
    }
    SUBCASE("incompatible shapes exit 3") {
        tvmerge::Checkpoint bad;
        bad.records["blk.0.bias"] =
            tvmerge::TensorRecord::from_f64("blk.0.bias", tvmerge::DType::F32, {32},
                                            std::vector<double>(32, 0.0));
        tvmerge::write_checkpoint(dir.file("bad.st"), bad);
        write_file(dir.file("plan.json"), json{{"base", fx + "/base.st"},
                                               {"models", {dir.file("bad.st")}},
                                               {"method", "weight_average"},
                                               {"output", out}}
                                              .dump());
        const RunResult r = run("merge " + dir.file("plan.json"), dir);
        CHECK(r.code == 3);
        CHECK_FALSE(fs::exists(out));
    }
    SUBCASE("non-finite inputs exit 4") {
        auto model = tvmerge::read_checkpoint(fx + "/model_1.st");
        auto vals = model.records.at("blk.0.dense.weight").to_f64();
        vals[7] = std::numeric_limits<double>::quiet_NaN();
        model.records["blk.0.dense.weight"] =
            tvmerge::TensorRecord::from_f64("blk.0.dense.weight", tvmerge::DType::F32, {64, 64}, vals);
        tvmerge::write_checkpoint(dir.file("nan.st"), model);
        write_file(dir.file("plan.json"), json{{"base", fx + "/base.st"},
                                               {"models", {dir.file("nan.st")}},
                                               {"method", "resm"},
                                               {"output", out}}
                                              .dump());
        const RunResult r = run("merge " + dir.file("plan.json"), dir);
        CHECK(r.code == 4);
        CHECK_FALSE(fs::exists(out));
    }
}

TEST_CASE("merged outputs are byte-identical across runs and thread counts") {
    TempDir dir;
    const std::string fx = fixture_dir(dir);
    REQUIRE(run("gen-fixtures --out " + fx + " --models 3 --seed 4", dir).code == 0);

    auto plan_for = [&](int threads, const std::string& out) {
        return json{{"base", fx + "/base.st"},
                    {"models", {fx + "/model_1.st", fx + "/model_2.st", fx + "/model_3.st"}},
                    {"method", "resm"},
                    {"threads", threads},
                    {"output", out}}
            .dump();
    };
    write_file(dir.file("p1.json"), plan_for(1, dir.file("m1.st")));
    write_file(dir.file("p2.json"), plan_for(2, dir.file("m2.st")));
    REQUIRE(run("merge " + dir.file("p1.json"), dir).code == 0);
    REQUIRE(run("merge " + dir.file("p2.json"), dir).code == 0);
    CHECK(slurp(dir.file("m1.st")) == slurp(dir.file("m2.st")));

    // a second identical run reproduces the file exactly
    write_file(dir.file("p3.json"), plan_for(1, dir.file("m3.st")));
    REQUIRE(run("merge " + dir.file("p3.json"), dir).code == 0);
    CHECK(slurp(dir.file("m1.st")) == slurp(dir.file("m3.st")));
}

TEST_CASE("inspect emits the diagnostics reports") {
    TempDir dir;
    const std::string fx = fixture_dir(dir);
    REQUIRE(run("gen-fixtures --out " + fx + " --models 2 --seed 5", dir).code == 0);
    const std::string models = fx + "/base.st " + fx + "/model_1.st " + fx + "/model_2.st";

    SUBCASE("ranks") {
        const RunResult r = run("inspect --ranks --energy 0.95 " + models, dir);
        REQUIRE(r.code == 0);
        const json doc = json::parse(r.out);
        CHECK(doc["ranks"].size() == 4);
        for (const auto& [layer, rank] : doc["ranks"].items()) CHECK(rank.get<int>() >= 1);
    }
    SUBCASE("outliers carry alpha summing to one") {
        const RunResult r = run("inspect --outliers --sigma 3.0 " + models, dir);
        REQUIRE(r.code == 0);
        const json doc = json::parse(r.out);
        for (const auto& [layer, rep] : doc["outliers"].items()) {
            double sum = 0.0;
            for (const auto& a : rep["alpha"]) sum += a.get<double>();
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    SUBCASE("sparsity lies in the unit interval") {
        const RunResult r = run("inspect --sparsity --epsilon 0.1 " + models, dir);
        REQUIRE(r.code == 0);
        const json doc = json::parse(r.out);
        CHECK(doc["sparsity"].size() == 4);
        for (const auto& [layer, omega] : doc["sparsity"].items()) {
            CHECK(omega.get<double>() >= 0.0);
            CHECK(omega.get<double>() <= 1.0);
        }
    }
    SUBCASE("plot-data emits xy series") {
        const RunResult r = run("inspect --ranks --sparsity --plot-data " + dir.file("series") + " " + models +
                                    " -o " + dir.file("report.json"),
                                dir);
        REQUIRE(r.code == 0);
        CHECK(fs::exists(dir.file("series.ranks.dat")));
        CHECK(fs::exists(dir.file("series.sparsity.dat")));
        CHECK(fs::exists(dir.file("report.json")));
    }
}

TEST_CASE("simulate-conflict") {
    TempDir dir;
    SUBCASE("the documented grid passes at 1e5 trials") {
        const RunResult r = run("simulate-conflict --k 16,64,256 --trials 100000 --seed 7", dir);
        REQUIRE(r.code == 0);
        int pass_lines = 0;
        std::size_t at = 0;
        while ((at = r.out.find(" pass\n", at)) != std::string::npos) {
            ++pass_lines;
            at += 5;
        }
        CHECK(pass_lines == 3);
        CHECK(r.out.find("FAIL") == std::string::npos);

        const RunResult again = run("simulate-conflict --k 16,64,256 --trials 100000 --seed 7", dir);
        CHECK(again.out == r.out);  // identical bytes for identical seeds
    }
    SUBCASE("dimension one is degenerate") {
        const RunResult r = run("simulate-conflict --k 1 --trials 2000 --seed 3", dir);
        REQUIRE(r.code == 0);
        CHECK(r.out.find("E_abs_dot=1.000000") != std::string::npos);
    }
}

TEST_CASE("MERGE_LOG controls warning verbosity") {
    TempDir dir;
    const std::string fx = fixture_dir(dir);
    REQUIRE(run("gen-fixtures --out " + fx + " --models 2 --seed 8", dir).code == 0);
    // infeasible k_fixed forces a per-layer clamp warning
    write_file(dir.file("plan.json"), json{{"base", fx + "/base.st"},
                                           {"models", {fx + "/model_1.st", fx + "/model_2.st"}},
                                           {"method", "tsvm"},
                                           {"k_fixed", 1000000},
                                           {"output", dir.file("out.st")}}
                                          .dump());
    const std::string base_cmd = std::string(TVMERGE_BIN) + " merge " + dir.file("plan.json");

    std::system(("MERGE_LOG=warn " + base_cmd + " >/dev/null 2>" + dir.file("warn.err")).c_str());
    CHECK(slurp(dir.path / "warn.err").find("[warn]") != std::string::npos);

    fs::remove(dir.file("out.st"));
    std::system(("MERGE_LOG=error " + base_cmd + " >/dev/null 2>" + dir.file("quiet.err")).c_str());
    CHECK(slurp(dir.path / "quiet.err").find("[warn]") == std::string::npos);
}

TEST_CASE("default fixture family has the documented layer shapes") {
    TempDir dir;
    const std::string fx = fixture_dir(dir);
    REQUIRE(run("gen-fixtures --out " + fx + " --seed 0", dir).code == 0);
    for (const std::string name : {"base.st", "model_1.st", "model_2.st", "model_3.st"}) {
        const auto ckpt = tvmerge::read_checkpoint(fx + "/" + name);
        REQUIRE(ckpt.records.size() == 4);
        CHECK(ckpt.records.at("blk.0.dense.weight").shape == std::vector<std::int64_t>{64, 64});
        CHECK(ckpt.records.at("blk.0.attn.weight").shape == std::vector<std::int64_t>{64, 256});
        CHECK(ckpt.records.at("blk.0.proj.weight").shape == std::vector<std::int64_t>{256, 64});
        CHECK(ckpt.records.at("blk.0.bias").shape == std::vector<std::int64_t>{64});
    }
}

TEST_CASE("inspect --csv writes the flat metric table") {
    TempDir dir;
    const std::string fx = fixture_dir(dir);
    REQUIRE(run("gen-fixtures --out " + fx + " --models 2 --seed 9", dir).code == 0);
    const RunResult r = run("inspect --sparsity --outliers --csv " + dir.file("t.csv") + " " + fx +
                                "/base.st " + fx + "/model_1.st " + fx + "/model_2.st",
                            dir);
    REQUIRE(r.code == 0);
    const std::string csv = slurp(dir.path / "t.csv");
    CHECK(csv.rfind("layer,metric,model,value\n", 0) == 0);
    CHECK(csv.find(",alpha,1,") != std::string::npos);
    CHECK(csv.find(",sparsity,,") != std::string::npos);
}

TEST_CASE("dare_ties merges are reproducible end to end") {
    TempDir dir;
    const std::string fx = fixture_dir(dir);
    REQUIRE(run("gen-fixtures --out " + fx + " --models 3 --seed 10", dir).code == 0);
    auto plan_for = [&](const std::string& out) {
        return json{{"base", fx + "/base.st"},
                    {"models", {fx + "/model_1.st", fx + "/model_2.st", fx + "/model_3.st"}},
                    {"method", "dare_ties"},
                    {"drop_p", 0.5},
                    {"seed", 99},
                    {"output", out}}
            .dump();
    };
    write_file(dir.file("a.json"), plan_for(dir.file("a.st")));
    write_file(dir.file("b.json"), plan_for(dir.file("b.st")));
    REQUIRE(run("merge " + dir.file("a.json") + " --stdout", dir).code == 0);
    REQUIRE(run("merge " + dir.file("b.json"), dir).code == 0);
    CHECK(slurp(dir.path / "a.st") == slurp(dir.path / "b.st"));

    // --stdout mirrors the report file
    const RunResult r = run("merge " + dir.file("a.json") + " --stdout", dir);
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out)["layers"].size() == 4);
}

TEST_CASE("container format interoperates with the python safetensors library") {
    TempDir dir;
    if (std::system("python3 -c 'import safetensors.numpy' >/dev/null 2>&1") != 0) {
        MESSAGE("python safetensors not available; skipping interop check");
        return;
    }
    // python writes, tvmerge reads and merges, python reads the result back
    const std::string py = dir.file("make.py");
    write_file(py, R"PY(
import json, sys
import numpy as np
from safetensors.numpy import save_file, load_file
d = sys.argv[1]
t = {"w": np.arange(12, dtype=np.float32).reshape(3, 4),
     "h": (np.arange(6, dtype=np.float16) * 0.5).reshape(2, 3)}
save_file(t, d + "/py.st", metadata={"origin": "python"})
plan = {"base": d + "/py.st", "models": [d + "/py.st"],
        "method": "task_arithmetic", "output": d + "/out.st"}
open(d + "/plan.json", "w").write(json.dumps(plan))
)PY");
    REQUIRE(std::system(("python3 " + py + " " + dir.path.string() + " >/dev/null 2>&1").c_str()) == 0);
    REQUIRE(run("merge " + dir.file("plan.json"), dir).code == 0);

    const std::string check = dir.file("check.py");
    write_file(check, R"PY(
import sys
import numpy as np
from safetensors.numpy import load_file
d = sys.argv[1]
a = load_file(d + "/out.st")
b = load_file(d + "/py.st")
ok = all(np.array_equal(a[k], b[k]) for k in b) and str(a["h"].dtype) == "float16"
sys.exit(0 if ok else 1)
)PY");
    CHECK(std::system(("python3 " + check + " " + dir.path.string() + " >/dev/null 2>&1").c_str()) == 0);
}
