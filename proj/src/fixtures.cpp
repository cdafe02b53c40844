#include "tvmerge/fixtures.hpp"

#include <bit>
#include <cmath>
#include <random>

#include "tvmerge/mat.hpp"
#include "tvmerge/rng.hpp"
#include "tvmerge/tensor_store.hpp"

namespace tvmerge {

namespace {

struct LayerShape {
    std::string suffix;
    std::vector<std::int64_t> shape;
};

const LayerShape kLayers[] = {
    {"dense.weight", {64, 64}},
    {"attn.weight", {64, 256}},
    {"proj.weight", {256, 64}},
    {"bias", {64}},
};

std::mt19937_64 engine_for(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    return std::mt19937_64(rng::mix(rng::mix(seed, rng::hash_str(tag)), index));
}

// Sylvester-ordered Hadamard sign, +-1; rows are exactly orthogonal.
double hadamard(std::uint64_t row, std::uint64_t col) {
    return (std::popcount(row & col) & 1u) ? -1.0 : 1.0;
}

std::vector<double> base_values(const FixtureSpec& spec, const std::string& name, std::size_t count) {
    auto eng = engine_for(spec.seed, "base:" + name, 0);
    std::vector<double> v(count);
    if (spec.orthogonal_deltas) {
        // dyadic grid: base + delta stays exactly representable in f32, so
        // the stored models carry exactly the constructed rank components
        std::uniform_int_distribution<int> grid(-512, 511);
        for (auto& x : v) x = static_cast<double>(grid(eng)) / 1024.0;
    } else {
        std::normal_distribution<double> normal(0.0, 0.1);
        for (auto& x : v) x = normal(eng);
    }
    return v;
}

// Structured task vector for one model and layer.
std::vector<double> delta_values(const FixtureSpec& spec, const std::string& name,
                                 const std::vector<std::int64_t>& shape, int model) {
    const std::size_t rows = shape.size() == 2 ? static_cast<std::size_t>(shape[0]) : 1;
    const std::size_t cols = shape.size() == 2 ? static_cast<std::size_t>(shape[1])
                                               : static_cast<std::size_t>(shape[0]);
    Mat d(rows, cols);

    if (spec.orthogonal_deltas) {
        // Disjoint basis vectors on the left, Hadamard sign patterns on the
        // right: deltas of different models are exactly orthogonal and carry
        // identical outlier mass, so alpha comes out uniform.
        const std::size_t rank = static_cast<std::size_t>(spec.delta_rank);
        for (std::size_t j = 0; j < rank; ++j) {
            const std::size_t idx = static_cast<std::size_t>(model - 1) * rank + j;
            if (rows == 1) {
                if (idx < cols) d(0, idx) = spec.delta_scale;
                continue;
            }
            if (idx >= rows) continue;
            const double scale = spec.delta_scale / std::sqrt(static_cast<double>(cols));
            for (std::size_t c = 0; c < cols; ++c) d(idx, c) = scale * hadamard(idx, c);
        }
        return std::move(d.values());
    }

    auto eng = engine_for(spec.seed, "delta:" + name, static_cast<std::uint64_t>(model));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    if (rows > 1) {
        // low-rank structure
        std::vector<double> u(rows), v(cols);
        for (std::int64_t j = 0; j < spec.delta_rank; ++j) {
            for (auto& x : u) x = normal(eng);
            for (auto& x : v) x = normal(eng);
            double nu = 0.0, nv = 0.0;
            for (double x : u) nu += x * x;
            for (double x : v) nv += x * x;
            nu = std::sqrt(nu);
            nv = std::sqrt(nv);
            const double sigma = spec.delta_scale / static_cast<double>(1 + j);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) d(r, c) += sigma * (u[r] / nu) * (v[c] / nv);
        }
    }

    // sparse noise; layer kinds get distinct sparsity and noise levels so
    // rank/sparsity profiles show a real spread across layers
    double zero_frac = spec.sparsity;
    double noise_mult = 1.0;
    if (name.ends_with("dense.weight")) {
        zero_frac = spec.sparsity * 0.1;
        noise_mult = 4.0;
    } else if (name.ends_with("proj.weight")) {
        zero_frac = 0.5 + 0.5 * spec.sparsity;
        noise_mult = 0.6;
    } else if (rows == 1) {
        zero_frac = 0.5 * spec.sparsity;
        noise_mult = 0.5;
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double roll = uniform(eng);
        const double g = normal(eng);  // drawn unconditionally to keep streams aligned
        if (roll >= zero_frac) d.values()[i] += noise_mult * spec.noise_scale * g;
    }

    // heavy-tailed outliers, stronger for later models so alpha spreads out
    if (rows > 1) {
        std::uniform_int_distribution<std::size_t> pos(0, d.size() - 1);
        const double magnitude = spec.outlier_scale * (1.0 + 0.5 * static_cast<double>(model - 1));
        for (int o = 0; o < spec.outliers; ++o) {
            const std::size_t at = pos(eng);
            d.values()[at] += (uniform(eng) < 0.5 ? -magnitude : magnitude);
        }
    }
    return std::move(d.values());
}

}  // namespace

std::vector<std::string> gen_fixtures(const FixtureSpec& spec) {
    if (spec.models < 1) throw MergeError(ErrorKind::InvalidArgument, "fixture needs >= 1 model");
    if (spec.blocks < 1) throw MergeError(ErrorKind::InvalidArgument, "fixture needs >= 1 block");
    if (spec.delta_rank < 1) throw MergeError(ErrorKind::InvalidArgument, "delta_rank must be >= 1");
    if (spec.orthogonal_deltas &&
        static_cast<std::int64_t>(spec.models) * spec.delta_rank > 64)
        throw MergeError(ErrorKind::InvalidArgument,
                         "orthogonal mode needs models * delta_rank <= 64 to keep components disjoint");
    if (spec.sparsity < 0.0 || spec.sparsity > 1.0)
        throw MergeError(ErrorKind::InvalidArgument, "sparsity must be in [0, 1]");

    Checkpoint base;
    base.metadata["fixture"] = "tvmerge";
    for (int b = 0; b < spec.blocks; ++b) {
        for (const auto& layer : kLayers) {
            const std::string name = "blk." + std::to_string(b) + "." + layer.suffix;
            std::size_t count = 1;
            for (auto dim : layer.shape) count *= static_cast<std::size_t>(dim);
            base.records[name] =
                TensorRecord::from_f64(name, spec.dtype, layer.shape, base_values(spec, name, count));
        }
    }

    std::vector<std::string> paths;
    const std::string base_path = spec.out_dir + "/base.st";
    write_checkpoint(base_path, base);
    paths.push_back(base_path);

    for (int m = 1; m <= spec.models; ++m) {
        Checkpoint model;
        model.metadata = base.metadata;
        for (const auto& [name, rec] : base.records) {
            std::vector<double> values = rec.to_f64();
            const std::vector<double> dv = delta_values(spec, name, rec.shape, m);
            for (std::size_t i = 0; i < values.size(); ++i) values[i] += dv[i];
            model.records[name] = TensorRecord::from_f64(name, rec.dtype, rec.shape, values);
        }
        const std::string path = spec.out_dir + "/model_" + std::to_string(m) + ".st";
        write_checkpoint(path, model);
        paths.push_back(path);
    }
    return paths;
}

}  // namespace tvmerge
