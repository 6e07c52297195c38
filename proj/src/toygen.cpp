#include "flowforget/toygen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "flowforget/errors.hpp"

namespace flowforget {

namespace {

// Streams of the world seed, one per independent construction step.
enum : std::uint64_t {
    kStreamMap = 0,
    kStreamStages = 1,
    kStreamCenters = 2,
    kStreamStats = 3,
    kStreamEmbed = 4,
    kStreamGate = 5,
};

// Synthesis-stage weight gain. Large enough that identity clusters stay far
// apart through the tanh saturation (the build gate and the leakage tail
// depend on it), small enough that within-cluster structure survives.
constexpr double kStageGain = 1.8;
constexpr double kStageBiasStd = 0.2;

// Construction rescales centers to at least this many cluster sigmas apart.
// The invariant only needs 6 and the nearest-center tail bound (< 1e-6 per
// draw) ten; the extra margin keeps the softmax leakage of the frozen
// generator below 1e-3 after the embedding contracts distances.
constexpr double kSeparationSigmas = 14.0;

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Matrix m(rows, cols);
    for (auto& x : m.data) x = scale * rng.gaussian();
    return m;
}

// Orthonormalizes the rows of a Gaussian draw (Gram-Schmidt). rows <= cols.
Matrix orthonormal_rows(Rng& rng, std::size_t rows, std::size_t cols) {
    if (rows > cols) throw ConfigError("embed_dim must be <= obs_dim");
    Matrix m = gaussian_matrix(rng, rows, cols, 1.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = m.data.data() + r * cols;
        for (std::size_t p = 0; p < r; ++p) {
            const double* prev = m.data.data() + p * cols;
            double proj = 0.0;
            for (std::size_t c = 0; c < cols; ++c) proj += row[c] * prev[c];
            for (std::size_t c = 0; c < cols; ++c) row[c] -= proj * prev[c];
        }
        double norm = 0.0;
        for (std::size_t c = 0; c < cols; ++c) norm += row[c] * row[c];
        norm = std::sqrt(norm);
        if (norm < 1e-10) throw ConfigError("degenerate draw while orthonormalizing");
        for (std::size_t c = 0; c < cols; ++c) row[c] /= norm;
    }
    return m;
}

std::vector<std::size_t> stage_dims(const WorldConfig& cfg) {
    std::vector<std::size_t> dims(cfg.n_stages + 1);
    dims[0] = cfg.latent_dim;
    dims[cfg.n_stages] = cfg.obs_dim;
    const double ratio = static_cast<double>(cfg.obs_dim) / static_cast<double>(cfg.latent_dim);
    for (std::size_t s = 1; s < cfg.n_stages; ++s) {
        const double f = std::pow(ratio, static_cast<double>(s) / cfg.n_stages);
        dims[s] = std::max<std::size_t>(
            2, static_cast<std::size_t>(std::lround(cfg.latent_dim * f)));
    }
    return dims;
}

}  // namespace

ToyWorld build_toy_world(const WorldConfig& cfg) {
    if (cfg.k < 2) throw ConfigError("k: need at least 2 identities");
    if (cfg.latent_dim < 2 || cfg.obs_dim < 2) throw ConfigError("dims must be >= 2");
    if (cfg.n_stages < 1) throw ConfigError("n_stages: must be >= 1");
    if (cfg.cluster_std < 0.0) throw ConfigError("cluster_std: must be >= 0");
    if (cfg.embed_dim < 1 || cfg.embed_dim > cfg.obs_dim) {
        throw ConfigError("embed_dim: must be in [1, obs_dim]");
    }

    ToyWorld w;
    w.cfg = cfg;

    // Map network: orthonormal linear part (keeps Map(z) ~ z in scale) plus
    // a small bias.
    Rng map_rng(derive_seed(cfg.seed, kStreamMap));
    w.map_w = orthonormal_rows(map_rng, cfg.latent_dim, cfg.latent_dim);
    w.map_b = sample_gaussian(map_rng, cfg.latent_dim, 0.0, 0.1);

    Rng stage_rng(derive_seed(cfg.seed, kStreamStages));
    const auto dims = stage_dims(cfg);
    for (std::size_t s = 0; s < cfg.n_stages; ++s) {
        AffineStage st;
        st.w = gaussian_matrix(stage_rng, dims[s + 1], dims[s],
                               kStageGain / std::sqrt(static_cast<double>(dims[s])));
        st.b = sample_gaussian(stage_rng, dims[s + 1], 0.0, kStageBiasStd);
        w.synth_stages.push_back(std::move(st));
    }

    // Latent statistics from 1e4 draws.
    Rng stats_rng(derive_seed(cfg.seed, kStreamStats));
    const std::size_t n_stats = 10000;
    Vector mean(cfg.latent_dim, 0.0);
    Vector sumsq(cfg.latent_dim, 0.0);
    for (std::size_t i = 0; i < n_stats; ++i) {
        const Vector z = sample_gaussian(stats_rng, cfg.latent_dim, 0.0, 1.0);
        const Vector wv = map_latent(w, z);
        for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
            mean[j] += wv[j];
            sumsq[j] += wv[j] * wv[j];
        }
    }
    double scale_acc = 0.0;
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) {
        mean[j] /= n_stats;
        const double var = sumsq[j] / n_stats - mean[j] * mean[j];
        scale_acc += std::sqrt(std::max(var, 0.0));
    }
    w.w_bar = mean;
    w.w_scale = scale_acc / cfg.latent_dim;

    // Identity centers: Map(z) draws, rescaled about w_bar for separation.
    Rng center_rng(derive_seed(cfg.seed, kStreamCenters));
    for (std::size_t j = 0; j < cfg.k; ++j) {
        const Vector z = sample_gaussian(center_rng, cfg.latent_dim, 0.0, 1.0);
        w.identity_centers.push_back(map_latent(w, z));
    }
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cfg.k; ++i) {
        for (std::size_t j = i + 1; j < cfg.k; ++j) {
            min_dist = std::min(min_dist, l2_dist(w.identity_centers[i], w.identity_centers[j]));
        }
    }
    const double needed = kSeparationSigmas * cfg.cluster_std;
    if (min_dist < 1e-9 && needed > 0.0) {
        throw ConfigError("identity centers degenerate; separation unachievable");
    }
    if (min_dist < needed) {
        const double f = needed / min_dist;
        for (auto& c : w.identity_centers) {
            for (std::size_t j = 0; j < c.size(); ++j) {
                c[j] = w.w_bar[j] + f * (c[j] - w.w_bar[j]);
            }
        }
    }

    // Frozen embeddings and identity prototypes.
    Rng embed_rng(derive_seed(cfg.seed, kStreamEmbed));
    w.embed_per = gaussian_matrix(embed_rng, cfg.embed_dim, cfg.obs_dim,
                                  1.0 / std::sqrt(static_cast<double>(cfg.obs_dim)));
    w.embed_id = orthonormal_rows(embed_rng, cfg.embed_dim, cfg.obs_dim);
    for (std::size_t j = 0; j < cfg.k; ++j) {
        w.id_prototypes.push_back(embed_identity(w, generate(w, nullptr, w.identity_centers[j])));
    }

    // Well-posedness gate: fresh samples must classify to their own identity.
    Rng gate_rng(derive_seed(cfg.seed, kStreamGate));
    const std::size_t per_id = 100;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < cfg.k; ++j) {
        for (std::size_t i = 0; i < per_id; ++i) {
            const Vector wv = sample_identity(w, gate_rng, j);
            if (classify(w, generate(w, nullptr, wv)) == j) ++hits;
        }
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(per_id * cfg.k);
    if (acc < 0.99) {
        throw ConfigError("world is ill-posed: nearest-center accuracy " + std::to_string(acc) +
                          " < 0.99 (try another seed)");
    }
    return w;
}

ToyWorld build_toy_world(std::uint64_t seed, std::size_t k, std::size_t latent_dim,
                         std::size_t obs_dim) {
    WorldConfig cfg;
    cfg.seed = seed;
    cfg.k = k;
    cfg.latent_dim = latent_dim;
    cfg.obs_dim = obs_dim;
    return build_toy_world(cfg);
}

Vector map_latent(const ToyWorld& world, const Vector& z) {
    if (z.size() != world.cfg.latent_dim) throw ConfigError("map_latent: latent dim mismatch");
    Vector out = matvec(world.map_w, z);
    axpy(1.0, world.map_b, out);
    return out;
}

AdapterStack init_adapter_stack(const ToyWorld& world, Rng& rng, std::size_t hidden,
                                const SolverSpec& spec) {
    AdapterStack stack;
    for (std::size_t s = 0; s < world.n_stages(); ++s) {
        AdapterEntry e;
        e.stage_index = s;
        e.params = init_adapter_params(rng, world.stage_dim(s), hidden);
        e.spec = spec;
        stack.adapters.push_back(std::move(e));
    }
    return stack;
}

DiscreteAdapterStack init_discrete_stack(const ToyWorld& world, Rng& rng, std::size_t rank) {
    if (rank < 1) throw ConfigError("discrete adapter rank must be >= 1");
    DiscreteAdapterStack stack;
    for (std::size_t s = 0; s < world.n_stages(); ++s) {
        DiscreteAdapter a;
        a.stage_index = s;
        a.a = kaiming_uniform_init(rng, world.stage_dim(s), rank);
        a.b = Matrix(rank, world.stage_dim(s));  // zero: identity at init
        stack.adapters.push_back(std::move(a));
    }
    return stack;
}

Vector apply_discrete_adapter(const DiscreteAdapter& ad, const Vector& x) {
    Vector out = x;
    axpy(1.0, matvec(ad.a, matvec(ad.b, x)), out);
    return out;
}

Vector generate(const ToyWorld& world, const AdapterStack* stack, const Vector& w) {
    if (w.size() != world.cfg.latent_dim) throw ConfigError("generate: latent dim mismatch");
    Vector h = w;
    for (std::size_t s = 0; s < world.n_stages(); ++s) {
        const AffineStage& st = world.synth_stages[s];
        Vector v = matvec(st.w, h);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(v[i] + st.b[i]);
        if (stack) {
            for (const AdapterEntry& a : stack->adapters)
                if (a.stage_index == s) v = integrate_final(v, a.params, a.spec);
        }
        h = std::move(v);
    }
    return h;
}

Vector generate_discrete(const ToyWorld& world, const DiscreteAdapterStack* stack,
                         const Vector& w) {
    if (w.size() != world.cfg.latent_dim) throw ConfigError("generate: latent dim mismatch");
    Vector h = w;
    for (std::size_t s = 0; s < world.n_stages(); ++s) {
        const AffineStage& st = world.synth_stages[s];
        Vector v = matvec(st.w, h);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(v[i] + st.b[i]);
        if (stack) {
            for (const DiscreteAdapter& a : stack->adapters)
                if (a.stage_index == s) v = apply_discrete_adapter(a, v);
        }
        h = std::move(v);
    }
    return h;
}

Vector sample_identity(const ToyWorld& world, Rng& rng, std::size_t id) {
    if (id >= world.cfg.k) throw ConfigError("sample_identity: id out of range");
    Vector out = world.identity_centers[id];
    if (world.cfg.cluster_std > 0.0) {
        axpy(1.0, sample_gaussian(rng, out.size(), 0.0, world.cfg.cluster_std), out);
    }
    return out;
}

Vector embed_perceptual(const ToyWorld& world, const Vector& x) {
    return matvec(world.embed_per, x);
}

Vector embed_identity(const ToyWorld& world, const Vector& x) {
    return matvec(world.embed_id, x);
}

std::size_t classify(const ToyWorld& world, const Vector& x) {
    const Vector e = embed_identity(world, x);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < world.id_prototypes.size(); ++j) {
        const double d = l2_dist(e, world.id_prototypes[j]);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

namespace {

void checksum_doubles(std::uint64_t& h, const double* xs, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &xs[i], sizeof(bits));
        h ^= bits;
        h *= 0x100000001b3ULL;  // FNV-1a over 8-byte words
    }
}

}  // namespace

std::uint64_t world_checksum(const ToyWorld& world) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    checksum_doubles(h, world.map_w.data.data(), world.map_w.data.size());
    checksum_doubles(h, world.map_b.data(), world.map_b.size());
    for (const auto& st : world.synth_stages) {
        checksum_doubles(h, st.w.data.data(), st.w.data.size());
        checksum_doubles(h, st.b.data(), st.b.size());
    }
    for (const auto& c : world.identity_centers) checksum_doubles(h, c.data(), c.size());
    checksum_doubles(h, world.w_bar.data(), world.w_bar.size());
    checksum_doubles(h, &world.w_scale, 1);
    checksum_doubles(h, world.embed_per.data.data(), world.embed_per.data.size());
    checksum_doubles(h, world.embed_id.data.data(), world.embed_id.data.size());
    for (const auto& p : world.id_prototypes) checksum_doubles(h, p.data(), p.size());
    return h;
}

GenFn frozen_generator(const ToyWorld& world) {
    const ToyWorld* w = &world;
    return [w](const Vector& x) { return generate(*w, nullptr, x); };
}

GenFn stack_generator(const ToyWorld& world, const AdapterStack& stack) {
    const ToyWorld* w = &world;
    const AdapterStack* s = &stack;
    return [w, s](const Vector& x) { return generate(*w, s, x); };
}

GenFn discrete_generator(const ToyWorld& world, const DiscreteAdapterStack& stack) {
    const ToyWorld* w = &world;
    const DiscreteAdapterStack* s = &stack;
    return [w, s](const Vector& x) { return generate_discrete(*w, s, x); };
}

}  // namespace flowforget
