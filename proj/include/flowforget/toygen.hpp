#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "flowforget/numkit.hpp"
#include "flowforget/odeflow.hpp"
#include "flowforget/vecfield.hpp"

namespace flowforget {

struct WorldConfig {
    std::uint64_t seed = 1;
    std::size_t k = 8;            // identity clusters
    std::size_t latent_dim = 8;   // z and w dimension
    std::size_t obs_dim = 32;     // observation dimension
    double cluster_std = 0.3;
    std::size_t n_stages = 2;     // affine+tanh synthesis stages
    std::size_t embed_dim = 16;   // perceptual / identity embedding dimension
};

/// One frozen synthesis stage: x -> tanh(w x + b).
struct AffineStage {
    Matrix w;
    Vector b;
};

/// The frozen generator world. Immutable after construction; reconstructed
/// from its config (seed + dims), never stored on disk.
struct ToyWorld {
    WorldConfig cfg;
    Matrix map_w;  // Map: z -> w, affine
    Vector map_b;
    std::vector<AffineStage> synth_stages;  // w -> ... -> x
    std::vector<Vector> identity_centers;   // k centers in w-space, >= 6 sigma apart
    Vector w_bar;                           // empirical mean of Map(z), 1e4 draws
    double w_scale = 0.0;                   // mean per-coordinate std of Map(z)
    Matrix embed_per;                       // obs -> embed_dim, random projection
    Matrix embed_id;                        // obs -> embed_dim, orthonormal rows
    std::vector<Vector> id_prototypes;      // embed_id(frozen generate(center_j))

    std::size_t n_stages() const { return synth_stages.size(); }
    std::size_t stage_dim(std::size_t s) const { return synth_stages[s].w.rows; }
};

/// Deterministic world construction. Centers are drawn as Map(z) samples and
/// rescaled about w_bar until pairwise separation >= 6 * cluster_std; a
/// degenerate draw (coincident centers) throws ConfigError. Also gates on
/// nearest-prototype classification accuracy >= 99% over fresh samples.
ToyWorld build_toy_world(const WorldConfig& cfg);
ToyWorld build_toy_world(std::uint64_t seed, std::size_t k, std::size_t latent_dim,
                         std::size_t obs_dim);

Vector map_latent(const ToyWorld& world, const Vector& z);

/// Continuous adapters: one flow per stage, state dim = stage output dim.
struct AdapterEntry {
    std::size_t stage_index;
    VectorFieldParams params;
    SolverSpec spec;
};

struct AdapterStack {
    std::vector<AdapterEntry> adapters;
};

/// One zero-initialized adapter after every stage; the stack starts as the
/// identity on every stage output.
AdapterStack init_adapter_stack(const ToyWorld& world, Rng& rng, std::size_t hidden,
                                const SolverSpec& spec);

/// Low-rank residual baseline: x -> x + A (B x) per stage. B starts at zero,
/// so this too is the identity at init.
struct DiscreteAdapter {
    std::size_t stage_index;
    Matrix a;  // dim x rank, Kaiming-uniform
    Matrix b;  // rank x dim, zero at init
};

struct DiscreteAdapterStack {
    std::vector<DiscreteAdapter> adapters;
};

DiscreteAdapterStack init_discrete_stack(const ToyWorld& world, Rng& rng, std::size_t rank);

Vector apply_discrete_adapter(const DiscreteAdapter& ad, const Vector& x);

/// Pushes w through the frozen stages, applying every adapter flow attached to
/// a stage in stack order (stacked flows compose). stack = nullptr means the
/// frozen generator.
Vector generate(const ToyWorld& world, const AdapterStack* stack, const Vector& w);
Vector generate_discrete(const ToyWorld& world, const DiscreteAdapterStack* stack,
                         const Vector& w);

/// w-space sample: center[id] + cluster_std * gaussian.
Vector sample_identity(const ToyWorld& world, Rng& rng, std::size_t id);

Vector embed_perceptual(const ToyWorld& world, const Vector& x);
Vector embed_identity(const ToyWorld& world, const Vector& x);

/// Nearest identity prototype of embed_identity(x).
std::size_t classify(const ToyWorld& world, const Vector& x);

/// Structural checksum over every frozen coefficient, for the
/// frozen-generator immutability check.
std::uint64_t world_checksum(const ToyWorld& world);

/// Adapted-generator closures, so metrics can treat both adapter kinds (and
/// the frozen generator) uniformly.
using GenFn = std::function<Vector(const Vector&)>;
GenFn frozen_generator(const ToyWorld& world);
GenFn stack_generator(const ToyWorld& world, const AdapterStack& stack);
GenFn discrete_generator(const ToyWorld& world, const DiscreteAdapterStack& stack);

}  // namespace flowforget
