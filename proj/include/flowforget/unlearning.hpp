#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flowforget/numkit.hpp"
#include "flowforget/odeflow.hpp"
#include "flowforget/toygen.hpp"
#include "flowforget/vecfield.hpp"

namespace flowforget {

/// Which reverse pass computes training gradients. `automatic` picks
/// unrolled for euler and adjoint for everything else; requesting unrolled
/// with a non-euler solver is a configuration error.
enum class GradientMode { automatic, unrolled, adjoint };

GradientMode parse_gradient_mode(const std::string& name);
std::string gradient_mode_name(GradientMode m);

struct UnlearnConfig {
    // Offsets in units of the world's w_scale (the paper-scale values 30/15
    // are meaningless in the toy w-space; the 2:1 ratio is preserved).
    double d = 3.0;
    double a_max = 1.5;
    std::size_t n_a = 2;  // adjacent pairs per batch
    std::size_t n_r = 2;  // retain latents per batch

    double lambda_l2 = 0.01;
    double lambda_per = 1.0;
    double lambda_id = 0.1;

    double lambda_u = 1.0;   // forget-loss weight
    double lambda_tc = 1.0;  // trajectory-consistency weight
    double lambda_r = 1.0;   // retain-loss weight

    std::size_t epochs = 1000;
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;

    SolverSpec solver;
    std::size_t hidden = 32;
    GradientMode grad_mode = GradientMode::automatic;

    /// Resolves `automatic` against the solver and rejects
    /// unrolled + non-euler. Throws ConfigError.
    GradientMode resolved_mode() const;
    void validate() const;
};

/// One training batch around a source latent (Eq. 2/3 construction).
struct ForgetBatch {
    Vector w_u;
    Vector w_t;
    std::vector<std::pair<Vector, Vector>> adjacent_pairs;  // (w_u + delta, w_t + delta)
    std::vector<Vector> retain_latents;
};

/// w_t = w_bar - d * (w_u - w_bar) / ||w_u - w_bar||. d here is absolute
/// (callers scale by w_scale). Throws ConfigError when w_u ~ w_bar.
Vector unidentify_target(const Vector& w_u, const Vector& w_bar, double d);

ForgetBatch sample_adjacency(Rng& rng, const ToyWorld& world, const Vector& w_u,
                             const Vector& w_t, const UnlearnConfig& cfg);

/// Gradient w.r.t. every adapter in a stack, aligned by index.
using StackGrads = std::vector<VectorFieldParams>;

StackGrads zero_stack_grads(const AdapterStack& stack);
void add_scaled(StackGrads& acc, const StackGrads& g, double alpha);

/// Forward state recorded through the adapted generator for one latent, so
/// later losses (the trajectory-consistency term) can reuse the designated
/// adapter's flow without re-integration. flow_tapes/flow_trajs are indexed by
/// adapter entry; entries sharing a stage compose in stack order.
struct GenTape {
    std::vector<Vector> stage_post;   // tanh output per stage
    std::vector<Vector> stage_out;    // after the stage's adapters, if any
    std::vector<FlowTape> flow_tapes; // per adapter entry, unrolled mode only
    std::vector<Trajectory> flow_trajs;  // per adapter entry, adjoint mode only
    GradientMode mode = GradientMode::unrolled;
    Vector output;
};

/// Cache handed from loss_forget to loss_tc: the w_u branch's tape. Empty
/// (no stages recorded) until loss_forget runs.
struct TrainCache {
    GenTape w_u_tape;
    bool valid = false;
};

struct LossResult {
    double value = 0.0;
    StackGrads grads;
};

/// L_u = L_local(w_u vs frozen w_t) + mean over adjacent pairs of the same.
/// L_local = lambda_l2 * MSE(raw) + lambda_per * MSE(perceptual embedding)
///         + lambda_id * cosine distance (identity embedding).
/// Populates `cache` with the w_u branch tape for the TC loss.
LossResult loss_forget(const ToyWorld& world, const AdapterStack& stack,
                       const ForgetBatch& batch, const UnlearnConfig& cfg, TrainCache& cache);

/// L_r = (1/n_r) sum of perceptual MSE between adapted and frozen outputs.
LossResult loss_retain(const ToyWorld& world, const AdapterStack& stack,
                       const ForgetBatch& batch, const UnlearnConfig& cfg);

/// L_TC = sum over consecutive nodes of ||f(h_{k+1}, t_{k+1}) - f(h_k, t_k)||^2
/// on the last-stage adapter's cached w_u trajectory. Unrolled mode
/// differentiates through the nodes' parameter dependence; adjoint mode keeps
/// only the direct f-argument terms. Throws ConfigError without a cache.
LossResult loss_tc(const ToyWorld& world, const AdapterStack& stack, const TrainCache& cache,
                   const UnlearnConfig& cfg);

struct TotalLoss {
    double total = 0.0;
    double l_u = 0.0;
    double l_tc = 0.0;
    double l_r = 0.0;
    StackGrads grads;
};

/// lambda_u * L_u + lambda_tc * L_TC + lambda_r * L_r.
TotalLoss total_loss(const ToyWorld& world, const AdapterStack& stack, const ForgetBatch& batch,
                     const UnlearnConfig& cfg);

// --- discrete baseline -------------------------------------------------------

struct DiscreteGrads {
    std::vector<Matrix> a;
    std::vector<Matrix> b;
};

struct DiscreteLossResult {
    double value = 0.0;
    DiscreteGrads grads;
};

DiscreteLossResult loss_forget_discrete(const ToyWorld& world, const DiscreteAdapterStack& stack,
                                        const ForgetBatch& batch, const UnlearnConfig& cfg);
DiscreteLossResult loss_retain_discrete(const ToyWorld& world, const DiscreteAdapterStack& stack,
                                        const ForgetBatch& batch, const UnlearnConfig& cfg);

// --- optimizer ---------------------------------------------------------------

struct AdamState {
    Vector m;  // first moments, one slot per scalar parameter
    Vector v;  // second moments
    std::size_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

AdamState make_adam_state(std::size_t n_params);

/// One bias-corrected Adam update over parameter blocks. Block layouts of
/// params and grads must match and their total length must equal the state
/// size. Throws DivergenceError on a non-finite gradient.
void adam_step(const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state, double lr);

// --- training loop -----------------------------------------------------------

struct LossHistoryRow {
    std::size_t epoch;
    double l_u, l_tc, l_r, total;
};

struct UnlearnResult {
    AdapterStack stack;
    std::vector<LossHistoryRow> history;
};

/// Training loop: per epoch and per source latent, a fresh ForgetBatch, the
/// total loss, and one Adam step over adapter parameters only. `initial`,
/// when given, continues from an existing stack; otherwise a fresh stack is
/// initialized from cfg.seed. The first `n_frozen` entries of `initial` are
/// kept fixed but stay in the forward pass, so a new flow can be trained on
/// top of previously frozen ones (sequential multi-identity).
UnlearnResult run_unlearning(const ToyWorld& world, const std::vector<Vector>& w_u_set,
                             const UnlearnConfig& cfg, const AdapterStack* initial = nullptr,
                             std::size_t n_frozen = 0);

struct DiscreteUnlearnResult {
    DiscreteAdapterStack stack;
    std::vector<LossHistoryRow> history;  // l_tc stays 0 (no trajectory)
};

DiscreteUnlearnResult run_unlearning_discrete(const ToyWorld& world,
                                              const std::vector<Vector>& w_u_set,
                                              const UnlearnConfig& cfg,
                                              const DiscreteAdapterStack* initial = nullptr);

}  // namespace flowforget
