#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "flowforget/numkit.hpp"
#include "flowforget/toygen.hpp"

namespace flowforget {

struct MetricReport {
    double id_score = 0.0;            // forget-latent similarity, lower = more forgotten
    double id_avg = 0.0;              // multi-sample variant over the forgotten cluster
    double mmd_retain = 0.0;          // adapted vs frozen retain-output MMD
    double retention_accuracy = 0.0;  // fraction of retain samples still classified right
    double forget_rate = 0.0;         // fraction of forget samples still classified as such
    double leakage = 0.0;             // softmax mass on the forgotten id over retain outputs
};

/// Cosine similarity of the two observations under the world's identity
/// embedding. Throws ConfigError on a zero-norm embedding.
double id_similarity(const ToyWorld& world, const Vector& x_before, const Vector& x_after);

/// Mean id_similarity between frozen and adapted outputs over n fresh
/// same-identity draws.
double id_avg(const ToyWorld& world, const GenFn& adapted, std::size_t id, std::size_t n,
              Rng& rng);

/// Unbiased squared-MMD estimate, RBF kernel, bandwidth = median pairwise
/// distance of the pooled sample. Throws ConfigError when the pooled sample
/// is degenerate (zero bandwidth). Permutation-invariant bitwise: kernel
/// terms are accumulated in sorted order.
double mmd(const std::vector<Vector>& xs, const std::vector<Vector>& ys);

/// Biased (V-statistic) variant; exactly 0 on identical multisets.
double mmd_biased(const std::vector<Vector>& xs, const std::vector<Vector>& ys);

struct ClassStats {
    double retention_accuracy = 0.0;
    double forget_rate = 0.0;
};

/// Nearest-prototype classification of generated observations, n_per_id
/// fresh draws per identity. forgotten_ids marks which clusters count toward
/// forget_rate; the rest make up retention_accuracy.
ClassStats retention_forget_rate(const ToyWorld& world, const GenFn& adapted,
                                 const std::vector<std::size_t>& forgotten_ids, Rng& rng,
                                 std::size_t n_per_id);

/// Mean softmax attribution of the forgotten identity over fresh
/// retain-identity generations. Scores are softmax(-squared embedding
/// distance to each prototype); value in [0, 1].
double leakage(const ToyWorld& world, const GenFn& adapted, std::size_t forgotten_id, Rng& rng,
               std::size_t n);

struct EvalCounts {
    std::size_t n_per_id = 50;   // classification draws per identity
    std::size_t mmd_n = 200;     // samples per side of the MMD estimate
    std::size_t id_avg_n = 10;
    std::size_t leakage_n = 100;
};

/// The standard report row. w_u_set holds the actually-unlearned latents
/// (id_score = mean similarity at those latents); forgotten_ids their
/// clusters. Deterministic given (world, stack, seed).
MetricReport evaluate(const ToyWorld& world, const GenFn& adapted,
                      const std::vector<std::size_t>& forgotten_ids,
                      const std::vector<Vector>& w_u_set, std::uint64_t seed,
                      const EvalCounts& counts = {});

/// Same report with every evaluated latent perturbed by noise_std * gaussian
/// (probing robustness of the unlearned region). noise_std = 0 reduces to
/// evaluate bitwise.
MetricReport noise_attack_eval(const ToyWorld& world, const GenFn& adapted,
                               const std::vector<std::size_t>& forgotten_ids,
                               const std::vector<Vector>& w_u_set, double noise_std,
                               std::uint64_t seed, const EvalCounts& counts = {});

// --- theorem-level diagnostics ------------------------------------------------

struct NoncrossReport {
    bool pass = true;
    double min_margin_ratio = 0.0;  // min over pairs/times of dist / (e^{-Lt} d0)
    std::size_t worst_pair = 0;
    double worst_time = 0.0;
    std::string detail;
};

/// Integrates fine-grid (rk4, dt = 0.01) trajectories of every adapter flow
/// for n_pairs paired samples from two identity clusters and checks the
/// reverse-Gronwall margin: dist(t) >= 0.95 e^{-L t} dist(0) at every shared
/// node. Read-only. Throws ConfigError when id_i == id_j.
NoncrossReport check_trajectory_noncrossing(const ToyWorld& world, const AdapterStack& stack,
                                            std::size_t id_i, std::size_t id_j, Rng& rng,
                                            std::size_t n_pairs);

struct SmoothnessReport {
    bool gronwall_pass = true;
    double max_gronwall_ratio = 0.0;  // max dist(T) / (e^{LT} dist(0)); bound is 1.05
    bool order_pass = true;
    double convergence_order = 0.0;   // Richardson estimate, expected in [1.8, 2.2]
    std::string detail;
};

/// Gronwall forward-bound check over n_pairs random starts per adapter
/// (rk4, dt = 0.01 over the adapter's horizon), plus a C^1 check: the
/// finite-difference flow Jacobian converges at second order as eps halves.
SmoothnessReport check_smoothness(const AdapterStack& stack, Rng& rng, std::size_t n_pairs,
                                  double eps);

}  // namespace flowforget
