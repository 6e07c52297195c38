#include "flowforget/unlearning.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>

#include "flowforget/errors.hpp"

namespace flowforget {

namespace {

// Forward pass of the adapted generator recording everything the reverse
// passes need: per-stage tanh outputs plus, per adapter entry, the flow tape
// (unrolled) or trajectory (adjoint). Entries sharing a stage compose in
// stack order.
GenTape forward_tape(const ToyWorld& world, const AdapterStack& stack, const Vector& w,
                     GradientMode mode) {
    if (w.size() != world.cfg.latent_dim) throw ConfigError("forward: latent dim mismatch");
    GenTape tape;
    tape.mode = mode;
    tape.flow_tapes.resize(stack.adapters.size());
    tape.flow_trajs.resize(stack.adapters.size());
    Vector h = w;
    for (std::size_t s = 0; s < world.n_stages(); ++s) {
        const AffineStage& st = world.synth_stages[s];
        Vector v = matvec(st.w, h);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(v[i] + st.b[i]);
        tape.stage_post.push_back(v);
        for (std::size_t i = 0; i < stack.adapters.size(); ++i) {
            const AdapterEntry& a = stack.adapters[i];
            if (a.stage_index != s) continue;
            if (mode == GradientMode::unrolled) {
                tape.flow_tapes[i] = euler_forward_tape(v, a.params, a.spec);
                v = tape.flow_tapes[i].states.back();
            } else {
                tape.flow_trajs[i] = integrate(v, a.params, a.spec);
                v = tape.flow_trajs[i].states.back();
            }
        }
        h = std::move(v);
        tape.stage_out.push_back(h);
    }
    tape.output = h;
    return tape;
}

// Input state of adapter entry `idx` on this tape: the output of the previous
// entry at the same stage, or the stage's tanh output.
const Vector& flow_input(const AdapterStack& stack, const GenTape& tape, std::size_t idx) {
    const std::size_t s = stack.adapters[idx].stage_index;
    for (std::size_t j = idx; j-- > 0;) {
        if (stack.adapters[j].stage_index != s) continue;
        return tape.mode == GradientMode::unrolled ? tape.flow_tapes[j].states.back()
                                                   : tape.flow_trajs[j].states.back();
    }
    return tape.stage_post[s];
}

// dL/d(stage input) from dL/d(stage_post[s]): tanh then the frozen affine.
Vector stage_backward(const ToyWorld& world, const GenTape& tape, std::size_t s,
                      const Vector& g_post) {
    const Vector& v = tape.stage_post[s];
    Vector gu(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) gu[i] = (1.0 - v[i] * v[i]) * g_post[i];
    return matvec_transposed(world.synth_stages[s].w, gu);
}

// Reverse pass down to the latent, accumulating adapter-parameter gradients.
// Entries at stage s_top with index >= cap_at_top are skipped: they ran after
// the point the cotangent gh was taken (pass stack.adapters.size() when gh is
// at the stage output). Returns dL/dw.
Vector backward_stages(const ToyWorld& world, const AdapterStack& stack, const GenTape& tape,
                       std::size_t s_top, std::size_t cap_at_top, Vector gh, StackGrads& grads) {
    for (std::size_t s = s_top + 1; s-- > 0;) {
        for (std::size_t i = stack.adapters.size(); i-- > 0;) {
            const AdapterEntry& a = stack.adapters[i];
            if (a.stage_index != s) continue;
            if (s == s_top && i >= cap_at_top) continue;
            FlowGradient fg =
                tape.mode == GradientMode::unrolled
                    ? unrolled_pullback(a.params, tape.flow_tapes[i], gh)
                    : adjoint_gradient(flow_input(stack, tape, i), a.params, a.spec, gh);
            grads[i].add_scaled(fg.d_params, 1.0);
            gh = std::move(fg.d_initial);
        }
        gh = stage_backward(world, tape, s, gh);
    }
    return gh;
}

struct LocalLoss {
    double value = 0.0;
    Vector d_out;  // dL/d(adapted output)
};

double mse(const Vector& a, const Vector& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

// lambda_l2 * MSE(raw) + lambda_per * MSE(perceptual) + lambda_id * cosine
// distance (identity embedding), with the pullback to the adapted output.
LocalLoss local_loss(const ToyWorld& world, const Vector& x_a, const Vector& x_t,
                     const UnlearnConfig& cfg) {
    LocalLoss out;
    out.d_out = Vector(x_a.size(), 0.0);

    if (cfg.lambda_l2 != 0.0) {
        out.value += cfg.lambda_l2 * mse(x_a, x_t);
        const double c = cfg.lambda_l2 * 2.0 / static_cast<double>(x_a.size());
        for (std::size_t i = 0; i < x_a.size(); ++i) out.d_out[i] += c * (x_a[i] - x_t[i]);
    }

    if (cfg.lambda_per != 0.0) {
        const Vector e_a = embed_perceptual(world, x_a);
        const Vector e_t = embed_perceptual(world, x_t);
        out.value += cfg.lambda_per * mse(e_a, e_t);
        Vector de(e_a.size());
        const double c = cfg.lambda_per * 2.0 / static_cast<double>(e_a.size());
        for (std::size_t i = 0; i < e_a.size(); ++i) de[i] = c * (e_a[i] - e_t[i]);
        axpy(1.0, matvec_transposed(world.embed_per, de), out.d_out);
    }

    if (cfg.lambda_id != 0.0) {
        const Vector ia = embed_identity(world, x_a);
        const Vector it = embed_identity(world, x_t);
        const double na = l2_norm(ia), nt = l2_norm(it);
        if (na > 1e-12 && nt > 1e-12) {
            const double cos_sim = dot(ia, it) / (na * nt);
            out.value += cfg.lambda_id * (1.0 - cos_sim);
            // d(1 - cos)/d ia = cos * ia / ||ia||^2 - it / (||ia|| ||it||)
            Vector de(ia.size());
            for (std::size_t i = 0; i < ia.size(); ++i)
                de[i] = cfg.lambda_id * (cos_sim * ia[i] / (na * na) - it[i] / (na * nt));
            axpy(1.0, matvec_transposed(world.embed_id, de), out.d_out);
        }
    }
    return out;
}

std::size_t last_adapter_stage(const AdapterStack& stack, std::size_t* index) {
    bool found = false;
    std::size_t best_stage = 0, best_index = 0;
    for (std::size_t i = 0; i < stack.adapters.size(); ++i) {
        if (!found || stack.adapters[i].stage_index >= best_stage) {
            best_stage = stack.adapters[i].stage_index;
            best_index = i;
            found = true;
        }
    }
    if (!found) return static_cast<std::size_t>(-1);
    *index = best_index;
    return best_stage;
}

}  // namespace

GradientMode parse_gradient_mode(const std::string& name) {
    if (name == "auto" || name == "automatic") return GradientMode::automatic;
    if (name == "unrolled") return GradientMode::unrolled;
    if (name == "adjoint") return GradientMode::adjoint;
    throw ConfigError("grad_mode: unknown mode '" + name + "'");
}

std::string gradient_mode_name(GradientMode m) {
    switch (m) {
        case GradientMode::automatic: return "auto";
        case GradientMode::unrolled: return "unrolled";
        case GradientMode::adjoint: return "adjoint";
    }
    return "auto";
}

GradientMode UnlearnConfig::resolved_mode() const {
    if (grad_mode == GradientMode::automatic)
        return solver.method == SolverMethod::euler ? GradientMode::unrolled
                                                    : GradientMode::adjoint;
    if (grad_mode == GradientMode::unrolled && solver.method != SolverMethod::euler)
        throw ConfigError("grad_mode: unrolled gradients require the euler solver");
    return grad_mode;
}

void UnlearnConfig::validate() const {
    if (lambda_l2 < 0 || lambda_per < 0 || lambda_id < 0 || lambda_u < 0 || lambda_tc < 0 ||
        lambda_r < 0)
        throw ConfigError("lambda: loss weights must be >= 0");
    if (n_a < 1) throw ConfigError("n_a: must be >= 1");
    if (n_r < 1) throw ConfigError("n_r: must be >= 1");
    if (a_max < 0) throw ConfigError("a_max: must be >= 0");
    if (learning_rate < 0) throw ConfigError("learning_rate: must be >= 0");
    if (hidden < 1) throw ConfigError("hidden: must be >= 1");
    if (solver.steps < 1) throw ConfigError("steps: must be >= 1");
    if (!(solver.step_size > 0)) throw ConfigError("step_size: must be > 0");
    resolved_mode();
}

Vector unidentify_target(const Vector& w_u, const Vector& w_bar, double d) {
    if (w_u.size() != w_bar.size()) throw ConfigError("unidentify_target: dim mismatch");
    Vector dir = w_u;
    axpy(-1.0, w_bar, dir);
    const double norm = l2_norm(dir);
    if (norm <= 1e-9)
        throw ConfigError("unidentify_target: source latent coincides with the latent mean");
    Vector w_t = w_bar;
    axpy(-d / norm, dir, w_t);
    return w_t;
}

ForgetBatch sample_adjacency(Rng& rng, const ToyWorld& world, const Vector& w_u,
                             const Vector& w_t, const UnlearnConfig& cfg) {
    ForgetBatch batch;
    batch.w_u = w_u;
    batch.w_t = w_t;

    for (std::size_t i = 0; i < cfg.n_r; ++i) {
        const Vector z = sample_gaussian(rng, world.cfg.latent_dim, 0.0, 1.0);
        batch.retain_latents.push_back(map_latent(world, z));
    }

    const double a_max = cfg.a_max * world.w_scale;
    for (std::size_t i = 0; i < cfg.n_a; ++i) {
        const double alpha = rng.uniform(0.0, a_max);
        Vector dir;
        double norm = 0.0;
        for (int attempt = 0; attempt < 10; ++attempt) {
            const Vector z = sample_gaussian(rng, world.cfg.latent_dim, 0.0, 1.0);
            dir = map_latent(world, z);
            axpy(-1.0, w_u, dir);
            norm = l2_norm(dir);
            if (norm > 1e-9) break;
        }
        if (norm <= 1e-9)
            throw ConfigError("sample_adjacency: degenerate retain direction after 10 draws");
        Vector w_u_a = w_u, w_t_a = w_t;
        axpy(alpha / norm, dir, w_u_a);
        axpy(alpha / norm, dir, w_t_a);
        batch.adjacent_pairs.emplace_back(std::move(w_u_a), std::move(w_t_a));
    }
    return batch;
}

StackGrads zero_stack_grads(const AdapterStack& stack) {
    StackGrads grads;
    grads.reserve(stack.adapters.size());
    for (const AdapterEntry& a : stack.adapters)
        grads.push_back(VectorFieldParams::zeros_like(a.params));
    return grads;
}

void add_scaled(StackGrads& acc, const StackGrads& g, double alpha) {
    if (acc.size() != g.size()) throw ConfigError("stack gradients: shape mismatch");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i].add_scaled(g[i], alpha);
}

LossResult loss_forget(const ToyWorld& world, const AdapterStack& stack, const ForgetBatch& batch,
                       const UnlearnConfig& cfg, TrainCache& cache) {
    const GradientMode mode = cfg.resolved_mode();
    LossResult out;
    out.grads = zero_stack_grads(stack);

    GenTape tape_u = forward_tape(world, stack, batch.w_u, mode);
    const Vector x_t = generate(world, nullptr, batch.w_t);
    LocalLoss local = local_loss(world, tape_u.output, x_t, cfg);
    out.value = local.value;
    if (!stack.adapters.empty())
        backward_stages(world, stack, tape_u, world.n_stages() - 1, stack.adapters.size(),
                        std::move(local.d_out), out.grads);

    if (!batch.adjacent_pairs.empty()) {
        const double inv = 1.0 / static_cast<double>(batch.adjacent_pairs.size());
        for (const auto& [w_u_a, w_t_a] : batch.adjacent_pairs) {
            GenTape tape_a = forward_tape(world, stack, w_u_a, mode);
            const Vector x_ta = generate(world, nullptr, w_t_a);
            LocalLoss l = local_loss(world, tape_a.output, x_ta, cfg);
            out.value += inv * l.value;
            for (double& g : l.d_out) g *= inv;
            if (!stack.adapters.empty())
                backward_stages(world, stack, tape_a, world.n_stages() - 1, stack.adapters.size(),
                                std::move(l.d_out), out.grads);
        }
    }

    cache.w_u_tape = std::move(tape_u);
    cache.valid = true;
    return out;
}

LossResult loss_retain(const ToyWorld& world, const AdapterStack& stack, const ForgetBatch& batch,
                       const UnlearnConfig& cfg) {
    const GradientMode mode = cfg.resolved_mode();
    LossResult out;
    out.grads = zero_stack_grads(stack);
    if (batch.retain_latents.empty()) return out;

    const double inv = 1.0 / static_cast<double>(batch.retain_latents.size());
    for (const Vector& w_r : batch.retain_latents) {
        GenTape tape = forward_tape(world, stack, w_r, mode);
        const Vector x_f = generate(world, nullptr, w_r);
        const Vector e_a = embed_perceptual(world, tape.output);
        const Vector e_f = embed_perceptual(world, x_f);
        out.value += inv * mse(e_a, e_f);

        Vector de(e_a.size());
        const double c = inv * 2.0 / static_cast<double>(e_a.size());
        for (std::size_t i = 0; i < e_a.size(); ++i) de[i] = c * (e_a[i] - e_f[i]);
        if (!stack.adapters.empty())
            backward_stages(world, stack, tape, world.n_stages() - 1, stack.adapters.size(),
                            matvec_transposed(world.embed_per, de), out.grads);
    }
    return out;
}

LossResult loss_tc(const ToyWorld& world, const AdapterStack& stack, const TrainCache& cache,
                   const UnlearnConfig& /*cfg*/) {
    if (!cache.valid)
        throw ConfigError("loss_tc: no cached trajectory; evaluate loss_forget first");
    LossResult out;
    out.grads = zero_stack_grads(stack);

    std::size_t idx = 0;
    const std::size_t stage = last_adapter_stage(stack, &idx);
    if (stage == static_cast<std::size_t>(-1)) return out;
    const GenTape& tape = cache.w_u_tape;
    if (stage >= tape.stage_post.size() || idx >= tape.flow_tapes.size() ||
        idx >= tape.flow_trajs.size())
        throw ConfigError("loss_tc: cached tape does not cover the adapter stage");
    const VectorFieldParams& p = stack.adapters[idx].params;

    const bool unrolled = tape.mode == GradientMode::unrolled;
    const std::vector<double>& times =
        unrolled ? tape.flow_tapes[idx].times : tape.flow_trajs[idx].times;
    const std::vector<Vector>& states =
        unrolled ? tape.flow_tapes[idx].states : tape.flow_trajs[idx].states;
    if (states.size() < 2) throw ConfigError("loss_tc: cached trajectory has no steps");
    const std::size_t n = states.size() - 1;

    std::vector<FieldEval> evals(n + 1);
    for (std::size_t k = 0; k <= n; ++k) evals[k] = field_eval(p, states[k], times[k]);

    // L = sum_k ||D_k||^2 with D_k = f_{k+1} - f_k; the cotangent at node j is
    // a_j = 2 (D_{j-1} - D_j), shared by the theta and state partials.
    std::vector<Vector> diffs(n);
    for (std::size_t k = 0; k < n; ++k) {
        Vector d = evals[k + 1].value;
        axpy(-1.0, evals[k].value, d);
        out.value += dot(d, d);
        diffs[k] = std::move(d);
    }

    std::vector<Vector> node_adj(n + 1);
    for (std::size_t j = 0; j <= n; ++j) {
        Vector a(p.dim(), 0.0);
        if (j > 0) axpy(2.0, diffs[j - 1], a);
        if (j < n) axpy(-2.0, diffs[j], a);
        out.grads[idx].add_scaled(vjp_params(p, evals[j], a), 1.0);
        node_adj[j] = std::move(a);
    }

    if (unrolled) {
        // the node states depend on theta through the euler recursion and on
        // the flow's initial state; both paths feed back through the tape
        std::vector<Vector> node_grads(n + 1);
        for (std::size_t j = 0; j <= n; ++j)
            node_grads[j] = vjp_state(p, evals[j], node_adj[j]);
        FlowGradient fg = unrolled_pullback(p, tape.flow_tapes[idx], Vector{}, &node_grads);
        out.grads[idx].add_scaled(fg.d_params, 1.0);
        backward_stages(world, stack, tape, stage, idx, std::move(fg.d_initial), out.grads);
    }
    return out;
}

TotalLoss total_loss(const ToyWorld& world, const AdapterStack& stack, const ForgetBatch& batch,
                     const UnlearnConfig& cfg) {
    TotalLoss out;
    out.grads = zero_stack_grads(stack);
    TrainCache cache;

    LossResult u = loss_forget(world, stack, batch, cfg, cache);
    out.l_u = u.value;
    add_scaled(out.grads, u.grads, cfg.lambda_u);

    LossResult tc = loss_tc(world, stack, cache, cfg);
    out.l_tc = tc.value;
    add_scaled(out.grads, tc.grads, cfg.lambda_tc);

    LossResult r = loss_retain(world, stack, batch, cfg);
    out.l_r = r.value;
    add_scaled(out.grads, r.grads, cfg.lambda_r);

    out.total = cfg.lambda_u * out.l_u + cfg.lambda_tc * out.l_tc + cfg.lambda_r * out.l_r;
    return out;
}

// --- discrete baseline -------------------------------------------------------

namespace {

struct DiscreteTape {
    std::vector<Vector> stage_post;
    std::vector<Vector> entry_in;  // input seen by each adapter entry
    std::vector<Vector> stage_out;
    Vector output;
};

DiscreteTape discrete_forward(const ToyWorld& world, const DiscreteAdapterStack& stack,
                              const Vector& w) {
    if (w.size() != world.cfg.latent_dim) throw ConfigError("forward: latent dim mismatch");
    DiscreteTape tape;
    tape.entry_in.resize(stack.adapters.size());
    Vector h = w;
    for (std::size_t s = 0; s < world.n_stages(); ++s) {
        const AffineStage& st = world.synth_stages[s];
        Vector v = matvec(st.w, h);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(v[i] + st.b[i]);
        tape.stage_post.push_back(v);
        for (std::size_t i = 0; i < stack.adapters.size(); ++i) {
            if (stack.adapters[i].stage_index != s) continue;
            tape.entry_in[i] = v;
            v = apply_discrete_adapter(stack.adapters[i], v);
        }
        h = std::move(v);
        tape.stage_out.push_back(h);
    }
    tape.output = h;
    return tape;
}

DiscreteGrads zero_discrete_grads(const DiscreteAdapterStack& stack) {
    DiscreteGrads g;
    for (const DiscreteAdapter& a : stack.adapters) {
        g.a.emplace_back(a.a.rows, a.a.cols);
        g.b.emplace_back(a.b.rows, a.b.cols);
    }
    return g;
}

// Reverse pass for x -> x + A (B x): dA = g (Bx)^T, dB = (A^T g) x^T,
// dx = g + B^T (A^T g).
Vector backward_discrete_stages(const ToyWorld& world, const DiscreteAdapterStack& stack,
                                const DiscreteTape& tape, Vector gh, DiscreteGrads& grads) {
    for (std::size_t s = tape.stage_post.size(); s-- > 0;) {
        for (std::size_t idx = stack.adapters.size(); idx-- > 0;) {
            const DiscreteAdapter& a = stack.adapters[idx];
            if (a.stage_index != s) continue;
            const Vector& v = tape.entry_in[idx];
            const Vector bv = matvec(a.b, v);
            const Vector atg = matvec_transposed(a.a, gh);
            for (std::size_t i = 0; i < a.a.rows; ++i)
                for (std::size_t j = 0; j < a.a.cols; ++j)
                    grads.a[idx].at(i, j) += gh[i] * bv[j];
            for (std::size_t i = 0; i < a.b.rows; ++i)
                for (std::size_t j = 0; j < a.b.cols; ++j)
                    grads.b[idx].at(i, j) += atg[i] * v[j];
            axpy(1.0, matvec_transposed(a.b, atg), gh);
        }
        const Vector& v = tape.stage_post[s];
        Vector gu(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) gu[i] = (1.0 - v[i] * v[i]) * gh[i];
        gh = matvec_transposed(world.synth_stages[s].w, gu);
    }
    return gh;
}

}  // namespace

DiscreteLossResult loss_forget_discrete(const ToyWorld& world, const DiscreteAdapterStack& stack,
                                        const ForgetBatch& batch, const UnlearnConfig& cfg) {
    DiscreteLossResult out;
    out.grads = zero_discrete_grads(stack);

    DiscreteTape tape = discrete_forward(world, stack, batch.w_u);
    const Vector x_t = generate(world, nullptr, batch.w_t);
    LocalLoss local = local_loss(world, tape.output, x_t, cfg);
    out.value = local.value;
    backward_discrete_stages(world, stack, tape, std::move(local.d_out), out.grads);

    if (!batch.adjacent_pairs.empty()) {
        const double inv = 1.0 / static_cast<double>(batch.adjacent_pairs.size());
        for (const auto& [w_u_a, w_t_a] : batch.adjacent_pairs) {
            DiscreteTape t = discrete_forward(world, stack, w_u_a);
            const Vector x_ta = generate(world, nullptr, w_t_a);
            LocalLoss l = local_loss(world, t.output, x_ta, cfg);
            out.value += inv * l.value;
            for (double& g : l.d_out) g *= inv;
            backward_discrete_stages(world, stack, t, std::move(l.d_out), out.grads);
        }
    }
    return out;
}

DiscreteLossResult loss_retain_discrete(const ToyWorld& world, const DiscreteAdapterStack& stack,
                                        const ForgetBatch& batch, const UnlearnConfig& /*cfg*/) {
    DiscreteLossResult out;
    out.grads = zero_discrete_grads(stack);
    if (batch.retain_latents.empty()) return out;

    const double inv = 1.0 / static_cast<double>(batch.retain_latents.size());
    for (const Vector& w_r : batch.retain_latents) {
        DiscreteTape tape = discrete_forward(world, stack, w_r);
        const Vector x_f = generate(world, nullptr, w_r);
        const Vector e_a = embed_perceptual(world, tape.output);
        const Vector e_f = embed_perceptual(world, x_f);
        out.value += inv * mse(e_a, e_f);

        Vector de(e_a.size());
        const double c = inv * 2.0 / static_cast<double>(e_a.size());
        for (std::size_t i = 0; i < e_a.size(); ++i) de[i] = c * (e_a[i] - e_f[i]);
        backward_discrete_stages(world, stack, tape, matvec_transposed(world.embed_per, de),
                                 out.grads);
    }
    return out;
}

// --- optimizer ---------------------------------------------------------------

AdamState make_adam_state(std::size_t n_params) {
    AdamState s;
    s.m = Vector(n_params, 0.0);
    s.v = Vector(n_params, 0.0);
    return s;
}

void adam_step(const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state, double lr) {
    if (params.size() != grads.size()) throw ConfigError("adam_step: block count mismatch");
    std::size_t total = 0;
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].size() != grads[b].size()) throw ConfigError("adam_step: block shape mismatch");
        total += params[b].size();
    }
    if (total != state.m.size()) throw ConfigError("adam_step: state size mismatch");

    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    std::size_t k = 0;
    for (std::size_t b = 0; b < params.size(); ++b) {
        for (std::size_t i = 0; i < params[b].size(); ++i, ++k) {
            const double g = grads[b][i];
            if (!std::isfinite(g))
                throw DivergenceError("adam_step: non-finite gradient", state.t);
            state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
            state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g;
            const double m_hat = state.m[k] / c1;
            const double v_hat = state.v[k] / c2;
            params[b][i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

// --- training loop -----------------------------------------------------------

UnlearnResult run_unlearning(const ToyWorld& world, const std::vector<Vector>& w_u_set,
                             const UnlearnConfig& cfg, const AdapterStack* initial,
                             std::size_t n_frozen) {
    cfg.validate();
    if (w_u_set.empty()) throw ConfigError("run_unlearning: no source latents");
    if (n_frozen > 0 && initial == nullptr)
        throw ConfigError("run_unlearning: n_frozen requires an initial stack");
    if (initial && n_frozen >= initial->adapters.size())
        throw ConfigError("run_unlearning: n_frozen leaves no trainable adapters");

    Rng init_rng(derive_seed(cfg.seed, 0));
    UnlearnResult out;
    out.stack = initial ? *initial : init_adapter_stack(world, init_rng, cfg.hidden, cfg.solver);

    const double d = cfg.d * world.w_scale;
    std::vector<Vector> targets;
    for (const Vector& w_u : w_u_set)
        targets.push_back(unidentify_target(w_u, world.w_bar, d));

    std::size_t n_trainable = 0;
    for (std::size_t i = n_frozen; i < out.stack.adapters.size(); ++i)
        n_trainable += out.stack.adapters[i].params.count();
    AdamState adam = make_adam_state(n_trainable);
    Rng batch_rng(derive_seed(cfg.seed, 1));

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        LossHistoryRow row{epoch, 0.0, 0.0, 0.0, 0.0};
        for (std::size_t s = 0; s < w_u_set.size(); ++s) {
            const ForgetBatch batch =
                sample_adjacency(batch_rng, world, w_u_set[s], targets[s], cfg);
            TotalLoss loss;
            try {
                loss = total_loss(world, out.stack, batch, cfg);
            } catch (const DivergenceError& e) {
                throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
            }

            std::vector<std::span<double>> params;
            std::vector<std::span<const double>> grads;
            for (std::size_t i = n_frozen; i < out.stack.adapters.size(); ++i) {
                for (auto b : out.stack.adapters[i].params.blocks()) params.push_back(b);
                for (auto b : static_cast<const VectorFieldParams&>(loss.grads[i]).blocks())
                    grads.push_back(b);
            }
            try {
                adam_step(params, grads, adam, cfg.learning_rate);
            } catch (const DivergenceError& e) {
                throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
            }

            row.l_u += loss.l_u;
            row.l_tc += loss.l_tc;
            row.l_r += loss.l_r;
            row.total += loss.total;
        }
        const double inv = 1.0 / static_cast<double>(w_u_set.size());
        row.l_u *= inv;
        row.l_tc *= inv;
        row.l_r *= inv;
        row.total *= inv;
        out.history.push_back(row);
    }
    return out;
}

DiscreteUnlearnResult run_unlearning_discrete(const ToyWorld& world,
                                              const std::vector<Vector>& w_u_set,
                                              const UnlearnConfig& cfg,
                                              const DiscreteAdapterStack* initial) {
    cfg.validate();
    if (w_u_set.empty()) throw ConfigError("run_unlearning: no source latents");

    Rng init_rng(derive_seed(cfg.seed, 0));
    DiscreteUnlearnResult out;
    out.stack = initial ? *initial : init_discrete_stack(world, init_rng, 4);

    const double d = cfg.d * world.w_scale;
    std::vector<Vector> targets;
    for (const Vector& w_u : w_u_set)
        targets.push_back(unidentify_target(w_u, world.w_bar, d));

    std::size_t n_params = 0;
    for (const DiscreteAdapter& a : out.stack.adapters)
        n_params += a.a.data.size() + a.b.data.size();
    AdamState adam = make_adam_state(n_params);
    Rng batch_rng(derive_seed(cfg.seed, 1));

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        LossHistoryRow row{epoch, 0.0, 0.0, 0.0, 0.0};
        for (std::size_t s = 0; s < w_u_set.size(); ++s) {
            const ForgetBatch batch =
                sample_adjacency(batch_rng, world, w_u_set[s], targets[s], cfg);
            const DiscreteLossResult u = loss_forget_discrete(world, out.stack, batch, cfg);
            const DiscreteLossResult r = loss_retain_discrete(world, out.stack, batch, cfg);

            std::vector<std::span<double>> params;
            std::vector<std::span<const double>> grads;
            std::vector<Vector> scaled;  // keep alive until the step
            scaled.reserve(out.stack.adapters.size() * 2);
            for (std::size_t i = 0; i < out.stack.adapters.size(); ++i) {
                DiscreteAdapter& a = out.stack.adapters[i];
                params.emplace_back(a.a.data);
                params.emplace_back(a.b.data);
                Vector ga(u.grads.a[i].data.size());
                for (std::size_t k = 0; k < ga.size(); ++k)
                    ga[k] = cfg.lambda_u * u.grads.a[i].data[k] + cfg.lambda_r * r.grads.a[i].data[k];
                Vector gb(u.grads.b[i].data.size());
                for (std::size_t k = 0; k < gb.size(); ++k)
                    gb[k] = cfg.lambda_u * u.grads.b[i].data[k] + cfg.lambda_r * r.grads.b[i].data[k];
                scaled.push_back(std::move(ga));
                scaled.push_back(std::move(gb));
            }
            for (const Vector& g : scaled) grads.emplace_back(g);
            try {
                adam_step(params, grads, adam, cfg.learning_rate);
            } catch (const DivergenceError& e) {
                throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
            }

            row.l_u += u.value;
            row.l_r += r.value;
            row.total += cfg.lambda_u * u.value + cfg.lambda_r * r.value;
        }
        const double inv = 1.0 / static_cast<double>(w_u_set.size());
        row.l_u *= inv;
        row.l_r *= inv;
        row.total *= inv;
        out.history.push_back(row);
    }
    return out;
}

}  // namespace flowforget
