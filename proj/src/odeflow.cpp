#include "flowforget/odeflow.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "flowforget/errors.hpp"

namespace flowforget {

SolverMethod parse_solver(const std::string& name) {
    if (name == "euler") return SolverMethod::euler;
    if (name == "midpoint") return SolverMethod::midpoint;
    if (name == "rk4") return SolverMethod::rk4;
    throw ConfigError("unknown solver: " + name + " (want euler|midpoint|rk4)");
}

std::string solver_name(SolverMethod m) {
    switch (m) {
        case SolverMethod::euler: return "euler";
        case SolverMethod::midpoint: return "midpoint";
        case SolverMethod::rk4: return "rk4";
    }
    return "euler";
}

namespace {

void validate_spec(const SolverSpec& spec) {
    if (spec.steps < 1) throw ConfigError("steps: must be >= 1");
    if (!(spec.step_size > 0.0)) throw ConfigError("step_size: must be > 0");
}

// Generic explicit stepping over any state S supporting scale_add(alpha, src,
// dst). The derivative callback f(x, t) may be the plain field or the
// augmented adjoint system; dt may be negative (backward pass).
void scale_add(double alpha, const Vector& x, Vector& y) { axpy(alpha, x, y); }

struct AugState {
    Vector z;             // solution, re-integrated backward
    Vector a;             // adjoint dL/dz(t)
    VectorFieldParams g;  // accumulated dL/dtheta
};

void scale_add(double alpha, const AugState& x, AugState& y) {
    axpy(alpha, x.z, y.z);
    axpy(alpha, x.a, y.a);
    y.g.add_scaled(x.g, alpha);
}

template <class S, class F>
S generic_step(SolverMethod m, const F& f, const S& x, double t, double dt) {
    switch (m) {
        case SolverMethod::euler: {
            S out = x;
            scale_add(dt, f(x, t), out);
            return out;
        }
        case SolverMethod::midpoint: {
            S mid = x;
            scale_add(0.5 * dt, f(x, t), mid);
            S out = x;
            scale_add(dt, f(mid, t + 0.5 * dt), out);
            return out;
        }
        case SolverMethod::rk4: {
            const S k1 = f(x, t);
            S x2 = x;
            scale_add(0.5 * dt, k1, x2);
            const S k2 = f(x2, t + 0.5 * dt);
            S x3 = x;
            scale_add(0.5 * dt, k2, x3);
            const S k3 = f(x3, t + 0.5 * dt);
            S x4 = x;
            scale_add(dt, k3, x4);
            const S k4 = f(x4, t + dt);
            S out = x;
            scale_add(dt / 6.0, k1, out);
            scale_add(dt / 3.0, k2, out);
            scale_add(dt / 3.0, k3, out);
            scale_add(dt / 6.0, k4, out);
            return out;
        }
    }
    throw ConfigError("unreachable solver method");
}

}  // namespace

Vector euler_step(const Vector& h, double t, const VectorFieldParams& p, double dt) {
    Vector out = h;
    axpy(dt, field_value(p, h, t), out);
    return out;
}

Vector midpoint_step(const Vector& h, double t, const VectorFieldParams& p, double dt) {
    auto f = [&p](const Vector& x, double s) { return field_value(p, x, s); };
    return generic_step(SolverMethod::midpoint, f, h, t, dt);
}

Vector rk4_step(const Vector& h, double t, const VectorFieldParams& p, double dt) {
    auto f = [&p](const Vector& x, double s) { return field_value(p, x, s); };
    return generic_step(SolverMethod::rk4, f, h, t, dt);
}

Vector euler_step(const Vector& h, double t, const FieldFn& f, double dt) {
    return generic_step(SolverMethod::euler, f, h, t, dt);
}

Vector midpoint_step(const Vector& h, double t, const FieldFn& f, double dt) {
    return generic_step(SolverMethod::midpoint, f, h, t, dt);
}

Vector rk4_step(const Vector& h, double t, const FieldFn& f, double dt) {
    return generic_step(SolverMethod::rk4, f, h, t, dt);
}

Trajectory integrate(const Vector& z0, const FieldFn& f, const SolverSpec& spec, double t0) {
    validate_spec(spec);
    if (!all_finite(z0)) throw DivergenceError("non-finite initial state", 0);
    Trajectory traj;
    traj.times.push_back(t0);
    traj.states.push_back(z0);
    Vector h = z0;
    for (std::size_t k = 0; k < spec.steps; ++k) {
        const double t = t0 + static_cast<double>(k) * spec.step_size;
        h = generic_step(spec.method, f, h, t, spec.step_size);
        if (!all_finite(h)) {
            throw DivergenceError("non-finite state at step " + std::to_string(k + 1), k + 1);
        }
        traj.times.push_back(t0 + static_cast<double>(k + 1) * spec.step_size);
        traj.states.push_back(h);
    }
    return traj;
}

Trajectory integrate(const Vector& z0, const VectorFieldParams& p, const SolverSpec& spec,
                     double t0) {
    return integrate(
        z0, [&p](const Vector& x, double s) { return field_value(p, x, s); }, spec, t0);
}

Vector integrate_final(const Vector& z0, const VectorFieldParams& p, const SolverSpec& spec,
                       double t0) {
    return integrate(z0, p, spec, t0).states.back();
}

FlowGradient adjoint_gradient(const Vector& z0, const VectorFieldParams& p,
                              const SolverSpec& spec, const Vector& dL_dzT, double t0) {
    validate_spec(spec);
    if (dL_dzT.size() != z0.size()) {
        throw ConfigError("adjoint_gradient: dL_dzT dimension mismatch");
    }
    AugState s;
    s.z = integrate_final(z0, p, spec, t0);
    s.a = dL_dzT;
    s.g = VectorFieldParams::zeros_like(p);

    // Forward-time derivatives of the augmented system; stepping with -dt
    // yields a(t0) and G(t0) = integral over [t0, T] of a^T df/dtheta.
    auto aug_f = [&p](const AugState& x, double t) {
        FieldEval e = field_eval(p, x.z, t);
        AugState d;
        d.z = e.value;
        d.a = vjp_state(p, e, x.a);
        for (auto& y : d.a) y = -y;
        d.g = vjp_params(p, e, x.a);
        for (auto bl : d.g.blocks()) {
            for (auto& y : bl) y = -y;
        }
        return d;
    };

    for (std::size_t k = spec.steps; k > 0; --k) {
        const double t = t0 + static_cast<double>(k) * spec.step_size;
        s = generic_step(spec.method, aug_f, s, t, -spec.step_size);
        if (!all_finite(s.z) || !all_finite(s.a)) {
            throw DivergenceError("non-finite adjoint state at step " + std::to_string(k), k);
        }
    }
    return {std::move(s.g), std::move(s.a)};
}

FlowTape euler_forward_tape(const Vector& z0, const VectorFieldParams& p, const SolverSpec& spec,
                            double t0) {
    validate_spec(spec);
    if (spec.method != SolverMethod::euler) {
        throw ConfigError("unrolled gradients require the euler solver");
    }
    FlowTape tape;
    tape.spec = spec;
    tape.times.reserve(spec.steps + 1);
    tape.states.reserve(spec.steps + 1);
    tape.evals.reserve(spec.steps);
    tape.times.push_back(t0);
    tape.states.push_back(z0);
    Vector h = z0;
    for (std::size_t k = 0; k < spec.steps; ++k) {
        const double t = t0 + static_cast<double>(k) * spec.step_size;
        FieldEval e = field_eval(p, h, t);
        axpy(spec.step_size, e.value, h);
        if (!all_finite(h)) {
            throw DivergenceError("non-finite state at step " + std::to_string(k + 1), k + 1);
        }
        tape.evals.push_back(std::move(e));
        tape.times.push_back(t0 + static_cast<double>(k + 1) * spec.step_size);
        tape.states.push_back(h);
    }
    return tape;
}

FlowGradient unrolled_pullback(const VectorFieldParams& p, const FlowTape& tape,
                               const Vector& dL_dzT, const std::vector<Vector>* node_grads) {
    const std::size_t n = tape.evals.size();
    const std::size_t dim = p.dim();
    if (node_grads && node_grads->size() != n + 1) {
        throw ConfigError("unrolled_pullback: node_grads must have steps+1 entries");
    }
    Vector a = dL_dzT.empty() ? zeros(dim) : dL_dzT;
    if (a.size() != dim) throw ConfigError("unrolled_pullback: dL_dzT dimension mismatch");
    VectorFieldParams g = VectorFieldParams::zeros_like(p);
    auto inject = [&](std::size_t k) {
        if (!node_grads) return;
        const Vector& extra = (*node_grads)[k];
        if (!extra.empty()) axpy(1.0, extra, a);
    };
    inject(n);
    const double dt = tape.spec.step_size;
    for (std::size_t k = n; k > 0; --k) {
        const FieldEval& e = tape.evals[k - 1];
        Vector da = vjp_state(p, e, a);
        g.add_scaled(vjp_params(p, e, a), dt);
        axpy(dt, da, a);
        inject(k - 1);
    }
    return {std::move(g), std::move(a)};
}

FlowGradient unrolled_gradient(const Vector& z0, const VectorFieldParams& p,
                               const SolverSpec& spec, const Vector& dL_dzT, double t0) {
    FlowTape tape = euler_forward_tape(z0, p, spec, t0);
    return unrolled_pullback(p, tape, dL_dzT, nullptr);
}

}  // namespace flowforget
