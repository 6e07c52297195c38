#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "flowforget/numkit.hpp"
#include "flowforget/vecfield.hpp"

namespace flowforget {

enum class SolverMethod { euler, midpoint, rk4 };

/// Throws ConfigError on anything but "euler", "midpoint", "rk4".
SolverMethod parse_solver(const std::string& name);
std::string solver_name(SolverMethod m);

/// Fixed-step explicit integration plan. Horizon T = steps * step_size.
struct SolverSpec {
    SolverMethod method = SolverMethod::euler;
    std::size_t steps = 4;
    double step_size = 0.4;

    double horizon() const { return static_cast<double>(steps) * step_size; }
};

/// Discretized solution path: states[k] = h(times[k]), k = 0..N.
struct Trajectory {
    std::vector<double> times;
    std::vector<Vector> states;
};

/// Gradient of a scalar loss through the flow map.
struct FlowGradient {
    VectorFieldParams d_params;
    Vector d_initial;  // dL/dz(t0)
};

Vector euler_step(const Vector& h, double t, const VectorFieldParams& p, double dt);
Vector midpoint_step(const Vector& h, double t, const VectorFieldParams& p, double dt);
Vector rk4_step(const Vector& h, double t, const VectorFieldParams& p, double dt);

/// Callable-field overloads: same steppers over an arbitrary right-hand side
/// (closed-form fields in the solver-order checks, dynamics the tanh network
/// cannot represent exactly).
using FieldFn = std::function<Vector(const Vector&, double)>;

Vector euler_step(const Vector& h, double t, const FieldFn& f, double dt);
Vector midpoint_step(const Vector& h, double t, const FieldFn& f, double dt);
Vector rk4_step(const Vector& h, double t, const FieldFn& f, double dt);
Trajectory integrate(const Vector& z0, const FieldFn& f, const SolverSpec& spec, double t0 = 0.0);

/// Runs the solver for spec.steps steps from t0. Throws DivergenceError
/// (with the offending step index) if any state turns non-finite.
Trajectory integrate(const Vector& z0, const VectorFieldParams& p, const SolverSpec& spec,
                     double t0 = 0.0);

/// Final state only.
Vector integrate_final(const Vector& z0, const VectorFieldParams& p, const SolverSpec& spec,
                       double t0 = 0.0);

/// Adjoint sensitivity pass: integrates the augmented system (z, a, dL/dtheta)
/// backward from T to t0 on the forward step grid with the same solver.
/// a(T) = dL_dzT and da/dt = -a^T df/dz; the parameter gradient accumulates
/// the integral of a^T df/dtheta over [t0, T].
FlowGradient adjoint_gradient(const Vector& z0, const VectorFieldParams& p,
                              const SolverSpec& spec, const Vector& dL_dzT, double t0 = 0.0);

/// Exact reverse-mode differentiation of the unrolled Euler recursion.
/// Euler only; other methods throw ConfigError.
FlowGradient unrolled_gradient(const Vector& z0, const VectorFieldParams& p,
                               const SolverSpec& spec, const Vector& dL_dzT, double t0 = 0.0);

/// Euler forward pass with cached node evaluations, for reverse passes that
/// also inject loss terms at interior nodes (the trajectory-consistency
/// penalty differentiates through every h(t_k)).
struct FlowTape {
    SolverSpec spec;
    std::vector<double> times;     // N+1
    std::vector<Vector> states;    // N+1
    std::vector<FieldEval> evals;  // N, eval at (states[k], times[k])
};

FlowTape euler_forward_tape(const Vector& z0, const VectorFieldParams& p, const SolverSpec& spec,
                            double t0 = 0.0);

/// Reverse pass over a tape. dL_dzT seeds the final state; node_grads, when
/// given, holds N+1 extra adjoint injections dL/dh(t_k) added at each node
/// (entries may be empty vectors meaning zero).
FlowGradient unrolled_pullback(const VectorFieldParams& p, const FlowTape& tape,
                               const Vector& dL_dzT,
                               const std::vector<Vector>* node_grads = nullptr);

}  // namespace flowforget
