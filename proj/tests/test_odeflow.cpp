#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "flowforget/errors.hpp"
#include "flowforget/odeflow.hpp"
#include "flowforget/vecfield.hpp"

using namespace flowforget;

namespace {

const FieldFn linear = [](const Vector& h, double) { return h; };

// L-inf relative agreement between two gradients, flattened across blocks.
double grad_rel_err(const VectorFieldParams& a, const VectorFieldParams& b) {
    double max_diff = 0.0, max_ref = 0.0;
    const auto ab = a.blocks();
    const auto bb = b.blocks();
    for (std::size_t bi = 0; bi < ab.size(); ++bi) {
        for (std::size_t i = 0; i < ab[bi].size(); ++i) {
            max_diff = std::max(max_diff, std::abs(ab[bi][i] - bb[bi][i]));
            max_ref = std::max(max_ref, std::abs(bb[bi][i]));
        }
    }
    return max_diff / (max_ref + 1e-12);
}

double vec_rel_err(const Vector& a, const Vector& b) {
    double max_diff = 0.0, max_ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
        max_ref = std::max(max_ref, std::abs(b[i]));
    }
    return max_diff / (max_ref + 1e-12);
}

// Central finite differences of loss(params) over every parameter slot.
template <class Loss>
VectorFieldParams fd_param_grad(const VectorFieldParams& p, const Loss& loss, double eps) {
    VectorFieldParams g = VectorFieldParams::zeros_like(p);
    auto pb = [](VectorFieldParams& q) { return q.blocks(); };
    VectorFieldParams q = p;
    auto qblocks = pb(q);
    auto gblocks = pb(g);
    for (std::size_t bi = 0; bi < qblocks.size(); ++bi) {
        for (std::size_t i = 0; i < qblocks[bi].size(); ++i) {
            const double saved = qblocks[bi][i];
            qblocks[bi][i] = saved + eps;
            const double up = loss(q);
            qblocks[bi][i] = saved - eps;
            const double dn = loss(q);
            qblocks[bi][i] = saved;
            gblocks[bi][i] = (up - dn) / (2 * eps);
        }
    }
    return g;
}

}  // namespace

TEST_CASE("single steps on hand fields") {
    // constant field via params: w1 = 0 so tanh(b1=0) = 0, f = b2
    VectorFieldParams c;
    c.w1 = Matrix(1, 3);
    c.b1 = {0.0};
    c.w2 = Matrix(2, 1);
    c.b2 = {2.0, -1.0};
    const Vector out = euler_step(Vector{1.0, 1.0}, 0.0, c, 0.5);
    CHECK(out[0] == 2.0);
    CHECK(out[1] == 0.5);

    Rng rng(1);
    const VectorFieldParams z = init_adapter_params(rng, 2, 4);
    const Vector same = euler_step(Vector{3.0, -2.0}, 0.3, z, 0.7);
    CHECK(same[0] == 3.0);
    CHECK(same[1] == -2.0);

    // f = h, h = 1, dt = 0.4
    CHECK(euler_step(Vector{1.0}, 0.0, linear, 0.4)[0] == doctest::Approx(1.4).epsilon(1e-15));
    // midpoint: 1 + 0.1 + 0.1^2/2
    CHECK(midpoint_step(Vector{1.0}, 0.0, linear, 0.1)[0] ==
          doctest::Approx(1.105).epsilon(1e-15));
    // rk4 vs e^0.1
    CHECK(std::abs(rk4_step(Vector{1.0}, 0.0, linear, 0.1)[0] - std::exp(0.1)) < 1e-7);
}

TEST_CASE("integration hand values on f = h") {
    SolverSpec eu{SolverMethod::euler, 4, 0.4};
    const Trajectory traj = integrate(Vector{1.0}, linear, eu);
    CHECK(traj.states.size() == 5);
    CHECK(traj.times.size() == 5);
    CHECK(traj.states[0][0] == 1.0);
    CHECK(traj.times[4] == doctest::Approx(1.6).epsilon(1e-15));
    CHECK(traj.states[4][0] == doctest::Approx(3.8416).epsilon(1e-14));  // 1.4^4

    SolverSpec rk{SolverMethod::rk4, 16, 0.1};
    const double zT = integrate(Vector{1.0}, linear, rk).states.back()[0];
    // frozen oracle value of the 16-step rk4 recursion; its true distance to
    // e^1.6 is 6.08e-6, so the closed form is matched at 1e-5
    CHECK(zT == doctest::Approx(4.9530263477793408).epsilon(1e-14));
    CHECK(std::abs(zT - std::exp(1.6)) < 1e-5);
}

TEST_CASE("time argument handling inside multi-stage steps") {
    // f(h, t) = t exercises the interior time points of each scheme
    const FieldFn ft = [](const Vector& h, double t) { return Vector(h.size(), t); };
    SolverSpec eu{SolverMethod::euler, 2, 0.5};
    CHECK(integrate(Vector{0.0}, ft, eu).states.back()[0] ==
          doctest::Approx(0.25).epsilon(1e-15));
    // midpoint and rk4 integrate f = t exactly: z(1) = 0.5
    SolverSpec mp{SolverMethod::midpoint, 1, 1.0};
    CHECK(integrate(Vector{0.0}, ft, mp).states.back()[0] ==
          doctest::Approx(0.5).epsilon(1e-15));
    SolverSpec rk{SolverMethod::rk4, 1, 1.0};
    CHECK(integrate(Vector{0.0}, ft, rk).states.back()[0] ==
          doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("solver global-error orders on f = h") {
    auto err_at = [&](SolverMethod m, double dt) {
        SolverSpec spec{m, static_cast<std::size_t>(std::lround(1.0 / dt)), dt};
        return std::abs(integrate(Vector{1.0}, linear, spec).states.back()[0] - std::exp(1.0));
    };
    const double expected[] = {2.0, 4.0, 16.0};
    const SolverMethod methods[] = {SolverMethod::euler, SolverMethod::midpoint,
                                    SolverMethod::rk4};
    for (int i = 0; i < 3; ++i) {
        const double e1 = err_at(methods[i], 0.1);
        const double e2 = err_at(methods[i], 0.05);
        const double ratio = e1 / e2;
        CHECK(ratio > expected[i] * 0.8);
        CHECK(ratio < expected[i] * 1.2);
    }
}

TEST_CASE("identity at init, bitwise, all solvers") {
    Rng rng(7);
    const VectorFieldParams p = init_adapter_params(rng, 5, 9);
    Rng draws(8);
    for (SolverMethod m : {SolverMethod::euler, SolverMethod::midpoint, SolverMethod::rk4}) {
        SolverSpec spec{m, 6, 0.3};
        for (int i = 0; i < 20; ++i) {
            const Vector z0 = sample_gaussian(draws, 5, 0.0, 2.0);
            const Vector zT = integrate_final(z0, p, spec);
            CHECK(zT == z0);
        }
    }
}

TEST_CASE("divergence raises with a step index") {
    VectorFieldParams boom;
    boom.w1 = Matrix(1, 2);
    boom.b1 = {0.0};
    boom.w2 = Matrix(1, 1);
    boom.b2 = {1e308};
    SolverSpec spec{SolverMethod::euler, 10, 1.0};
    CHECK_THROWS_AS(integrate(Vector{0.0}, boom, spec), DivergenceError);
    try {
        integrate(Vector{0.0}, boom, spec);
    } catch (const DivergenceError& e) {
        CHECK(e.step_index >= 1);
        CHECK(e.step_index <= 10);
    }
}

TEST_CASE("spec validation") {
    Rng rng(2);
    const VectorFieldParams p = init_adapter_params(rng, 2, 2);
    CHECK_THROWS_AS(integrate(Vector{0.0, 0.0}, p, SolverSpec{SolverMethod::euler, 0, 0.4}),
                    ConfigError);
    CHECK_THROWS_AS(integrate(Vector{0.0, 0.0}, p, SolverSpec{SolverMethod::euler, 4, 0.0}),
                    ConfigError);
    CHECK_THROWS_AS(parse_solver("heun"), ConfigError);
    CHECK(parse_solver("rk4") == SolverMethod::rk4);
    CHECK(solver_name(SolverMethod::midpoint) == "midpoint");
    CHECK_THROWS_AS(
        unrolled_gradient(Vector{0.0, 0.0}, p, SolverSpec{SolverMethod::rk4, 4, 0.1},
                          Vector{1.0, 0.0}),
        ConfigError);
}

TEST_CASE("zero-field adjoint golden, all solvers") {
    Rng rng(3);
    const VectorFieldParams p = init_adapter_params(rng, 3, 5);  // w2 = 0: zero field
    const Vector z0{0.4, -0.2, 1.1};
    const Vector a{1.0, -2.0, 0.5};
    for (SolverMethod m : {SolverMethod::euler, SolverMethod::midpoint, SolverMethod::rk4}) {
        SolverSpec spec{m, 4, 0.4};  // T = 1.6
        const FlowGradient g = adjoint_gradient(z0, p, spec, a);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(g.d_initial[i] == a[i]);  // identity flow leaves the adjoint alone
            // b2 collects the integral of the constant adjoint: T * a
            CHECK(g.d_params.b2[i] == doctest::Approx(1.6 * a[i]).epsilon(1e-12));
        }
        // w1/b1 gradients vanish exactly through the zero output layer
        for (double x : g.d_params.w1.data) CHECK(x == 0.0);
        for (double x : g.d_params.b1) CHECK(x == 0.0);
        // w2 sees the accumulated outer products a * post^T: nonzero
        double w2_norm = 0.0;
        for (double x : g.d_params.w2.data) w2_norm += std::abs(x);
        CHECK(w2_norm > 0.0);
    }
}

TEST_CASE("unrolled gradient matches finite differences (ground truth)") {
    Rng rng(11);
    double worst_param = 0.0, worst_input = 0.0;
    for (int inst = 0; inst < 10; ++inst) {
        const std::size_t dim = 2 + inst % 3;
        const VectorFieldParams p = random_field_params(rng, dim, 6, 0.5);
        const Vector z0 = sample_gaussian(rng, dim, 0.0, 1.0);
        const Vector gL = sample_gaussian(rng, dim, 0.0, 1.0);
        SolverSpec spec{SolverMethod::euler, 8, 0.2};

        const FlowGradient got = unrolled_gradient(z0, p, spec, gL);
        auto loss = [&](const VectorFieldParams& q) {
            return dot(gL, integrate_final(z0, q, spec));
        };
        const VectorFieldParams fd = fd_param_grad(p, loss, 1e-5);
        worst_param = std::max(worst_param, grad_rel_err(got.d_params, fd));

        Vector fd_z0(dim, 0.0);
        for (std::size_t j = 0; j < dim; ++j) {
            Vector zp = z0, zm = z0;
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            fd_z0[j] = (dot(gL, integrate_final(zp, p, spec)) -
                        dot(gL, integrate_final(zm, p, spec))) /
                       2e-6;
        }
        worst_input = std::max(worst_input, vec_rel_err(got.d_initial, fd_z0));
    }
    CHECK(worst_param < 1e-5);
    CHECK(worst_input < 1e-5);
}

TEST_CASE("unrolled N = 1 reduces to the single-step chain rule") {
    Rng rng(13);
    const VectorFieldParams p = random_field_params(rng, 3, 4, 0.8);
    const Vector z0 = sample_gaussian(rng, 3, 0.0, 1.0);
    const Vector a = sample_gaussian(rng, 3, 0.0, 1.0);
    SolverSpec spec{SolverMethod::euler, 1, 0.4};
    const FlowGradient g = unrolled_gradient(z0, p, spec, a);

    const FieldEval e = field_eval(p, z0, 0.0);
    const VectorFieldParams direct_p = vjp_params(p, e, a);
    Vector direct_z = a;
    axpy(0.4, vjp_state(p, e, a), direct_z);
    VectorFieldParams scaled = VectorFieldParams::zeros_like(p);
    scaled.add_scaled(direct_p, 0.4);
    CHECK(grad_rel_err(g.d_params, scaled) < 1e-14);
    CHECK(vec_rel_err(g.d_initial, direct_z) < 1e-14);
}

TEST_CASE("zero field leaves the seed gradient untouched") {
    Rng rng(17);
    const VectorFieldParams p = init_adapter_params(rng, 4, 4);
    SolverSpec spec{SolverMethod::euler, 6, 0.25};
    const Vector e1{1.0, 0.0, 0.0, 0.0};
    const FlowGradient g = unrolled_gradient(Vector{0.1, 0.2, 0.3, 0.4}, p, spec, e1);
    CHECK(g.d_initial == e1);
}

TEST_CASE("adjoint converges to unrolled as the grid refines") {
    // The production pairing: adjoint runs under non-euler solvers, unrolled
    // under euler. Matched grids, rk4 backward (whose own gradient error is
    // ~2e-4 here), so the gap measured is the discretization distance that
    // should halve as N doubles.
    Rng rng(19);
    const VectorFieldParams p = random_field_params(rng, 8, 8, 0.2);
    const Vector z0 = sample_gaussian(rng, 8, 0.0, 1.0);
    const Vector gL = sample_gaussian(rng, 8, 0.0, 1.0);
    const double T = 1.6;

    std::vector<double> errs;
    for (std::size_t n : {4, 8, 16, 32, 64}) {
        const double dt = T / static_cast<double>(n);
        const FlowGradient unr = unrolled_gradient(z0, p, {SolverMethod::euler, n, dt}, gL);
        const FlowGradient adj = adjoint_gradient(z0, p, {SolverMethod::rk4, n, dt}, gL);
        errs.push_back(std::max(grad_rel_err(adj.d_params, unr.d_params),
                                vec_rel_err(adj.d_initial, unr.d_initial)));
    }
    for (std::size_t i = 1; i < errs.size(); ++i) CHECK(errs[i] < errs[i - 1] * 1.2);
    CHECK(errs.back() < errs.front());
    CHECK(errs.back() < 1e-2);

    // Same-solver variant (euler backward): two first-order errors stack, so
    // only the halving trend is asserted.
    std::vector<double> errs_e;
    for (std::size_t n : {4, 8, 16, 32, 64}) {
        const double dt = T / static_cast<double>(n);
        const FlowGradient unr = unrolled_gradient(z0, p, {SolverMethod::euler, n, dt}, gL);
        const FlowGradient adj = adjoint_gradient(z0, p, {SolverMethod::euler, n, dt}, gL);
        errs_e.push_back(grad_rel_err(adj.d_params, unr.d_params));
    }
    for (std::size_t i = 1; i < errs_e.size(); ++i) CHECK(errs_e[i] < errs_e[i - 1] * 0.75);
}

TEST_CASE("adjoint with rk4 approximates the discrete gradient on fine grids") {
    Rng rng(23);
    const VectorFieldParams p = random_field_params(rng, 3, 5, 0.4);
    const Vector z0 = sample_gaussian(rng, 3, 0.0, 1.0);
    const Vector gL = sample_gaussian(rng, 3, 0.0, 1.0);
    SolverSpec spec{SolverMethod::rk4, 50, 0.02};
    const FlowGradient adj = adjoint_gradient(z0, p, spec, gL);
    auto loss = [&](const VectorFieldParams& q) {
        return dot(gL, integrate_final(z0, q, spec));
    };
    const VectorFieldParams fd = fd_param_grad(p, loss, 1e-5);
    CHECK(grad_rel_err(adj.d_params, fd) < 1e-3);
}

TEST_CASE("node-gradient injections differentiate whole-trajectory losses") {
    Rng rng(29);
    const VectorFieldParams p = random_field_params(rng, 3, 5, 0.5);
    const Vector z0 = sample_gaussian(rng, 3, 0.0, 1.0);
    SolverSpec spec{SolverMethod::euler, 5, 0.3};

    // loss = sum_k c_k . h_k over all nodes
    std::vector<Vector> cs;
    for (int k = 0; k <= 5; ++k) cs.push_back(sample_gaussian(rng, 3, 0.0, 1.0));
    auto loss = [&](const VectorFieldParams& q) {
        const Trajectory traj = integrate(z0, q, spec);
        double acc = 0.0;
        for (std::size_t k = 0; k < traj.states.size(); ++k) acc += dot(cs[k], traj.states[k]);
        return acc;
    };

    const FlowTape tape = euler_forward_tape(z0, p, spec);
    const FlowGradient got = unrolled_pullback(p, tape, Vector{}, &cs);
    const VectorFieldParams fd = fd_param_grad(p, loss, 1e-5);
    CHECK(grad_rel_err(got.d_params, fd) < 1e-5);

    Vector fd_z0(3, 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
        VectorFieldParams q = p;
        Vector zp = z0, zm = z0;
        zp[j] += 1e-6;
        zm[j] -= 1e-6;
        auto at = [&](const Vector& z) {
            const Trajectory traj = integrate(z, q, spec);
            double acc = 0.0;
            for (std::size_t k = 0; k < traj.states.size(); ++k)
                acc += dot(cs[k], traj.states[k]);
            return acc;
        };
        fd_z0[j] = (at(zp) - at(zm)) / 2e-6;
    }
    CHECK(vec_rel_err(got.d_initial, fd_z0) < 1e-5);
}

TEST_CASE("gronwall forward bound and reverse non-crossing on fine rk4 grids") {
    Rng rng(31);
    for (int field = 0; field < 10; ++field) {
        VectorFieldParams p = random_field_params(rng, 3, 6, 0.5);
        // normalize the bound so Lhat * T = 1.5
        const double lhat = lipschitz_upper_bound(p);
        REQUIRE(lhat > 0.0);
        for (auto& x : p.w2.data) x *= 1.5 / lhat;
        const double L = lipschitz_upper_bound(p);
        SolverSpec spec{SolverMethod::rk4, 100, 0.01};  // T = 1

        for (int pair = 0; pair < 10; ++pair) {
            const Vector x0 = sample_gaussian(rng, 3, 0.0, 1.0);
            Vector x1 = x0;
            axpy(0.3, sample_gaussian(rng, 3, 0.0, 1.0), x1);
            const double d0 = l2_dist(x0, x1);
            if (d0 < 1e-9) continue;
            const Trajectory ta = integrate(x0, p, spec);
            const Trajectory tb = integrate(x1, p, spec);
            const double dT = l2_dist(ta.states.back(), tb.states.back());
            CHECK(dT <= 1.05 * std::exp(L * 1.0) * d0);
            for (std::size_t k = 0; k < ta.states.size(); ++k) {
                const double dk = l2_dist(ta.states[k], tb.states[k]);
                CHECK(dk >= 0.95 * std::exp(-L * ta.times[k]) * d0);
            }
        }
    }
}
