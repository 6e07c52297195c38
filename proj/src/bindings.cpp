#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flowforget/errors.hpp"
#include "flowforget/experiments.hpp"
#include "flowforget/metrics.hpp"
#include "flowforget/odeflow.hpp"
#include "flowforget/toygen.hpp"
#include "flowforget/unlearning.hpp"

namespace py = pybind11;
using namespace flowforget;

PYBIND11_MODULE(_flowforget, m) {
    m.doc() = "continuous-flow identity unlearning core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

    py::enum_<SolverMethod>(m, "SolverMethod")
        .value("euler", SolverMethod::euler)
        .value("midpoint", SolverMethod::midpoint)
        .value("rk4", SolverMethod::rk4);

    py::enum_<GradientMode>(m, "GradientMode")
        .value("automatic", GradientMode::automatic)
        .value("unrolled", GradientMode::unrolled)
        .value("adjoint", GradientMode::adjoint);

    py::class_<Rng>(m, "Rng").def(py::init<std::uint64_t>(), py::arg("seed"));

    py::class_<SolverSpec>(m, "SolverSpec")
        .def(py::init<>())
        .def_readwrite("method", &SolverSpec::method)
        .def_readwrite("steps", &SolverSpec::steps)
        .def_readwrite("step_size", &SolverSpec::step_size)
        .def("horizon", &SolverSpec::horizon);

    py::class_<WorldConfig>(m, "WorldConfig")
        .def(py::init<>())
        .def_readwrite("seed", &WorldConfig::seed)
        .def_readwrite("k", &WorldConfig::k)
        .def_readwrite("latent_dim", &WorldConfig::latent_dim)
        .def_readwrite("obs_dim", &WorldConfig::obs_dim)
        .def_readwrite("cluster_std", &WorldConfig::cluster_std)
        .def_readwrite("n_stages", &WorldConfig::n_stages)
        .def_readwrite("embed_dim", &WorldConfig::embed_dim);

    py::class_<ToyWorld>(m, "ToyWorld")
        .def_readonly("cfg", &ToyWorld::cfg)
        .def_readonly("w_bar", &ToyWorld::w_bar)
        .def_readonly("w_scale", &ToyWorld::w_scale)
        .def_readonly("identity_centers", &ToyWorld::identity_centers)
        .def("checksum", &world_checksum);

    py::class_<VectorFieldParams>(m, "VectorFieldParams")
        .def("dim", &VectorFieldParams::dim)
        .def("hidden", &VectorFieldParams::hidden)
        .def("count", &VectorFieldParams::count);

    py::class_<AdapterEntry>(m, "AdapterEntry")
        .def_readonly("stage_index", &AdapterEntry::stage_index)
        .def_readonly("params", &AdapterEntry::params)
        .def_readonly("spec", &AdapterEntry::spec);

    py::class_<AdapterStack>(m, "AdapterStack")
        .def(py::init<>())
        .def_readonly("adapters", &AdapterStack::adapters)
        .def("__len__", [](const AdapterStack& s) { return s.adapters.size(); });

    py::class_<Trajectory>(m, "Trajectory")
        .def_readonly("times", &Trajectory::times)
        .def_readonly("states", &Trajectory::states);

    py::class_<FlowGradient>(m, "FlowGradient")
        .def_readonly("d_params", &FlowGradient::d_params)
        .def_readonly("d_initial", &FlowGradient::d_initial);

    py::class_<UnlearnConfig>(m, "UnlearnConfig")
        .def(py::init<>())
        .def_readwrite("d", &UnlearnConfig::d)
        .def_readwrite("a_max", &UnlearnConfig::a_max)
        .def_readwrite("n_a", &UnlearnConfig::n_a)
        .def_readwrite("n_r", &UnlearnConfig::n_r)
        .def_readwrite("lambda_l2", &UnlearnConfig::lambda_l2)
        .def_readwrite("lambda_per", &UnlearnConfig::lambda_per)
        .def_readwrite("lambda_id", &UnlearnConfig::lambda_id)
        .def_readwrite("lambda_u", &UnlearnConfig::lambda_u)
        .def_readwrite("lambda_tc", &UnlearnConfig::lambda_tc)
        .def_readwrite("lambda_r", &UnlearnConfig::lambda_r)
        .def_readwrite("epochs", &UnlearnConfig::epochs)
        .def_readwrite("learning_rate", &UnlearnConfig::learning_rate)
        .def_readwrite("seed", &UnlearnConfig::seed)
        .def_readwrite("solver", &UnlearnConfig::solver)
        .def_readwrite("hidden", &UnlearnConfig::hidden)
        .def_readwrite("grad_mode", &UnlearnConfig::grad_mode);

    py::class_<EvalCounts>(m, "EvalCounts")
        .def(py::init<>())
        .def_readwrite("n_per_id", &EvalCounts::n_per_id)
        .def_readwrite("mmd_n", &EvalCounts::mmd_n)
        .def_readwrite("id_avg_n", &EvalCounts::id_avg_n)
        .def_readwrite("leakage_n", &EvalCounts::leakage_n);

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("world", &RunConfig::world)
        .def_readwrite("unlearn", &RunConfig::unlearn)
        .def_readwrite("eval", &RunConfig::eval)
        .def_readwrite("forget_id", &RunConfig::forget_id)
        .def_readwrite("seeds", &RunConfig::seeds)
        .def_readwrite("mmd_scale", &RunConfig::mmd_scale)
        .def_readwrite("jobs", &RunConfig::jobs)
        .def_readwrite("discrete_rank", &RunConfig::discrete_rank)
        .def_readwrite("sweep_epochs", &RunConfig::sweep_epochs);

    py::class_<MetricReport>(m, "MetricReport")
        .def_readonly("id_score", &MetricReport::id_score)
        .def_readonly("id_avg", &MetricReport::id_avg)
        .def_readonly("mmd_retain", &MetricReport::mmd_retain)
        .def_readonly("retention_accuracy", &MetricReport::retention_accuracy)
        .def_readonly("forget_rate", &MetricReport::forget_rate)
        .def_readonly("leakage", &MetricReport::leakage);

    py::class_<LossHistoryRow>(m, "LossHistoryRow")
        .def_readonly("epoch", &LossHistoryRow::epoch)
        .def_readonly("l_u", &LossHistoryRow::l_u)
        .def_readonly("l_tc", &LossHistoryRow::l_tc)
        .def_readonly("l_r", &LossHistoryRow::l_r)
        .def_readonly("total", &LossHistoryRow::total);

    py::class_<UnlearnResult>(m, "UnlearnResult")
        .def_readonly("stack", &UnlearnResult::stack)
        .def_readonly("history", &UnlearnResult::history);

    m.def(
        "build_world", [](const WorldConfig& cfg) { return build_toy_world(cfg); },
        py::arg("cfg") = WorldConfig{});

    m.def(
        "sample_identity",
        [](const ToyWorld& world, Rng& rng, std::size_t id) {
            return sample_identity(world, rng, id);
        },
        py::arg("world"), py::arg("rng"), py::arg("id"));

    m.def(
        "generate",
        [](const ToyWorld& world, const Vector& w) { return generate(world, nullptr, w); },
        py::arg("world"), py::arg("w"), "frozen generator");
    m.def(
        "generate",
        [](const ToyWorld& world, const AdapterStack& stack, const Vector& w) {
            return generate(world, &stack, w);
        },
        py::arg("world"), py::arg("stack"), py::arg("w"), "adapted generator");

    m.def(
        "integrate",
        [](const Vector& z0, const VectorFieldParams& p, const SolverSpec& spec, double t0) {
            return integrate(z0, p, spec, t0);
        },
        py::arg("z0"), py::arg("params"), py::arg("spec"), py::arg("t0") = 0.0);
    m.def(
        "integrate",
        [](const Vector& z0, const FieldFn& f, const SolverSpec& spec, double t0) {
            return integrate(z0, f, spec, t0);
        },
        py::arg("z0"), py::arg("field"), py::arg("spec"), py::arg("t0") = 0.0,
        "same solver over a python callable f(h, t) -> list[float]");

    m.def("adjoint_gradient", &adjoint_gradient, py::arg("z0"), py::arg("params"),
          py::arg("spec"), py::arg("dL_dzT"), py::arg("t0") = 0.0);
    m.def("unrolled_gradient", &unrolled_gradient, py::arg("z0"), py::arg("params"),
          py::arg("spec"), py::arg("dL_dzT"), py::arg("t0") = 0.0);

    m.def("unidentify_target", &unidentify_target, py::arg("w_u"), py::arg("w_bar"),
          py::arg("d"));

    m.def(
        "run_unlearning",
        [](const ToyWorld& world, const std::vector<Vector>& w_u_set, const UnlearnConfig& cfg,
           const AdapterStack* initial, std::size_t n_frozen) {
            return run_unlearning(world, w_u_set, cfg, initial, n_frozen);
        },
        py::arg("world"), py::arg("w_u_set"), py::arg("cfg"), py::arg("initial") = nullptr,
        py::arg("n_frozen") = 0);

    m.def(
        "evaluate",
        [](const ToyWorld& world, const AdapterStack& stack,
           const std::vector<std::size_t>& forgotten_ids, const std::vector<Vector>& w_u_set,
           std::uint64_t seed, const EvalCounts& counts) {
            return evaluate(world, stack_generator(world, stack), forgotten_ids, w_u_set, seed,
                            counts);
        },
        py::arg("world"), py::arg("stack"), py::arg("forgotten_ids"), py::arg("w_u_set"),
        py::arg("seed"), py::arg("counts") = EvalCounts{});

    m.def("composite_j", &composite_j, py::arg("report"), py::arg("mmd_scale"));
}
