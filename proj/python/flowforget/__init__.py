"""Continuous-time identity unlearning lab.

Thin re-export of the compiled core. See the README for the CLI, which is the
primary interface; these bindings cover the main operations for notebook use.
"""

from ._flowforget import (  # noqa: F401
    AdapterStack,
    MetricReport,
    RunConfig,
    SolverSpec,
    ToyWorld,
    UnlearnConfig,
    WorldConfig,
    adjoint_gradient,
    build_world,
    composite_j,
    evaluate,
    generate,
    integrate,
    run_unlearning,
    sample_identity,
    unidentify_target,
    unrolled_gradient,
)

__all__ = [
    "AdapterStack",
    "MetricReport",
    "RunConfig",
    "SolverSpec",
    "ToyWorld",
    "UnlearnConfig",
    "WorldConfig",
    "adjoint_gradient",
    "build_world",
    "composite_j",
    "evaluate",
    "generate",
    "integrate",
    "run_unlearning",
    "sample_identity",
    "unidentify_target",
    "unrolled_gradient",
]
