"""Steady multi-region heat conduction in an eye-like domain with a
certified reduced-order surrogate and variance-based sensitivity analysis."""

__version__ = "0.1.0"

from .mesh import (
    Mesh,
    RegionTable,
    generate_eye_2d,
    load_msh,
    write_msh,
    locate_point,
)
from .fem import (
    Parameter,
    PhysicalConstants,
    DiscreteField,
    OutputFunctional,
    assemble_linear,
    solve_linear,
    solve_nonlinear,
    linearize_hr,
    evaluate_output,
    dsa_sweep,
)
from .affine import AffineSystem, build_affine, beta
from .rbm import (
    ReducedModel,
    x_inner_product,
    coercivity_lb,
    orthonormalize,
    project,
    online_solve,
    greedy_train,
    train_sample,
)
from .uq import (
    Uniform,
    ShiftedLogNormal,
    InputDistribution,
    default_distributions,
    sample,
    propagate,
    pce_fit,
    saltelli_sobol,
    sobol_convergence,
)

__all__ = [
    "Mesh",
    "RegionTable",
    "generate_eye_2d",
    "load_msh",
    "write_msh",
    "locate_point",
    "Parameter",
    "PhysicalConstants",
    "DiscreteField",
    "OutputFunctional",
    "assemble_linear",
    "solve_linear",
    "solve_nonlinear",
    "linearize_hr",
    "evaluate_output",
    "dsa_sweep",
    "AffineSystem",
    "build_affine",
    "beta",
    "ReducedModel",
    "x_inner_product",
    "coercivity_lb",
    "orthonormalize",
    "project",
    "online_solve",
    "greedy_train",
    "train_sample",
    "Uniform",
    "ShiftedLogNormal",
    "InputDistribution",
    "default_distributions",
    "sample",
    "propagate",
    "pce_fit",
    "saltelli_sobol",
    "sobol_convergence",
]
