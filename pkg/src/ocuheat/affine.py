"""Parameter-separated form of the linearized operator: four fixed sparse
operators and two fixed load vectors, recombined through scalar coefficient
functions of the parameter."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import PhysicalConstants, boundary_load, boundary_mass, region_stiffness

N_OPERATORS = 4
N_LOADS = 2


def beta(mu, consts):
    """Coefficient vectors recombining the stored operators and loads.

    Operator coefficients: (k_lens, h_amb, h_bl, 1).
    Load coefficients: (h_amb*T_amb + h_r*T_amb - E, h_bl*T_bl).
    """
    beta_a = np.array([mu.k_lens, mu.h_amb, mu.h_bl, 1.0])
    beta_f = np.array(
        [mu.h_amb * mu.T_amb + consts.h_r * mu.T_amb - mu.E, mu.h_bl * mu.T_bl]
    )
    return beta_a, beta_f


@dataclass
class AffineSystem:
    """Parameter-independent operators A^1..A^4, loads f^1, f^2 and output
    dual vectors, with the coefficient functions of :func:`beta`.

    A^1: unit-conductivity stiffness of the parametrized (lens) region;
    A^2: ambient-boundary mass; A^3: body-boundary mass;
    A^4: h_r * ambient mass + sum of the fixed-conductivity region
    stiffnesses.  f^1 / f^2: ambient / body boundary unit loads.
    """

    operators: list
    loads: list
    outputs: list = field(default_factory=list)
    output_names: list = field(default_factory=list)
    consts: PhysicalConstants = field(default_factory=PhysicalConstants)
    n_dofs: int = 0

    def __post_init__(self):
        if len(self.operators) != N_OPERATORS:
            raise ValueError(f"expected {N_OPERATORS} operators, got {len(self.operators)}")
        if len(self.loads) != N_LOADS:
            raise ValueError(f"expected {N_LOADS} loads, got {len(self.loads)}")
        self.n_dofs = self.operators[0].shape[0]

    def beta(self, mu):
        return beta(mu, self.consts)

    def operator(self, mu):
        """Recombine A(mu) = sum_q beta_a^q A^q."""
        ba, _ = self.beta(mu)
        A = ba[0] * self.operators[0]
        for b, Aq in zip(ba[1:], self.operators[1:]):
            A = A + b * Aq
        return A.tocsr()

    def load(self, mu):
        """Recombine f(mu) = sum_p beta_f^p f^p."""
        _, bf = self.beta(mu)
        return bf[0] * self.loads[0] + bf[1] * self.loads[1]

    def attach_outputs(self, functionals):
        """Register output functionals (parameter-independent duals)."""
        self.outputs = [np.asarray(fn.vector, dtype=float) for fn in functionals]
        self.output_names = [fn.name for fn in functionals]
        return self


def build_affine(mesh, regions, consts, outputs=()):
    """Assemble the parameter-separated system once for a mesh.

    Raises KeyError naming any mesh region missing from the table.
    """
    for name in sorted(set(mesh.cell_regions)):
        regions.k(name)  # fail early with the region name
    A1 = region_stiffness(mesh, regions.parametrized)
    A2 = boundary_mass(mesh, "amb")
    A3 = boundary_mass(mesh, "body")
    A4 = consts.h_r * A2
    for name in sorted(set(mesh.cell_regions)):
        if name == regions.parametrized:
            continue
        A4 = A4 + regions.k(name) * region_stiffness(mesh, name)
    f1 = boundary_load(mesh, "amb")
    f2 = boundary_load(mesh, "body")
    system = AffineSystem(
        operators=[A1.tocsr(), A2.tocsr(), A3.tocsr(), A4.tocsr()],
        loads=[f1, f2],
        consts=consts,
    )
    if outputs:
        system.attach_outputs(outputs)
    return system


# ---------------------------------------------------------------------------
# Serialization: single .npz container with CSR triplets and JSON metadata
# ---------------------------------------------------------------------------


def save_affine(path, system):
    """Persist an AffineSystem as an .npz container.

    Arrays ``op{q}_data/indices/indptr`` hold each CSR operator, ``load{p}``
    the load vectors, ``output{k}`` the output duals; ``meta`` is a JSON
    string with shapes, constants and output names.
    """
    arrays = {}
    for q, A in enumerate(system.operators):
        A = A.tocsr()
        arrays[f"op{q}_data"] = A.data
        arrays[f"op{q}_indices"] = A.indices
        arrays[f"op{q}_indptr"] = A.indptr
    for p, f in enumerate(system.loads):
        arrays[f"load{p}"] = f
    for k, L in enumerate(system.outputs):
        arrays[f"output{k}"] = L
    meta = {
        "format": "ocuheat-affine",
        "version": 1,
        "n_dofs": int(system.n_dofs),
        "n_outputs": len(system.outputs),
        "output_names": list(system.output_names),
        "constants": {
            "epsilon": system.consts.epsilon,
            "h_r": system.consts.h_r,
            "sigma": system.consts.sigma,
        },
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_affine(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != "ocuheat-affine":
            raise ValueError(f"{path} is not an affine-system container")
        n = meta["n_dofs"]
        ops = []
        for q in range(N_OPERATORS):
            ops.append(
                sp.csr_matrix(
                    (z[f"op{q}_data"], z[f"op{q}_indices"], z[f"op{q}_indptr"]), shape=(n, n)
                )
            )
        loads = [z[f"load{p}"] for p in range(N_LOADS)]
        outputs = [z[f"output{k}"] for k in range(meta["n_outputs"])]
    c = meta["constants"]
    system = AffineSystem(
        operators=ops,
        loads=loads,
        consts=PhysicalConstants(epsilon=c["epsilon"], h_r=c["h_r"]),
    )
    system.outputs = outputs
    system.output_names = list(meta["output_names"])
    return system
