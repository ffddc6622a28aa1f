"""P1 finite elements for multi-region steady heat conduction with
convective/radiative surface exchange: assembly, linear and Newton solvers,
output functionals, one-at-a-time parameter sweeps."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, locate_point

logger = logging.getLogger(__name__)

STEFAN_BOLTZMANN = 5.67e-8  # W/m^2/K^4

#: Admissible box for each varying parameter (strict constructor).
PARAMETER_BOUNDS = {
    "T_amb": (283.15, 303.15),
    "T_bl": (308.0, 312.0),
    "h_amb": (8.0, 100.0),
    "h_bl": (50.0, 110.0),
    "E": (20.0, 320.0),
    "k_lens": (0.21, 0.544),
}

PARAMETER_NAMES = ("T_amb", "T_bl", "h_amb", "h_bl", "E", "k_lens")


class SolverError(Exception):
    """Linear solve failed to meet the residual contract."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class ConvergenceError(Exception):
    """Newton iteration did not converge; carries the residual history."""

    def __init__(self, message, history):
        self.history = list(history)
        super().__init__(message)


@dataclass(frozen=True)
class Parameter:
    """The 6 varying inputs: temperatures [K], surface exchange
    coefficients [W/m^2/K], evaporation rate [W/m^2], lens conductivity
    [W/m/K]."""

    T_amb: float = 298.0
    T_bl: float = 310.0
    h_amb: float = 10.0
    h_bl: float = 65.0
    E: float = 40.0
    k_lens: float = 0.4
    relaxed: bool = False

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"parameter components must be finite, got {vals}")
        if self.relaxed:
            return
        for name in PARAMETER_NAMES:
            lo, hi = PARAMETER_BOUNDS[name]
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(
                    f"{name}={v} outside admissible interval [{lo}, {hi}]"
                    " (use Parameter.unbounded for sweep values)"
                )

    @classmethod
    def baseline(cls):
        return cls()

    @classmethod
    def unbounded(cls, **kwargs):
        """Relaxed-bounds constructor for sweeps that leave the admissible box."""
        return cls(relaxed=True, **kwargs)

    @classmethod
    def from_array(cls, vals, relaxed=False):
        kw = dict(zip(PARAMETER_NAMES, (float(v) for v in vals)))
        return cls(relaxed=relaxed, **kw)

    def as_array(self):
        return np.array([getattr(self, n) for n in PARAMETER_NAMES])

    def with_value(self, name, value):
        """Copy with one component substituted; always relaxed."""
        if name not in PARAMETER_NAMES:
            raise ValueError(f"unknown parameter {name!r}")
        return replace(self, relaxed=True, **{name: float(value)})


@dataclass(frozen=True)
class PhysicalConstants:
    """Fixed surface-physics constants: corneal emissivity and the
    linearized radiation exchange coefficient."""

    epsilon: float = 0.975
    h_r: float = 6.0
    sigma: float = STEFAN_BOLTZMANN

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"emissivity must lie in [0, 1], got {self.epsilon}")
        if not self.h_r > 0:
            raise ValueError(f"h_r must be positive, got {self.h_r}")


@dataclass(frozen=True)
class DiscreteField:
    """Nodal temperature values [K] over the vertices of a mesh."""

    values: np.ndarray
    mesh: Mesh

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_vertices,):
            raise ValueError(
                f"field has {vals.shape} values for a mesh with {self.mesh.n_vertices} vertices"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", vals)


# ---------------------------------------------------------------------------
# Geometry-derived element data
# ---------------------------------------------------------------------------


def _cell_geometry(mesh):
    """Per-cell volumes and P1 shape-function gradients (nc, dim+1, dim)."""
    v = mesh.vertices[mesh.cells]
    e = v[:, 1:, :] - v[:, :1, :]  # (nc, dim, dim) rows are edge vectors
    if mesh.dim == 2:
        det = e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0]
        vol = det / 2.0
        inv = np.empty_like(e)
        inv[:, 0, 0] = e[:, 1, 1] / det
        inv[:, 0, 1] = -e[:, 0, 1] / det
        inv[:, 1, 0] = -e[:, 1, 0] / det
        inv[:, 1, 1] = e[:, 0, 0] / det
    else:
        det = np.linalg.det(e)
        vol = det / 6.0
        inv = np.linalg.inv(e)
    # x - x0 = E^T lambda, so grad(lambda_i) is column i-1 of inv(E);
    # grad(lambda_0) closes the partition of unity
    grads = np.empty((mesh.n_cells, mesh.dim + 1, mesh.dim))
    grads[:, 1:, :] = np.swapaxes(inv, 1, 2)
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return vol, grads


def stiffness(mesh, cell_coefficient=None, cells=None):
    """Assemble the P1 stiffness matrix sum_T c_T int_T grad(phi_i).grad(phi_j).

    ``cell_coefficient`` is a per-cell conductivity (defaults to 1);
    ``cells`` restricts assembly to a cell index subset.
    """
    vol, grads = _cell_geometry(mesh)
    conn = mesh.cells
    if cells is not None:
        vol, grads, conn = vol[cells], grads[cells], conn[cells]
    coef = np.ones(len(conn)) if cell_coefficient is None else np.asarray(cell_coefficient)
    if cells is not None and coef.shape[0] == mesh.n_cells:
        coef = coef[cells]
    ke = np.einsum("c,cid,cjd->cij", coef * vol, grads, grads)
    nloc = mesh.dim + 1
    rows = np.repeat(conn, nloc, axis=1).ravel()
    cols = np.tile(conn, (1, nloc)).ravel()
    A = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(mesh.n_vertices, mesh.n_vertices))
    return A.tocsr()


def region_stiffness(mesh, region):
    """Unit-conductivity stiffness restricted to one region."""
    cells = mesh.cells_of_region(region)
    return stiffness(mesh, cells=cells)


def mass_matrix(mesh, cells=None):
    """Consistent P1 mass matrix (optionally over a cell subset)."""
    vol, _ = _cell_geometry(mesh)
    conn = mesh.cells
    if cells is not None:
        vol, conn = vol[cells], conn[cells]
    nloc = mesh.dim + 1
    base = (np.ones((nloc, nloc)) + np.eye(nloc)) / ((nloc) * (nloc + 1))
    me = vol[:, None, None] * base[None, :, :]
    rows = np.repeat(conn, nloc, axis=1).ravel()
    cols = np.tile(conn, (1, nloc)).ravel()
    M = sp.coo_matrix((me.ravel(), (rows, cols)), shape=(mesh.n_vertices, mesh.n_vertices))
    return M.tocsr()


def boundary_mass(mesh, label):
    """Facet mass matrix int_Gamma phi_i phi_j over the facets with ``label``."""
    idx = mesh.facets_of_label(label)
    n = mesh.n_vertices
    if idx.size == 0:
        return sp.csr_matrix((n, n))
    facets = mesh.facets[idx]
    meas = mesh.facet_measures(facets)
    nloc = mesh.dim  # facet vertex count
    base = (np.ones((nloc, nloc)) + np.eye(nloc)) / (nloc * (nloc + 1))
    me = meas[:, None, None] * base[None, :, :]
    rows = np.repeat(facets, nloc, axis=1).ravel()
    cols = np.tile(facets, (1, nloc)).ravel()
    return sp.coo_matrix((me.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def boundary_load(mesh, label):
    """Facet load vector int_Gamma phi_i over the facets with ``label``."""
    idx = mesh.facets_of_label(label)
    f = np.zeros(mesh.n_vertices)
    if idx.size == 0:
        return f
    facets = mesh.facets[idx]
    meas = mesh.facet_measures(facets)
    np.add.at(f, facets.ravel(), np.repeat(meas / mesh.dim, mesh.dim))
    return f


# 5-point Gauss rule on [0,1]: exact through degree 9, covering the
# quartic radiation integrands with margin.
_GAUSS_SEG_5 = (
    np.array(
        [0.04691007703066800, 0.23076534494715845, 0.5, 0.76923465505284155, 0.95308992296933200]
    ),
    np.array(
        [0.11846344252809454, 0.23931433524968324, 0.28444444444444444, 0.23931433524968324, 0.11846344252809454]
    ),
)

# Degree-5 7-point rule on the reference triangle (barycentric, weights sum 1).
_TRI7_W0 = 9.0 / 40.0
_TRI7_WA = (155.0 - np.sqrt(15.0)) / 1200.0
_TRI7_WB = (155.0 + np.sqrt(15.0)) / 1200.0
_TRI7_A = (6.0 - np.sqrt(15.0)) / 21.0
_TRI7_B = (6.0 + np.sqrt(15.0)) / 21.0


def _facet_quadrature(dim):
    """(bary, weights) rule on the reference facet, exact for degree >= 5."""
    if dim == 2:
        x, w = _GAUSS_SEG_5
        bary = np.column_stack([1 - x, x])
        return bary, w
    a, b = _TRI7_A, _TRI7_B
    pts = [
        (1 / 3, 1 / 3, 1 / 3),
        (a, a, 1 - 2 * a),
        (a, 1 - 2 * a, a),
        (1 - 2 * a, a, a),
        (b, b, 1 - 2 * b),
        (b, 1 - 2 * b, b),
        (1 - 2 * b, b, b),
    ]
    w = np.array([_TRI7_W0] + [_TRI7_WA] * 3 + [_TRI7_WB] * 3)
    return np.array(pts), w


def boundary_load_function(mesh, label, func):
    """Assemble int_Gamma g(x) phi_i over labeled facets for a callable g.

    The integrand is evaluated with a quadrature rule exact for degree-5
    polynomials, which covers the quartic radiation terms.
    """
    idx = mesh.facets_of_label(label)
    f = np.zeros(mesh.n_vertices)
    if idx.size == 0:
        return f
    facets = mesh.facets[idx]
    meas = mesh.facet_measures(facets)
    bary, w = _facet_quadrature(mesh.dim)
    coords = mesh.vertices[facets]  # (nf, nloc, dim)
    for lam, wq in zip(bary, w):
        x = np.einsum("l,fld->fd", lam, coords)
        g = np.asarray(func(x))
        contrib = (wq * meas * g)[:, None] * lam[None, :]
        np.add.at(f, facets.ravel(), contrib.ravel())
    return f


def _boundary_nonlinear_terms(mesh, label, nodal, power_rhs, consts):
    """Radiation terms on labeled facets for nodal temperatures T:
    residual vector int sigma*eps*(T^4 - Tamb^4) phi and the tangent
    matrix int 4*sigma*eps*T^3 phi phi."""
    idx = mesh.facets_of_label(label)
    n = mesh.n_vertices
    r = np.zeros(n)
    if idx.size == 0:
        return r, sp.csr_matrix((n, n))
    facets = mesh.facets[idx]
    meas = mesh.facet_measures(facets)
    bary, w = _facet_quadrature(mesh.dim)
    se = consts.sigma * consts.epsilon
    nloc = mesh.dim
    je = np.zeros((len(facets), nloc, nloc))
    Tloc = nodal[facets]
    for lam, wq in zip(bary, w):
        Tq = Tloc @ lam
        r_q = se * (Tq**4 - power_rhs)
        contrib = (wq * meas * r_q)[:, None] * lam[None, :]
        np.add.at(r, facets.ravel(), contrib.ravel())
        j_q = 4.0 * se * Tq**3
        je += (wq * meas * j_q)[:, None, None] * (lam[:, None] * lam[None, :])[None, :, :]
    rows = np.repeat(facets, nloc, axis=1).ravel()
    cols = np.tile(facets, (1, nloc)).ravel()
    J = sp.coo_matrix((je.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return r, J


# ---------------------------------------------------------------------------
# Problem assembly and solves
# ---------------------------------------------------------------------------


def _cell_conductivities(mesh, regions, mu):
    kmap = dict(regions.conductivity)
    kmap[regions.parametrized] = mu.k_lens
    try:
        return np.array([kmap[r] for r in mesh.cell_regions])
    except KeyError as exc:
        raise KeyError(f"region {exc.args[0]!r} missing from region table") from None


def assemble_linear(mesh, regions, consts, mu):
    """Assemble operator and load of the linearized surface-exchange model.

    A = sum_i k_i stiffness(region i) + (h_amb + h_r) mass(amb) + h_bl mass(body)
    f = [(h_amb + h_r) T_amb - E] load(amb) + h_bl T_bl load(body)

    Returns
    -------
    A : csr_matrix, symmetric positive definite
    f : ndarray
    """
    k = _cell_conductivities(mesh, regions, mu)
    A = stiffness(mesh, cell_coefficient=k)
    A = A + (mu.h_amb + consts.h_r) * boundary_mass(mesh, "amb")
    A = A + mu.h_bl * boundary_mass(mesh, "body")
    f = ((mu.h_amb + consts.h_r) * mu.T_amb - mu.E) * boundary_load(mesh, "amb")
    f = f + mu.h_bl * mu.T_bl * boundary_load(mesh, "body")
    return A.tocsr(), f


_DIRECT_LIMIT = 50_000


def solve_linear(A, f, mesh=None, rtol=1e-10):
    """Solve the SPD system to a relative algebraic residual <= rtol.

    Sparse direct factorization below 50k unknowns, preconditioned
    conjugate gradients above.  Returns a DiscreteField when a mesh is
    given, otherwise the raw solution vector.
    """
    A = A.tocsc()
    n = A.shape[0]
    fnorm = np.linalg.norm(f)
    if fnorm == 0.0:
        x = np.zeros(n)
    elif n <= _DIRECT_LIMIT:
        x = spla.splu(A).solve(f)
    else:
        d = A.diagonal()
        M = sp.diags(1.0 / d)
        x, info = spla.cg(A, f, rtol=rtol / 10, atol=0.0, M=M, maxiter=20 * n)
        if info != 0:
            res = np.linalg.norm(A @ x - f) / fnorm
            raise SolverError(
                f"conjugate gradients stagnated (info={info})", residual=res
            )
    res = np.linalg.norm(A @ x - f) / max(fnorm, 1e-300)
    if res > rtol:
        raise SolverError(f"linear solve residual {res:.3e} exceeds {rtol:.1e}", residual=res)
    if mesh is not None:
        return DiscreteField(x, mesh)
    return x


def solve_nonlinear(mesh, regions, consts, mu, init=None, rtol=1e-10, max_iter=50):
    """Newton solve of the quartic surface-radiation model.

    The operator keeps the convective parts linear; the radiation flux
    sigma*eps*(T^4 - T_amb^4) on the ambient boundary enters the residual,
    with its exact tangent 4*sigma*eps*T^3 in the Jacobian.  Convergence is
    declared when ||R(T)|| <= rtol * ||f_0||.

    Returns
    -------
    field : DiscreteField
    info : dict with ``iterations`` and per-iteration ``residuals``
    """
    k = _cell_conductivities(mesh, regions, mu)
    A0 = stiffness(mesh, cell_coefficient=k)
    A0 = (A0 + mu.h_amb * boundary_mass(mesh, "amb") + mu.h_bl * boundary_mass(mesh, "body")).tocsr()
    f0 = (mu.h_amb * mu.T_amb - mu.E) * boundary_load(mesh, "amb")
    f0 = f0 + mu.h_bl * mu.T_bl * boundary_load(mesh, "body")

    T = np.full(mesh.n_vertices, mu.T_bl) if init is None else np.asarray(init.values, dtype=float).copy()
    scale = max(np.linalg.norm(f0), 1e-300)
    history = []
    for it in range(max_iter):
        b, J_rad = _boundary_nonlinear_terms(mesh, "amb", T, mu.T_amb**4, consts)
        R = A0 @ T - f0 + b
        rnorm = np.linalg.norm(R) / scale
        history.append(rnorm)
        if rnorm <= rtol:
            logger.debug("Newton converged in %d iterations (residual %.3e)", it, rnorm)
            return DiscreteField(T, mesh), {"iterations": it, "residuals": history}
        J = (A0 + J_rad).tocsc()
        dT = spla.splu(J).solve(-R)
        # Damped step: halve until the residual does not increase.
        step = 1.0
        for _ in range(6):
            Tn = T + step * dT
            bn, _ = _boundary_nonlinear_terms(mesh, "amb", Tn, mu.T_amb**4, consts)
            if np.linalg.norm(A0 @ Tn - f0 + bn) / scale < rnorm or step < 1e-2:
                break
            step *= 0.5
        T = T + step * dT
    raise ConvergenceError(
        f"Newton did not reach residual {rtol:.1e} in {max_iter} iterations "
        f"(last {history[-1]:.3e})",
        history,
    )


def linearize_hr(T_surface, T_amb, consts):
    """Radiation exchange coefficient sigma*eps*(T^2 + T_amb^2)(T + T_amb)."""
    if not (T_surface > 0 and T_amb > 0):
        raise ValueError("temperatures must be positive (Kelvin)")
    return consts.sigma * consts.epsilon * (T_surface**2 + T_amb**2) * (T_surface + T_amb)


def surface_mean(mesh, field, label="amb"):
    """Area-weighted mean of a field over the facets with ``label``."""
    idx = mesh.facets_of_label(label)
    facets = mesh.facets[idx]
    meas = mesh.facet_measures(facets)
    vals = np.asarray(field.values if isinstance(field, DiscreteField) else field)
    return float((meas * vals[facets].mean(axis=1)).sum() / meas.sum())


# ---------------------------------------------------------------------------
# Output functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OutputFunctional:
    """Linear output of the temperature field: a point evaluation or a
    region mean, stored as the dual vector over mesh vertices."""

    kind: str
    name: str
    vector: np.ndarray
    mesh: Mesh

    @classmethod
    def point(cls, mesh, x, name=None):
        """Barycentric nodal evaluation at coordinates ``x``."""
        loc = locate_point(mesh, x)
        if loc.snapped:
            logger.info("output point %s snapped onto cell %d", x, loc.cell)
        vec = np.zeros(mesh.n_vertices)
        vec[mesh.cells[loc.cell]] = loc.barycentric
        return cls("point", name or f"T({x})", vec, mesh)

    @classmethod
    def region_mean(cls, mesh, region, name=None):
        """Mean temperature over one region."""
        cells = mesh.cells_of_region(region)
        if cells.size == 0:
            raise ValueError(f"region {region!r} has no cells")
        vols = mesh.cell_volumes()[cells]
        vec = np.zeros(mesh.n_vertices)
        share = np.repeat(vols / (mesh.dim + 1), mesh.dim + 1)
        np.add.at(vec, mesh.cells[cells].ravel(), share)
        vec /= vols.sum()
        return cls("region-mean", name or f"T_{region}", vec, mesh)


def evaluate_output(field, out):
    """Apply an output functional to a field (dot of dual vector and values)."""
    if field.mesh.n_vertices != out.mesh.n_vertices:
        raise ValueError("field and output functional live on different meshes")
    return float(out.vector @ field.values)


# ---------------------------------------------------------------------------
# Deterministic sensitivity sweep
# ---------------------------------------------------------------------------


def dsa_sweep(param_name, values, baseline, outputs, mesh=None, regions=None, consts=None):
    """One-at-a-time sweep of a single parameter through the nonlinear model.

    Each row substitutes one value into the baseline parameter and records
    every output; solver failures mark the row failed and the sweep
    continues.

    Returns a list of dict rows: value, one entry per output name,
    ``status`` and ``newton_iterations``.
    """
    if mesh is None or regions is None or consts is None:
        raise ValueError("dsa_sweep requires mesh, regions and consts")
    if param_name not in PARAMETER_NAMES:
        raise ValueError(f"unknown parameter {param_name!r}")
    rows = []
    for v in values:
        mu = baseline.with_value(param_name, v)
        row = {param_name: float(v)}
        try:
            fld, info = solve_nonlinear(mesh, regions, consts, mu)
            for out in outputs:
                row[out.name] = evaluate_output(fld, out)
            row["status"] = "ok"
            row["newton_iterations"] = info["iterations"]
        except (SolverError, ConvergenceError) as exc:
            logger.warning("sweep %s=%s failed: %s", param_name, v, exc)
            for out in outputs:
                row[out.name] = float("nan")
            row["status"] = "failed"
            row["newton_iterations"] = -1
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Norms and verification helpers
# ---------------------------------------------------------------------------

# Degree-4 6-point rule on the reference triangle.
_TRI6_A = 0.445948490915965
_TRI6_B = 0.091576213509771
_TRI6_WA = 0.223381589678011
_TRI6_WB = 0.109951743655322


def _cell_quadrature(dim):
    if dim == 2:
        a, b = _TRI6_A, _TRI6_B
        pts = [
            (1 - 2 * a, a, a),
            (a, 1 - 2 * a, a),
            (a, a, 1 - 2 * a),
            (1 - 2 * b, b, b),
            (b, 1 - 2 * b, b),
            (b, b, 1 - 2 * b),
        ]
        w = np.array([_TRI6_WA] * 3 + [_TRI6_WB] * 3)
        return np.array(pts), w
    # degree-2 4-point rule on the tetrahedron
    a = (5.0 - np.sqrt(5.0)) / 20.0
    b = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
    pts = []
    for i in range(4):
        lam = [a] * 4
        lam[i] = b
        pts.append(lam)
    return np.array(pts), np.full(4, 0.25)


def l2_norm(mesh, nodal, exact=None):
    """L2 norm of a P1 field, or of its difference to a callable ``exact``."""
    vol = np.abs(mesh.cell_volumes())
    bary, w = _cell_quadrature(mesh.dim)
    coords = mesh.vertices[mesh.cells]
    Tloc = np.asarray(nodal)[mesh.cells]
    acc = np.zeros(mesh.n_cells)
    for lam, wq in zip(bary, w):
        x = np.einsum("l,cld->cd", lam, coords)
        uh = Tloc @ lam
        d = uh - exact(x) if exact is not None else uh
        acc += wq * d**2
    return float(np.sqrt((vol * acc).sum()))


def h1_seminorm_error(mesh, nodal, grad_exact):
    """H1 seminorm of the difference to a callable exact gradient."""
    vol, grads = _cell_geometry(mesh)
    bary, w = _cell_quadrature(mesh.dim)
    coords = mesh.vertices[mesh.cells]
    gh = np.einsum("cl,cld->cd", np.asarray(nodal)[mesh.cells], grads)
    acc = np.zeros(mesh.n_cells)
    for lam, wq in zip(bary, w):
        x = np.einsum("l,cld->cd", lam, coords)
        diff = gh - grad_exact(x)
        acc += wq * (diff**2).sum(axis=1)
    return float(np.sqrt((np.abs(vol) * acc).sum()))


def interface_flux_jumps(mesh, nodal, regions, mu):
    """Max conormal-flux jump across interior facets (verification aid)."""
    k = _cell_conductivities(mesh, regions, mu)
    vol, grads = _cell_geometry(mesh)
    gh = np.einsum("cl,cld->cd", np.asarray(nodal)[mesh.cells], grads)
    flux = k[:, None] * gh
    owners = {}
    nloc = mesh.dim + 1
    for c, row in enumerate(mesh.cells):
        for drop in range(nloc):
            key = tuple(sorted(np.delete(row, drop).tolist()))
            owners.setdefault(key, []).append(c)
    worst = 0.0
    for key, cs in owners.items():
        if len(cs) != 2:
            continue
        verts = mesh.vertices[list(key)]
        t = verts[1] - verts[0]
        if mesh.dim == 2:
            n = np.array([t[1], -t[0]])
        else:
            n = np.cross(t, verts[2] - verts[0])
        n = n / np.linalg.norm(n)
        jump = abs((flux[cs[0]] - flux[cs[1]]) @ n)
        worst = max(worst, jump)
    return worst


def write_field_ascii(path, mesh, field):
    """Plain ASCII field export.

    Layout: one header line ``n_vertices n_cells dim``, then one line per
    vertex ``x y [z] T``, then the line ``cells``, then one line per cell
    with its vertex indices (0-based) and region name.
    """
    vals = field.values if isinstance(field, DiscreteField) else np.asarray(field)
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_cells} {mesh.dim}\n")
        for v, t in zip(mesh.vertices, vals):
            coords = " ".join(repr(float(c)) for c in v)
            fh.write(f"{coords} {float(t)!r}\n")
        fh.write("cells\n")
        for c, r in zip(mesh.cells, mesh.cell_regions):
            fh.write(" ".join(str(i) for i in c) + f" {r}\n")


def solve_and_time(mesh, regions, consts, mu, outputs=()):
    """Assemble + solve the linearized model, timing the full pipeline."""
    t0 = time.perf_counter()
    A, f = assemble_linear(mesh, regions, consts, mu)
    field = solve_linear(A, f, mesh=mesh)
    s = [evaluate_output(field, out) for out in outputs]
    return field, s, time.perf_counter() - t0
