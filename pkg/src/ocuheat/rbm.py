"""Certified reduced-order surrogate: greedy snapshot selection, Galerkin
projection onto an orthonormal basis, and residual-based error bounds with
a min-ratio coercivity lower bound."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .affine import N_LOADS, N_OPERATORS, beta
from .fem import (
    PARAMETER_BOUNDS,
    PARAMETER_NAMES,
    Parameter,
    PhysicalConstants,
    SolverError,
    assemble_linear,
    solve_linear,
)

logger = logging.getLogger(__name__)

_GS_REJECT_TOL = 1e-10
_RIESZ_RTOL = 1e-12


def x_inner_product(mesh, regions, consts, mu_ref=None):
    """SPD inner-product operator: the energy operator at the reference
    parameter.  The coercivity constant at the reference is 1 by
    construction."""
    mu_ref = mu_ref or Parameter.baseline()
    X, _ = assemble_linear(mesh, regions, consts, mu_ref)
    return X


def coercivity_lb(mu, consts=None, mu_ref=None):
    """Min-ratio lower bound of the coercivity constant in the reference
    energy norm: min_q beta_q(mu)/beta_q(mu_ref).

    Valid because every stored operator is positive semidefinite and every
    coefficient is positive on the admissible box.
    """
    consts = consts or PhysicalConstants()
    mu_ref = mu_ref or Parameter.baseline()
    ba, _ = beta(mu, consts)
    ba_ref, _ = beta(mu_ref, consts)
    if np.any(ba <= 0):
        raise ValueError(f"operator coefficients must be positive, got {ba}")
    return float(np.min(ba / ba_ref))


def orthonormalize(snapshots, X, reject_tol=_GS_REJECT_TOL):
    """Modified Gram-Schmidt in the X-inner product with one
    reorthogonalization pass.

    Vectors whose post-projection norm falls below ``reject_tol`` times
    their original norm are rejected (logged, not raised).

    Returns the basis as an (n_dofs, N) array.
    """
    basis = []
    for i, v in enumerate(snapshots):
        v = np.asarray(v, dtype=float).copy()
        norm0 = np.sqrt(v @ (X @ v))
        for _ in range(2):
            for q in basis:
                v -= (q @ (X @ v)) * q
        norm = np.sqrt(v @ (X @ v))
        if norm < reject_tol * max(norm0, 1e-300):
            logger.info("snapshot %d rejected as linearly dependent", i)
            continue
        basis.append(v / norm)
    return np.column_stack(basis) if basis else np.empty((len(snapshots[0]), 0))


@dataclass(frozen=True)
class ErrorCertificate:
    """A posteriori bounds of one online solve: field bound in the X-norm,
    per-output bounds, the coercivity lower bound and the residual dual
    norm behind them."""

    delta: float
    delta_s: np.ndarray
    alpha_lb: float
    residual_dual_norm: float


@dataclass
class OnlineSolution:
    coefficients: np.ndarray
    outputs: np.ndarray
    certificate: ErrorCertificate
    t_wall: float


@dataclass
class ReducedModel:
    """Offline product of the reduction: orthonormal basis, projected
    operators/loads/outputs, and the factored residual data that prices
    the error bound independently of the mesh size.

    ``residual_coords`` holds, column by column, the coordinates of the
    Riesz representers of [f^1, f^2, A^1 xi_0, ..., A^4 xi_0, A^1 xi_1,
    ...] in an X-orthonormal basis of their span; the residual dual norm
    at any parameter is the Euclidean norm of a fixed linear combination
    of these columns.
    """

    basis: np.ndarray  # (n_dofs, N), X-orthonormal
    reduced_operators: np.ndarray  # (Q_a, N, N)
    reduced_loads: np.ndarray  # (Q_f, N)
    reduced_outputs: np.ndarray  # (n_out, N)
    output_dual_norms: np.ndarray  # (n_out,)
    residual_coords: np.ndarray  # (m, Q_f + Q_a*N)
    beta_ref: np.ndarray  # (Q_a,) coefficients at the reference parameter
    consts: PhysicalConstants
    output_names: list = field(default_factory=list)
    mu_ref: Parameter = field(default_factory=Parameter.baseline)
    history: list = field(default_factory=list)  # (N, max bound) per greedy round
    selected: list = field(default_factory=list)  # chosen parameters, as arrays
    aborted: bool = False

    @property
    def n(self):
        return self.basis.shape[1]

    @property
    def n_outputs(self):
        return self.reduced_outputs.shape[0]

    def alpha_lb(self, mu):
        ba, _ = beta(mu, self.consts)
        if np.any(ba <= 0):
            raise ValueError(f"operator coefficients must be positive, got {ba}")
        return float(np.min(ba / self.beta_ref))

    def reconstruct(self, coefficients):
        """Lift reduced coefficients back to nodal values."""
        return self.basis @ coefficients

    def truncate(self, n):
        """Sub-model spanned by the first ``n`` basis vectors."""
        if not 1 <= n <= self.n:
            raise ValueError(f"cannot truncate size-{self.n} model to {n}")
        cols = list(range(N_LOADS)) + [
            N_LOADS + N_OPERATORS * k + q for k in range(n) for q in range(N_OPERATORS)
        ]
        return ReducedModel(
            basis=self.basis[:, :n],
            reduced_operators=self.reduced_operators[:, :n, :n],
            reduced_loads=self.reduced_loads[:, :n],
            reduced_outputs=self.reduced_outputs[:, :n],
            output_dual_norms=self.output_dual_norms,
            residual_coords=self.residual_coords[:, cols],
            beta_ref=self.beta_ref,
            consts=self.consts,
            output_names=list(self.output_names),
            mu_ref=self.mu_ref,
            history=list(self.history),
            selected=list(self.selected),
            aborted=self.aborted,
        )


def _solve_batch(rm, beta_a, beta_f):
    """Reduced solves and residual dual norms for stacked coefficients."""
    A = np.einsum("sq,qij->sij", beta_a, rm.reduced_operators)
    f = beta_f @ rm.reduced_loads
    try:
        u = np.linalg.solve(A, f[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"reduced operator is singular: {exc}") from exc
    # residual combination: [beta_f, -(beta_a_q * u_n)] column-matched
    w = np.einsum("sn,sq->snq", u, beta_a).reshape(len(u), -1)
    y = np.concatenate([beta_f, -w], axis=1)
    coords = y @ rm.residual_coords.T
    rnorm = np.linalg.norm(coords, axis=1)
    return u, rnorm


def online_solve(rm, mu):
    """Solve the reduced system at one parameter and certify the result.

    Returns an :class:`OnlineSolution` whose certificate carries the field
    bound, one output bound per functional, the coercivity lower bound and
    the residual dual norm.
    """
    t0 = time.perf_counter()
    ba, bf = beta(mu, rm.consts)
    alpha = float(np.min(ba / rm.beta_ref))
    if alpha <= 0:
        raise ValueError(f"operator coefficients must be positive, got {ba}")
    u, rnorm = _solve_batch(rm, ba[None, :], bf[None, :])
    u, rnorm = u[0], float(rnorm[0])
    s = rm.reduced_outputs @ u
    delta = rnorm / alpha
    cert = ErrorCertificate(
        delta=delta,
        delta_s=rm.output_dual_norms * delta,
        alpha_lb=alpha,
        residual_dual_norm=rnorm,
    )
    return OnlineSolution(u, s, cert, time.perf_counter() - t0)


def online_solve_many(rm, mus):
    """Vectorized online solves: outputs, field bounds and coefficients for
    a sequence of parameters."""
    ba = np.array([beta(mu, rm.consts)[0] for mu in mus])
    bf = np.array([beta(mu, rm.consts)[1] for mu in mus])
    if np.any(ba <= 0):
        raise ValueError("operator coefficients must be positive for every parameter")
    u, rnorm = _solve_batch(rm, ba, bf)
    alpha = (ba / rm.beta_ref).min(axis=1)
    delta = rnorm / alpha
    s = u @ rm.reduced_outputs.T
    return {"coefficients": u, "outputs": s, "delta": delta, "alpha_lb": alpha, "residual": rnorm}


class _Builder:
    """Incremental offline state: grows the basis one accepted snapshot at
    a time, extending the projected blocks and the residual range."""

    def __init__(self, affine, X, mu_ref=None):
        self.affine = affine
        self.Xr = X.tocsr()
        # factor the Jacobi-equilibrated operator; mesh-size contrasts in X
        # otherwise cost digits on near-singular load shapes
        d = self.Xr.diagonal()
        self._scale = 1.0 / np.sqrt(d)
        S = sp.diags(self._scale)
        self.factor = spla.splu((S @ self.Xr @ S).tocsc())
        self.mu_ref = mu_ref or Parameter.baseline()
        self.beta_ref, _ = beta(self.mu_ref, affine.consts)
        if np.any(self.beta_ref <= 0):
            raise ValueError("reference coefficients must be positive")
        self.Z = []  # X-orthonormal basis vectors
        self.range_q = []  # X-orthonormal residual-range vectors
        self.range_xq = []  # X @ q cached for projections
        self.coords = []  # coordinate columns of each Riesz representer
        self.A_blocks = [np.empty((0, 0)) for _ in range(N_OPERATORS)]
        self.f_blocks = None
        self.L_blocks = None
        self.output_norms = None
        self._init_loads()

    def _solve_x(self, rhs):
        return self._scale * self.factor.solve(self._scale * rhs)

    def _riesz(self, rhs):
        rho = self._solve_x(rhs)
        nrm = np.linalg.norm(rhs)
        if nrm > 0:
            # iterative refinement recovers digits lost to mesh-induced
            # conditioning of the factored operator
            for _ in range(4):
                res_vec = rhs - self.Xr @ rho
                res = np.linalg.norm(res_vec) / nrm
                if res <= 0.1 * _RIESZ_RTOL:
                    break
                rho += self._solve_x(res_vec)
            res = np.linalg.norm(self.Xr @ rho - rhs) / nrm
            if res > _RIESZ_RTOL:
                raise SolverError(f"Riesz solve residual {res:.3e} exceeds {_RIESZ_RTOL:.1e}", res)
        return rho

    def _range_insert(self, vec):
        """X-orthonormalize a Riesz representer into the range basis and
        return its coordinate column."""
        v = vec.copy()
        cs = np.zeros(len(self.range_q))
        for _ in range(2):
            for i, xq in enumerate(self.range_xq):
                c = xq @ v
                cs[i] += c
                v -= c * self.range_q[i]
        norm = float(np.sqrt(max(v @ (self.Xr @ v), 0.0)))
        scale = float(np.sqrt(max(vec @ (self.Xr @ vec), 0.0)))
        if norm > 1e-13 * max(scale, 1e-300):
            self.range_q.append(v / norm)
            self.range_xq.append(self.Xr @ self.range_q[-1])
            cs = np.append(cs, norm)
        return cs

    def _init_loads(self):
        for p in range(N_LOADS):
            rho = self._riesz(self.affine.loads[p])
            self.coords.append(self._range_insert(rho))
        self.f_blocks = np.empty((N_LOADS, 0))
        n_out = len(self.affine.outputs)
        self.L_blocks = np.empty((n_out, 0))
        norms = []
        for L in self.affine.outputs:
            rho = self._riesz(L)
            norms.append(np.sqrt(max(L @ rho, 0.0)))
        self.output_norms = np.array(norms)

    @property
    def n(self):
        return len(self.Z)

    def add_snapshot(self, snapshot):
        """Gram-Schmidt the snapshot in; returns False if rejected."""
        v = np.asarray(snapshot, dtype=float).copy()
        norm0 = np.sqrt(v @ (self.Xr @ v))
        for _ in range(2):
            for z in self.Z:
                v -= (z @ (self.Xr @ v)) * z
        norm = np.sqrt(v @ (self.Xr @ v))
        if norm < _GS_REJECT_TOL * max(norm0, 1e-300):
            logger.info("snapshot rejected as linearly dependent (norm ratio %.2e)", norm / norm0)
            return False
        xi = v / norm
        self.Z.append(xi)
        n = self.n
        # extend reduced operators by one row/column each
        for q, Aq in enumerate(self.affine.operators):
            Axi = Aq @ xi
            col = np.array([z @ Axi for z in self.Z])
            blk = np.empty((n, n))
            blk[: n - 1, : n - 1] = self.A_blocks[q]
            blk[:, n - 1] = col
            blk[n - 1, :] = col  # operators are symmetric
            self.A_blocks[q] = blk
            rho = self._riesz(Axi)
            self.coords.append(self._range_insert(rho))
        self.f_blocks = np.column_stack(
            [self.f_blocks, [fp @ xi for fp in self.affine.loads]]
        )
        if len(self.affine.outputs):
            self.L_blocks = np.column_stack(
                [self.L_blocks, [L @ xi for L in self.affine.outputs]]
            )
        return True

    def model(self, history=None, selected=None, aborted=False):
        m = len(self.range_q)
        C = np.zeros((m, len(self.coords)))
        for j, col in enumerate(self.coords):
            C[: len(col), j] = col
        return ReducedModel(
            basis=np.column_stack(self.Z) if self.Z else np.empty((self.affine.n_dofs, 0)),
            reduced_operators=np.array(self.A_blocks),
            reduced_loads=self.f_blocks,
            reduced_outputs=self.L_blocks,
            output_dual_norms=self.output_norms,
            residual_coords=C,
            beta_ref=self.beta_ref,
            consts=self.affine.consts,
            output_names=list(self.affine.output_names),
            mu_ref=self.mu_ref,
            history=list(history or []),
            selected=list(selected or []),
            aborted=aborted,
        )


def project(affine, Z, X, mu_ref=None):
    """Galerkin-project the affine system onto the columns of ``Z``.

    ``Z`` must be X-orthonormal (see :func:`orthonormalize`).  All reduced
    blocks and the Riesz-representer data needed for mesh-independent
    residual norms are computed here.
    """
    builder = _Builder(affine, X, mu_ref=mu_ref)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == affine.n_dofs:
        cols = [Z[:, j] for j in range(Z.shape[1])]
    else:
        cols = list(Z)
    for z in cols:
        builder.add_snapshot(z)
    return builder.model()


def train_sample(n, seed, bounds=None):
    """Training parameters: log-uniform in the wide positive components
    (h_amb, h_bl, E, k_lens), uniform in the temperatures."""
    bounds = bounds or PARAMETER_BOUNDS
    rng = np.random.default_rng(seed)
    log_scaled = {"h_amb", "h_bl", "E", "k_lens"}
    cols = []
    for name in PARAMETER_NAMES:
        lo, hi = bounds[name]
        u = rng.random(n)
        if name in log_scaled:
            cols.append(np.exp(np.log(lo) + u * (np.log(hi) - np.log(lo))))
        else:
            cols.append(lo + u * (hi - lo))
    arr = np.column_stack(cols)
    return [Parameter.from_array(row) for row in arr]


def greedy_train(affine, X, train_set, eps_tol, n_max, mu_ref=None):
    """Grow the basis by repeatedly solving at the worst-bounded training
    parameter until the max bound falls under ``eps_tol`` or the basis
    reaches ``n_max``.

    The first training parameter seeds the basis.  A solver failure aborts
    and returns the partial model (``aborted=True``) with its history.
    """
    if not train_set:
        raise ValueError("training set must not be empty")
    if not eps_tol > 0:
        raise ValueError("eps_tol must be positive")
    builder = _Builder(affine, X, mu_ref=mu_ref)
    betas_a = np.array([beta(mu, affine.consts)[0] for mu in train_set])
    betas_f = np.array([beta(mu, affine.consts)[1] for mu in train_set])
    alphas = (betas_a / builder.beta_ref).min(axis=1)
    history = []
    selected = []

    def fem_solve(mu):
        A = affine.operator(mu)
        f = affine.load(mu)
        return solve_linear(A, f)

    mu0 = train_set[0]
    t0 = time.perf_counter()
    try:
        builder.add_snapshot(fem_solve(mu0))
    except SolverError as exc:
        logger.error("initial snapshot failed: %s", exc)
        return builder.model(history=history, aborted=True)
    selected.append(mu0)
    while True:
        rm = builder.model()
        _, rnorm = _solve_batch(rm, betas_a, betas_f)
        bounds = rnorm / alphas
        star = int(np.argmax(bounds))
        max_bound = float(bounds[star])
        history.append((builder.n, max_bound))
        logger.info(
            "greedy round N=%d: max bound %.3e at training index %d",
            builder.n,
            max_bound,
            star,
        )
        if max_bound <= eps_tol or builder.n >= n_max:
            break
        mu_star = train_set[star]
        try:
            snap = fem_solve(mu_star)
        except SolverError as exc:
            logger.error("snapshot solve failed at %s: %s", mu_star, exc)
            return builder.model(history=history, selected=selected, aborted=True)
        if not builder.add_snapshot(snap):
            logger.warning("greedy stalled: selected snapshot is dependent; stopping")
            break
        selected.append(mu_star)
    logger.info("greedy finished with N=%d in %.2f s", builder.n, time.perf_counter() - t0)
    return builder.model(history=history, selected=selected)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_model(path, rm):
    """Persist a ReducedModel as an .npz container (dense blocks + JSON
    metadata under ``meta``)."""
    meta = {
        "format": "ocuheat-rbm",
        "version": 1,
        "n": int(rm.n),
        "output_names": list(rm.output_names),
        "constants": {"epsilon": rm.consts.epsilon, "h_r": rm.consts.h_r},
        "mu_ref": list(rm.mu_ref.as_array()),
        "history": [[int(n), float(b)] for n, b in rm.history],
        "selected": [list(mu.as_array()) for mu in rm.selected],
        "aborted": bool(rm.aborted),
    }
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh,
            basis=rm.basis,
            reduced_operators=rm.reduced_operators,
            reduced_loads=rm.reduced_loads,
            reduced_outputs=rm.reduced_outputs,
            output_dual_norms=rm.output_dual_norms,
            residual_coords=rm.residual_coords,
            beta_ref=rm.beta_ref,
            meta=np.array(json.dumps(meta, sort_keys=True)),
        )


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != "ocuheat-rbm":
            raise ValueError(f"{path} is not a reduced-model container")
        c = meta["constants"]
        rm = ReducedModel(
            basis=z["basis"],
            reduced_operators=z["reduced_operators"],
            reduced_loads=z["reduced_loads"],
            reduced_outputs=z["reduced_outputs"],
            output_dual_norms=z["output_dual_norms"],
            residual_coords=z["residual_coords"],
            beta_ref=z["beta_ref"],
            consts=PhysicalConstants(epsilon=c["epsilon"], h_r=c["h_r"]),
            output_names=list(meta["output_names"]),
            mu_ref=Parameter.from_array(meta["mu_ref"], relaxed=True),
            history=[(int(n), float(b)) for n, b in meta["history"]],
            selected=[Parameter.from_array(row, relaxed=True) for row in meta["selected"]],
            aborted=meta["aborted"],
        )
    return rm
