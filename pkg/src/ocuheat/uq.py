"""Forward uncertainty quantification through the reduced model: truncated
input marginals with inverse-CDF sampling, Monte-Carlo propagation,
variance-based sensitivity indices by polynomial-chaos regression (with a
hold-out predictivity factor) and by a pick-freeze estimator."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import stats

from .fem import PARAMETER_NAMES, Parameter
from .rbm import ReducedModel, online_solve_many

logger = logging.getLogger(__name__)

_SANITY_SLACK = 0.02
_DEGENERATE_REL_VAR = 1e-24


# ---------------------------------------------------------------------------
# Marginals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"uniform bounds must satisfy lo < hi, got [{self.lo}, {self.hi}]")

    def ppf(self, u):
        return self.lo + np.asarray(u) * (self.hi - self.lo)

    def cdf(self, x):
        return np.clip((np.asarray(x) - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def to_json(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class ShiftedLogNormal:
    """log(X - shift) ~ Normal(mu_log, sigma_log), truncated to [lo, hi]."""

    mu_log: float
    sigma_log: float
    shift: float
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"truncation bounds must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if self.lo < self.shift:
            raise ValueError(f"truncation must start at or above the shift {self.shift}")
        if not self.sigma_log > 0:
            raise ValueError("sigma_log must be positive")
        a, b = self._base_cdf(self.lo), self._base_cdf(self.hi)
        if not b - a > 0:
            raise ValueError("truncation interval carries no probability mass")
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_b", b)

    def _base_cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x, dtype=float)
        pos = x > self.shift
        out = np.where(
            pos,
            stats.norm.cdf((np.log(np.maximum(x - self.shift, 1e-300)) - self.mu_log) / self.sigma_log),
            0.0,
        )
        return out if out.ndim else float(out)

    def ppf(self, u):
        q = self._a + np.asarray(u) * (self._b - self._a)
        return self.shift + np.exp(self.mu_log + self.sigma_log * stats.norm.ppf(q))

    def cdf(self, x):
        return np.clip((self._base_cdf(x) - self._a) / (self._b - self._a), 0.0, 1.0)

    def to_json(self):
        return {
            "kind": "shifted_lognormal",
            "mu_log": self.mu_log,
            "sigma_log": self.sigma_log,
            "shift": self.shift,
            "lo": self.lo,
            "hi": self.hi,
        }


def _marginal_from_json(obj):
    kind = obj.get("kind")
    if kind == "uniform":
        return Uniform(obj["lo"], obj["hi"])
    if kind == "shifted_lognormal":
        return ShiftedLogNormal(obj["mu_log"], obj["sigma_log"], obj["shift"], obj["lo"], obj["hi"])
    raise ValueError(f"unknown marginal kind {kind!r}")


@dataclass(frozen=True)
class InputDistribution:
    """Independent marginals, one per input component.  Defaults to the 6
    canonical model parameters; any name set works for generic studies."""

    marginals: dict
    names: tuple = PARAMETER_NAMES

    def __post_init__(self):
        missing = [n for n in self.names if n not in self.marginals]
        if missing:
            raise ValueError(f"marginals missing for {missing}")

    @property
    def dim(self):
        return len(self.names)

    def sample_array(self, n, rng):
        """(n, dim) inverse-CDF draws in component order."""
        u = rng.random((n, self.dim))
        cols = [self.marginals[name].ppf(u[:, j]) for j, name in enumerate(self.names)]
        return np.column_stack(cols)

    def to_reference(self, arr):
        """Map raw samples through the marginal CDFs onto [-1, 1]^dim."""
        arr = np.asarray(arr)
        cols = [
            2.0 * self.marginals[name].cdf(arr[:, j]) - 1.0
            for j, name in enumerate(self.names)
        ]
        return np.column_stack(cols)

    def to_json(self):
        return {name: self.marginals[name].to_json() for name in self.names}

    @classmethod
    def from_json(cls, obj):
        marginals = {name: _marginal_from_json(spec) for name, spec in obj.items()}
        names = tuple(n for n in PARAMETER_NAMES if n in marginals)
        names += tuple(n for n in marginals if n not in names)
        return cls(marginals, names=names)


def default_distributions():
    """The stochastic-analysis input marginals: truncated shifted lognormals
    for the surface-exchange rates, uniforms for the rest."""
    return InputDistribution(
        {
            "T_amb": Uniform(283.15, 303.15),
            "T_bl": Uniform(308.0, 312.15),
            "h_amb": ShiftedLogNormal(np.log(10.0) - 0.5, 1.0, 8.0, lo=8.0, hi=100.0),
            "h_bl": ShiftedLogNormal(np.log(65.0) - 0.15**2 / 2, 0.15, 0.0, lo=50.0, hi=120.0),
            "E": ShiftedLogNormal(np.log(40.0) - 0.7**2 / 2, 0.7, 20.0, lo=20.0, hi=130.0),
            "k_lens": Uniform(0.21, 0.544),
        }
    )


def sample(dist, n, seed):
    """Draw n parameters (relaxed bounds: truncations may exceed the strict
    admissible box)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if tuple(dist.names) != PARAMETER_NAMES:
        raise ValueError("sampling model parameters requires the 6 canonical components")
    rng = np.random.default_rng(seed)
    arr = dist.sample_array(n, rng)
    return [Parameter.from_array(row, relaxed=True) for row in arr]


# ---------------------------------------------------------------------------
# Model evaluation adapters
# ---------------------------------------------------------------------------


def _output_index(rm, output):
    if isinstance(output, str):
        try:
            return rm.output_names.index(output)
        except ValueError:
            raise ValueError(
                f"output {output!r} not in model outputs {rm.output_names}"
            ) from None
    return int(output)


def _as_evaluator(model, output=0):
    """Normalize a ReducedModel or a callable into f: (n, 6) -> (n,)."""
    if isinstance(model, ReducedModel):
        idx = _output_index(model, output)

        def f(arr):
            mus = [Parameter.from_array(row, relaxed=True) for row in np.asarray(arr)]
            return online_solve_many(model, mus)["outputs"][:, idx]

        return f
    if callable(model):

        def f(arr):
            arr = np.asarray(arr, dtype=float)
            out = np.asarray(model(arr), dtype=float)
            if out.shape != (arr.shape[0],):
                out = np.array([model(row) for row in arr], dtype=float)
            return out

        return f
    raise TypeError(f"expected ReducedModel or callable, got {type(model)!r}")


# ---------------------------------------------------------------------------
# Uncertainty propagation
# ---------------------------------------------------------------------------


@dataclass
class PropagationResult:
    n: int
    n_failed: int
    names: list
    mean: np.ndarray
    std: np.ndarray
    histograms: list  # (edges, counts) per output
    t_wall: float
    samples: np.ndarray | None = None


def propagate(rm, dist, n, seed, bins=40, keep_samples=False):
    """Monte-Carlo propagation of the input distribution through the
    reduced model: per-output mean, standard deviation and histogram.

    Samples whose online solve produces non-finite outputs are excluded
    and counted in ``n_failed``.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    arr = dist.sample_array(n, rng)
    mus = [Parameter.from_array(row, relaxed=True) for row in arr]
    res = online_solve_many(rm, mus)
    outs = res["outputs"]
    ok = np.all(np.isfinite(outs), axis=1)
    n_failed = int((~ok).sum())
    if n_failed:
        logger.warning("%d of %d propagation samples failed and were excluded", n_failed, n)
    outs = outs[ok]
    hists = []
    for k in range(outs.shape[1]):
        counts, edges = np.histogram(outs[:, k], bins=bins)
        hists.append((edges, counts))
    return PropagationResult(
        n=n,
        n_failed=n_failed,
        names=list(rm.output_names),
        mean=outs.mean(axis=0),
        std=outs.std(axis=0),
        histograms=hists,
        t_wall=time.perf_counter() - t0,
        samples=outs if keep_samples else None,
    )


# ---------------------------------------------------------------------------
# Polynomial-chaos regression and Sobol indices
# ---------------------------------------------------------------------------


@dataclass
class SobolResult:
    names: list
    s1: np.ndarray
    s1_ci: np.ndarray  # (d, 2) percentile bootstrap interval
    stot: np.ndarray
    stot_ci: np.ndarray
    q2: float
    degree: int | None
    n_param: int
    method: str
    degenerate: bool = False
    t_wall: float = 0.0

    def sanity_ok(self, slack=_SANITY_SLACK):
        """Estimator-noise sanity: indices near [0, 1], first-order below
        total, first-order sum below 1."""
        if self.degenerate:
            return True
        return bool(
            np.all(self.s1 >= -slack)
            and np.all(self.s1 <= self.stot + slack)
            and self.s1.sum() <= 1.0 + 0.05
            and np.all(self.stot <= 1.0 + slack)
        )


def _multi_indices(dim, degree):
    """Total-degree multi-index set, constant term first."""
    idx = [m for m in product(range(degree + 1), repeat=dim) if sum(m) <= degree]
    idx.sort(key=lambda m: (sum(m), m))
    return np.array(idx, dtype=int)


def _legendre_design(xi, indices):
    """Design matrix of orthonormal Legendre products at reference points."""
    deg = int(indices.max())
    n, dim = xi.shape
    scale = np.sqrt(2.0 * np.arange(deg + 1) + 1.0)
    V = np.empty((dim, n, deg + 1))
    for j in range(dim):
        V[j] = np.polynomial.legendre.legvander(xi[:, j], deg) * scale
    Phi = np.ones((n, len(indices)))
    for c, m in enumerate(indices):
        for j in range(dim):
            if m[j]:
                Phi[:, c] *= V[j, :, m[j]]
    return Phi


@dataclass
class ChaosSurrogate:
    """Least-squares polynomial-chaos expansion in the CDF-transformed
    reference variables."""

    dist: InputDistribution
    indices: np.ndarray
    coefficients: np.ndarray
    degree: int

    def predict(self, arr):
        xi = self.dist.to_reference(arr)
        return _legendre_design(xi, self.indices) @ self.coefficients


def _chaos_indices(indices, coef):
    """First-order and total Sobol indices from orthonormal coefficients."""
    dim = indices.shape[1]
    c2 = coef**2
    active = indices.sum(axis=1) > 0
    var = c2[active].sum()
    s1 = np.zeros(dim)
    stot = np.zeros(dim)
    if var <= 0:
        return s1, stot, 0.0
    for i in range(dim):
        involves = indices[:, i] > 0
        only = involves & (indices.sum(axis=1) == indices[:, i])
        s1[i] = c2[only].sum() / var
        stot[i] = c2[involves].sum() / var
    return s1, stot, var


def pce_fit(model, dist, n_param, degree, seed, output=0, n_boot=500):
    """Fit a total-degree chaos expansion by least squares and read the
    Sobol indices off its coefficients.

    The predictivity factor is computed on an independent hold-out of
    ``n_param // 2`` samples; confidence intervals come from resampling
    the regression rows.

    Returns (ChaosSurrogate, SobolResult).
    """
    t0 = time.perf_counter()
    indices = _multi_indices(dist.dim, degree)
    n_terms = len(indices)
    if n_param < 2 * n_terms:
        raise ValueError(
            f"n_param={n_param} too small for {n_terms} basis terms at degree {degree};"
            f" use n_param >= {2 * n_terms} or a smaller degree"
        )
    f = _as_evaluator(model, output)
    rng = np.random.default_rng(seed)
    X = dist.sample_array(n_param, rng)
    y = f(X)
    xi = dist.to_reference(X)
    Phi = _legendre_design(xi, indices)
    coef, _, rank, _ = np.linalg.lstsq(Phi, y, rcond=None)
    if rank < n_terms:
        raise ValueError(
            f"rank-deficient chaos regression (rank {rank} < {n_terms} terms);"
            " increase n_param or decrease degree"
        )
    surrogate = ChaosSurrogate(dist, indices, coef, degree)

    # hold-out predictivity
    Xh = dist.sample_array(max(n_param // 2, 1), rng)
    yh = f(Xh)
    var_h = yh.var()
    scale = max(np.abs(yh).max(), 1.0)
    degenerate = var_h <= _DEGENERATE_REL_VAR * scale**2
    if degenerate:
        q2 = 1.0
    else:
        q2 = 1.0 - np.mean((yh - surrogate.predict(Xh)) ** 2) / var_h

    s1, stot, var_c = _chaos_indices(indices, coef)
    if var_c <= _DEGENERATE_REL_VAR * scale**2:
        degenerate = True
        s1 = np.zeros(dist.dim)
        stot = np.zeros(dist.dim)

    d = dist.dim
    if n_boot > 0 and not degenerate:
        boot_s1 = np.empty((n_boot, d))
        boot_st = np.empty((n_boot, d))
        for b in range(n_boot):
            counts = np.bincount(rng.integers(0, n_param, n_param), minlength=n_param).astype(float)
            G = Phi.T @ (counts[:, None] * Phi)
            rhs = Phi.T @ (counts * y)
            try:
                cb = np.linalg.solve(G + 1e-12 * np.trace(G) / n_terms * np.eye(n_terms), rhs)
            except np.linalg.LinAlgError:
                cb = np.linalg.lstsq(Phi * np.sqrt(counts)[:, None], y * np.sqrt(counts), rcond=None)[0]
            boot_s1[b], boot_st[b], _ = _chaos_indices(indices, cb)
        s1_ci = np.percentile(boot_s1, [2.5, 97.5], axis=0).T
        stot_ci = np.percentile(boot_st, [2.5, 97.5], axis=0).T
    else:
        s1_ci = np.column_stack([s1, s1])
        stot_ci = np.column_stack([stot, stot])

    result = SobolResult(
        names=list(dist.names),
        s1=s1,
        s1_ci=s1_ci,
        stot=stot,
        stot_ci=stot_ci,
        q2=float(q2),
        degree=degree,
        n_param=n_param,
        method="pce",
        degenerate=degenerate,
        t_wall=time.perf_counter() - t0,
    )
    if not result.sanity_ok():
        logger.warning("Sobol sanity bounds violated beyond estimator slack")
    return surrogate, result


def saltelli_sobol(model, dist, n_base, seed, output=0, n_boot=500):
    """Pick-freeze Monte-Carlo estimate of first-order and total indices.

    Two base matrices plus one hybrid per input (n_base * (dim + 2) model
    evaluations); the variance splits use the squared-difference
    estimators.  Serves as the slow cross-check of :func:`pce_fit`.
    """
    if n_base < 100:
        raise ValueError("n_base must be >= 100")
    t0 = time.perf_counter()
    d = dist.dim
    f = _as_evaluator(model, output)
    rng = np.random.default_rng(seed)
    A = dist.sample_array(n_base, rng)
    B = dist.sample_array(n_base, rng)
    fA = f(A)
    fB = f(B)
    fAB = np.empty((d, n_base))
    for i in range(d):
        ABi = A.copy()
        ABi[:, i] = B[:, i]
        fAB[i] = f(ABi)

    def estimate(sel):
        a, b, ab = fA[sel], fB[sel], fAB[:, sel]
        v = np.concatenate([a, b]).var()
        if v <= 0:
            return np.zeros(d), np.zeros(d), 0.0
        s1 = (v - 0.5 * np.mean((b[None, :] - ab) ** 2, axis=1)) / v
        st = 0.5 * np.mean((a[None, :] - ab) ** 2, axis=1) / v
        return s1, st, v

    all_idx = np.arange(n_base)
    s1, stot, v = estimate(all_idx)
    scale = max(np.abs(np.concatenate([fA, fB])).max(), 1.0)
    degenerate = v <= _DEGENERATE_REL_VAR * scale**2
    if degenerate:
        s1 = np.zeros(d)
        stot = np.zeros(d)

    if n_boot > 0 and not degenerate:
        boot_s1 = np.empty((n_boot, d))
        boot_st = np.empty((n_boot, d))
        for bidx in range(n_boot):
            sel = rng.integers(0, n_base, n_base)
            boot_s1[bidx], boot_st[bidx], _ = estimate(sel)
        s1_ci = np.percentile(boot_s1, [2.5, 97.5], axis=0).T
        stot_ci = np.percentile(boot_st, [2.5, 97.5], axis=0).T
    else:
        s1_ci = np.column_stack([s1, s1])
        stot_ci = np.column_stack([stot, stot])

    result = SobolResult(
        names=list(dist.names),
        s1=s1,
        s1_ci=s1_ci,
        stot=stot,
        stot_ci=stot_ci,
        q2=float("nan"),
        degree=None,
        n_param=n_base,
        method="saltelli",
        degenerate=degenerate,
        t_wall=time.perf_counter() - t0,
    )
    if not result.sanity_ok():
        logger.warning("Sobol sanity bounds violated beyond estimator slack")
    return result


def sobol_convergence(model, dist, sizes, seed, degree=3, output=0):
    """Chaos-regression indices at growing sample sizes, with the maximum
    index deviation from the largest-size reference.

    Returns one dict row per size: n_param, max_deviation, t_exec, q2.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be increasing")
    results = []
    for n_param in sizes:
        t0 = time.perf_counter()
        _, res = pce_fit(model, dist, n_param, degree, seed, output=output, n_boot=0)
        results.append((n_param, res, time.perf_counter() - t0))
    ref = results[-1][1]
    rows = []
    for n_param, res, dt in results:
        dev = max(
            np.abs(res.s1 - ref.s1).max(),
            np.abs(res.stot - ref.stot).max(),
        )
        rows.append(
            {"n_param": n_param, "max_deviation": float(dev), "t_exec": dt, "q2": res.q2}
        )
    return rows
