import numpy as np
import pytest
from scipy import integrate, stats

from ocuheat.fem import PARAMETER_NAMES
from ocuheat.uq import (
    InputDistribution,
    ShiftedLogNormal,
    Uniform,
    default_distributions,
    pce_fit,
    saltelli_sobol,
    sample,
    sobol_convergence,
)


def truncated_lognormal_mean_by_quadrature(m):
    """Independent oracle: integrate x * pdf over the truncation window."""
    base = stats.lognorm(s=m.sigma_log, scale=np.exp(m.mu_log), loc=m.shift)
    mass = base.cdf(m.hi) - base.cdf(m.lo)
    val, _ = integrate.quad(lambda x: x * base.pdf(x) / mass, m.lo, m.hi, limit=200)
    return val


class TestMarginals:
    def test_uniform_round_trip(self):
        u = Uniform(2.0, 5.0)
        x = u.ppf(np.array([0.0, 0.5, 1.0]))
        assert np.allclose(x, [2.0, 3.5, 5.0])
        assert np.allclose(u.cdf(x), [0.0, 0.5, 1.0])

    def test_evaporation_mean_against_quadrature(self):
        m = default_distributions().marginals["E"]
        target = truncated_lognormal_mean_by_quadrature(m)
        rng = np.random.default_rng(12)
        draws = m.ppf(rng.random(1_000_000))
        assert draws.mean() == pytest.approx(target, rel=0.01)
        # the documented mean of this marginal
        assert target == pytest.approx(55.8, rel=0.01)

    def test_blood_exchange_mean_against_quadrature(self):
        m = default_distributions().marginals["h_bl"]
        target = truncated_lognormal_mean_by_quadrature(m)
        rng = np.random.default_rng(13)
        draws = m.ppf(rng.random(1_000_000))
        assert draws.mean() == pytest.approx(target, rel=0.01)
        assert target == pytest.approx(65.8, rel=0.01)

    def test_air_exchange_mean_against_quadrature(self):
        m = default_distributions().marginals["h_amb"]
        target = truncated_lognormal_mean_by_quadrature(m)
        assert target == pytest.approx(17.6, rel=0.01)

    def test_truncation_respected(self):
        dist = default_distributions()
        rng = np.random.default_rng(3)
        arr = dist.sample_array(20000, rng)
        cols = {n: arr[:, j] for j, n in enumerate(PARAMETER_NAMES)}
        assert cols["T_amb"].min() >= 283.15 and cols["T_amb"].max() <= 303.15
        assert cols["E"].min() >= 20.0 and cols["E"].max() <= 130.0
        assert cols["h_amb"].min() >= 8.0 and cols["h_amb"].max() <= 100.0
        assert cols["h_bl"].min() >= 50.0 and cols["h_bl"].max() <= 120.0

    def test_invalid_marginals_rejected(self):
        with pytest.raises(ValueError):
            Uniform(2.0, 2.0)
        with pytest.raises(ValueError):
            ShiftedLogNormal(0.0, 1.0, 10.0, lo=5.0, hi=20.0)  # lo below shift
        with pytest.raises(ValueError):
            ShiftedLogNormal(0.0, -1.0, 0.0, lo=1.0, hi=2.0)

    def test_json_round_trip(self):
        dist = default_distributions()
        back = InputDistribution.from_json(dist.to_json())
        rng1, rng2 = np.random.default_rng(5), np.random.default_rng(5)
        assert np.array_equal(back.sample_array(100, rng1), dist.sample_array(100, rng2))

    def test_seed_determinism(self):
        dist = default_distributions()
        a = [mu.as_array() for mu in sample(dist, 50, seed=77)]
        b = [mu.as_array() for mu in sample(dist, 50, seed=77)]
        assert np.array_equal(np.array(a), np.array(b))


def linear_map(coeffs):
    c = np.asarray(coeffs)

    def f(arr):
        return arr @ c

    return f


class TestChaosRegression:
    def test_single_variable_map_exact(self):
        dist = default_distributions()
        f = linear_map([1.0, 0, 0, 0, 0, 0])  # depends on T_amb only
        _, res = pce_fit(f, dist, 400, 2, seed=1, n_boot=0)
        assert res.s1[0] == pytest.approx(1.0, abs=1e-10)
        assert res.stot[0] == pytest.approx(1.0, abs=1e-10)
        assert np.all(np.abs(res.s1[1:]) <= 1e-10)
        assert np.all(np.abs(res.stot[1:]) <= 1e-10)

    def test_polynomial_reproduced_with_unit_predictivity(self):
        # all-uniform marginals keep polynomials polynomial in the
        # reference variables, so a matching degree fits exactly
        dist = InputDistribution(
            {n: Uniform(float(j), float(j) + 1.5) for j, n in enumerate(PARAMETER_NAMES)}
        )

        def f(arr):
            return 2.0 + arr[:, 0] * arr[:, 3] + 0.5 * arr[:, 5] ** 2 - arr[:, 1]

        _, res = pce_fit(f, dist, 500, 3, seed=2, n_boot=0)
        assert res.q2 >= 1.0 - 1e-10

    def test_sample_budget_precondition(self):
        dist = default_distributions()
        with pytest.raises(ValueError, match="n_param"):
            pce_fit(linear_map([1] * 6), dist, 100, 3, seed=0)

    def test_constant_output_degenerate(self):
        dist = default_distributions()
        _, res = pce_fit(lambda arr: np.full(len(arr), 7.0), dist, 200, 1, seed=3, n_boot=0)
        assert res.degenerate
        assert np.all(res.s1 == 0.0) and np.all(res.stot == 0.0)

    def test_bootstrap_intervals_cover_point_estimate(self):
        dist = default_distributions()
        f = linear_map([0.5, 1.0, 0.0, 0.0, 0.02, 0.0])
        _, res = pce_fit(f, dist, 300, 2, seed=4, n_boot=100)
        assert np.all(res.s1_ci[:, 0] <= res.s1 + 1e-9)
        assert np.all(res.s1 <= res.s1_ci[:, 1] + 1e-9)

    def test_sanity_bounds(self):
        dist = default_distributions()

        def f(arr):
            return np.sin(arr[:, 0] / 10.0) + 0.1 * arr[:, 2] * arr[:, 4] / 100.0

        _, res = pce_fit(f, dist, 400, 3, seed=5, n_boot=0)
        assert res.sanity_ok()
        assert np.all(res.s1 >= -0.02)
        assert np.all(res.s1 <= res.stot + 0.02)
        assert res.s1.sum() <= 1.05
        assert np.all(res.stot <= 1.02)


class TestPropagateDegenerate:
    def test_near_constant_distribution_gives_zero_spread(self):
        # narrowest admissible truncations pin every input to its baseline
        from ocuheat.affine import build_affine
        from ocuheat.fem import OutputFunctional, Parameter, PhysicalConstants
        from ocuheat.mesh import RegionTable, generate_eye_2d
        from ocuheat.rbm import greedy_train, train_sample, x_inner_product
        from ocuheat.uq import propagate

        mesh, points = generate_eye_2d(1)
        regions, consts = RegionTable.default(), PhysicalConstants()
        outs = [OutputFunctional.point(mesh, points["O"], name="T_O")]
        affine = build_affine(mesh, regions, consts, outputs=outs)
        X = x_inner_product(mesh, regions, consts)
        rm = greedy_train(affine, X, train_sample(100, seed=2), eps_tol=1e-7, n_max=8)
        mu = Parameter.baseline()
        eps = 1e-9
        dist = InputDistribution(
            {
                n: Uniform(getattr(mu, n), getattr(mu, n) + eps)
                for n in PARAMETER_NAMES
            }
        )
        res = propagate(rm, dist, 500, seed=4)
        assert res.std.max() <= 1e-6
        from ocuheat.rbm import online_solve

        sol = online_solve(rm, mu)
        assert res.mean[0] == pytest.approx(float(sol.outputs[0]), abs=1e-7)


class TestSaltelli:
    def test_additive_linear_variance_split(self):
        # Y = sum c_i x_i with independent uniforms: S_i = c_i^2 var_i / total
        dist = InputDistribution(
            {n: Uniform(0.0, float(j) + 1.0) for j, n in enumerate(PARAMETER_NAMES)}
        )
        c = np.array([1.0, 0.5, 2.0, 0.0, 1.5, 3.0])
        var = c**2 * np.array([(j + 1.0) ** 2 / 12.0 for j in range(6)])
        expected = var / var.sum()
        res = saltelli_sobol(linear_map(c), dist, 10000, seed=6, n_boot=0)
        assert np.abs(res.s1 - expected).max() <= 0.03
        assert np.abs(res.stot - expected).max() <= 0.03

    def test_constant_output_flagged(self):
        dist = default_distributions()
        res = saltelli_sobol(lambda arr: np.zeros(len(arr)), dist, 200, seed=7, n_boot=0)
        assert res.degenerate
        assert np.all(res.s1 == 0.0)

    def test_small_base_sample_rejected(self):
        with pytest.raises(ValueError):
            saltelli_sobol(linear_map([1] * 6), default_distributions(), 50, seed=0)

    def test_agrees_with_chaos_regression(self):
        dist = default_distributions()

        def f(arr):
            return arr[:, 0] + 0.3 * arr[:, 2] + 0.05 * arr[:, 0] * arr[:, 2] / 10.0

        _, pce = pce_fit(f, dist, 600, 3, seed=8, n_boot=0)
        mc = saltelli_sobol(f, dist, 8000, seed=9, n_boot=0)
        assert np.abs(pce.s1 - mc.s1).max() <= 0.05
        assert np.abs(pce.stot - mc.stot).max() <= 0.05


class TestIshigami:
    def test_indices_within_tolerance(self):
        # classic three-input benchmark with analytic variance decomposition
        a, b = 7.0, 0.1
        dist = InputDistribution(
            {n: Uniform(-np.pi, np.pi) for n in ("x1", "x2", "x3")},
            names=("x1", "x2", "x3"),
        )

        def ishigami(arr):
            x1, x2, x3 = arr[:, 0], arr[:, 1], arr[:, 2]
            return np.sin(x1) + a * np.sin(x2) ** 2 + b * x3**4 * np.sin(x1)

        V1 = 0.5 * (1 + b * np.pi**4 / 5) ** 2
        V2 = a**2 / 8
        V13 = b**2 * np.pi**8 * 8 / 225
        V = V1 + V2 + V13
        s_exact = np.array([V1 / V, V2 / V, 0.0])
        st_exact = np.array([(V1 + V13) / V, V2 / V, V13 / V])

        _, res = pce_fit(ishigami, dist, 2000, 9, seed=10, n_boot=0)
        assert np.abs(res.s1 - s_exact).max() <= 0.02
        assert np.abs(res.stot - st_exact).max() <= 0.02
        assert res.q2 >= 0.99


class TestConvergenceTable:
    def test_reference_row_has_zero_deviation(self):
        dist = default_distributions()
        f = linear_map([1.0, 0.5, 0.2, 0.1, 0.05, 0.01])
        rows = sobol_convergence(f, dist, [200, 300, 400], seed=11, degree=2)
        assert rows[-1]["max_deviation"] == 0.0
        assert [r["n_param"] for r in rows] == [200, 300, 400]
        assert all("t_exec" in r and "q2" in r for r in rows)

    def test_requires_increasing_sizes(self):
        with pytest.raises(ValueError):
            sobol_convergence(linear_map([1] * 6), default_distributions(), [400, 200], seed=0)
