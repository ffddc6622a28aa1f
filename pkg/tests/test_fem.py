import numpy as np
import pytest

from ocuheat.fem import (
    ConvergenceError,
    DiscreteField,
    OutputFunctional,
    Parameter,
    PhysicalConstants,
    assemble_linear,
    boundary_load_function,
    boundary_mass,
    dsa_sweep,
    evaluate_output,
    h1_seminorm_error,
    interface_flux_jumps,
    l2_norm,
    linearize_hr,
    mass_matrix,
    region_stiffness,
    solve_linear,
    solve_nonlinear,
    stiffness,
    surface_mean,
    write_field_ascii,
)
from ocuheat.mesh import Mesh, RegionTable, generate_eye_2d, rectangle_mesh

CONSTS = PhysicalConstants()


def one_triangle(verts):
    return Mesh(
        dim=2,
        vertices=np.asarray(verts, dtype=float),
        cells=np.array([[0, 1, 2]]),
        cell_regions=np.array(["cornea"], dtype=object),
        facets=np.empty((0, 2), dtype=int),
        facet_labels=np.array([], dtype=object),
    )


class TestAssembly:
    def test_unit_right_triangle_stiffness(self):
        # exact P1 stiffness of the unit right triangle, by hand:
        # K = 1/2 * [[2,-1,-1],[-1,1,0],[-1,0,1]]
        mesh = one_triangle([[0, 0], [1, 0], [0, 1]])
        K = stiffness(mesh).toarray()
        exact = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]], dtype=float)
        assert np.allclose(K, exact, atol=1e-14)

    def test_stretched_triangle_stiffness(self):
        # triangle (0,0),(2,0),(0,1): gradients (-1/2,-1),(1/2,0),(0,1), area 1
        mesh = one_triangle([[0, 0], [2, 0], [0, 1]])
        K = stiffness(mesh).toarray()
        exact = np.array([[1.25, -0.25, -1.0], [-0.25, 0.25, 0.0], [-1.0, 0.0, 1.0]])
        assert np.allclose(K, exact, atol=1e-14)

    def test_skewed_triangle_stiffness(self):
        # triangle (0,0),(1,0),(1,1): gradients (-1,0),(1,-1),(0,1), area 1/2;
        # the edge matrix is non-symmetric, catching transposition slips
        mesh = one_triangle([[0, 0], [1, 0], [1, 1]])
        K = stiffness(mesh).toarray()
        exact = 0.5 * np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
        assert np.allclose(K, exact, atol=1e-14)

    def test_skewed_tet_stiffness(self):
        # tet (0,0,0),(1,0,0),(1,1,0),(1,1,1): volume 1/6, barycentric
        # gradients (-1,0,0),(1,-1,0),(0,1,-1),(0,0,1)
        mesh = Mesh(
            dim=3,
            vertices=np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]], dtype=float),
            cells=np.array([[0, 1, 2, 3]]),
            cell_regions=np.array(["cornea"], dtype=object),
            facets=np.empty((0, 3), dtype=int),
            facet_labels=np.array([], dtype=object),
        )
        K = stiffness(mesh).toarray()
        G = np.array([[-1, 0, 0], [1, -1, 0], [0, 1, -1], [0, 0, 1]], dtype=float)
        exact = (1.0 / 6.0) * G @ G.T
        assert np.allclose(K, exact, atol=1e-14)

    def test_reference_tet_stiffness(self):
        mesh = Mesh(
            dim=3,
            vertices=np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float),
            cells=np.array([[0, 1, 2, 3]]),
            cell_regions=np.array(["cornea"], dtype=object),
            facets=np.empty((0, 3), dtype=int),
            facet_labels=np.array([], dtype=object),
        )
        K = stiffness(mesh).toarray()
        exact = (1.0 / 6.0) * np.array(
            [[3, -1, -1, -1], [-1, 1, 0, 0], [-1, 0, 1, 0], [-1, 0, 0, 1]], dtype=float
        )
        assert np.allclose(K, exact, atol=1e-14)

    def test_boundary_mass_segment(self):
        mesh = two_cell_strip()
        M = boundary_mass(mesh, "amb").toarray()
        # single unit-length edge on x=0: L/6 * [[2,1],[1,2]]
        sub = M[np.ix_([0, 1], [0, 1])] + M[np.ix_([2, 3], [2, 3])]
        total = M.sum()
        assert total == pytest.approx(1.0, rel=1e-12)  # integral of 1 over unit edge

    def test_mass_matrix_integrates_one(self):
        mesh = rectangle_mesh(3, 3)
        M = mass_matrix(mesh)
        assert M.sum() == pytest.approx(1.0, rel=1e-12)

    def test_operator_symmetric_positive(self):
        mesh, _ = generate_eye_2d(1)
        A, f = assemble_linear(mesh, RegionTable.default(), CONSTS, Parameter.baseline())
        asym = abs(A - A.T).max() / abs(A).max()
        assert asym <= 1e-12
        rng = np.random.default_rng(0)
        for _ in range(5):
            v = rng.standard_normal(mesh.n_vertices)
            assert v @ (A @ v) > 0

    def test_zero_loads_without_labeled_boundary(self):
        mesh = one_triangle([[0, 0], [1, 0], [0, 1]])
        mu = Parameter.unbounded(h_amb=0.0, h_bl=0.0, E=0.0)
        A, f = assemble_linear(mesh, RegionTable.default(), CONSTS, mu)
        assert np.all(f == 0.0)

    def test_doubling_conductivity_doubles_interior_block(self):
        mesh, _ = generate_eye_2d(1)
        table = RegionTable.default()
        doubled = RegionTable({k: 2 * v for k, v in table.conductivity.items()})
        mu = Parameter.baseline()
        mu2 = mu.with_value("k_lens", 2 * mu.k_lens)
        A1, _ = assemble_linear(mesh, table, CONSTS, mu)
        A2, _ = assemble_linear(mesh, doubled, CONSTS, mu2)
        # the difference removes the (identical) boundary blocks exactly
        diff = A2 - A1
        total_stiff = sum(
            table.k(r) * region_stiffness(mesh, r) if r != "lens" else mu.k_lens * region_stiffness(mesh, r)
            for r in set(mesh.cell_regions)
        )
        assert abs(diff - total_stiff).max() <= 1e-12 * abs(total_stiff).max()

    def test_missing_region_named(self):
        mesh, _ = generate_eye_2d(1)
        table = RegionTable({"cornea": 0.58}, parametrized="cornea")
        with pytest.raises(KeyError, match="missing from region table"):
            assemble_linear(mesh, table, CONSTS, Parameter.baseline())


def two_cell_strip():
    def label(mid):
        if mid[0] < 1e-12:
            return "amb"
        if mid[0] > 1 - 1e-12:
            return "body"
        return None

    return rectangle_mesh(1, 1, label_fn=label)


class TestSolveLinear:
    def test_constant_field(self):
        mesh = rectangle_mesh(4, 4)
        M = mass_matrix(mesh)
        f = M @ np.ones(mesh.n_vertices)
        x = solve_linear(M.tocsr(), f, mesh=mesh)
        assert np.allclose(x.values, 1.0, atol=1e-10)

    def test_iterative_path_meets_residual_contract(self, monkeypatch):
        import ocuheat.fem as fem_mod

        monkeypatch.setattr(fem_mod, "_DIRECT_LIMIT", 10)
        mesh, _ = generate_eye_2d(1)
        A, f = assemble_linear(mesh, RegionTable.default(), CONSTS, Parameter.baseline())
        x = solve_linear(A, f)
        res = np.linalg.norm(A @ x - f) / np.linalg.norm(f)
        assert res <= 1e-10

    def test_load_linearity(self):
        mesh, _ = generate_eye_2d(1)
        A, f = assemble_linear(mesh, RegionTable.default(), CONSTS, Parameter.baseline())
        x1 = solve_linear(A, f)
        x3 = solve_linear(A, 3.0 * f)
        assert np.allclose(x3, 3.0 * x1, rtol=1e-9)

    def test_two_layer_slab_matches_series_resistance(self):
        # strip [0,2]x[0,0.2]; material A on x<1, B on x>1; exchange on both ends
        kA, kB = 0.5, 2.0
        h_left, T_left = 12.0, 350.0
        h_right, T_right = 30.0, 280.0

        def region(c):
            return "matA" if c[0] < 1.0 else "matB"

        def label(mid):
            if mid[0] < 1e-12:
                return "amb"
            if mid[0] > 2 - 1e-12:
                return "body"
            return None

        mesh = rectangle_mesh(24, 3, lx=2.0, ly=0.2, region_fn=region, label_fn=label)
        mesh = Mesh(2, mesh.vertices, mesh.cells, mesh.cell_regions, mesh.facets,
                    mesh.facet_labels, region_names=("matA", "matB"))
        table = RegionTable({"matA": kA, "matB": kB, "lens": 0.4}, parametrized="lens")
        consts = PhysicalConstants(h_r=6.0)
        mu = Parameter.unbounded(
            h_amb=h_left - consts.h_r, T_amb=T_left, E=0.0, h_bl=h_right, T_bl=T_right
        )
        A, f = assemble_linear(mesh, table, consts, mu)
        field = solve_linear(A, f, mesh=mesh)

        # series-resistance closed form for the interface temperature
        R = 1.0 / h_left + 1.0 / kA + 1.0 / kB + 1.0 / h_right
        q = (T_left - T_right) / R
        T_interface = T_left - q * (1.0 / h_left + 1.0 / kA)
        out = OutputFunctional.point(mesh, [1.0, 0.1], name="mid")
        assert evaluate_output(field, out) == pytest.approx(T_interface, rel=1e-3)
        # ends too
        T_end = T_left - q / h_left
        out0 = OutputFunctional.point(mesh, [0.0, 0.1], name="left")
        assert evaluate_output(field, out0) == pytest.approx(T_end, rel=1e-3)

    def test_baseline_corneal_point_band(self):
        mesh, points = generate_eye_2d(2)
        A, f = assemble_linear(mesh, RegionTable.default(), CONSTS, Parameter.baseline())
        field = solve_linear(A, f, mesh=mesh)
        out = OutputFunctional.point(mesh, points["O"], name="T_O")
        assert 303.0 <= evaluate_output(field, out) <= 310.0


class TestNonlinear:
    def test_zero_emissivity_reduces_to_linear(self):
        mesh, _ = generate_eye_2d(1)
        table = RegionTable.default()
        consts0 = PhysicalConstants(epsilon=0.0, h_r=1e-12)
        mu = Parameter.baseline()
        fld_nl, info = solve_nonlinear(mesh, table, consts0, mu)
        A, f = assemble_linear(mesh, table, consts0, mu)
        fld_l = solve_linear(A, f, mesh=mesh)
        assert np.allclose(fld_nl.values, fld_l.values, atol=1e-8)

    def test_baseline_newton_count_and_log(self):
        mesh, _ = generate_eye_2d(1)
        fld, info = solve_nonlinear(mesh, RegionTable.default(), CONSTS, Parameter.baseline())
        assert info["iterations"] <= 10
        res = info["residuals"]
        assert res[-1] <= 1e-10
        assert all(b < a for a, b in zip(res, res[1:]))

    def test_matched_hr_linearization_is_tight(self):
        mesh, _ = generate_eye_2d(1)
        table = RegionTable.default()
        fld_nl, _ = solve_nonlinear(mesh, table, CONSTS, Parameter.baseline())
        T_surf = surface_mean(mesh, fld_nl, "amb")
        hr = linearize_hr(T_surf, Parameter.baseline().T_amb, CONSTS)
        consts2 = PhysicalConstants(h_r=hr)
        A, f = assemble_linear(mesh, table, consts2, Parameter.baseline())
        fld_l = solve_linear(A, f, mesh=mesh)
        assert np.abs(fld_nl.values - fld_l.values).max() <= 0.01

    def test_divergence_raises_with_history(self):
        mesh, _ = generate_eye_2d(1)
        with pytest.raises(ConvergenceError) as err:
            solve_nonlinear(mesh, RegionTable.default(), CONSTS, Parameter.baseline(), max_iter=1)
        assert len(err.value.history) >= 1


class TestLinearizeHr:
    def test_reference_value_near_six(self):
        hr = linearize_hr(306.0, 298.0, CONSTS)
        assert 5.5 <= hr <= 6.5

    def test_equal_temperatures_identity(self):
        T = 300.0
        hr = linearize_hr(T, T, CONSTS)
        assert hr == pytest.approx(4 * CONSTS.sigma * CONSTS.epsilon * T**3, rel=1e-12)

    def test_zero_emissivity(self):
        assert linearize_hr(306.0, 298.0, PhysicalConstants(epsilon=0.0, h_r=1.0)) == 0.0

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            linearize_hr(-1.0, 298.0, CONSTS)


class TestOutputs:
    def test_constant_field_partition_of_unity(self):
        mesh, points = generate_eye_2d(1)
        field = DiscreteField(np.full(mesh.n_vertices, 310.0), mesh)
        for out in (
            OutputFunctional.point(mesh, points["O"], name="p"),
            OutputFunctional.region_mean(mesh, "cornea", name="m"),
        ):
            assert evaluate_output(field, out) == pytest.approx(310.0, abs=1e-10)

    def test_region_mean_of_linear_field_is_centroid_value(self):
        mesh, _ = generate_eye_2d(1)
        a, b, c = 3.0, 1.5, -2.0
        field = DiscreteField(a + b * mesh.vertices[:, 0] + c * mesh.vertices[:, 1], mesh)
        cells = mesh.cells_of_region("lens")
        vols = mesh.cell_volumes()[cells]
        cents = mesh.vertices[mesh.cells[cells]].mean(axis=1)
        centroid = (vols[:, None] * cents).sum(axis=0) / vols.sum()
        out = OutputFunctional.region_mean(mesh, "lens", name="m")
        expected = a + b * centroid[0] + c * centroid[1]
        assert evaluate_output(field, out) == pytest.approx(expected, abs=1e-10)

    def test_point_functional_at_vertex(self):
        mesh, _ = generate_eye_2d(1)
        v = 17
        out = OutputFunctional.point(mesh, mesh.vertices[v], name="p")
        rng = np.random.default_rng(1)
        field = DiscreteField(300 + rng.random(mesh.n_vertices), mesh)
        assert evaluate_output(field, out) == pytest.approx(field.values[v], abs=1e-10)
        assert np.count_nonzero(out.vector) <= mesh.dim + 1
        assert out.vector.sum() == pytest.approx(1.0, abs=1e-12)

    def test_mesh_mismatch_rejected(self):
        mesh1, _ = generate_eye_2d(1)
        mesh2 = rectangle_mesh(2, 2)
        out = OutputFunctional.point(mesh2, [0.5, 0.5], name="p")
        field = DiscreteField(np.zeros(mesh1.n_vertices), mesh1)
        with pytest.raises(ValueError):
            evaluate_output(field, out)


class TestMaximumPrinciple:
    def test_bounds_without_evaporation(self):
        mesh, _ = generate_eye_2d(1)
        table = RegionTable.default()
        rng = np.random.default_rng(5)
        for _ in range(4):
            vals = {
                "T_amb": rng.uniform(283.15, 303.15),
                "T_bl": rng.uniform(308, 312),
                "h_amb": rng.uniform(8, 100),
                "h_bl": rng.uniform(50, 110),
                "k_lens": rng.uniform(0.21, 0.544),
            }
            mu = Parameter.unbounded(E=0.0, **vals)
            A, f = assemble_linear(mesh, table, CONSTS, mu)
            field = solve_linear(A, f, mesh=mesh)
            lo = min(mu.T_amb, mu.T_bl) - 1e-8
            hi = max(mu.T_amb, mu.T_bl) + 1e-8
            assert field.values.min() >= lo
            assert field.values.max() <= hi


def robin_mms_solve(n):
    """Harmonic manufactured solution with matching exchange data on the
    unit square; returns (mesh, numerical field, exact callable)."""
    k = 0.7
    h = 5.0

    def exact(x):
        return np.exp(x[..., 0]) * np.cos(x[..., 1])

    def grad_exact(x):
        gx = np.exp(x[..., 0]) * np.cos(x[..., 1])
        gy = -np.exp(x[..., 0]) * np.sin(x[..., 1])
        return np.stack([gx, gy], axis=-1)

    def normal_of(mid):
        if mid[0] < 1e-12:
            return np.array([-1.0, 0.0])
        if mid[0] > 1 - 1e-12:
            return np.array([1.0, 0.0])
        if mid[1] < 1e-12:
            return np.array([0.0, -1.0])
        return np.array([0.0, 1.0])

    mesh = rectangle_mesh(n, n, region="cornea", label_fn=lambda mid: "amb")
    table = RegionTable({"cornea": k, "lens": 0.4}, parametrized="lens")
    consts = PhysicalConstants(h_r=1.0)
    h_amb = h - consts.h_r
    mu = Parameter.unbounded(h_amb=h_amb, E=0.0, T_amb=0.0, h_bl=50.0, T_bl=0.0)
    A, _ = assemble_linear(mesh, table, consts, mu)

    def robin_data(x):
        # g such that -k du/dn = h (u - g) holds for the manufactured field
        mids = x
        g = np.empty(len(mids))
        for i, xi in enumerate(mids):
            nvec = normal_of(xi)
            du_dn = grad_exact(xi[None, :])[0] @ nvec
            g[i] = exact(xi[None, :])[0] + (k / h) * du_dn
        return g

    f = h * boundary_load_function(mesh, "amb", robin_data)
    field = solve_linear(A, f, mesh=mesh)
    return mesh, field, exact, grad_exact


class TestManufacturedSolution:
    def test_l2_and_h1_rates(self):
        errs_l2, errs_h1, hs = [], [], []
        for n in (8, 16, 32):
            mesh, field, exact, grad_exact = robin_mms_solve(n)
            errs_l2.append(l2_norm(mesh, field.values, exact=exact))
            errs_h1.append(h1_seminorm_error(mesh, field.values, grad_exact))
            hs.append(1.0 / n)
        rates_l2 = np.log(np.array(errs_l2[:-1]) / errs_l2[1:]) / np.log(2.0)
        rates_h1 = np.log(np.array(errs_h1[:-1]) / errs_h1[1:]) / np.log(2.0)
        assert np.all(np.abs(rates_l2 - 2.0) <= 0.2)
        assert np.all(np.abs(rates_h1 - 1.0) <= 0.2)

    def test_flux_jump_decays_under_refinement(self):
        jumps = []
        for n in (8, 16, 32):
            mesh, field, _, _ = robin_mms_solve(n)
            table = RegionTable({"cornea": 0.7, "lens": 0.4}, parametrized="lens")
            jumps.append(interface_flux_jumps(mesh, field.values, table, Parameter.baseline()))
        assert jumps[1] < jumps[0] / 1.5
        assert jumps[2] < jumps[1] / 1.5


@pytest.fixture(scope="module")
def dsa_setup():
    mesh, points = generate_eye_2d(1)
    out = OutputFunctional.point(mesh, points["O"], name="T_O")
    return mesh, out


class TestDsaSweep:

    def test_single_value_equals_baseline_solve(self, dsa_setup):
        mesh, out = dsa_setup
        table = RegionTable.default()
        rows = dsa_sweep("T_amb", [298.0], Parameter.baseline(), [out],
                         mesh=mesh, regions=table, consts=CONSTS)
        fld, _ = solve_nonlinear(mesh, table, CONSTS, Parameter.baseline())
        assert rows[0]["T_O"] == pytest.approx(evaluate_output(fld, out), abs=1e-9)
        assert rows[0]["status"] == "ok"

    def test_ambient_temperature_sweep_monotone(self, dsa_setup):
        mesh, out = dsa_setup
        values = [283.15, 288.15, 293.15, 298.15, 303.15]
        rows = dsa_sweep("T_amb", values, Parameter.baseline(), [out],
                         mesh=mesh, regions=RegionTable.default(), consts=CONSTS)
        temps = [r["T_O"] for r in rows]
        assert all(b > a for a, b in zip(temps, temps[1:]))

    def test_air_exchange_sweep_drops_3K(self, dsa_setup):
        mesh, out = dsa_setup
        rows = dsa_sweep("h_amb", [8.0, 100.0], Parameter.baseline(), [out],
                         mesh=mesh, regions=RegionTable.default(), consts=CONSTS)
        assert rows[0]["T_O"] - rows[1]["T_O"] >= 3.0

    def test_unknown_parameter_rejected(self, dsa_setup):
        mesh, out = dsa_setup
        with pytest.raises(ValueError):
            dsa_sweep("T_core", [1.0], Parameter.baseline(), [out],
                      mesh=mesh, regions=RegionTable.default(), consts=CONSTS)


class TestParameter:
    def test_bounds_enforced(self):
        with pytest.raises(ValueError, match="T_amb"):
            Parameter(T_amb=270.0)
        Parameter.unbounded(T_amb=270.0)

    def test_baseline_values(self):
        mu = Parameter.baseline()
        assert mu.as_array().tolist() == [298.0, 310.0, 10.0, 65.0, 40.0, 0.4]

    def test_constants_validation(self):
        with pytest.raises(ValueError):
            PhysicalConstants(epsilon=1.5)
        with pytest.raises(ValueError):
            PhysicalConstants(h_r=0.0)
        assert PhysicalConstants().sigma == pytest.approx(5.67e-8)


def test_field_export_layout(tmp_path):
    mesh = rectangle_mesh(2, 1)
    field = DiscreteField(np.linspace(300, 301, mesh.n_vertices), mesh)
    path = tmp_path / "field.txt"
    write_field_ascii(path, mesh, field)
    lines = path.read_text().splitlines()
    nv, nc, dim = (int(t) for t in lines[0].split())
    assert (nv, nc, dim) == (mesh.n_vertices, mesh.n_cells, 2)
    assert len(lines[1].split()) == 3  # x y T
    assert lines[1 + nv] == "cells"
    assert len(lines) == 2 + nv + nc
