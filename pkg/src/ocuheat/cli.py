"""Command-line pipeline: mesh generation/import, high-fidelity solves,
parameter sweeps, reduced-model training and certified online evaluation,
uncertainty propagation and Sobol analyses.

JSON configs in, CSV/JSON artifacts out; every run writes a manifest with
checksums, seeds, versions and wall times.  Exit codes: 0 ok, 1 numerical
failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

THREADS_ENV = "OCUHEAT_THREADS"


class ConfigError(Exception):
    """Invalid configuration; the message names the offending field."""


def _apply_thread_env():
    n = os.environ.get(THREADS_ENV)
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


# ---------------------------------------------------------------------------
# small IO helpers
# ---------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_csv(path, header, rows):
    """Deterministic CSV: fixed header list, repr-style float formatting."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[h]) if isinstance(row, dict) else _fmt(row[i]) for i, h in enumerate(header)) + "\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, artifacts, seeds=None, timings=None, extra=None):
    import numpy
    import scipy

    from . import __version__

    manifest = {
        "artifacts": [
            {"path": str(p), "sha256": _sha256(p), "bytes": os.path.getsize(p)}
            for p in artifacts
            if os.path.exists(p)
        ],
        "seeds": seeds or {},
        "timings_s": {k: round(v, 6) for k, v in (timings or {}).items()},
        "versions": {
            "ocuheat": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what}: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what}: invalid JSON in {path}: {exc}") from None


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def parse_params(obj, where="params"):
    from .fem import PARAMETER_NAMES, Parameter, PhysicalConstants

    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - set(PARAMETER_NAMES) - {"relaxed", "constants"}
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for name in PARAMETER_NAMES:
        if name in obj:
            v = obj[name]
            if not isinstance(v, (int, float)):
                raise ConfigError(f"{where}.{name}: expected a number")
            kwargs[name] = float(v)
    consts_obj = obj.get("constants", {})
    if not isinstance(consts_obj, dict):
        raise ConfigError(f"{where}.constants: expected an object")
    try:
        consts = PhysicalConstants(
            epsilon=float(consts_obj.get("epsilon", 0.975)),
            h_r=float(consts_obj.get("h_r", 6.0)),
        )
        mu = Parameter(relaxed=bool(obj.get("relaxed", False)), **kwargs)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return mu, consts


def parse_outputs(obj, mesh, points, where="outputs"):
    from .fem import OutputFunctional

    if not isinstance(obj, list) or not obj:
        raise ConfigError(f"{where}: expected a non-empty list")
    outs = []
    for i, item in enumerate(obj):
        if not isinstance(item, dict) or "kind" not in item:
            raise ConfigError(f"{where}[{i}].kind: missing")
        kind = item["kind"]
        if kind == "point":
            if "coords" in item:
                xy = item["coords"]
                name = item.get("name", f"T({xy})")
                outs.append(OutputFunctional.point(mesh, xy, name=name))
            elif "name" in item:
                if points is None or item["name"] not in points:
                    raise ConfigError(
                        f"{where}[{i}].name: named point {item['name']!r} requires a"
                        " generated mesh (or give coords)"
                    )
                outs.append(
                    OutputFunctional.point(mesh, points[item["name"]], name="T_" + item["name"])
                )
            else:
                raise ConfigError(f"{where}[{i}]: point output needs name or coords")
        elif kind == "region_mean":
            if "region" not in item:
                raise ConfigError(f"{where}[{i}].region: missing")
            try:
                outs.append(
                    OutputFunctional.region_mean(
                        mesh, item["region"], name=item.get("name", "T_" + item["region"])
                    )
                )
            except ValueError as exc:
                raise ConfigError(f"{where}[{i}].region: {exc}") from None
        else:
            raise ConfigError(f"{where}[{i}].kind: unknown kind {kind!r}")
    return outs


_POINT_ORDER = ("O", "B1", "C", "D1", "G")


def default_outputs(mesh, points):
    from .fem import OutputFunctional

    names = [n for n in _POINT_ORDER if n in points]
    names += sorted(set(points) - set(names))
    outs = [OutputFunctional.point(mesh, points[n], name="T_" + n) for n in names]
    outs.append(OutputFunctional.region_mean(mesh, "cornea", name="T_cornea"))
    return outs


def load_mesh_arg(path, aliases_path=None):
    from .mesh import load_msh, load_points

    aliases = _load_json(aliases_path, "aliases") if aliases_path else None
    if not os.path.exists(path):
        raise ConfigError(f"mesh: file not found: {path}")
    mesh = load_msh(path, aliases=aliases)
    points = None
    sidecar = Path(str(path) + ".points.json")
    if sidecar.exists():
        points = load_points(sidecar)
    return mesh, points


def load_dist_arg(path):
    from .uq import InputDistribution, default_distributions

    if path is None:
        return default_distributions()
    obj = _load_json(path, "dist")
    try:
        return InputDistribution.from_json(obj)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"dist: {exc}") from None


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def cmd_mesh(args):
    from .mesh import generate_eye_2d, load_msh, write_msh, write_points

    if args.mesh_cmd == "generate":
        t0 = time.perf_counter()
        mesh, points = generate_eye_2d(args.refinement)
        write_msh(args.out, mesh)
        write_points(args.out + ".points.json", points)
        dt = time.perf_counter() - t0
        print(
            f"generated mesh: {mesh.n_vertices} vertices, {mesh.n_cells} cells,"
            f" {len(set(mesh.cell_regions))} regions -> {args.out}"
        )
        write_manifest(
            args.out + ".manifest.json",
            [args.out, args.out + ".points.json"],
            timings={"generate": dt},
            extra={"refinement": args.refinement},
        )
    else:  # check
        aliases = _load_json(args.aliases, "aliases") if args.aliases else None
        mesh = load_msh(args.path, aliases=aliases)
        mesh.validate()
        regions = sorted(set(mesh.cell_regions))
        print(
            f"OK: {mesh.n_vertices} vertices, {mesh.n_cells} cells ({mesh.dim}D);"
            f" regions: {', '.join(regions)}; boundary labels: {', '.join(mesh.boundary_labels)}"
        )
    return 0


def cmd_solve(args):
    from .fem import (
        evaluate_output,
        solve_linear,
        solve_nonlinear,
        assemble_linear,
        write_field_ascii,
    )

    mesh, points = load_mesh_arg(args.mesh, args.aliases)
    from .mesh import RegionTable

    mu, consts = parse_params(_load_json(args.params, "params") if args.params else {})
    regions = RegionTable.default()
    outs = (
        parse_outputs(_load_json(args.outputs, "outputs"), mesh, points)
        if args.outputs
        else default_outputs(mesh, points or {})
    )
    t0 = time.perf_counter()
    if args.model == "linear":
        A, f = assemble_linear(mesh, regions, consts, mu)
        field = solve_linear(A, f, mesh=mesh)
        iters = 0
    else:
        field, info = solve_nonlinear(mesh, regions, consts, mu)
        iters = info["iterations"]
    t_solve = time.perf_counter() - t0
    rows = [
        {"output": o.name, "value_K": evaluate_output(field, o), "model": args.model}
        for o in outs
    ]
    write_csv(args.csv, ["output", "value_K", "model"], rows)
    artifacts = [args.csv]
    if args.field_out:
        write_field_ascii(args.field_out, mesh, field)
        artifacts.append(args.field_out)
    for r in rows:
        print(f"{r['output']} = {r['value_K']:.4f} K")
    write_manifest(
        args.csv + ".manifest.json",
        artifacts,
        timings={"assemble_and_solve": t_solve},
        extra={"model": args.model, "newton_iterations": iters},
    )
    return 0


def cmd_dsa(args):
    from .fem import dsa_sweep
    from .mesh import RegionTable

    mesh, points = load_mesh_arg(args.mesh, args.aliases)
    mu, consts = parse_params(_load_json(args.params, "params") if args.params else {})
    try:
        values = [float(v) for v in args.values.split(",")]
    except ValueError:
        raise ConfigError(f"values: expected comma-separated numbers, got {args.values!r}")
    outs = (
        parse_outputs(_load_json(args.outputs, "outputs"), mesh, points)
        if args.outputs
        else default_outputs(mesh, points or {})
    )
    t0 = time.perf_counter()
    rows = dsa_sweep(args.param, values, mu, outs, mesh=mesh, regions=RegionTable.default(), consts=consts)
    dt = time.perf_counter() - t0
    header = [args.param] + [o.name + "_K" for o in outs] + ["status", "newton_iterations"]
    out_rows = []
    for row in rows:
        r = {args.param: row[args.param], "status": row["status"], "newton_iterations": row["newton_iterations"]}
        for o in outs:
            r[o.name + "_K"] = row[o.name]
        out_rows.append(r)
    write_csv(args.csv, header, out_rows)
    if args.figure:
        from .report import dsa_figure

        dsa_figure(args.param, out_rows, [o.name + "_K" for o in outs], args.figure)
    write_manifest(
        args.csv + ".manifest.json",
        [args.csv] + ([args.figure] if args.figure else []),
        timings={"sweep": dt},
        extra={"param": args.param, "n_values": len(values)},
    )
    return 0


def _outputs_for_reduce(mesh, points, outputs_path):
    if outputs_path:
        return parse_outputs(_load_json(outputs_path, "outputs"), mesh, points)
    return default_outputs(mesh, points or {})


def cmd_reduce(args):
    from .affine import build_affine
    from .mesh import RegionTable
    from .fem import PhysicalConstants
    from .rbm import greedy_train, save_model, train_sample, x_inner_product

    mesh, points = load_mesh_arg(args.mesh, args.aliases)
    regions = RegionTable.default()
    consts = PhysicalConstants()
    outs = _outputs_for_reduce(mesh, points, args.outputs)
    t0 = time.perf_counter()
    affine = build_affine(mesh, regions, consts, outputs=outs)
    X = x_inner_product(mesh, regions, consts)
    train = train_sample(args.train_size, seed=args.seed)
    rm = greedy_train(affine, X, train, eps_tol=args.tol, n_max=args.nmax)
    dt = time.perf_counter() - t0
    save_model(args.out, rm)
    print(
        f"trained reduced model: N={rm.n}, final max bound {rm.history[-1][1]:.3e},"
        f" offline {dt:.1f} s -> {args.out}"
    )
    write_manifest(
        args.out + ".manifest.json",
        [args.out],
        seeds={"train": args.seed},
        timings={"offline": dt},
        extra={
            "N": rm.n,
            "tol": args.tol,
            "n_max": args.nmax,
            "train_size": args.train_size,
            "greedy_history": [[n, b] for n, b in rm.history],
            "aborted": rm.aborted,
        },
    )
    return 0


def cmd_online(args):
    from .fem import Parameter
    from .rbm import load_model, online_solve

    rm = load_model(args.model)
    mu, _ = parse_params(_load_json(args.params, "params") if args.params else {})
    sol = online_solve(rm, mu)
    rows = []
    for name, s, ds in zip(rm.output_names, sol.outputs, sol.certificate.delta_s):
        rows.append(
            {
                "output": name,
                "value_K": s,
                "bound_K": ds,
                "delta_field": sol.certificate.delta,
                "alpha_lb": sol.certificate.alpha_lb,
                "t_online_s": sol.t_wall,
            }
        )
    write_csv(
        args.csv,
        ["output", "value_K", "bound_K", "delta_field", "alpha_lb", "t_online_s"],
        rows,
    )
    for r in rows:
        print(f"{r['output']} = {r['value_K']:.4f} K  (bound {r['bound_K']:.2e})")
    timings = {"online": sol.t_wall}
    extra = {"N": rm.n}
    if args.compare_fem:
        if not args.mesh:
            raise ConfigError("compare-fem: --mesh is required")
        from .fem import solve_and_time
        from .mesh import RegionTable
        from .fem import PhysicalConstants

        mesh, _ = load_mesh_arg(args.mesh, None)
        _, _, t_fem = solve_and_time(mesh, RegionTable.default(), PhysicalConstants(), mu)
        timings["fem_fresh_solve"] = t_fem
        extra["speedup"] = t_fem / max(sol.t_wall, 1e-12)
        print(f"fresh FEM solve: {t_fem:.3f} s; online: {sol.t_wall*1e3:.3f} ms; speedup {extra['speedup']:.0f}x")
    write_manifest(args.csv + ".manifest.json", [args.csv], timings=timings, extra=extra)
    return 0


def cmd_propagate(args):
    from .rbm import load_model
    from .uq import propagate

    rm = load_model(args.model)
    dist = load_dist_arg(args.dist)
    res = propagate(rm, dist, args.n, seed=args.seed)
    stat_rows = [
        {"output": n, "mean_K": m, "std_K": s, "n": res.n, "n_failed": res.n_failed}
        for n, m, s in zip(res.names, res.mean, res.std)
    ]
    write_csv(args.csv, ["output", "mean_K", "std_K", "n", "n_failed"], stat_rows)
    hist_rows = []
    for name, (edges, counts) in zip(res.names, res.histograms):
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            hist_rows.append({"output": name, "bin_lo_K": lo, "bin_hi_K": hi, "count": int(c)})
    write_csv(args.hist, ["output", "bin_lo_K", "bin_hi_K", "count"], hist_rows)
    artifacts = [args.csv, args.hist]
    if args.figure:
        from .report import histogram_figure

        histogram_figure(res, args.figure)
        artifacts.append(args.figure)
    for r in stat_rows:
        print(f"{r['output']}: mean {r['mean_K']:.3f} K, std {r['std_K']:.3f} K")
    write_manifest(
        args.csv + ".manifest.json",
        artifacts,
        seeds={"propagate": args.seed},
        timings={"propagate": res.t_wall},
        extra={"n": res.n, "n_failed": res.n_failed},
    )
    return 0


def _sobol_rows(res):
    rows = []
    for j, name in enumerate(res.names):
        rows.append(
            {
                "input": name,
                "S1": res.s1[j],
                "S1_lo": res.s1_ci[j, 0],
                "S1_hi": res.s1_ci[j, 1],
                "Stot": res.stot[j],
                "Stot_lo": res.stot_ci[j, 0],
                "Stot_hi": res.stot_ci[j, 1],
                "Q2": res.q2,
                "method": res.method,
                "n_param": res.n_param,
                "degree": res.degree if res.degree is not None else "",
                "degenerate": int(res.degenerate),
            }
        )
    return rows


def cmd_sobol(args):
    from .rbm import load_model
    from .uq import pce_fit, saltelli_sobol

    rm = load_model(args.model)
    dist = load_dist_arg(args.dist)
    output = args.output
    if output not in rm.output_names:
        raise ConfigError(f"output: {output!r} not among model outputs {rm.output_names}")
    if args.method == "pce":
        _, res = pce_fit(rm, dist, args.nparam, args.degree, seed=args.seed, output=output, n_boot=args.bootstrap)
    else:
        res = saltelli_sobol(rm, dist, args.nparam, seed=args.seed, output=output, n_boot=args.bootstrap)
    rows = _sobol_rows(res)
    header = [
        "input", "S1", "S1_lo", "S1_hi", "Stot", "Stot_lo", "Stot_hi",
        "Q2", "method", "n_param", "degree", "degenerate",
    ]
    write_csv(args.csv, header, rows)
    artifacts = [args.csv]
    if args.figure:
        from .report import sobol_figure

        sobol_figure(res, output, args.figure)
        artifacts.append(args.figure)
    for r in rows:
        print(f"{r['input']}: S1={r['S1']:.4f}  Stot={r['Stot']:.4f}")
    if args.method == "pce":
        print(f"Q2 = {res.q2:.6f}")
    write_manifest(
        args.csv + ".manifest.json",
        artifacts,
        seeds={"sobol": args.seed},
        timings={"sobol": res.t_wall},
        extra={"method": args.method, "output": output},
    )
    return 0


# ---------------------------------------------------------------------------
# reproduce presets
# ---------------------------------------------------------------------------

DSA_GRIDS = {
    "E": [20, 50, 80, 110, 140, 170, 200, 230, 260, 290, 320],
    "h_amb": [8, 10, 15, 20, 30, 50, 75, 100],
    "h_bl": [50, 60, 65, 70, 80, 90, 100, 110, 120],
    "k_lens": [0.21, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.544],
    "T_amb": [283.15, 285.65, 288.15, 290.65, 293.15, 295.65, 298.15, 300.65, 303.15],
    "T_bl": [308.0, 308.52, 309.04, 309.56, 310.08, 310.59, 311.11, 311.63, 312.15],
}

_DSA_PRESETS = {
    "dsa-E": "E",
    "dsa-hamb": "h_amb",
    "dsa-hbl": "h_bl",
    "dsa-klens": "k_lens",
    "dsa-Tamb": "T_amb",
    "dsa-Tbl": "T_bl",
}

PRESETS = sorted(_DSA_PRESETS) + [
    "rbm-convergence",
    "effectivity",
    "propagate-10k",
    "sobol-O",
    "sobol-cornea",
    "sobol-B1",
    "sobol-C",
    "sobol-D1",
    "sobol-G",
    "sobol-convergence",
]


def _workdir_model(workdir, refinement, figures=True):
    """Generate (or reuse) the cached mesh and trained model of a workdir."""
    from .affine import build_affine
    from .fem import PhysicalConstants
    from .mesh import RegionTable, generate_eye_2d
    from .rbm import greedy_train, load_model, save_model, train_sample, x_inner_product

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    tag = f"ref{refinement}"
    model_path = workdir / f"model-{tag}.rbm.npz"
    mesh, points = generate_eye_2d(refinement)
    outs = default_outputs(mesh, points)
    regions = RegionTable.default()
    consts = PhysicalConstants()
    if model_path.exists():
        rm = load_model(model_path)
    else:
        affine = build_affine(mesh, regions, consts, outputs=outs)
        X = x_inner_product(mesh, regions, consts)
        rm = greedy_train(affine, X, train_sample(1000, seed=42), eps_tol=1e-6, n_max=20)
        save_model(model_path, rm)
    return mesh, points, outs, rm, model_path


def cmd_reproduce(args):
    import numpy as np

    from .fem import (
        Parameter,
        PhysicalConstants,
        dsa_sweep,
        solve_and_time,
    )
    from .mesh import RegionTable, generate_eye_2d
    from .rbm import online_solve, online_solve_many
    from .uq import default_distributions, pce_fit, propagate, sobol_convergence

    name = args.name
    if name not in PRESETS:
        raise ConfigError(f"name: unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    fig = args.figures
    csv_path = workdir / f"{name}.csv"
    fig_path = workdir / f"{name}.png"
    t0 = time.perf_counter()
    seeds = {}
    extra = {"preset": name, "refinement": args.refinement}
    artifacts = [csv_path]

    if name in _DSA_PRESETS:
        param = _DSA_PRESETS[name]
        mesh, points = generate_eye_2d(args.refinement)
        outs = default_outputs(mesh, points)
        rows = dsa_sweep(
            param,
            DSA_GRIDS[param],
            Parameter.baseline(),
            outs,
            mesh=mesh,
            regions=RegionTable.default(),
            consts=PhysicalConstants(),
        )
        header = [param] + [o.name + "_K" for o in outs] + ["status", "newton_iterations"]
        out_rows = []
        for row in rows:
            r = {param: row[param], "status": row["status"], "newton_iterations": row["newton_iterations"]}
            for o in outs:
                r[o.name + "_K"] = row[o.name]
            out_rows.append(r)
        write_csv(csv_path, header, out_rows)
        if fig:
            from .report import dsa_figure

            dsa_figure(param, out_rows, [o.name + "_K" for o in outs], fig_path)
            artifacts.append(fig_path)

    elif name in ("rbm-convergence", "effectivity"):
        from .affine import build_affine
        from .fem import solve_linear
        from .rbm import train_sample, x_inner_product

        mesh, points, outs, rm, model_path = _workdir_model(args.workdir, args.refinement)
        artifacts.append(model_path)
        regions = RegionTable.default()
        consts = PhysicalConstants()
        affine = build_affine(mesh, regions, consts, outputs=outs)
        X = x_inner_product(mesh, regions, consts)
        test = train_sample(100, seed=777)
        seeds["test_set"] = 777
        fem = np.array([solve_linear(affine.operator(mu), affine.load(mu)) for mu in test])
        s_fem = fem @ np.array([o.vector for o in outs]).T
        rows = []
        sizes = [n for n in range(2, rm.n + 1, 2)]
        for n in sizes:
            sub = rm.truncate(n)
            res = online_solve_many(sub, test)
            err = fem - res["coefficients"] @ sub.basis.T
            xnorm = np.sqrt(np.einsum("ij,ij->i", err, (X @ err.T).T))
            eta = res["delta"] / np.maximum(xnorm, 1e-300)
            out_err = np.abs(s_fem[:, 0] - res["outputs"][:, 0])
            if name == "rbm-convergence":
                rows.append(
                    {
                        "N": n,
                        "mean_err_X": xnorm.mean(),
                        "max_err_X": xnorm.max(),
                        "mean_bound_X": res["delta"].mean(),
                        "max_bound_X": res["delta"].max(),
                        "mean_err_T_O_K": out_err.mean(),
                        "max_err_T_O_K": out_err.max(),
                    }
                )
            else:
                rows.append(
                    {
                        "N": n,
                        "eta_min": eta.min(),
                        "eta_mean": eta.mean(),
                        "eta_max": eta.max(),
                    }
                )
        if name == "rbm-convergence":
            header = ["N", "mean_err_X", "max_err_X", "mean_bound_X", "max_bound_X", "mean_err_T_O_K", "max_err_T_O_K"]
            # timing comparison: fresh FEM vs certified online solve
            mu = Parameter.baseline()
            _, _, t_fem = solve_and_time(mesh, regions, consts, mu)
            sol = online_solve(rm, mu)
            for _ in range(20):  # median of repeats, first call pays warmup
                sol = online_solve(rm, mu)
            extra["timing"] = {
                "fem_dofs": mesh.n_vertices,
                "fem_fresh_solve_s": t_fem,
                "online_solve_s": sol.t_wall,
                "speedup": t_fem / max(sol.t_wall, 1e-12),
                "N": rm.n,
            }
        else:
            header = ["N", "eta_min", "eta_mean", "eta_max"]
        write_csv(csv_path, header, rows)
        if fig:
            from .report import convergence_figure, effectivity_figure

            if name == "rbm-convergence":
                convergence_figure(rows, fig_path)
            else:
                effectivity_figure(rows, fig_path)
            artifacts.append(fig_path)

    elif name == "propagate-10k":
        mesh, points, outs, rm, model_path = _workdir_model(args.workdir, args.refinement)
        artifacts.append(model_path)
        dist = default_distributions()
        seeds["propagate"] = 2024
        res = propagate(rm, dist, 10000, seed=2024)
        rows = [
            {"output": n, "mean_K": m, "std_K": s, "n": res.n, "n_failed": res.n_failed}
            for n, m, s in zip(res.names, res.mean, res.std)
        ]
        write_csv(csv_path, ["output", "mean_K", "std_K", "n", "n_failed"], rows)
        hist_path = workdir / f"{name}-hist.csv"
        hist_rows = []
        for oname, (edges, counts) in zip(res.names, res.histograms):
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                hist_rows.append({"output": oname, "bin_lo_K": lo, "bin_hi_K": hi, "count": int(c)})
        write_csv(hist_path, ["output", "bin_lo_K", "bin_hi_K", "count"], hist_rows)
        artifacts.append(hist_path)
        extra["t_propagate_s"] = res.t_wall
        if fig:
            from .report import histogram_figure

            histogram_figure(res, fig_path)
            artifacts.append(fig_path)

    elif name.startswith("sobol-") and name != "sobol-convergence":
        target = "T_" + name.split("-", 1)[1]
        mesh, points, outs, rm, model_path = _workdir_model(args.workdir, args.refinement)
        artifacts.append(model_path)
        dist = default_distributions()
        seeds["sobol"] = 11
        _, res = pce_fit(rm, dist, 200, 3, seed=11, output=target)
        rows = _sobol_rows(res)
        header = [
            "input", "S1", "S1_lo", "S1_hi", "Stot", "Stot_lo", "Stot_hi",
            "Q2", "method", "n_param", "degree", "degenerate",
        ]
        write_csv(csv_path, header, rows)
        if fig:
            from .report import sobol_figure

            sobol_figure(res, target, fig_path)
            artifacts.append(fig_path)

    else:  # sobol-convergence
        mesh, points, outs, rm, model_path = _workdir_model(args.workdir, args.refinement)
        artifacts.append(model_path)
        dist = default_distributions()
        seeds["sobol"] = 11
        rows = sobol_convergence(rm, dist, [200, 400, 600, 1000], seed=11, degree=3, output="T_O")
        write_csv(csv_path, ["n_param", "max_deviation", "t_exec", "q2"], rows)
        if fig:
            from .report import sobol_convergence_figure

            sobol_convergence_figure(rows, fig_path)
            artifacts.append(fig_path)

    write_manifest(
        workdir / f"{name}.manifest.json",
        artifacts,
        seeds=seeds,
        timings={"total": time.perf_counter() - t0},
        extra=extra,
    )
    print(f"preset {name}: artifacts in {workdir}")
    return 0


def cmd_run(args):
    cfg = _load_json(args.config, "config")
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected an object")
    task = cfg.get("task")
    known = {"mesh", "solve", "dsa", "reduce", "online", "propagate", "sobol", "reproduce"}
    if task not in known:
        raise ConfigError(f"config.task: expected one of {sorted(known)}, got {task!r}")
    argv = [task]
    positional = ("mesh_cmd", "name", "path") if task in ("mesh", "reproduce") else ()
    for key in positional:
        if key in cfg:
            argv.append(str(cfg[key]))
    for key, val in cfg.items():
        if key == "task" or key in positional:
            continue
        if not isinstance(key, str):
            raise ConfigError("config: option names must be strings")
        if isinstance(val, bool):
            if val:
                argv.append(f"--{key}")
        elif isinstance(val, list):
            argv.extend([f"--{key}", ",".join(str(v) for v in val)])
        else:
            argv.extend([f"--{key}", str(val)])
    return main(argv)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="ocuheat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("mesh", help="generate or check meshes")
    pmsub = pm.add_subparsers(dest="mesh_cmd", required=True)
    pg = pmsub.add_parser("generate", help="generate the built-in eye-like mesh")
    pg.add_argument("--refinement", type=int, default=2)
    pg.add_argument("--out", required=True)
    pc = pmsub.add_parser("check", help="parse and validate an MSH file")
    pc.add_argument("path")
    pc.add_argument("--aliases", help="JSON map physical-name -> canonical name")
    pm.set_defaults(func=cmd_mesh)

    ps = sub.add_parser("solve", help="high-fidelity solve")
    ps.add_argument("--mesh", required=True)
    ps.add_argument("--aliases")
    ps.add_argument("--params", help="JSON parameter file (defaults: baseline)")
    ps.add_argument("--model", choices=["linear", "nonlinear"], default="nonlinear")
    ps.add_argument("--outputs", help="JSON output list")
    ps.add_argument("--csv", required=True)
    ps.add_argument("--field-out", dest="field_out")
    ps.set_defaults(func=cmd_solve)

    pd = sub.add_parser("dsa", help="one-at-a-time parameter sweep")
    pd.add_argument("--mesh", required=True)
    pd.add_argument("--aliases")
    pd.add_argument("--param", required=True)
    pd.add_argument("--values", required=True, help="comma-separated values")
    pd.add_argument("--params", help="baseline parameter JSON")
    pd.add_argument("--outputs")
    pd.add_argument("--csv", required=True)
    pd.add_argument("--figure")
    pd.set_defaults(func=cmd_dsa)

    pr = sub.add_parser("reduce", help="train the certified reduced model")
    pr.add_argument("--mesh", required=True)
    pr.add_argument("--aliases")
    pr.add_argument("--outputs")
    pr.add_argument("--tol", type=float, default=1e-6)
    pr.add_argument("--nmax", type=int, default=20)
    pr.add_argument("--train-size", dest="train_size", type=int, default=1000)
    pr.add_argument("--seed", type=int, default=42)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_reduce)

    po = sub.add_parser("online", help="certified online solve")
    po.add_argument("--model", required=True)
    po.add_argument("--params")
    po.add_argument("--csv", required=True)
    po.add_argument("--compare-fem", dest="compare_fem", action="store_true")
    po.add_argument("--mesh", help="mesh for --compare-fem")
    po.set_defaults(func=cmd_online)

    pp = sub.add_parser("propagate", help="Monte-Carlo uncertainty propagation")
    pp.add_argument("--model", required=True)
    pp.add_argument("--dist", help="JSON marginals (defaults: built-in)")
    pp.add_argument("--n", type=int, default=10000)
    pp.add_argument("--seed", type=int, default=2024)
    pp.add_argument("--csv", required=True)
    pp.add_argument("--hist", required=True)
    pp.add_argument("--figure")
    pp.set_defaults(func=cmd_propagate)

    pq = sub.add_parser("sobol", help="variance-based sensitivity indices")
    pq.add_argument("--model", required=True)
    pq.add_argument("--dist")
    pq.add_argument("--method", choices=["pce", "saltelli"], default="pce")
    pq.add_argument("--nparam", type=int, default=200)
    pq.add_argument("--degree", type=int, default=3)
    pq.add_argument("--seed", type=int, default=11)
    pq.add_argument("--output", default="T_O")
    pq.add_argument("--bootstrap", type=int, default=500)
    pq.add_argument("--csv", required=True)
    pq.add_argument("--figure")
    pq.set_defaults(func=cmd_sobol)

    pz = sub.add_parser("reproduce", help="run a canned experiment preset")
    pz.add_argument("name", help=", ".join(PRESETS))
    pz.add_argument("--workdir", default="reproduce-out")
    pz.add_argument("--refinement", type=int, default=2)
    pz.add_argument("--figures", dest="figures", action="store_true", default=True)
    pz.add_argument("--no-figures", dest="figures", action="store_false")
    pz.set_defaults(func=cmd_reproduce)

    pu = sub.add_parser("run", help="execute a task described by a config JSON")
    pu.add_argument("config")
    pu.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # numerical / data errors
        from .fem import ConvergenceError, SolverError
        from .mesh import MeshParseError, MeshValidationError

        if isinstance(exc, (SolverError, ConvergenceError, MeshParseError, MeshValidationError, ValueError, KeyError)):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
