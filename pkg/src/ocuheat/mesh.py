"""Region-tagged simplicial meshes: MSH import/export, built-in eye-like
geometry generator, point location."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# Canonical tissue names accepted without being declared by the caller.
CANONICAL_REGIONS = (
    "cornea",
    "aqueousHumor",
    "lens",
    "vitreousHumor",
    "iris",
    "retina",
    "choroid",
    "sclera",
    "lamina",
    "opticNerve",
)

BOUNDARY_LABELS = ("amb", "body")

# Baseline conductivities [W/m/K].
DEFAULT_CONDUCTIVITIES = {
    "cornea": 0.58,
    "aqueousHumor": 0.28,
    "lens": 0.4,
    "vitreousHumor": 0.603,
    "iris": 1.0042,
    "retina": 0.52,
    "choroid": 0.52,
    "sclera": 1.0042,
    "lamina": 1.0042,
    "opticNerve": 1.0042,
}


class MeshParseError(Exception):
    """Malformed mesh file; carries the offending 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshValidationError(Exception):
    """Mesh violates a structural invariant (labels, conformity, orientation)."""


@dataclass(frozen=True)
class Mesh:
    """Conforming simplicial mesh with per-cell region names and labeled
    boundary facets.

    Attributes
    ----------
    dim : int
        Spatial dimension, 2 (triangles) or 3 (tetrahedra).
    vertices : (nv, dim) float array
        Vertex coordinates in meters.
    cells : (nc, dim+1) int array
        Vertex indices of each cell, positively oriented.
    cell_regions : (nc,) str array
        Region name of each cell.
    facets : (nf, dim) int array
        Vertex indices of each labeled boundary facet.
    facet_labels : (nf,) str array
        Boundary label of each facet, one of ``amb`` / ``body``.
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    cell_regions: np.ndarray
    facets: np.ndarray
    facet_labels: np.ndarray
    region_names: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "cells", np.ascontiguousarray(self.cells, dtype=np.int64))
        object.__setattr__(self, "cell_regions", np.asarray(self.cell_regions, dtype=object))
        nfv = self.dim  # facet vertex count
        facets = np.asarray(self.facets, dtype=np.int64).reshape(-1, nfv)
        object.__setattr__(self, "facets", facets)
        object.__setattr__(self, "facet_labels", np.asarray(self.facet_labels, dtype=object))
        for a in (self.vertices, self.cells, self.facets):
            a.setflags(write=False)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def boundary_labels(self):
        return tuple(sorted(set(self.facet_labels)))

    def cells_of_region(self, name):
        """Indices of cells carrying region ``name``."""
        return np.flatnonzero(self.cell_regions == name)

    def facets_of_label(self, label):
        """Indices of boundary facets carrying ``label``."""
        return np.flatnonzero(self.facet_labels == label)

    def cell_volumes(self):
        """Signed simplex volumes under the stored vertex ordering."""
        v = self.vertices[self.cells]
        e = v[:, 1:, :] - v[:, :1, :]
        if self.dim == 2:
            det = e[:, 0, 0] * e[:, 1, 1] - e[:, 0, 1] * e[:, 1, 0]
            return det / 2.0
        det = np.linalg.det(e)
        return det / 6.0

    def facet_measures(self, facets=None):
        """Lengths (2D) or areas (3D) of boundary facets."""
        f = self.facets if facets is None else facets
        v = self.vertices[f]
        if self.dim == 2:
            return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
        cr = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return 0.5 * np.linalg.norm(cr, axis=1)

    def validate(self):
        """Check all structural invariants; raises MeshValidationError."""
        if self.vertices.shape[1] != self.dim:
            raise MeshValidationError(
                f"vertex coordinates have {self.vertices.shape[1]} components, expected {self.dim}"
            )
        known = set(CANONICAL_REGIONS) | set(self.region_names)
        for i, name in enumerate(self.cell_regions):
            if name not in known:
                raise MeshValidationError(f"cell {i} has unknown region label {name!r}")
        for i, lab in enumerate(self.facet_labels):
            if lab not in BOUNDARY_LABELS:
                raise MeshValidationError(
                    f"facet {i} has label {lab!r}, expected one of {BOUNDARY_LABELS}"
                )
        vols = self.cell_volumes()
        bad = np.flatnonzero(vols <= 0)
        if bad.size:
            raise MeshValidationError(
                f"cell {bad[0]} has non-positive volume {vols[bad[0]]:.3e}"
            )
        # Conformity: every facet of every cell occurs once (boundary) or
        # twice (interior); labeled facets must be boundary facets.
        counts = _facet_counts(self.cells, self.dim)
        over = [k for k, c in counts.items() if c > 2]
        if over:
            raise MeshValidationError(f"facet {over[0]} shared by more than 2 cells")
        for i, f in enumerate(self.facets):
            key = tuple(sorted(f.tolist()))
            c = counts.get(key)
            if c is None:
                raise MeshValidationError(f"labeled facet {i} is not a facet of any cell")
            if c != 1:
                raise MeshValidationError(f"labeled facet {i} is interior (shared by {c} cells)")
        return self


def _facet_counts(cells, dim):
    counts = {}
    nloc = dim + 1
    for row in cells:
        for drop in range(nloc):
            key = tuple(sorted(np.delete(row, drop).tolist()))
            counts[key] = counts.get(key, 0) + 1
    return counts


def boundary_facets(mesh):
    """All geometric boundary facets (vertex tuples) of a mesh, labeled or not."""
    counts = _facet_counts(mesh.cells, mesh.dim)
    return [k for k, c in counts.items() if c == 1]


@dataclass
class RegionTable:
    """Thermal conductivity per region with one region flagged as the
    parametrized conductivity (the lens by default)."""

    conductivity: dict
    parametrized: str = "lens"

    def __post_init__(self):
        for name, k in self.conductivity.items():
            if not k > 0:
                raise ValueError(f"conductivity of region {name!r} must be positive, got {k}")
        if self.parametrized not in self.conductivity:
            raise ValueError(f"parametrized region {self.parametrized!r} not in table")

    @classmethod
    def default(cls):
        return cls(dict(DEFAULT_CONDUCTIVITIES), parametrized="lens")

    def k(self, region):
        try:
            return self.conductivity[region]
        except KeyError:
            raise KeyError(f"region {region!r} missing from region table") from None


# ---------------------------------------------------------------------------
# Built-in eye-like generator
# ---------------------------------------------------------------------------

# Geometry of the layered cross-section [m].  The globe is a disc of
# radius _R_OUTER whose anterior segment (|theta| < _THETA_CORNEA, anterior
# pole at +x) protrudes by _BULGE, giving an axial length of 24 mm.  Shell
# layers from the outside in: sclera, choroid, retina; the vascular layers
# stop at _THETA_ORA, leaving an avascular ring behind the corneal rim.
# In the anterior sector the outer band is the cornea with the aqueous
# chamber beneath it, then the lens diaphragm and a posterior aqueous
# film; the diaphragm extends to _THETA_DIAPHRAGM.
_R_OUTER = 11.0e-3
_R_SCLERA_IN = 10.3e-3
_R_CHOROID_IN = 10.08e-3
_R_SHELL_IN = 9.86e-3
_R_LENS_OUT = 6.0e-3
_R_LENS_IN = 3.0e-3
_R_POST = 2.0e-3
_THETA_CORNEA = np.deg2rad(42.0)  # angular half-extent of the exposed arc
_THETA_ORA = np.deg2rad(50.0)  # vascular shell starts here (avascular ring before it)
_THETA_DIAPHRAGM = np.deg2rad(67.0)  # angular half-extent of lens/chamber
_BULGE = 2.0e-3  # anterior protrusion of the corneal surface
_BULGE_EXPONENT = 2.5  # shape of the protrusion taper

# Appendages extruded radially behind the globe: the optic-nerve stalk at
# the posterior pole and two episcleral tissue pads (muscle/vessel
# insertions).  (lo, hi) are folded angles, layers list (thickness, region)
# with the last layer absorbing the rest of the length.
_APPENDAGES = (
    {
        "lo": np.deg2rad(166.0),
        "hi": np.pi,
        "length": 12.0e-3,
        "layers": ((1.0e-3, "lamina"), (None, "opticNerve")),
        "mirror": False,  # footprint already spans both halves via folding
    },
    {
        "lo": np.deg2rad(141.0),
        "hi": np.deg2rad(164.0),
        "length": 16.0e-3,
        "layers": ((None, "sclera"),),
        "mirror": True,
    },
)

#: Region pairs that may share an interface in the generated geometry.
EYE_ADJACENCY = frozenset(
    frozenset(p)
    for p in [
        ("cornea", "aqueousHumor"),
        ("cornea", "sclera"),
        ("aqueousHumor", "lens"),
        ("aqueousHumor", "vitreousHumor"),
        ("aqueousHumor", "retina"),
        ("aqueousHumor", "choroid"),
        ("aqueousHumor", "sclera"),
        ("lens", "vitreousHumor"),
        ("vitreousHumor", "retina"),
        ("retina", "choroid"),
        ("choroid", "sclera"),
        ("sclera", "lamina"),
        ("lamina", "opticNerve"),
    ]
)


def _refinement_grid(refinement):
    """Ring radii and polar angles for the layered disc, with every
    material interface exactly on a grid line.  Angles mirror about the
    horizontal axis so the mesh is symmetric in y."""
    s = 2 ** (refinement - 1)
    radial_bands = [
        (0.0, _R_POST, 2),
        (_R_POST, _R_LENS_IN, 1),
        (_R_LENS_IN, _R_LENS_OUT, 3),
        (_R_LENS_OUT, _R_SHELL_IN, 4),
        (_R_SHELL_IN, _R_CHOROID_IN, 1),
        (_R_CHOROID_IN, _R_SCLERA_IN, 1),
        (_R_SCLERA_IN, _R_OUTER, 2),
    ]
    edges = sorted(
        {_THETA_CORNEA, _THETA_ORA, _THETA_DIAPHRAGM, np.pi}
        | {a["lo"] for a in _APPENDAGES}
        | {a["hi"] for a in _APPENDAGES if a["hi"] < np.pi}
    )
    angular_bands = []
    prev = 0.0
    for e in edges:
        n = max(1, int(round((e - prev) / np.deg2rad(17.0))))
        angular_bands.append((prev, e, n))
        prev = e
    radii = [0.0]
    for lo, hi, n in radial_bands:
        if hi - lo > 1e-12:
            radii.extend(np.linspace(lo, hi, n * s + 1)[1:])
    upper = [0.0]
    for lo, hi, n in angular_bands:
        if hi - lo > 1e-12:
            upper.extend(np.linspace(lo, hi, n * s + 1)[1:])
    lower = [2.0 * np.pi - t for t in reversed(upper[1:-1])]
    return np.array(radii), np.array(upper + lower)


def _appendage_radii(spec, refinement):
    """Extrusion ring radii of one appendage, from the globe surface out."""
    s = 2 ** (refinement - 1)
    radii = []
    start = _R_OUTER
    end = _R_OUTER + spec["length"]
    for thickness, _ in spec["layers"]:
        stop = end if thickness is None else start + thickness
        n = max(1, int(round((stop - start) / 1.5e-3)))
        radii.extend(np.linspace(start, stop, n * s + 1)[1:])
        start = stop
    return np.array(radii)


def _appendage_region(spec, r):
    start = _R_OUTER
    for thickness, name in spec["layers"]:
        if thickness is None or r <= start + thickness + 1e-12:
            return name
        start += thickness
    return spec["layers"][-1][1]


def _eye_region(r, theta):
    theta = min(theta, 2.0 * np.pi - theta)  # fold onto the upper half
    if r >= _R_SHELL_IN:
        if theta < _THETA_CORNEA:
            return "cornea" if r >= _R_SCLERA_IN else "aqueousHumor"
        if theta < _THETA_ORA:
            return "aqueousHumor"  # avascular ring between cornea and vascular shell
        if r < _R_CHOROID_IN:
            return "retina"
        if r < _R_SCLERA_IN:
            return "choroid"
        return "sclera"
    if theta < _THETA_DIAPHRAGM:
        if r >= _R_LENS_OUT:
            return "aqueousHumor"
        if r >= _R_LENS_IN:
            return "lens"
        if r >= _R_POST:
            return "aqueousHumor"
    return "vitreousHumor"


def _bulge_map(vertices):
    """Protrude the anterior segment: radial stretch of everything outside
    the lens that lies within the exposed arc, tapering to zero at its rim."""
    r = np.linalg.norm(vertices, axis=1)
    theta = np.abs(np.arctan2(vertices[:, 1], vertices[:, 0]))
    u = np.minimum(theta / _THETA_CORNEA, 1.0)
    w = np.where(theta < _THETA_CORNEA, np.cos(0.5 * np.pi * u**_BULGE_EXPONENT) ** 2, 0.0)
    span = np.where(r > _R_LENS_OUT, (r - _R_LENS_OUT) / (_R_OUTER - _R_LENS_OUT), 0.0)
    factor = 1.0 + _BULGE * w * span / np.maximum(r, 1e-12)
    return vertices * factor[:, None]


def generate_eye_2d(refinement):
    """Generate the built-in layered eye-like cross-section.

    The domain is a disc of radius 11 mm, symmetric about the horizontal
    axis, whose anterior segment protrudes 2 mm (axial length 24 mm,
    anterior pole at +x) and whose posterior carries an optic-nerve stalk
    and two episcleral tissue pads.  Cells are grouped into 9 regions:
    cornea, aqueousHumor, lens, vitreousHumor, retina, choroid, sclera,
    lamina, opticNerve.  The exposed anterior arc is labeled ``amb``, the
    rest of the outer boundary ``body``.  Mesh size halves per refinement
    increment.

    Parameters
    ----------
    refinement : int
        Refinement level, >= 1.

    Returns
    -------
    mesh : Mesh
    points : dict
        Named output locations on the horizontal symmetry axis: ``O``
        (anterior corneal surface), ``B1`` (aqueous/lens), ``C`` (lens
        posterior face), ``D1`` (vitreous/retina), ``G`` (posterior pole).
    """
    if refinement < 1:
        raise ValueError("refinement must be >= 1")
    radii, thetas = _refinement_grid(refinement)
    nr = len(radii) - 1  # radial bands (ring 0 is the center point)
    nt = len(thetas)  # angular sectors; index wraps modulo nt

    # Vertex layout: index 0 is the center, then ring-major (i-1)*nt + j + 1.
    verts = [np.array([0.0, 0.0])]
    for r in radii[1:]:
        for t in thetas:
            verts.append(np.array([r * np.cos(t), r * np.sin(t)]))

    def vid(i, j):
        return 0 if i == 0 else (i - 1) * nt + (j % nt) + 1

    def mid_angle(j):
        t0 = thetas[j]
        t1 = thetas[(j + 1) % nt] if j + 1 < nt else 2.0 * np.pi
        return 0.5 * (t0 + t1)

    cells = []
    regions = []
    for j in range(nt):
        cells.append([vid(0, 0), vid(1, j), vid(1, j + 1)])
        regions.append(_eye_region(radii[1] / 2.0, mid_angle(j)))
    for i in range(1, nr):
        rc = 0.5 * (radii[i] + radii[i + 1])
        for j in range(nt):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            # alternate the quad diagonal for isotropy
            if (i + j) % 2 == 0:
                tri1, tri2 = [a, c, d], [a, d, b]
            else:
                tri1, tri2 = [a, c, b], [b, c, d]
            reg = _eye_region(rc, mid_angle(j))
            cells.extend([tri1, tri2])
            regions.extend([reg, reg])

    # Appendages: rings extruded radially outward over their angular
    # footprints (optic-nerve stalk and episcleral pads).
    folded = np.minimum(thetas, 2.0 * np.pi - thetas)
    footprints = []
    for spec in _APPENDAGES:
        sel = (folded >= spec["lo"] - 1e-12) & (folded <= spec["hi"] + 1e-12)
        if spec["mirror"]:
            for mask in (thetas <= np.pi + 1e-12, thetas > np.pi + 1e-12):
                footprints.append((spec, np.flatnonzero(sel & mask)))
        else:
            footprints.append((spec, np.flatnonzero(sel)))

    covered = set()
    facets = []
    labels = []
    for spec, js in footprints:
        app_radii = _appendage_radii(spec, refinement)
        index = {}
        for k, r in enumerate(app_radii, start=1):
            for j in js:
                index[(k, j)] = len(verts)
                verts.append(np.array([r * np.cos(thetas[j]), r * np.sin(thetas[j])]))

        def aid(k, j):
            return vid(nr, j) if k == 0 else index[(k, j)]

        prev_r = _R_OUTER
        for k, r in enumerate(app_radii, start=1):
            reg = _appendage_region(spec, 0.5 * (prev_r + r))
            prev_r = r
            for a_j, b_j in zip(js[:-1], js[1:]):
                a, b = aid(k - 1, a_j), aid(k - 1, b_j)
                c, d = aid(k, a_j), aid(k, b_j)
                if (k + a_j) % 2 == 0:
                    tri1, tri2 = [a, c, d], [a, d, b]
                else:
                    tri1, tri2 = [a, c, b], [b, c, d]
                cells.extend([tri1, tri2])
                regions.extend([reg, reg])
        covered.update(range(js[0], js[-1]))
        # side walls and end cap exchange with the body
        ns = len(app_radii)
        for k in range(1, ns + 1):
            facets.append([aid(k - 1, js[0]), aid(k, js[0])])
            labels.append("body")
            facets.append([aid(k - 1, js[-1]), aid(k, js[-1])])
            labels.append("body")
        for a_j, b_j in zip(js[:-1], js[1:]):
            facets.append([aid(ns, a_j), aid(ns, b_j)])
            labels.append("body")
    vertices = np.array(verts)

    # Outer circle: amb on the exposed anterior arc, body elsewhere; the
    # sectors covered by appendages are interior.
    for j in range(nt):
        if j in covered:
            continue
        facets.append([vid(nr, j), vid(nr, j + 1)])
        tm = mid_angle(j)
        tm = min(tm, 2.0 * np.pi - tm)
        labels.append("amb" if tm < _THETA_CORNEA else "body")

    mesh = Mesh(
        dim=2,
        vertices=_bulge_map(vertices),
        cells=np.array(cells),
        cell_regions=np.array(regions, dtype=object),
        facets=np.array(facets),
        facet_labels=np.array(labels, dtype=object),
    )
    points = {
        "O": np.array([_R_OUTER + _BULGE, 0.0]),
        "B1": np.array([_R_LENS_OUT, 0.0]),
        "C": np.array([_R_LENS_IN, 0.0]),
        "D1": np.array([-_R_SHELL_IN, 0.0]),
        "G": np.array([-_R_OUTER, 0.0]),
    }
    return mesh.validate(), points


# ---------------------------------------------------------------------------
# Structured helper meshes (tests, verification problems)
# ---------------------------------------------------------------------------


def rectangle_mesh(nx, ny, x0=0.0, y0=0.0, lx=1.0, ly=1.0, region="cornea", region_fn=None, label_fn=None):
    """Structured triangle mesh of a rectangle.

    ``region_fn(centroid) -> name`` overrides the single region name;
    ``label_fn(midpoint) -> label or None`` labels boundary facets
    (unlabeled sides get natural zero-flux treatment).
    """
    xs = np.linspace(x0, x0 + lx, nx + 1)
    ys = np.linspace(y0, y0 + ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    for i in range(nx):
        for j in range(ny):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                cells.extend([[a, b, c], [a, c, d]])
            else:
                cells.extend([[a, b, d], [b, c, d]])
    cells = np.array(cells)
    cents = vertices[cells].mean(axis=1)
    if region_fn is None:
        regions = np.array([region] * len(cells), dtype=object)
    else:
        regions = np.array([region_fn(c) for c in cents], dtype=object)

    facets, labels = [], []
    if label_fn is not None:
        for key in boundary_facets(
            Mesh(2, vertices, cells, regions, np.empty((0, 2), dtype=int), np.array([], dtype=object))
        ):
            mid = vertices[list(key)].mean(axis=0)
            lab = label_fn(mid)
            if lab is not None:
                facets.append(list(key))
                labels.append(lab)
    mesh = Mesh(
        dim=2,
        vertices=vertices,
        cells=cells,
        cell_regions=regions,
        facets=np.array(facets, dtype=int).reshape(-1, 2),
        facet_labels=np.array(labels, dtype=object),
        region_names=tuple(sorted(set(regions))),
    )
    return mesh.validate()


def box_mesh(n, region="cornea", label_fn=None):
    """Structured tetrahedral mesh of the unit cube (6 tets per subcube)."""
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(xs, xs, xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    m = n + 1

    def vid(i, j, k):
        return (i * m + j) * m + k

    # Kuhn subdivision: 6 tets per cube sharing the main diagonal.
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    cells = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                base = np.array([i, j, k])
                for p in perms:
                    path = [base.copy()]
                    for axis in p:
                        nxt = path[-1].copy()
                        nxt[axis] += 1
                        path.append(nxt)
                    tet = [vid(*v) for v in path]
                    v = vertices[tet]
                    e = v[1:] - v[0]
                    if np.linalg.det(e) < 0:
                        tet[1], tet[2] = tet[2], tet[1]
                    cells.append(tet)
    cells = np.array(cells)
    regions = np.array([region] * len(cells), dtype=object)
    facets, labels = [], []
    if label_fn is not None:
        probe = Mesh(3, vertices, cells, regions, np.empty((0, 3), dtype=int), np.array([], dtype=object))
        for key in boundary_facets(probe):
            mid = vertices[list(key)].mean(axis=0)
            lab = label_fn(mid)
            if lab is not None:
                facets.append(list(key))
                labels.append(lab)
    mesh = Mesh(
        dim=3,
        vertices=vertices,
        cells=cells,
        cell_regions=regions,
        facets=np.array(facets, dtype=int).reshape(-1, 3),
        facet_labels=np.array(labels, dtype=object),
        region_names=tuple(sorted(set(regions))),
    )
    return mesh.validate()


# ---------------------------------------------------------------------------
# Point location
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointLocation:
    cell: int
    barycentric: np.ndarray
    snapped: bool


def locate_point(mesh, x, tol=1e-10):
    """Find the cell containing ``x`` and its barycentric coordinates.

    If ``x`` lies outside every cell, the cell with the smallest barycentric
    violation is returned with ``snapped=True``.
    """
    if mesh.n_cells == 0:
        raise ValueError("cannot locate a point in an empty mesh")
    x = np.asarray(x, dtype=float)
    v = mesh.vertices[mesh.cells]
    e = np.swapaxes(v[:, 1:, :] - v[:, :1, :], 1, 2)  # (nc, dim, dim) columns are edges
    rhs = x[None, :] - v[:, 0, :]
    lam_rest = np.linalg.solve(e, rhs[:, :, None])[:, :, 0]
    lam0 = 1.0 - lam_rest.sum(axis=1)
    lam = np.column_stack([lam0, lam_rest])
    violation = np.maximum(0.0, np.maximum(-lam.min(axis=1), lam.max(axis=1) - 1.0))
    best = int(np.argmin(violation))
    snapped = violation[best] > tol
    bary = np.clip(lam[best], 0.0, None)
    bary = bary / bary.sum()
    if not snapped:
        bary = lam[best]
    return PointLocation(cell=best, barycentric=bary, snapped=bool(snapped))


# ---------------------------------------------------------------------------
# Gmsh MSH I/O (ASCII v2.2 and v4.1, physical groups)
# ---------------------------------------------------------------------------

_MSH_TRIANGLE = 2
_MSH_LINE = 1
_MSH_TET = 4


class _LineReader:
    def __init__(self, lines):
        self.lines = lines
        self.pos = 0

    def next(self):
        if self.pos >= len(self.lines):
            raise MeshParseError("unexpected end of file", self.pos)
        self.pos += 1
        return self.lines[self.pos - 1].strip()

    @property
    def lineno(self):
        return self.pos


def load_msh(path, aliases=None):
    """Parse a Gmsh MSH ASCII file (v2.2 or v4.1) into a Mesh.

    Physical-group names are mapped through ``aliases`` (a dict) before
    being matched against canonical region names and boundary labels.
    """
    aliases = aliases or {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    rd = _LineReader(lines)
    first = rd.next()
    if first != "$MeshFormat":
        raise MeshParseError("expected $MeshFormat header", rd.lineno)
    fmt = rd.next().split()
    if not fmt or fmt[0] not in ("2.2", "4.1"):
        raise MeshParseError(f"unsupported MSH version {fmt[:1]}", rd.lineno)
    if len(fmt) < 2 or fmt[1] != "0":
        raise MeshParseError("only ASCII MSH files are supported", rd.lineno)
    if rd.next() != "$EndMeshFormat":
        raise MeshParseError("expected $EndMeshFormat", rd.lineno)
    version = fmt[0]

    if version == "2.2":
        raw = _parse_msh2(rd)
    else:
        raw = _parse_msh41(rd)
    return _assemble_mesh(raw, aliases)


def _read_int(rd, text, what):
    try:
        return int(text)
    except ValueError:
        raise MeshParseError(f"expected integer {what}, got {text!r}", rd.lineno) from None


def _parse_msh2(rd):
    phys = {}  # (dim, tag) -> name
    nodes = {}
    elements = []  # (dim_of_type, type, phys_tag, node_tags)
    while rd.pos < len(rd.lines):
        section = rd.next()
        if not section:
            continue
        if section == "$PhysicalNames":
            n = _read_int(rd, rd.next(), "physical-name count")
            for _ in range(n):
                parts = rd.next().split(maxsplit=2)
                if len(parts) != 3:
                    raise MeshParseError("malformed physical name", rd.lineno)
                phys[(int(parts[0]), int(parts[1]))] = parts[2].strip('"')
            _expect_end(rd, "$EndPhysicalNames")
        elif section == "$Nodes":
            n = _read_int(rd, rd.next(), "node count")
            for _ in range(n):
                parts = rd.next().split()
                if len(parts) < 4:
                    raise MeshParseError("malformed node line", rd.lineno)
                nodes[int(parts[0])] = [float(c) for c in parts[1:4]]
            _expect_end(rd, "$EndNodes")
        elif section == "$Elements":
            n = _read_int(rd, rd.next(), "element count")
            for _ in range(n):
                parts = rd.next().split()
                if len(parts) < 3:
                    raise MeshParseError("malformed element line", rd.lineno)
                etype = int(parts[1])
                ntags = int(parts[2])
                tags = [int(t) for t in parts[3 : 3 + ntags]]
                conn = [int(t) for t in parts[3 + ntags :]]
                ptag = tags[0] if tags else None
                elements.append((etype, ptag, conn, rd.lineno))
            _expect_end(rd, "$EndElements")
        else:
            _skip_section(rd, section)
    return {"phys": phys, "nodes": nodes, "elements": elements}


def _parse_msh41(rd):
    phys = {}
    nodes = {}
    elements = []
    entity_phys = {}  # (dim, entity_tag) -> phys tag or None
    while rd.pos < len(rd.lines):
        section = rd.next()
        if not section:
            continue
        if section == "$PhysicalNames":
            n = _read_int(rd, rd.next(), "physical-name count")
            for _ in range(n):
                parts = rd.next().split(maxsplit=2)
                if len(parts) != 3:
                    raise MeshParseError("malformed physical name", rd.lineno)
                phys[(int(parts[0]), int(parts[1]))] = parts[2].strip('"')
            _expect_end(rd, "$EndPhysicalNames")
        elif section == "$Entities":
            counts = [int(t) for t in rd.next().split()]
            if len(counts) != 4:
                raise MeshParseError("malformed $Entities header", rd.lineno)
            for dim, cnt in enumerate(counts):
                for _ in range(cnt):
                    parts = rd.next().split()
                    tag = int(parts[0])
                    # points: tag x y z nphys [...]; others: tag 6*bbox nphys [...]
                    off = 4 if dim == 0 else 7
                    nphys = int(parts[off])
                    ptags = [int(t) for t in parts[off + 1 : off + 1 + nphys]]
                    entity_phys[(dim, tag)] = ptags[0] if ptags else None
            _expect_end(rd, "$EndEntities")
        elif section == "$Nodes":
            hdr = rd.next().split()
            nblocks = _read_int(rd, hdr[0], "node block count")
            for _ in range(nblocks):
                bh = rd.next().split()
                if len(bh) != 4:
                    raise MeshParseError("malformed node block header", rd.lineno)
                nnodes = int(bh[3])
                tags = [_read_int(rd, rd.next(), "node tag") for _ in range(nnodes)]
                for t in tags:
                    parts = rd.next().split()
                    if len(parts) < 3:
                        raise MeshParseError("malformed node coordinates", rd.lineno)
                    nodes[t] = [float(c) for c in parts[:3]]
            _expect_end(rd, "$EndNodes")
        elif section == "$Elements":
            hdr = rd.next().split()
            nblocks = _read_int(rd, hdr[0], "element block count")
            for _ in range(nblocks):
                bh = rd.next().split()
                if len(bh) != 4:
                    raise MeshParseError("malformed element block header", rd.lineno)
                edim, etag, etype, nelem = (int(t) for t in bh)
                ptag = entity_phys.get((edim, etag))
                for _ in range(nelem):
                    parts = [int(t) for t in rd.next().split()]
                    elements.append((etype, ptag, parts[1:], rd.lineno))
            _expect_end(rd, "$EndElements")
        else:
            _skip_section(rd, section)
    return {"phys": phys, "nodes": nodes, "elements": elements}


def _expect_end(rd, marker):
    got = rd.next()
    if got != marker:
        raise MeshParseError(f"expected {marker}, got {got!r}", rd.lineno)


def _skip_section(rd, section):
    if not section.startswith("$"):
        raise MeshParseError(f"unexpected content {section!r}", rd.lineno)
    end = "$End" + section[1:]
    while True:
        if rd.next() == end:
            return


def _assemble_mesh(raw, aliases):
    phys, nodes, elements = raw["phys"], raw["nodes"], raw["elements"]
    # Decide dimension from the highest-dimensional cells present.
    has_tets = any(e[0] == _MSH_TET for e in elements)
    dim = 3 if has_tets else 2
    cell_type = _MSH_TET if has_tets else _MSH_TRIANGLE
    facet_type = _MSH_TRIANGLE if has_tets else _MSH_LINE

    tag_list = sorted(nodes)
    index = {t: i for i, t in enumerate(tag_list)}
    coords = np.array([nodes[t] for t in tag_list])
    if dim == 2:
        coords = coords[:, :2]

    def name_of(ptag, edim, lineno, what):
        if ptag is None:
            raise MeshValidationError(f"{what} at line {lineno} has no region label")
        name = phys.get((edim, ptag))
        if name is None:
            name = str(ptag)
        return aliases.get(name, name)

    cells, regions = [], []
    facets, labels = [], []
    for etype, ptag, conn, lineno in elements:
        if etype == cell_type:
            name = name_of(ptag, dim, lineno, "cell")
            cells.append([index[t] for t in conn])
            regions.append(name)
        elif etype == facet_type:
            name = name_of(ptag, dim - 1, lineno, "facet")
            if name not in BOUNDARY_LABELS:
                raise MeshValidationError(
                    f"facet at line {lineno} labeled {name!r}; expected one of {BOUNDARY_LABELS}"
                    " (use an alias map)"
                )
            facets.append([index[t] for t in conn])
            labels.append(name)
        # other element types (points, higher order) are ignored
    if not cells:
        raise MeshValidationError("mesh contains no cells of the expected type")

    cells = np.array(cells)
    # Fix orientation: reorder negative simplices.
    mesh = Mesh(
        dim=dim,
        vertices=coords,
        cells=cells,
        cell_regions=np.array(regions, dtype=object),
        facets=np.array(facets, dtype=int).reshape(-1, dim),
        facet_labels=np.array(labels, dtype=object),
        region_names=tuple(sorted(set(regions))),
    )
    vols = mesh.cell_volumes()
    if (vols < 0).any():
        cells = cells.copy()
        flip = vols < 0
        cells[np.ix_(flip, [0, 1])] = cells[np.ix_(flip, [1, 0])]
        mesh = Mesh(
            dim=dim,
            vertices=coords,
            cells=cells,
            cell_regions=mesh.cell_regions,
            facets=mesh.facets,
            facet_labels=mesh.facet_labels,
            region_names=mesh.region_names,
        )
    return mesh.validate()


def write_msh(path, mesh):
    """Write a Mesh as Gmsh MSH ASCII v2.2 with physical groups.

    Region names become dim-dimensional physical groups, boundary labels
    (dim-1)-dimensional ones.  ``load_msh(write_msh(...))`` round-trips.
    """
    regions = sorted(set(mesh.cell_regions))
    blabels = sorted(set(mesh.facet_labels))
    rtag = {name: i + 1 for i, name in enumerate(regions)}
    btag = {name: i + 1 + len(regions) for i, name in enumerate(blabels)}
    cell_type = _MSH_TET if mesh.dim == 3 else _MSH_TRIANGLE
    facet_type = _MSH_TRIANGLE if mesh.dim == 3 else _MSH_LINE

    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat"]
    out.append("$PhysicalNames")
    out.append(str(len(regions) + len(blabels)))
    for name in regions:
        out.append(f'{mesh.dim} {rtag[name]} "{name}"')
    for name in blabels:
        out.append(f'{mesh.dim - 1} {btag[name]} "{name}"')
    out.append("$EndPhysicalNames")
    out.append("$Nodes")
    out.append(str(mesh.n_vertices))
    for i, v in enumerate(mesh.vertices):
        x, y = float(v[0]), float(v[1])
        z = float(v[2]) if mesh.dim == 3 else 0.0
        out.append(f"{i + 1} {x!r} {y!r} {z!r}")
    out.append("$EndNodes")
    out.append("$Elements")
    out.append(str(mesh.n_cells + len(mesh.facets)))
    eid = 1
    for f, lab in zip(mesh.facets, mesh.facet_labels):
        conn = " ".join(str(t + 1) for t in f)
        out.append(f"{eid} {facet_type} 2 {btag[lab]} {btag[lab]} {conn}")
        eid += 1
    for c, reg in zip(mesh.cells, mesh.cell_regions):
        conn = " ".join(str(t + 1) for t in c)
        out.append(f"{eid} {cell_type} 2 {rtag[reg]} {rtag[reg]} {conn}")
        eid += 1
    out.append("$EndElements")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def write_points(path, points):
    """Sidecar JSON with named output locations of a generated mesh."""
    data = {name: [float(c) for c in xy] for name, xy in points.items()}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_points(path):
    with open(path) as fh:
        data = json.load(fh)
    return {name: np.asarray(xy, dtype=float) for name, xy in data.items()}
