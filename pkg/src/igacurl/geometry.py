"""Patch parametrizations and multi-patch domain topology.

A patch is a (possibly rational) tensor-product spline map from the unit
square or cube into physical space.  A multi-patch domain combines patches
with boundary tags, conforming-glue records between patches of the same
subdomain, weak-interface records between subdomains, and periodic
identifications.  Everything is immutable after construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidationError
from .splines import KnotVector, TensorBasis, greville_abscissae, uniform_open_knots

__all__ = [
    "Patch",
    "GlueRecord",
    "InterfaceRecord",
    "PeriodicRecord",
    "MultiPatchDomain",
    "eval_map",
    "validate_interfaces",
    "builtin_geometry",
    "side_axis",
    "SIDE_NAMES",
    "save_geometry_json",
    "load_geometry_json",
]

SIDE_NAMES_3D = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")
SIDE_NAMES = SIDE_NAMES_3D


def side_axis(side: str):
    """Map a side name to (axis, end) with end 0 for min and 1 for max."""
    idx = SIDE_NAMES_3D.index(side)
    return idx // 2, idx % 2


def side_name(axis: int, end: int) -> str:
    return SIDE_NAMES_3D[2 * axis + end]


class Patch:
    """Tensor-product spline or NURBS map into R^2 or R^3.

    Control points are stored unweighted together with their weights;
    weight one everywhere gives a polynomial patch.  The Jacobian
    determinant is sampled on a Gauss grid per knot span at construction
    and must not change sign.
    """

    __slots__ = ("kvs", "points", "weights", "dim", "ambient")

    def __init__(self, kvs, points, weights=None):
        kvs = tuple(kvs)
        if not 2 <= len(kvs) <= 3:
            raise ValueError("patches must be two- or three-dimensional")
        shape = tuple(kv.num_basis for kv in kvs)
        points = np.asarray(points, dtype=float)
        expected = shape + (points.shape[-1],)
        if points.shape != expected:
            raise ValueError(f"control points must have shape {expected}")
        ambient = points.shape[-1]
        if ambient not in (2, 3):
            raise ValueError("ambient dimension must be 2 or 3")
        if weights is None:
            weights = np.ones(shape)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != shape:
            raise ValueError("weights must match the control grid")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        points = np.ascontiguousarray(points)
        weights = np.ascontiguousarray(weights)
        points.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "kvs", kvs)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "dim", len(kvs))
        object.__setattr__(self, "ambient", ambient)
        self._check_jacobian_sign()

    def __setattr__(self, name, value):
        raise AttributeError("Patch is immutable")

    # -- evaluation ------------------------------------------------------

    def _tabulate_geometry(self, pts_per_dir, nders=1):
        basis = TensorBasis(self.kvs)
        return [basis.tabulate(d, pts, nders) for d, pts in enumerate(pts_per_dir)]

    def evaluate_grid(self, pts_per_dir):
        """Map and Jacobian on a tensor grid of parametric points.

        Returns ``(x, jac)`` with x shaped (m1, .., md, ambient) and jac
        shaped (m1, .., md, ambient, dim).
        """
        tabs = self._tabulate_geometry(pts_per_dir, nders=1)
        # Dense per-direction collocation matrices for values and derivatives.
        mats_v, mats_d = [], []
        for (first, table), kv in zip(tabs, self.kvs):
            npts = table.shape[0]
            v = np.zeros((npts, kv.num_basis))
            dv = np.zeros((npts, kv.num_basis))
            for i in range(npts):
                sl = slice(first[i], first[i] + kv.order)
                v[i, sl] = table[i, 0]
                dv[i, sl] = table[i, 1]
            mats_v.append(v)
            mats_d.append(dv)
        homog = np.concatenate(
            [self.points * self.weights[..., None], self.weights[..., None]], axis=-1
        )
        def contract(mats):
            out = homog
            for d, m in enumerate(mats):
                out = np.tensordot(m, out, axes=(1, d))
                # tensordot moves the contracted axis to the front; rotate back
                out = np.moveaxis(out, 0, d)
            return out
        H = contract(mats_v)
        W = H[..., -1]
        A = H[..., :-1]
        x = A / W[..., None]
        jac = np.empty(x.shape + (self.dim,))
        for d in range(self.dim):
            mats = list(mats_v)
            mats[d] = mats_d[d]
            dH = contract(mats)
            dW = dH[..., -1]
            dA = dH[..., :-1]
            jac[..., d] = (dA - x * dW[..., None]) / W[..., None]
        return x, jac

    def evaluate(self, xi):
        """Point, Jacobian and determinant (or surface metric) at one point."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.dim,):
            raise DomainError(f"expected a point in the {self.dim}-cube")
        if np.any(xi < 0) or np.any(xi > 1):
            raise DomainError(f"parametric point {xi} outside the unit cube")
        x, jac = self.evaluate_grid([np.array([c]) for c in xi])
        x = x.reshape(self.ambient)
        jac = jac.reshape(self.ambient, self.dim)
        if self.ambient == self.dim:
            det = float(np.linalg.det(jac))
        else:
            det = float(math.sqrt(np.linalg.det(jac.T @ jac)))
        return x, jac, det

    def greville_grid(self, kvs):
        """Images of the tensor Greville points of the given knot vectors."""
        pts = [greville_abscissae(kv) for kv in kvs]
        x, _ = self.evaluate_grid(pts)
        return x

    def corner(self, corner_idx):
        xi = np.array(corner_idx, dtype=float)
        return self.evaluate(xi)[0]

    def _check_jacobian_sign(self):
        xg, _ = np.polynomial.legendre.leggauss(3)
        dets = None
        pts = []
        for kv in self.kvs:
            b = kv.breaks
            p = (0.5 * (b[1:] - b[:-1])[:, None] * (xg + 1.0) + b[:-1][:, None]).ravel()
            pts.append(p)
        _, jac = self.evaluate_grid(pts)
        if self.ambient == self.dim:
            dets = np.linalg.det(jac)
            if not (np.all(dets > 0) or np.all(dets < 0)):
                raise ValidationError("Jacobian determinant changes sign on the patch")
        else:
            g = np.einsum("...ij,...ik->...jk", jac, jac)
            if np.any(np.linalg.det(g) <= 0):
                raise ValidationError("degenerate surface metric on the patch")

    @property
    def num_sides(self):
        return 2 * self.dim

    def side_names(self):
        return tuple(side_name(a, e) for a in range(self.dim) for e in (0, 1))

    def __repr__(self):
        return f"Patch(dim={self.dim}, shape={tuple(kv.num_basis for kv in self.kvs)})"


def eval_map(patch: Patch, xi):
    """Physical point, Jacobian and determinant of the patch map at xi."""
    return patch.evaluate(xi)


@dataclass(frozen=True)
class GlueRecord:
    """Conforming identification of two full patch faces in one subdomain."""

    patch_a: int
    side_a: str
    patch_b: int
    side_b: str


@dataclass(frozen=True)
class PeriodicRecord:
    """Identification of two faces shifted by a fixed translation."""

    pair_id: int
    patch_a: int
    side_a: str
    patch_b: int
    side_b: str
    translation: tuple


@dataclass(frozen=True)
class InterfaceRecord:
    """One weakly coupled face pair of a mortar interface.

    ``independent`` may be None for configurations where the multiplier
    acts as a weak boundary condition on the dependent side alone.  The
    parameter map sends dependent face coordinates to independent face
    coordinates: per direction eta = xi + offset, optionally flipped, and
    wrapped modulo ``wrap`` (given in parametric units, 0 meaning no wrap)
    with the physical period ``wrap_translation``.
    """

    interface_id: int
    dependent: tuple
    independent: tuple | None = None
    offset: tuple = (0.0, 0.0)
    flip: tuple = (False, False)
    wrap: tuple = (0.0, 0.0)
    wrap_translation: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))


class MultiPatchDomain:
    """Patches plus boundary tags, glue, interfaces and periodicity.

    ``subdomain_of[pid]`` is 0 for a single-domain problem, 1 for the
    dependent and 2 for the independent side of a mortar pair.  Face tags
    map ``(patch, side)`` to one of ``"dirichlet"``, ``"neumann"``,
    ``("interface", id)`` or ``("periodic", id)``; untagged faces must be
    covered by glue records.
    """

    __slots__ = ("patches", "face_tags", "glue", "interfaces", "periodic", "subdomain_of")

    def __init__(self, patches, face_tags, glue=(), interfaces=(), periodic=(), subdomain_of=None):
        patches = tuple(patches)
        if not patches:
            raise ValueError("a domain needs at least one patch")
        dim = patches[0].dim
        if any(p.dim != dim or p.ambient != patches[0].ambient for p in patches):
            raise ValueError("all patches must share dimension and ambient space")
        if subdomain_of is None:
            subdomain_of = (0,) * len(patches)
        subdomain_of = tuple(int(s) for s in subdomain_of)
        if len(subdomain_of) != len(patches):
            raise ValueError("subdomain_of must label every patch")
        object.__setattr__(self, "patches", patches)
        object.__setattr__(self, "face_tags", dict(face_tags))
        object.__setattr__(self, "glue", tuple(glue))
        object.__setattr__(self, "interfaces", tuple(interfaces))
        object.__setattr__(self, "periodic", tuple(periodic))
        object.__setattr__(self, "subdomain_of", subdomain_of)

    def __setattr__(self, name, value):
        raise AttributeError("MultiPatchDomain is immutable")

    @property
    def dim(self):
        return self.patches[0].dim

    @property
    def ambient(self):
        return self.patches[0].ambient

    @property
    def num_patches(self):
        return len(self.patches)

    def subdomains(self):
        return sorted(set(self.subdomain_of))

    def subdomain_patches(self, subdomain=None):
        if subdomain is None:
            return list(range(self.num_patches))
        return [i for i, s in enumerate(self.subdomain_of) if s == subdomain]

    def tag_of(self, patch: int, side: str):
        return self.face_tags.get((patch, side))

    def faces_with_tag(self, tag):
        out = []
        for (pid, side), t in sorted(self.face_tags.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            if t == tag or (isinstance(t, tuple) and t[0] == tag):
                out.append((pid, side))
        return out

    def interface_records(self, interface_id=None):
        recs = self.interfaces
        if interface_id is not None:
            recs = tuple(r for r in recs if r.interface_id == interface_id)
        return recs

    def __repr__(self):
        return (
            f"MultiPatchDomain({self.num_patches} patches, dim={self.dim}, "
            f"{len(self.glue)} glue, {len(self.interfaces)} interface records)"
        )


# ---------------------------------------------------------------------------
# face charts
# ---------------------------------------------------------------------------


class FaceChart:
    """Restriction of a patch map to one of its boundary sides.

    Face parameters (u, v) follow the two tangential patch axes in
    increasing order; for 2D patches a face has a single parameter u.
    """

    def __init__(self, patch: Patch, pid: int, side: str):
        axis, end = side_axis(side)
        if axis >= patch.dim:
            raise ValueError(f"side {side} does not exist on a {patch.dim}D patch")
        self.patch = patch
        self.pid = pid
        self.side = side
        self.axis = axis
        self.end = end
        self.tangents = tuple(a for a in range(patch.dim) if a != axis)

    def embed(self, face_pts):
        """Lift face parametric points to full patch parametric points."""
        face_pts = np.asarray(face_pts, dtype=float)
        single = face_pts.ndim == 1
        pts = np.atleast_2d(face_pts)
        out = np.empty((pts.shape[0], self.patch.dim))
        out[:, self.axis] = float(self.end)
        for k, t in enumerate(self.tangents):
            out[:, t] = pts[:, k]
        return out[0] if single else out

    def evaluate_grid(self, pts_per_dir):
        """Points and surface Jacobian columns on a tensor face grid."""
        full = [None] * self.patch.dim
        full[self.axis] = np.array([float(self.end)])
        for k, t in enumerate(self.tangents):
            full[t] = np.asarray(pts_per_dir[k], dtype=float)
        x, jac = self.patch.evaluate_grid(full)
        x = np.squeeze(x, axis=self.axis)
        jac = np.squeeze(jac, axis=self.axis)
        cols = [jac[..., :, t] for t in self.tangents]
        return x, np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _grid_samples(n=5):
    return np.linspace(0.0, 1.0, n)


def validate_interfaces(domain: MultiPatchDomain, tol: float = 1e-8):
    """Check glue exactness and interface coincidence under the param maps.

    Returns a report dict; raises ValidationError on failure with the
    largest deviation found.
    """
    report = {"glue_checked": 0, "interfaces_checked": 0, "max_glue_dev": 0.0, "max_interface_dev": 0.0}
    from .mesh import match_faces  # local import, mesh builds on geometry

    for rec in domain.glue:
        ca = FaceChart(domain.patches[rec.patch_a], rec.patch_a, rec.side_a)
        cb = FaceChart(domain.patches[rec.patch_b], rec.patch_b, rec.side_b)
        dev = match_faces(ca, cb, tol=1e-10)[1]
        report["glue_checked"] += 1
        report["max_glue_dev"] = max(report["max_glue_dev"], dev)

    for rec in domain.interfaces:
        if rec.independent is None:
            continue
        dep = FaceChart(domain.patches[rec.dependent[0]], rec.dependent[0], rec.dependent[1])
        ind = FaceChart(domain.patches[rec.independent[0]], rec.independent[0], rec.independent[1])
        s = _grid_samples(7)
        if domain.dim == 3:
            uu, vv = np.meshgrid(s, s, indexing="ij")
            dep_pts = np.column_stack([uu.ravel(), vv.ravel()])
        else:
            dep_pts = s[:, None]
        mapped, shifts, inside = _apply_interface_map(rec, dep_pts)
        if not np.any(inside):
            raise ValidationError(
                f"interface record {rec.interface_id}: no overlap between "
                f"{rec.dependent} and {rec.independent}"
            )
        xd = _chart_points(dep, dep_pts[inside])
        xi = _chart_points(ind, mapped[inside])
        xi = xi - shifts[inside]
        dev = float(np.max(np.linalg.norm(xd - xi, axis=-1)))
        report["interfaces_checked"] += 1
        report["max_interface_dev"] = max(report["max_interface_dev"], dev)
        if dev > tol:
            raise ValidationError(
                f"interface record {rec.interface_id} between {rec.dependent} and "
                f"{rec.independent} deviates by {dev:.3e}"
            )
    return report


def _chart_points(chart: FaceChart, face_pts):
    pts = chart.embed(face_pts)
    out = np.empty((len(pts), chart.patch.ambient))
    for i, xi in enumerate(pts):
        out[i] = chart.patch.evaluate(xi)[0]
    return out


def _apply_interface_map(rec: InterfaceRecord, dep_pts):
    """Map dependent face points through the record's affine map.

    Returns mapped independent-face coordinates, the physical translation
    accumulated by wrapping, and a mask of points landing inside [0, 1]^2.
    """
    dep_pts = np.atleast_2d(np.asarray(dep_pts, dtype=float))
    nf = dep_pts.shape[1]
    eta = np.empty_like(dep_pts)
    shifts = np.zeros((len(dep_pts), len(rec.wrap_translation[0])))
    for k in range(nf):
        e = dep_pts[:, k] + rec.offset[k]
        if rec.wrap[k]:
            period = rec.wrap[k]
            wraps = np.floor(e / period)
            e = e - wraps * period
            shifts += wraps[:, None] * np.asarray(rec.wrap_translation[k])
        if rec.flip[k]:
            e = 1.0 - e
        eta[:, k] = e
    tol = 1e-12
    inside = np.all((eta >= -tol) & (eta <= 1.0 + tol), axis=1)
    return eta, shifts, inside


# ---------------------------------------------------------------------------
# builtin geometries
# ---------------------------------------------------------------------------


def _box_patch(lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    kv = KnotVector([0, 0, 1, 1], 1)
    corners = np.empty((2, 2, 2, 3))
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                corners[i, j, k] = [
                    lo[0] + i * (hi[0] - lo[0]),
                    lo[1] + j * (hi[1] - lo[1]),
                    lo[2] + k * (hi[2] - lo[2]),
                ]
    return Patch([kv, kv, kv], corners)


def _quad_prism_patch(c00, c10, c01, c11, z0, z1):
    """Trilinear prism over a planar quadrilateral, corners by (u, v)."""
    kv = KnotVector([0, 0, 1, 1], 1)
    pts = np.empty((2, 2, 2, 3))
    quad = {(0, 0): c00, (1, 0): c10, (0, 1): c01, (1, 1): c11}
    for (i, j), c in quad.items():
        pts[i, j, 0] = [c[0], c[1], z0]
        pts[i, j, 1] = [c[0], c[1], z1]
    return Patch([kv, kv, kv], pts)


def _quad_patch_2d(c00, c10, c01, c11):
    kv = KnotVector([0, 0, 1, 1], 1)
    pts = np.empty((2, 2, 2))
    for (i, j), c in {(0, 0): c00, (1, 0): c10, (0, 1): c01, (1, 1): c11}.items():
        pts[i, j] = c
    return Patch([kv, kv], pts)


def _quarter_ring_patch(r_in=0.5, r_out=1.0, quadrant=0):
    """Exact rational quarter annulus; u is radial, v is angular."""
    kv_u = KnotVector([0, 0, 1, 1], 1)
    kv_v = KnotVector([0, 0, 0, 1, 1, 1], 2)
    w = math.sqrt(0.5)
    base = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    rot = np.array(
        [
            [math.cos(quadrant * math.pi / 2), -math.sin(quadrant * math.pi / 2)],
            [math.sin(quadrant * math.pi / 2), math.cos(quadrant * math.pi / 2)],
        ]
    )
    base = base @ rot.T
    pts = np.empty((2, 3, 2))
    wts = np.empty((2, 3))
    for i in range(3):
        for j, r in enumerate((r_in, r_out)):
            pts[j, i] = r * base[i]
            wts[j, i] = w if i == 1 else 1.0
    return Patch([kv_u, kv_v], pts, wts)


def _five_patch_quads(a, lx, ly):
    """Corner tuples (c00, c10, c01, c11) of the five-quad square layout.

    Order: center, bottom, top, left, right.  All Jacobians positive.
    """
    s = np.array([lx, ly])
    def pt(x, y):
        return np.array([x, y]) * s
    center = (pt(a, a), pt(1 - a, a), pt(a, 1 - a), pt(1 - a, 1 - a))
    bottom = (pt(0, 0), pt(1, 0), pt(a, a), pt(1 - a, a))
    top = (pt(a, 1 - a), pt(1 - a, 1 - a), pt(0, 1), pt(1, 1))
    left = (pt(0, 0), pt(a, a), pt(0, 1), pt(a, 1 - a))
    right = (pt(1 - a, a), pt(1, 0), pt(1 - a, 1 - a), pt(1, 1))
    return [center, bottom, top, left, right]


def _grid_quads(nx, ny, lx, ly, x0=0.0):
    out = []
    for j in range(ny):
        for i in range(nx):
            xa, xb = x0 + i * lx / nx, x0 + (i + 1) * lx / nx
            ya, yb = j * ly / ny, (j + 1) * ly / ny
            out.append(
                (
                    np.array([xa, ya]),
                    np.array([xb, ya]),
                    np.array([xa, yb]),
                    np.array([xb, yb]),
                )
            )
    return out


def _auto_glue(patches, subdomain_of, tol=1e-10):
    """Find conforming glue records by matching face corner sets."""
    corners = {}
    for pid, patch in enumerate(patches):
        for side in patch.side_names():
            axis, end = side_axis(side)
            idxs = []
            for c in np.ndindex(*(2,) * (patch.dim - 1)):
                full = list(c)
                full.insert(axis, end)
                idxs.append(tuple(full))
            pts = np.array([patch.corner(i) for i in idxs])
            key = tuple(sorted(tuple(np.round(p / tol).astype(np.int64)) for p in pts))
            corners.setdefault(key, []).append((pid, side))
    glue = []
    for key, faces in sorted(corners.items()):
        if len(faces) == 2:
            (pa, sa), (pb, sb) = faces
            if subdomain_of[pa] != subdomain_of[pb]:
                continue
            glue.append(GlueRecord(pa, sa, pb, sb))
        elif len(faces) > 2:
            raise ValidationError(f"more than two patches share a face: {faces}")
    return glue


def _pattern_quads(n_patches, lx, ly, x0=0.0):
    if n_patches == 2:
        return _grid_quads(2, 1, lx, ly, x0)
    if n_patches == 4:
        return _grid_quads(2, 2, lx, ly, x0)
    if n_patches == 5:
        quads = _five_patch_quads(0.25, lx, ly)
        if x0:
            quads = [tuple(c + np.array([x0, 0.0]) for c in q) for q in quads]
        return quads
    raise ValueError("supported patch patterns: 2, 4, 5")


def cube_kernel_domain(n_patches: int) -> MultiPatchDomain:
    """Unit cube split into 2, 4 or 5 prism patches.

    The bottom side (zmin) is one weak interface handled by a Lagrange
    multiplier; every other boundary face is Dirichlet.
    """
    quads = _pattern_quads(n_patches, 1.0, 1.0)
    patches = [_quad_prism_patch(*q, 0.0, 1.0) for q in quads]
    subdomain_of = (0,) * len(patches)
    glue = _auto_glue(patches, subdomain_of)
    glued = {(r.patch_a, r.side_a) for r in glue} | {(r.patch_b, r.side_b) for r in glue}
    tags = {}
    interfaces = []
    for pid, patch in enumerate(patches):
        for side in patch.side_names():
            if (pid, side) in glued:
                continue
            if side == "zmin":
                tags[(pid, side)] = ("interface", 0)
                interfaces.append(InterfaceRecord(0, dependent=(pid, side)))
            else:
                tags[(pid, side)] = "dirichlet"
    return MultiPatchDomain(patches, tags, glue, interfaces, subdomain_of=subdomain_of)


def cube_mortar_domain(
    n_patches: int = 4,
    delta: float = 0.0,
    lengths=(math.pi, math.pi, math.pi),
    periodic_x: bool = False,
) -> MultiPatchDomain:
    """Box split at the z midplane into a dependent top and independent bottom.

    Each half carries the same patch pattern in (x, y).  A nonzero delta
    shifts the bottom half in x (wrapped periodically, which requires
    ``periodic_x`` and the 4-patch pattern).
    """
    lx, ly, lz = lengths
    if delta and not periodic_x:
        raise ValueError("a shifted interface requires x-periodicity")
    if delta and n_patches != 4:
        raise ValueError("the shifted configuration is defined for 4 patches")
    top_quads = _pattern_quads(n_patches, lx, ly)
    bot_quads = _pattern_quads(n_patches, lx, ly, x0=delta)
    patches = [_quad_prism_patch(*q, lz / 2, lz) for q in top_quads]
    patches += [_quad_prism_patch(*q, 0.0, lz / 2) for q in bot_quads]
    n_top = len(top_quads)
    subdomain_of = (1,) * n_top + (2,) * n_top
    glue = _auto_glue(patches, subdomain_of)
    glued = {(r.patch_a, r.side_a) for r in glue} | {(r.patch_b, r.side_b) for r in glue}

    tags = {}
    periodic = []
    for pid, patch in enumerate(patches):
        is_top = pid < n_top
        for side in patch.side_names():
            if (pid, side) in glued:
                continue
            axis, _ = side_axis(side)
            if side == "zmin" and is_top:
                tags[(pid, side)] = ("interface", 0)
            elif side == "zmax" and not is_top:
                tags[(pid, side)] = ("interface", 0)
            elif axis == 0 and periodic_x:
                tags[(pid, side)] = ("periodic", 0)
            else:
                tags[(pid, side)] = "dirichlet"
    if periodic_x:
        # identify each xmax face with the xmin face across the box,
        # separately per subdomain, matching faces by their y and z extents
        for lo in (0, n_top):
            sub = range(lo, lo + n_top)
            maxs = [p for p in sub if tags.get((p, "xmax")) == ("periodic", 0)]
            mins = [p for p in sub if tags.get((p, "xmin")) == ("periodic", 0)]
            for pb in maxs:
                yb = sorted(patches[pb].corner((1, c, 0))[1] for c in (0, 1))
                zb = patches[pb].corner((1, 0, 0))[2]
                for pa in mins:
                    ya = sorted(patches[pa].corner((0, c, 0))[1] for c in (0, 1))
                    za = patches[pa].corner((0, 0, 0))[2]
                    if np.allclose(ya, yb, atol=1e-12) and abs(za - zb) < 1e-12:
                        periodic.append(
                            PeriodicRecord(len(periodic), pb, "xmax", pa, "xmin", (-lx, 0.0, 0.0))
                        )

    interfaces = []
    dep_faces = [(p, "zmin") for p in range(n_top)]
    ind_faces = [(p, "zmax") for p in range(n_top, 2 * n_top)]
    if n_patches == 4 or n_patches == 2:
        # axis-aligned rectangles; couple by x/y extents with optional wrap
        for dp, ds in dep_faces:
            dep_lo = patches[dp].corner((0, 0, 0))[:2]
            dep_hi = patches[dp].corner((1, 1, 0))[:2]
            for ip, isde in ind_faces:
                ind_lo = patches[ip].corner((0, 0, 1))[:2]
                ind_hi = patches[ip].corner((1, 1, 1))[:2]
                if abs(dep_lo[1] - ind_lo[1]) > 1e-12:
                    continue
                wx = lx / (ind_hi[0] - ind_lo[0]) if periodic_x else 0.0
                off_x = (dep_lo[0] - ind_lo[0]) / (ind_hi[0] - ind_lo[0])
                rec = InterfaceRecord(
                    0,
                    dependent=(dp, ds),
                    independent=(ip, isde),
                    offset=(off_x, 0.0),
                    flip=(False, False),
                    wrap=(wx, 0.0),
                    wrap_translation=((-lx, 0.0, 0.0), (0.0, 0.0, 0.0)),
                )
                # keep only records with a genuine overlap
                probe = np.array([[0.001, 0.5], [0.5, 0.5], [0.999, 0.5]])
                if np.any(_apply_interface_map(rec, probe)[2]):
                    interfaces.append(rec)
    else:
        # matching pattern: face i couples to face i with the identity map
        for (dp, ds), (ip, isde) in zip(dep_faces, ind_faces):
            interfaces.append(InterfaceRecord(0, dependent=(dp, ds), independent=(ip, isde)))
    return MultiPatchDomain(patches, tags, glue, interfaces, periodic, subdomain_of)


def single_cube_domain(lengths=(math.pi, math.pi, math.pi), boundary="dirichlet") -> MultiPatchDomain:
    """One box patch with a uniform boundary tag."""
    patch = _box_patch((0, 0, 0), lengths)
    tags = {(0, side): boundary for side in patch.side_names()}
    return MultiPatchDomain([patch], tags)


def periodic_cube_domain(lengths=(1.0, 1.0, 1.0)) -> MultiPatchDomain:
    """x-periodic box with Dirichlet y-faces and Neumann z-faces.

    The periodic identification makes the domain topologically a solid
    ring relative to its Dirichlet boundary; gauging needs one extra tree
    edge beyond the spanning tree.
    """
    patch = _box_patch((0, 0, 0), lengths)
    tags = {
        (0, "xmin"): ("periodic", 0),
        (0, "xmax"): ("periodic", 0),
        (0, "ymin"): "dirichlet",
        (0, "ymax"): "dirichlet",
        (0, "zmin"): "neumann",
        (0, "zmax"): "neumann",
    }
    periodic = [PeriodicRecord(0, 0, "xmax", 0, "xmin", (-lengths[0], 0.0, 0.0))]
    return MultiPatchDomain([patch], tags, periodic=periodic)


def quarter_ring_domain() -> MultiPatchDomain:
    """Single 2D quarter annulus, Dirichlet on the whole boundary."""
    patch = _quarter_ring_patch()
    tags = {(0, s): "dirichlet" for s in patch.side_names()}
    return MultiPatchDomain([patch], tags)


def ring_domain(boundary="dirichlet") -> MultiPatchDomain:
    """Full 2D annulus from four rational quarter patches.

    The loop of conforming patches is not contractible; its gauged
    stiffness needs one cohomology enrichment edge.
    """
    patches = [_quarter_ring_patch(quadrant=q) for q in range(4)]
    subdomain_of = (0,) * 4
    glue = _auto_glue(patches, subdomain_of)
    glued = {(r.patch_a, r.side_a) for r in glue} | {(r.patch_b, r.side_b) for r in glue}
    tags = {}
    for pid, patch in enumerate(patches):
        for side in patch.side_names():
            if (pid, side) not in glued:
                tags[(pid, side)] = boundary
    return MultiPatchDomain(patches, tags, glue, subdomain_of=subdomain_of)


def builtin_geometry(name: str, **params) -> MultiPatchDomain:
    """Construct a named domain.

    Known names: ``cube-2``, ``cube-4``, ``cube-5``,
    ``cube-mortar-conforming`` (n_patches 4 or 5), ``cube-mortar-shifted``
    (delta, x-periodic), ``cube``, ``cube-periodic``, ``quarter-ring``
    and ``ring``.
    """
    if name in ("cube-2", "cube-4", "cube-5"):
        return cube_kernel_domain(int(name.split("-")[1]))
    if name == "cube-mortar-conforming":
        return cube_mortar_domain(
            n_patches=int(params.get("n_patches", 4)),
            lengths=params.get("lengths", (math.pi, math.pi, math.pi)),
            periodic_x=bool(params.get("periodic_x", False)),
        )
    if name == "cube-mortar-shifted":
        return cube_mortar_domain(
            n_patches=int(params.get("n_patches", 4)),
            delta=float(params.get("delta", 1.0)),
            lengths=params.get("lengths", (math.pi, math.pi, math.pi)),
            periodic_x=True,
        )
    if name == "cube":
        return single_cube_domain(
            lengths=params.get("lengths", (math.pi, math.pi, math.pi)),
            boundary=params.get("boundary", "dirichlet"),
        )
    if name == "cube-periodic":
        return periodic_cube_domain(lengths=params.get("lengths", (1.0, 1.0, 1.0)))
    if name == "quarter-ring":
        return quarter_ring_domain()
    if name == "ring":
        return ring_domain(boundary=params.get("boundary", "dirichlet"))
    raise ValueError(f"unknown builtin geometry {name!r}")


# ---------------------------------------------------------------------------
# JSON geometry files
# ---------------------------------------------------------------------------


def _tag_to_str(tag):
    if tag == "dirichlet" or tag == "neumann":
        return tag
    if isinstance(tag, tuple):
        return f"{tag[0]}:{tag[1]}"
    raise ValueError(f"cannot serialise tag {tag!r}")


def _tag_from_str(s):
    if s in ("dirichlet", "neumann"):
        return s
    kind, _, num = s.partition(":")
    if kind in ("interface", "periodic") and num:
        return (kind, int(num))
    raise ValueError(f"unknown tag string {s!r}")


def save_geometry_json(domain: MultiPatchDomain, path):
    """Write a domain in the JSON geometry schema.

    Control points are stored in homogeneous convention: coordinates are
    premultiplied by the weight, the weight is the last entry of each row.
    """
    doc = {"patches": [], "faces": [], "interfaces": [], "glue": [], "periodic": [],
           "subdomains": list(domain.subdomain_of)}
    for patch in domain.patches:
        homog = np.concatenate(
            [patch.points * patch.weights[..., None], patch.weights[..., None]], axis=-1
        )
        doc["patches"].append(
            {
                "degree": [kv.degree for kv in patch.kvs],
                "knots": [kv.knots.tolist() for kv in patch.kvs],
                "points": homog.reshape(-1, patch.ambient + 1).tolist(),
            }
        )
    for (pid, side), tag in sorted(domain.face_tags.items()):
        doc["faces"].append({"patch": pid, "side": side, "tag": _tag_to_str(tag)})
    for rec in domain.interfaces:
        doc["interfaces"].append(
            {
                "id": rec.interface_id,
                "dependent": list(rec.dependent),
                "independent": list(rec.independent) if rec.independent else None,
                "map": {
                    "offset": list(rec.offset),
                    "flip": list(rec.flip),
                    "wrap": list(rec.wrap),
                    "wrap_translation": [list(t) for t in rec.wrap_translation],
                },
            }
        )
    for rec in domain.glue:
        doc["glue"].append([rec.patch_a, rec.side_a, rec.patch_b, rec.side_b])
    for rec in domain.periodic:
        doc["periodic"].append(
            {
                "id": rec.pair_id,
                "a": [rec.patch_a, rec.side_a],
                "b": [rec.patch_b, rec.side_b],
                "translation": list(rec.translation),
            }
        )
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_geometry_json(path) -> MultiPatchDomain:
    with open(path) as fh:
        doc = json.load(fh)
    patches = []
    for rec in doc["patches"]:
        kvs = [KnotVector(k, p) for k, p in zip(rec["knots"], rec["degree"])]
        shape = tuple(kv.num_basis for kv in kvs)
        rows = np.asarray(rec["points"], dtype=float)
        ambient = rows.shape[1] - 1
        homog = rows.reshape(shape + (ambient + 1,))
        weights = homog[..., -1]
        points = homog[..., :-1] / weights[..., None]
        patches.append(Patch(kvs, points, weights))
    tags = {}
    for f in doc.get("faces", []):
        tags[(f["patch"], f["side"])] = _tag_from_str(f["tag"])
    glue = [GlueRecord(*g) for g in doc.get("glue", [])]
    interfaces = []
    for r in doc.get("interfaces", []):
        m = r.get("map", {})
        interfaces.append(
            InterfaceRecord(
                r["id"],
                dependent=tuple(r["dependent"]),
                independent=tuple(r["independent"]) if r.get("independent") else None,
                offset=tuple(m.get("offset", (0.0, 0.0))),
                flip=tuple(m.get("flip", (False, False))),
                wrap=tuple(m.get("wrap", (0.0, 0.0))),
                wrap_translation=tuple(
                    tuple(t) for t in m.get("wrap_translation", ((0.0,) * 3, (0.0,) * 3))
                ),
            )
        )
    periodic = [
        PeriodicRecord(r["id"], r["a"][0], r["a"][1], r["b"][0], r["b"][1], tuple(r["translation"]))
        for r in doc.get("periodic", [])
    ]
    subdomain_of = doc.get("subdomains")
    return MultiPatchDomain(patches, tags, glue, interfaces, periodic, subdomain_of)
