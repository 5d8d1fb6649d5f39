"""Univariate and tensor-product B-spline machinery.

Open knot vectors with Cox-de Boor evaluation, the scaled derivative basis
(Curry-Schoenberg normalisation, so that every basis function integrates to
one and differentiation becomes a signed incidence matrix), Greville
abscissae and dyadic knot refinement.

All objects are immutable after construction and evaluation routines are
pure, so they are safe to share between threads.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

__all__ = [
    "KnotVector",
    "ReducedKnotVector",
    "TensorBasis",
    "uniform_open_knots",
    "eval_basis",
    "eval_basis_derivatives",
    "eval_curry_schoenberg",
    "eval_curry_schoenberg_derivatives",
    "greville_abscissae",
    "refine_dyadic",
]


def _freeze(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


class KnotVector:
    """Open knot vector on [0, 1] for splines of a fixed degree.

    The first and last knots are repeated exactly ``degree + 1`` times and
    the sequence is nondecreasing.  ``num_basis`` functions of degree
    ``degree`` are defined on it.
    """

    __slots__ = ("degree", "knots")

    def __init__(self, knots, degree: int):
        if degree < 1:
            raise ValueError("degree must be at least 1")
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1:
            raise ValueError("knots must be a one-dimensional sequence")
        if len(knots) < 2 * (degree + 1):
            raise ValueError("knot vector too short for the degree")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        p = degree
        if not (np.all(knots[: p + 1] == knots[0]) and knots[p + 1] > knots[0]):
            raise ValueError("first knot must be repeated exactly degree+1 times")
        if not (np.all(knots[-(p + 1):] == knots[-1]) and knots[-(p + 2)] < knots[-1]):
            raise ValueError("last knot must be repeated exactly degree+1 times")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("parametric domain must be [0, 1]")
        object.__setattr__(self, "degree", int(degree))
        object.__setattr__(self, "knots", _freeze(knots))

    def __setattr__(self, name, value):
        raise AttributeError("KnotVector is immutable")

    @property
    def num_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def order(self) -> int:
        """Number of possibly nonzero functions on one span."""
        return self.degree + 1

    @property
    def breaks(self) -> np.ndarray:
        """Distinct knot values (element boundaries)."""
        return np.unique(self.knots)

    @property
    def num_spans(self) -> int:
        return len(self.breaks) - 1

    @property
    def mesh_size(self) -> float:
        """Largest parametric knot span."""
        return float(np.max(np.diff(self.breaks)))

    def reduce(self) -> "ReducedKnotVector":
        return ReducedKnotVector(self)

    def span_of(self, x: float) -> int:
        return _find_span(self.knots, self.degree, self.num_basis, x)

    def evaluate(self, x: float):
        return eval_basis(self, x)

    def evaluate_derivatives(self, x: float, nders: int = 1):
        return eval_basis_derivatives(self, x, nders)

    def __eq__(self, other):
        return (
            isinstance(other, KnotVector)
            and self.degree == other.degree
            and np.array_equal(self.knots, other.knots)
        )

    def __hash__(self):
        return hash((self.degree, self.knots.tobytes()))

    def __repr__(self):
        return f"KnotVector(degree={self.degree}, n={self.num_basis})"


class ReducedKnotVector:
    """Derivative space of an open knot vector, in scaled basis.

    Dropping the first and last knot of the source vector yields an open
    knot vector of degree one lower.  Its basis is stored with the
    Curry-Schoenberg scaling ``(q+1) / support_width`` (q the reduced
    degree), so every function integrates to one and the derivative of the
    source basis is the plain difference of consecutive reduced functions.
    Functions with zero support width are identically zero.
    """

    __slots__ = ("degree", "knots", "source", "scale")

    def __init__(self, source: "KnotVector | ReducedKnotVector"):
        if source.degree < 1:
            raise ValueError("source degree must be at least 1 to reduce")
        knots = _freeze(source.knots[1:-1])
        degree = source.degree - 1
        n = len(knots) - degree - 1
        width = knots[degree + 1: degree + 1 + n] - knots[:n]
        with np.errstate(divide="ignore"):
            scale = np.where(width > 0.0, (degree + 1) / np.where(width > 0, width, 1.0), 0.0)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "degree", degree)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "scale", _freeze(scale))

    def __setattr__(self, name, value):
        raise AttributeError("ReducedKnotVector is immutable")

    @property
    def num_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def order(self) -> int:
        return self.degree + 1

    @property
    def breaks(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def num_spans(self) -> int:
        return len(self.breaks) - 1

    def reduce(self) -> "ReducedKnotVector":
        return ReducedKnotVector(self)

    def span_of(self, x: float) -> int:
        return _find_span(self.knots, self.degree, self.num_basis, x)

    def evaluate(self, x: float):
        return eval_curry_schoenberg(self, x)

    def evaluate_derivatives(self, x: float, nders: int = 1):
        return eval_curry_schoenberg_derivatives(self, x, nders)

    def __repr__(self):
        return f"ReducedKnotVector(degree={self.degree}, n={self.num_basis})"


def uniform_open_knots(degree: int, num_spans: int, multiplicity: int = 1) -> KnotVector:
    """Open knot vector with equal spans on [0, 1].

    Interior knots at i/num_spans carry the given multiplicity; the Table-style
    reduced-continuity meshes use multiplicity = degree - 1.
    """
    if num_spans < 1:
        raise ValueError("num_spans must be positive")
    if not 1 <= multiplicity <= degree:
        raise ValueError("multiplicity must lie in [1, degree]")
    interior = np.repeat(np.arange(1, num_spans) / num_spans, multiplicity)
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    return KnotVector(knots, degree)


def _find_span(knots, degree, num_basis, x) -> int:
    """Index i with knots[i] <= x < knots[i+1]; the last span is closed."""
    i = int(np.searchsorted(knots, x, side="right")) - 1
    return min(max(i, degree), num_basis - 1)


def _check_domain(x: float):
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"evaluation point {x!r} outside [0, 1]")


def _basis_on(knots, degree, span, x):
    """Nonzero basis values on a span (Cox-de Boor triangular scheme)."""
    values = np.zeros(degree + 1)
    left = np.zeros(degree + 1)
    right = np.zeros(degree + 1)
    values[0] = 1.0
    for j in range(1, degree + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            temp = values[r] / (right[r + 1] + left[j - r])
            values[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        values[j] = saved
    return values


def _basis_derivatives_on(knots, degree, span, x, nders):
    """Nonzero basis values and derivatives up to order nders on a span."""
    p = degree
    nders = min(nders, p)
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((nders + 1, p + 1))
    ders[0, :] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, nders + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    factor = float(p)
    for k in range(1, nders + 1):
        ders[k, :] *= factor
        factor *= p - k
    return ders


def eval_basis(kv: KnotVector, x: float):
    """Values of the degree-p basis at x.

    Returns ``(first_active_index, values)`` where values holds the p+1
    possibly nonzero functions.  x = 1 uses the left limit on the last span.
    """
    _check_domain(x)
    span = kv.span_of(x)
    return span - kv.degree, _basis_on(kv.knots, kv.degree, span, x)


def eval_basis_derivatives(kv: KnotVector, x: float, nders: int = 1):
    """Values and derivatives (rows 0..nders) of the active basis at x."""
    _check_domain(x)
    span = kv.span_of(x)
    ders = _basis_derivatives_on(kv.knots, kv.degree, span, x, nders)
    return span - kv.degree, ders


def eval_curry_schoenberg(rkv: ReducedKnotVector, x: float):
    """Values of the scaled (unit-integral) reduced basis at x."""
    _check_domain(x)
    span = rkv.span_of(x)
    first = span - rkv.degree
    values = _basis_on(rkv.knots, rkv.degree, span, x)
    return first, values * rkv.scale[first: first + rkv.degree + 1]


def eval_curry_schoenberg_derivatives(rkv: ReducedKnotVector, x: float, nders: int = 1):
    _check_domain(x)
    span = rkv.span_of(x)
    first = span - rkv.degree
    ders = _basis_derivatives_on(rkv.knots, rkv.degree, span, x, nders)
    return first, ders * rkv.scale[first: first + rkv.degree + 1]


def greville_abscissae(kv: KnotVector) -> np.ndarray:
    """Knot averages, one representative parametric point per basis function."""
    p = kv.degree
    t = kv.knots
    return np.array([t[i + 1: i + p + 1].mean() for i in range(kv.num_basis)])


def refine_dyadic(kv: KnotVector, levels: int) -> KnotVector:
    """Bisect every nonempty span `levels` times (new knots are simple)."""
    if levels < 0:
        raise ValueError("levels must be nonnegative")
    knots = kv.knots
    for _ in range(levels):
        breaks = np.unique(knots)
        mids = 0.5 * (breaks[:-1] + breaks[1:])
        knots = np.sort(np.concatenate([knots, mids]))
    return KnotVector(knots, kv.degree)


class TensorBasis:
    """Tensor product of univariate bases, one per parametric direction.

    Directions may mix plain and reduced knot vectors; this is how the
    vector-valued de Rham spaces select their per-component degrees.
    """

    __slots__ = ("bases",)

    def __init__(self, bases):
        bases = tuple(bases)
        if not 1 <= len(bases) <= 3:
            raise ValueError("dimension must be 1, 2 or 3")
        object.__setattr__(self, "bases", bases)

    def __setattr__(self, name, value):
        raise AttributeError("TensorBasis is immutable")

    @property
    def dim_space(self) -> int:
        return len(self.bases)

    @property
    def shape(self) -> tuple:
        return tuple(b.num_basis for b in self.bases)

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    def evaluate(self, xi):
        """Active multi-index origin and the local value tensor at a point."""
        firsts = []
        factors = []
        for b, x in zip(self.bases, xi):
            f, v = b.evaluate(x)
            firsts.append(f)
            factors.append(v)
        vals = factors[0]
        for v in factors[1:]:
            vals = np.multiply.outer(vals, v)
        return tuple(firsts), vals

    def tabulate(self, direction: int, points, nders: int = 0):
        """Per-point first active index and value/derivative table.

        Returns ``(first, table)`` with table shaped (npts, nders+1, order).
        """
        b = self.bases[direction]
        pts = np.asarray(points, dtype=float).ravel()
        first = np.empty(len(pts), dtype=int)
        table = np.empty((len(pts), nders + 1, b.order))
        for i, x in enumerate(pts):
            if nders == 0:
                f, v = b.evaluate(x)
                table[i, 0] = v
            else:
                f, v = b.evaluate_derivatives(x, nders)
                table[i] = v
            first[i] = f
        return first, table

    def __repr__(self):
        kinds = ",".join(
            f"{'R' if isinstance(b, ReducedKnotVector) else 'K'}{b.degree}" for b in self.bases
        )
        return f"TensorBasis({kinds}, shape={self.shape})"
