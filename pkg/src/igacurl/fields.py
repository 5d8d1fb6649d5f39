"""Closed-form fields and spectra used by the experiment drivers.

The manufactured magnetostatic solution is a product of sines that is
2*pi-periodic in x, has a vanishing tangential trace on the y faces at
{0, pi} and the z faces at {0, 2*pi}, and solves the curl-curl equation
with unit reluctivity for the matching source current.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "vector_potential",
    "flux_density",
    "current_density",
    "magnetisation",
    "cavity_eigenvalues",
    "manufactured_lengths",
]

#: box for which the manufactured solution satisfies the boundary setup
manufactured_lengths = (2 * math.pi, math.pi, 2 * math.pi)


def _xyz(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1], x[..., 2]


def vector_potential(x):
    """Manufactured magnetic vector potential."""
    xx, yy, zz = _xyz(x)
    return np.stack(
        [
            np.sin(yy) * np.sin(zz / 2),
            np.sin(xx) * np.sin(zz / 2),
            np.sin(xx) * np.sin(yy),
        ],
        axis=-1,
    )


def flux_density(x):
    """Curl of the manufactured vector potential."""
    xx, yy, zz = _xyz(x)
    return np.stack(
        [
            np.sin(xx) * np.cos(yy) - 0.5 * np.sin(xx) * np.cos(zz / 2),
            -np.cos(xx) * np.sin(yy) + 0.5 * np.sin(yy) * np.cos(zz / 2),
            np.cos(xx) * np.sin(zz / 2) - np.cos(yy) * np.sin(zz / 2),
        ],
        axis=-1,
    )


def current_density(x):
    """Source current driving the manufactured solution (unit reluctivity)."""
    xx, yy, zz = _xyz(x)
    return np.stack(
        [
            1.25 * np.sin(yy) * np.sin(zz / 2),
            1.25 * np.sin(xx) * np.sin(zz / 2),
            2.0 * np.sin(xx) * np.sin(yy),
        ],
        axis=-1,
    )


def magnetisation(x):
    """Magnetisation of the manufactured problem (identically zero)."""
    x = np.asarray(x, dtype=float)
    return np.zeros_like(x)


def cavity_eigenvalues(count: int, lengths=(math.pi, math.pi, math.pi)) -> np.ndarray:
    """Smallest analytic eigenvalues of the Dirichlet cavity.

    Modes are indexed by nonnegative integers (n, m, k) with at least two
    positive entries; the eigenvalue is the sum of the squared scaled wave
    numbers and the multiplicity is two when all three indices are
    positive, one otherwise.
    """
    lx, ly, lz = lengths
    vals = []
    nmax = 1
    while True:
        vals.clear()
        for n in range(nmax + 1):
            for m in range(nmax + 1):
                for k in range(nmax + 1):
                    if (n > 0) + (m > 0) + (k > 0) < 2:
                        continue
                    lam = (n * math.pi / lx) ** 2 + (m * math.pi / ly) ** 2 + (k * math.pi / lz) ** 2
                    mult = 2 if (n > 0 and m > 0 and k > 0) else 1
                    vals.extend([lam] * mult)
        vals.sort()
        # enough confirmed values below the smallest mode using an index > nmax
        ceiling = (nmax * math.pi / max(lengths)) ** 2
        confirmed = [v for v in vals if v <= ceiling]
        if len(confirmed) >= count:
            return np.array(confirmed[:count])
        nmax += 1
