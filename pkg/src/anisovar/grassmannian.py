"""Planes of the Grassmannian G(n, d) stored as orthogonal projection matrices.

A d-plane T in R^n is identified with the symmetric idempotent matrix P of
trace d projecting onto it.  Tangent vectors at T are symmetric matrices S
with T S T = 0 and (I - T) S (I - T) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TOL_PROJ = 1e-10
TOL_UNIT = 1e-6

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


class DegenerateBasisError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Plane:
    """A d-plane in R^n, held as its n x n orthogonal projection ``P``."""

    n: int
    d: int
    P: np.ndarray = field(repr=False)

    def __post_init__(self):
        P = _frozen(self.P)
        object.__setattr__(self, "P", P)
        if not (0 < self.d < self.n):
            raise ValueError(f"plane dimension must satisfy 0 < d < n, got n={self.n}, d={self.d}")
        if P.shape != (self.n, self.n):
            raise ValueError(f"projection must be {self.n}x{self.n}, got {P.shape}")
        errs = projection_defects(P, self.d)
        if max(errs.values()) > TOL_PROJ:
            raise ValueError(f"not an orthogonal projection of rank {self.d}: {errs}")

    @property
    def complement(self) -> np.ndarray:
        return np.eye(self.n) - self.P

    def basis(self) -> np.ndarray:
        """Orthonormal basis of the plane as the columns of an n x d array."""
        w, v = np.linalg.eigh(self.P)
        return v[:, np.argsort(w)[::-1][: self.d]]

    def normal(self) -> np.ndarray:
        """Unit normal of a hyperplane, sign fixed to the canonical hemisphere."""
        if self.d != self.n - 1:
            raise ValueError("normal() is only defined for hyperplanes (d = n - 1)")
        w, v = np.linalg.eigh(self.complement)
        return canonical_sign(v[:, np.argmax(w)])

    def to_dict(self) -> dict:
        return {"n": self.n, "d": self.d, "P": [float(v) for v in self.P.ravel()]}

    @classmethod
    def from_dict(cls, data: dict) -> "Plane":
        n, d = int(data["n"]), int(data["d"])
        return cls(n, d, np.asarray(data["P"], dtype=float).reshape(n, n))

    def __eq__(self, other):
        if not isinstance(other, Plane):
            return NotImplemented
        return (self.n, self.d) == (other.n, other.d) and np.array_equal(self.P, other.P)

    def __hash__(self):
        return hash((self.n, self.d, self.P.tobytes()))


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Element S of Tan_T G(n, d) at the base plane ``base``."""

    base: Plane
    S: np.ndarray = field(repr=False)

    def __post_init__(self):
        S = _frozen(self.S)
        object.__setattr__(self, "S", S)
        T, Tp = self.base.P, self.base.complement
        defects = (
            np.linalg.norm(S - S.T),
            np.linalg.norm(T @ S @ T),
            np.linalg.norm(Tp @ S @ Tp),
        )
        scale = max(1.0, np.linalg.norm(S))
        if max(defects) > TOL_PROJ * scale:
            raise ValueError(f"matrix is not tangent to G(n,d) at the base plane: defects {defects}")


def projection_defects(P: np.ndarray, d: int) -> dict:
    return {
        "idempotent": float(np.linalg.norm(P @ P - P)),
        "symmetric": float(np.linalg.norm(P.T - P)),
        "trace": float(abs(np.trace(P) - d)),
    }


def canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so its last non-negligible coordinate is positive.

    Picks one representative of each antipodal pair {v, -v}; ties on the
    equator are broken by the next coordinate down.
    """
    v = np.asarray(v, dtype=float)
    for c in v[::-1]:
        if abs(c) > 1e-14:
            return v if c > 0 else -v
    return v


def plane_from_basis(vectors) -> Plane:
    """Projection onto the span of the given vectors (rows or a k x n array)."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    k, n = V.shape
    if not (0 < k < n):
        raise ValueError(f"need 0 < k < n vectors, got k={k} in R^{n}")
    Q, R = np.linalg.qr(V.T)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise DegenerateBasisError(f"degenerate basis: rank < {k}")
    P = Q @ Q.T
    return Plane(n, k, 0.5 * (P + P.T))


def normal_to_plane(nu) -> Plane:
    """Hyperplane orthogonal to the unit vector ``nu``; identical for nu and -nu."""
    nu = np.asarray(nu, dtype=float).ravel()
    r = np.linalg.norm(nu)
    if abs(r - 1.0) > TOL_UNIT:
        raise ValueError(f"normal must be a unit vector, |nu| = {r!r}")
    nu = nu / r
    n = nu.size
    return Plane(n, n - 1, np.eye(n) - np.outer(nu, nu))


def plane_distance(S: Plane, T: Plane) -> float:
    if (S.n, S.d) != (T.n, T.d):
        raise ValueError(f"dimension mismatch: G({S.n},{S.d}) vs G({T.n},{T.d})")
    return float(np.linalg.norm(S.P - T.P))


def projection_curve_derivative(T: Plane, L) -> TangentVector:
    """Velocity at t=0 of t -> projection onto (I + tL)(T)."""
    L = np.asarray(L, dtype=float)
    if L.shape != (T.n, T.n):
        raise ValueError(f"L must be {T.n}x{T.n}, got {L.shape}")
    M = T.complement @ L @ T.P
    return TangentVector(T, M + M.T)


def moved_plane(T: Plane, L, t: float) -> Plane:
    """Projection onto (I + tL)(T), built from the image of an orthonormal basis."""
    E = T.basis()
    image = (np.eye(T.n) + t * np.asarray(L, dtype=float)) @ E
    return plane_from_basis(image.T)


def sphere_directions(n: int, N: int, seed: int = 42) -> np.ndarray:
    """N quasi-uniform unit vectors, one per antipodal pair, as an N x n array.

    n = 2 uses equally spaced angles in [0, pi); n = 3 a Fibonacci lattice on
    the upper hemisphere; larger n falls back to seeded Gaussian directions.
    """
    if N < 1:
        raise ValueError("N must be positive")
    if n == 2:
        th = np.pi * np.arange(N) / N
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    elif n == 3:
        k = np.arange(N)
        z = (k + 0.5) / N
        rho = np.sqrt(1.0 - z * z)
        phi = k * GOLDEN_ANGLE
        dirs = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    else:
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((N, n))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    return np.array([canonical_sign(v) for v in dirs])


def sample_grid(n: int, d: int, N: int, seed: int = 42) -> list[Plane]:
    """A deterministic grid of N planes in G(n, d).

    Hyperplanes come from an antipodally reduced direction grid, so the
    induced measures on G(n, n-1) are even.  Other dimensions use seeded
    Gaussian frames.
    """
    if N < 1:
        raise ValueError("N must be positive")
    if d == n - 1:
        return [normal_to_plane(v) for v in sphere_directions(n, N, seed)]
    rng = np.random.default_rng(seed)
    planes = []
    while len(planes) < N:
        try:
            planes.append(plane_from_basis(rng.standard_normal((d, n))))
        except DegenerateBasisError:  # pragma: no cover - probability zero
            continue
    return planes


def subspace_samples(n: int, m: int, N: int, seed: int = 42) -> list[np.ndarray]:
    """Orthonormal n x m bases of quasi-uniform subspaces, for 1 <= m <= n."""
    if m == n:
        return [np.eye(n)]
    if m == 1:
        return [v[:, None] for v in sphere_directions(n, N, seed)]
    return [P.basis() for P in sample_grid(n, m, N, seed)]


def grid_to_json(planes: Iterable[Plane]) -> list[dict]:
    return [p.to_dict() for p in planes]


def grid_from_json(items: Sequence[dict]) -> list[Plane]:
    return [Plane.from_dict(item) for item in items]
