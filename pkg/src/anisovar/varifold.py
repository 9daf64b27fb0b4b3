"""Discrete varifolds: energy, first variation, push-forward and the
stationary non-rectifiable construction built from an atomic-condition
violation.

A discrete varifold is a finite list of atoms (x_i, T_i, m_i).  Vector
fields and diffeomorphisms are vectorized over rows: ``g(Y)`` takes an
(N, n) array and returns (N, n); ``Dg(Y)`` returns (N, n, n) with
``Dg[k, i, j] = d g_i / d y_j`` at ``Y[k]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .atomic import GrassmannMeasure, a_matrix, image_space
from .blowup import DiscreteMeasure
from .grassmannian import Plane, plane_from_basis
from .integrand import Integrand, b_matrix

BUMP_SLOPE_MAX = 6.0 / math.sqrt(5.0) * (4.0 / 5.0) ** 2  # max |d/ds (1 - s^2)^3|


@dataclass(frozen=True, eq=False)
class DiscreteVarifold:
    n: int
    d: int
    points: np.ndarray = field(repr=False)
    planes: tuple = field(repr=False)
    masses: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, self.n)
        m = np.array(self.masses, dtype=float).ravel()
        planes = tuple(self.planes)
        if not (len(pts) == len(planes) == len(m)):
            raise ValueError(f"{len(pts)} points, {len(planes)} planes, {len(m)} masses")
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ValueError("atom masses must be positive and finite")
        for T in planes:
            if (T.n, T.d) != (self.n, self.d):
                raise ValueError(f"plane in G({T.n},{T.d}) inside a varifold on G({self.n},{self.d})")
        pts.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "planes", planes)

    def __len__(self) -> int:
        return len(self.masses)

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple], n: int | None = None, d: int | None = None):
        atoms = list(atoms)
        if not atoms and (n is None or d is None):
            raise ValueError("empty atom list needs explicit n and d")
        if atoms:
            n, d = atoms[0][1].n, atoms[0][1].d
        return cls(n, d, [a[0] for a in atoms], [a[1] for a in atoms], [a[2] for a in atoms])

    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def weight(self) -> DiscreteMeasure:
        """The weight measure: atoms at x_i with masses m_i."""
        return DiscreteMeasure(self.n, self.points, self.masses)

    def restrict(self, mask) -> "DiscreteVarifold":
        mask = np.asarray(mask, dtype=bool)
        keep = np.flatnonzero(mask)
        return DiscreteVarifold(self.n, self.d, self.points[keep], [self.planes[i] for i in keep],
                                self.masses[keep], dict(self.meta))

    def scaled(self, c: float) -> "DiscreteVarifold":
        return DiscreteVarifold(self.n, self.d, self.points, self.planes, c * self.masses, dict(self.meta))


def _check_dims(V: DiscreteVarifold, I: Integrand):
    if (V.n, V.d) != (I.n, I.d):
        raise ValueError(f"varifold on G({V.n},{V.d}) but integrand on G({I.n},{I.d})")


def energy(V: DiscreteVarifold, I: Integrand) -> float:
    _check_dims(V, I)
    vals = np.array([I.value(x, T) for x, T in zip(V.points, V.planes)])
    return float(math.fsum(V.masses * vals))


# -- vector fields --------------------------------------------------------------


@dataclass(frozen=True)
class VectorField:
    """A compactly supported C^1 field on R^n with its differential.

    ``c1_norm`` is an upper bound for sup|g| + sup|Dg| (Frobenius).
    """

    n: int
    g: Callable[[np.ndarray], np.ndarray]
    Dg: Callable[[np.ndarray], np.ndarray]
    center: np.ndarray
    radius: float
    c1_norm: float
    label: str = ""

    def spec(self) -> dict:
        return {"label": self.label, "center": list(map(float, self.center)), "radius": self.radius}


def zero_field(n: int) -> VectorField:
    return VectorField(
        n,
        lambda Y: np.zeros((len(Y), n)),
        lambda Y: np.zeros((len(Y), n, n)),
        np.zeros(n),
        0.0,
        0.0,
        "zero",
    )


def _bump(s: np.ndarray):
    inside = np.abs(s) < 1.0
    q = np.where(inside, 1.0 - s * s, 0.0)
    return q**3, np.where(inside, -6.0 * s * q * q, 0.0)


def bump_field(center, half_width: float, direction, amplitude: float = 1.0) -> VectorField:
    """g(y) = amplitude * prod_k (1 - s_k^2)^3 * direction, s = (y - center) / half_width.

    The support is the cube of side 2 * half_width, so it sits inside the
    ball of radius half_width * sqrt(n) around the center.
    """
    c = np.asarray(center, dtype=float).ravel()
    e = np.asarray(direction, dtype=float).ravel()
    n = c.size
    if e.size != n:
        raise ValueError("direction and center dimensions differ")
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    rho = float(half_width)
    a = float(amplitude)

    def parts(Y):
        S = (np.atleast_2d(Y) - c) / rho
        b, db = _bump(S)
        return b, db

    def g(Y):
        b, _ = parts(Y)
        return a * np.prod(b, axis=1)[:, None] * e[None, :]

    def Dg(Y):
        b, db = parts(Y)
        grad = np.empty_like(b)
        for k in range(n):
            others = np.prod(np.delete(b, k, axis=1), axis=1)
            grad[:, k] = db[:, k] * others / rho
        return a * e[None, :, None] * grad[:, None, :]

    c1 = abs(a) * np.linalg.norm(e) * (1.0 + math.sqrt(n) * BUMP_SLOPE_MAX / rho)
    return VectorField(n, g, Dg, c, rho * math.sqrt(n), c1, f"bump(w={rho:g})")


def sum_fields(fields: Sequence[VectorField]) -> VectorField:
    fields = list(fields)
    if not fields:
        raise ValueError("no fields to sum")
    n = fields[0].n
    centers = np.array([f.center for f in fields])
    c = centers.mean(axis=0)
    R = max(np.linalg.norm(f.center - c) + f.radius for f in fields)
    return VectorField(
        n,
        lambda Y: sum(f.g(Y) for f in fields),
        lambda Y: sum(f.Dg(Y) for f in fields),
        c,
        float(R),
        float(sum(f.c1_norm for f in fields)),
        "+".join(f.label for f in fields),
    )


def random_bump_fields(n: int, count: int, center_radius: float, half_width: float,
                       seed: int = 42, center=None) -> list[VectorField]:
    """Seeded bumps with centers in a ball, random unit directions, unit amplitude."""
    rng = np.random.default_rng(seed)
    c0 = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    out = []
    for _ in range(count):
        u = rng.standard_normal(n)
        u *= center_radius * rng.random() ** (1.0 / n) / np.linalg.norm(u)
        e = rng.standard_normal(n)
        out.append(bump_field(c0 + u, half_width, e / np.linalg.norm(e)))
    return out


# -- first variation ------------------------------------------------------------


def _b_stack(V: DiscreteVarifold, I: Integrand) -> np.ndarray:
    """B_F at every atom; computed once per distinct plane when I is autonomous."""
    if I.autonomous:
        cache: dict[int, np.ndarray] = {}
        out = np.empty((len(V), V.n, V.n))
        x0 = np.zeros(V.n)
        for i, T in enumerate(V.planes):
            key = id(T)
            if key not in cache:
                cache[key] = b_matrix(I, x0, T)
            out[i] = cache[key]
        return out
    return np.array([b_matrix(I, x, T) for x, T in zip(V.points, V.planes)]).reshape(len(V), V.n, V.n)


def _gx_stack(V: DiscreteVarifold, I: Integrand) -> np.ndarray:
    if I.autonomous:
        return np.zeros((len(V), V.n))
    return np.array([I.grad_x(x, T) for x, T in zip(V.points, V.planes)]).reshape(len(V), V.n)


def _first_variation(V, gx, B, g: VectorField) -> float:
    if len(V) == 0:
        return 0.0
    G = g.g(V.points)
    DG = g.Dg(V.points)
    per_atom = np.einsum("ka,ka->k", gx, G) + np.einsum("kab,kab->k", B, DG)
    return float(math.fsum(V.masses * per_atom))


def first_variation(V: DiscreteVarifold, I: Integrand, g: VectorField) -> float:
    """sum_i m_i (<d_x F(x_i, T_i), g(x_i)> + B_F(x_i, T_i) : Dg(x_i))."""
    _check_dims(V, I)
    if g.n != V.n:
        raise ValueError(f"field on R^{g.n} but varifold in R^{V.n}")
    return _first_variation(V, _gx_stack(V, I), _b_stack(V, I), g)


# -- push-forward ---------------------------------------------------------------


@dataclass(frozen=True)
class Diffeomorphism:
    """A map with its analytic Jacobian, both vectorized over rows."""

    map: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    label: str = ""


def affine_map(A, b=None) -> Diffeomorphism:
    A = np.asarray(A, dtype=float)
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
    return Diffeomorphism(lambda Y: np.atleast_2d(Y) @ A.T + b,
                          lambda Y: np.broadcast_to(A, (len(np.atleast_2d(Y)),) + A.shape),
                          "affine")


def dilation(x, r: float) -> Diffeomorphism:
    """y -> (y - x) / r."""
    if r <= 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    n = x.size
    return Diffeomorphism(lambda Y: (np.atleast_2d(Y) - x) / r,
                          lambda Y: np.broadcast_to(np.eye(n) / r, (len(np.atleast_2d(Y)), n, n)),
                          f"dilation(r={r:g})")


def flow_map(g: VectorField, t: float) -> Diffeomorphism:
    """phi_t(y) = y + t g(y)."""
    n = g.n
    return Diffeomorphism(lambda Y: np.atleast_2d(Y) + t * g.g(Y),
                          lambda Y: np.eye(n)[None] + t * g.Dg(Y),
                          f"flow(t={t:g})")


def compose(psi2: Diffeomorphism, psi1: Diffeomorphism) -> Diffeomorphism:
    """psi2 after psi1."""
    return Diffeomorphism(lambda Y: psi2.map(psi1.map(Y)),
                          lambda Y: np.einsum("kab,kbc->kac", psi2.jacobian(psi1.map(Y)), psi1.jacobian(Y)),
                          f"{psi2.label}o{psi1.label}")


def d_jacobian(J: np.ndarray, T: Plane) -> float:
    """sqrt det((J E)^T (J E)) for an orthonormal basis E of T."""
    JE = J @ T.basis()
    return float(math.sqrt(max(np.linalg.det(JE.T @ JE), 0.0)))


def pushforward(V: DiscreteVarifold, psi: Diffeomorphism) -> DiscreteVarifold:
    """Atoms move to (psi(x), d psi_x(T), m * J psi(x, T))."""
    if len(V) == 0:
        return V
    Y = np.asarray(psi.map(V.points), dtype=float)
    Js = np.asarray(psi.jacobian(V.points), dtype=float)
    planes, masses = [], []
    for i, (J, T) in enumerate(zip(Js, V.planes)):
        s = np.linalg.svd(J, compute_uv=False)
        if s[-1] <= 1e-12 * s[0]:
            raise ValueError(f"singular differential at atom {i}")
        JE = J @ T.basis()
        planes.append(plane_from_basis(JE.T))
        masses.append(V.masses[i] * math.sqrt(np.linalg.det(JE.T @ JE)))
    return DiscreteVarifold(V.n, V.d, Y, planes, masses, dict(V.meta))


@dataclass(frozen=True)
class FDCheck:
    analytic: float
    fd: float
    gap: float
    t: float


def first_variation_fd_check(V: DiscreteVarifold, I: Integrand, g: VectorField, t: float) -> FDCheck:
    """Compare the first variation with a central difference of the energy along phi_t."""
    if t <= 0:
        raise ValueError("t must be positive")
    analytic = first_variation(V, I, g)
    e_plus = energy(pushforward(V, flow_map(g, t)), I)
    e_minus = energy(pushforward(V, flow_map(g, -t)), I)
    fd = (e_plus - e_minus) / (2.0 * t)
    return FDCheck(analytic, fd, abs(analytic - fd), t)


def ball_mass(V: DiscreteVarifold, x, r: float) -> float:
    """||V|| of the closed ball of radius r around x."""
    return V.weight().ball_mass(x, r)


def blowup_varifold(V: DiscreteVarifold, x, r: float) -> DiscreteVarifold:
    """V_{x,r}: push forward by y -> (y - x)/r, multiply by r^d / ||V||(B_r(x)),
    keep the open unit ball.

    A dilation fixes every plane and has d-Jacobian r^-d, which cancels the
    r^d factor, so atoms keep their planes and get mass m / ||V||(B_r(x)).
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    mass = ball_mass(V, x, r)
    if mass <= 0:
        raise ValueError(f"no mass in the ball of radius {r} around the point")
    Y = (V.points - np.asarray(x, dtype=float)) / r
    keep = np.flatnonzero(np.linalg.norm(Y, axis=1) < 1.0)
    return DiscreteVarifold(V.n, V.d, Y[keep], [V.planes[i] for i in keep], V.masses[keep] / mass, dict(V.meta))


# -- the stationary construction --------------------------------------------------


def counterexample_varifold(I: Integrand, mu: GrassmannMeasure, R: float, N: int,
                            tau_rel: float = 1e-8) -> DiscreteVarifold:
    """H^k restricted to W = Im A(mu)^T, times mu, sampled on a Cartesian grid.

    W is cut to the ball of radius R and divided into cells of width
    h = 2R / N along an orthonormal basis of W; each cell center carries
    every plane in supp(mu) with mass h^k * mu_j.  ``meta`` records k, the
    cell width and whether mu is a Dirac mass.
    """
    if not I.autonomous:
        raise ValueError("the construction needs an autonomous integrand")
    if R <= 0 or N < 1:
        raise ValueError("need R > 0 and N >= 1")
    A = a_matrix(I, np.zeros(I.n), mu)
    if np.linalg.norm(A) <= 1e-14:
        raise ValueError("A(mu) is numerically zero")
    W = image_space(A, tau_rel)
    k = W.shape[1]
    h = 2.0 * R / N
    c = -R + (np.arange(N) + 0.5) * h
    mesh = np.stack(np.meshgrid(*([c] * k), indexing="ij"), axis=-1).reshape(-1, k)
    mesh = mesh[np.linalg.norm(mesh, axis=1) <= R]
    pts = mesh @ W.T
    support = mu.support
    points = np.repeat(pts, len(support), axis=0)
    planes = [mu.grid[j] for _ in range(len(pts)) for j in support]
    masses = np.tile(h**k * mu.weights[support], len(pts))
    meta = {
        "k": int(k),
        "d": int(I.d),
        "h_grid": h,
        "R": float(R),
        "is_dirac": bool(mu.is_dirac()),
        "rectifiable": bool(k == I.d),
        "W_basis": W.T.tolist(),
    }
    return DiscreteVarifold(I.n, I.d, points, planes, masses, meta)


def ball_volume(k: int, R: float) -> float:
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1) * R**k


@dataclass
class StationarityReport:
    max_ratio: float
    argmax: int
    ratios: list
    values: list

    def to_dict(self) -> dict:
        return {"max_ratio": self.max_ratio, "argmax": self.argmax,
                "ratios": list(self.ratios), "values": list(self.values)}


def stationarity_scan(V: DiscreteVarifold, I: Integrand, fields: Sequence[VectorField]) -> StationarityReport:
    """max |first_variation(V, I, g)| / |g|_C1 over the given fields."""
    fields = list(fields)
    if not fields:
        raise ValueError("empty field list")
    _check_dims(V, I)
    gx, B = _gx_stack(V, I), _b_stack(V, I)
    values, ratios = [], []
    for g in fields:
        v = _first_variation(V, gx, B, g)
        values.append(v)
        ratios.append(abs(v) / g.c1_norm if g.c1_norm > 0 else 0.0)
    j = int(np.argmax(ratios))
    return StationarityReport(float(ratios[j]), j, ratios, values)
