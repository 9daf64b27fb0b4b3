"""Finite-scale density and blow-up diagnostics for discrete measures.

Balls are closed throughout: an atom exactly on a sphere counts as inside.
Radii below ``floor_factor`` times the median nearest-neighbour spacing of
the atoms are flagged as unresolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.spatial import cKDTree

FLOOR_FACTOR = 5.0
DYADIC_OCTAVES = 8


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def preiss_constants(d: int) -> tuple[float, float]:
    """(alpha_d, beta_d) = (1 - 2^(-d-6), 2^(-d-9) d^(-4))."""
    a, b = preiss_constants_exact(d)
    return float(a), float(b)


def preiss_constants_exact(d: int) -> tuple[Fraction, Fraction]:
    if d < 1:
        raise ValueError("d must be a positive integer")
    return 1 - Fraction(1, 2 ** (d + 6)), Fraction(1, 2 ** (d + 9) * d**4)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    n: int
    points: np.ndarray = field(repr=False)
    masses: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, self.n)
        m = np.array(self.masses, dtype=float).ravel()
        if len(pts) != len(m):
            raise ValueError(f"{len(pts)} points but {len(m)} masses")
        if np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ValueError("masses must be positive and finite")
        pts.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "_tree", None)

    def __len__(self) -> int:
        return len(self.masses)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            object.__setattr__(self, "_tree", cKDTree(self.points))
        return self._tree

    def total_mass(self) -> float:
        return float(math.fsum(self.masses))

    def ball_mass(self, x, r: float) -> float:
        """mu of the closed ball of radius r around x."""
        if len(self) == 0:
            return 0.0
        idx = self.tree.query_ball_point(np.asarray(x, dtype=float), r)
        return float(math.fsum(self.masses[idx])) if idx else 0.0

    def ball_masses(self, centers, r: float) -> np.ndarray:
        """Closed-ball masses around each row of ``centers`` at one radius."""
        if len(self) == 0:
            return np.zeros(len(centers))
        if self.masses.min() == self.masses.max():
            counts = self.tree.query_ball_point(np.asarray(centers, dtype=float), r, return_length=True)
            return counts * self.masses[0]
        lists = self.tree.query_ball_point(np.asarray(centers, dtype=float), r)
        return np.array([self.masses[ix].sum() if ix else 0.0 for ix in lists])

    def spacing(self) -> float:
        """Median nearest-neighbour distance between distinct atom positions.

        Estimated on a fixed subsample of at most 4096 atoms.
        """
        cached = self.__dict__.get("_spacing")
        if cached is not None:
            return cached
        value = 0.0
        if len(self) >= 2:
            k = min(8, len(self))
            probe = self.points
            if len(probe) > 4096:
                probe = probe[np.random.default_rng(0).choice(len(probe), 4096, replace=False)]
            dist, _ = self.tree.query(probe, k=k)
            dist = np.where(dist > 0, dist, np.inf).min(axis=1)
            if np.isinf(dist).any():
                pts = np.unique(self.points, axis=0)
                dist = cKDTree(pts).query(pts, k=2)[0][:, 1] if len(pts) >= 2 else np.array([0.0])
            value = float(np.median(dist))
        object.__setattr__(self, "_spacing", value)
        return value

    def resolution_floor(self, factor: float = FLOOR_FACTOR) -> float:
        return factor * self.spacing()


def rescale(mu: DiscreteMeasure, x, r: float) -> DiscreteMeasure:
    """mu_{x,r}: push by y -> (y - x)/r, keep the open unit ball, divide by mu(B_r(x))."""
    if r <= 0:
        raise ValueError("radius must be positive")
    denom = mu.ball_mass(x, r)
    if denom <= 0:
        raise ValueError(f"empty ball: no mass within radius {r} of the point")
    Y = (mu.points - np.asarray(x, dtype=float)) / r
    inside = np.linalg.norm(Y, axis=1) < 1.0
    return DiscreteMeasure(mu.n, Y[inside], mu.masses[inside] / denom)


def _radii(radii) -> np.ndarray:
    r = np.asarray(radii, dtype=float).ravel()
    if r.size == 0 or np.any(r <= 0):
        raise ValueError("radii must be positive")
    r = np.sort(r)[::-1]
    if np.any(np.diff(r) >= 0):
        raise ValueError("radii must be distinct")
    return r


@dataclass
class DensityProfile:
    center: np.ndarray
    d: int
    radii: np.ndarray
    masses: np.ndarray
    ratios: np.ndarray
    resolved: np.ndarray
    floor: float

    def slope(self) -> float:
        """Least-squares slope of log ratio against log r over resolved radii."""
        ok = self.resolved & (self.ratios > 0)
        if ok.sum() < 2:
            raise ValueError("fewer than two resolved radii with positive mass")
        return float(np.polyfit(np.log(self.radii[ok]), np.log(self.ratios[ok]), 1)[0])

    def rows(self) -> list[tuple]:
        return [(float(r), float(q), "ok" if ok else "unresolved")
                for r, q, ok in zip(self.radii, self.ratios, self.resolved)]

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "d": self.d,
            "radii": self.radii.tolist(),
            "ratios": self.ratios.tolist(),
            "resolved": self.resolved.tolist(),
            "floor": self.floor,
        }


def density_profile(mu: DiscreteMeasure, x, d: int, radii, floor_factor: float = FLOOR_FACTOR) -> DensityProfile:
    """mu(B_r(x)) / (omega_d r^d) over decreasing radii."""
    r = _radii(radii)
    x = np.asarray(x, dtype=float)
    masses = np.array([mu.ball_mass(x, s) for s in r])
    ratios = masses / (unit_ball_volume(d) * r**d)
    floor = mu.resolution_floor(floor_factor) if len(mu) else 0.0
    return DensityProfile(x, d, r, masses, ratios, r >= floor, floor)


@dataclass
class Lemma21Report:
    t: float
    d: int
    radii: np.ndarray
    ratios: np.ndarray
    skipped: list
    max_ratio: float
    threshold: float
    holds: bool

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "d": self.d,
            "radii": self.radii.tolist(),
            "ratios": [None if np.isnan(q) else float(q) for q in self.ratios],
            "skipped": list(self.skipped),
            "max_ratio": self.max_ratio,
            "threshold": self.threshold,
            "holds": self.holds,
        }


def lemma21_scan(mu: DiscreteMeasure, x, d: int, t: float, radii, tol: float = 0.02) -> Lemma21Report:
    """mu(B_{tr}(x)) / mu(B_r(x)) over radii, against the floor t^d - tol."""
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    r = _radii(radii)
    ratios = np.full(r.size, np.nan)
    skipped = []
    for i, s in enumerate(r):
        den = mu.ball_mass(x, s)
        if den <= 0:
            skipped.append(float(s))
            continue
        ratios[i] = mu.ball_mass(x, t * s) / den
    best = float(np.nanmax(ratios)) if np.any(~np.isnan(ratios)) else float("nan")
    thr = t**d - tol
    return Lemma21Report(t, d, r, ratios, skipped, best, thr, bool(best >= thr))


def project_pushforward(V, I, S) -> DiscreteMeasure:
    """(Pi_S)_# (F(., S) ||V||): atoms at S x_i with masses m_i F(x_i, S)."""
    if (S.n, S.d) != (V.n, V.d):
        raise ValueError(f"projection plane in G({S.n},{S.d}) for a varifold on G({V.n},{V.d})")
    pts = V.points @ S.P.T
    w = np.array([I.value(x, S) for x in V.points]).reshape(-1)
    return DiscreteMeasure(V.n, pts, V.masses * w)


def _unit_ball_samples(d: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((count, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return np.vstack([np.zeros(d), u * rng.random((count, 1)) ** (1.0 / d)])


@dataclass
class PreissReport:
    d: int
    alpha: float
    beta: float
    radii: np.ndarray
    density: np.ndarray
    e_fraction: np.ndarray
    f_value: np.ndarray
    f_reference: float
    scales_used: list
    f_resolved: np.ndarray
    floor: float
    scale_floor: float

    def to_dict(self) -> dict:
        nan = lambda a: [None if np.isnan(v) else float(v) for v in a]  # noqa: E731
        return {
            "d": self.d,
            "alpha": self.alpha,
            "beta": self.beta,
            "radii": self.radii.tolist(),
            "density": nan(self.density),
            "e_fraction": nan(self.e_fraction),
            "f_value": nan(self.f_value),
            "f_reference": self.f_reference,
            "scales_used": self.scales_used,
            "f_resolved": self.f_resolved.tolist(),
            "floor": self.floor,
            "scale_floor": self.scale_floor,
        }


def preiss_diagnostics(mu: DiscreteMeasure, x, d: int, radii, plane_grid, n_z: int = 200,
                       n_plane_points: int = 16, seed: int = 42,
                       floor_factor: float = FLOOR_FACTOR) -> PreissReport:
    """Finite-scale estimates of the two Preiss-criterion quantities.

    E-fraction at r: share of mu(B_r(x)) carried by atoms z admitting a
    dyadic s = r/2, ..., r/2^8 with
    mu(B_s(z)) / (omega_d s^d) <= alpha * mu(B_r(x)) / (omega_d r^d).  It
    is estimated on at most ``n_z`` atoms drawn with probability
    proportional to mass.  Only scales s with spacing / s <= 1 - alpha are
    scanned: below that, a single miscounted atom moves the density ratio by
    more than the alpha-margin.  Radii with no such scale get NaN.

    F at r: max over the plane grid of the min over sample points z of
    (x + T) inside B_r(x) of mu(B_{beta r}(z)) / mu(B_r(x)).  For a flat
    d-plane this is about beta^d, the reference value reported alongside.
    """
    alpha, beta = preiss_constants(d)
    r = _radii(radii)
    x = np.asarray(x, dtype=float)
    floor = mu.resolution_floor(floor_factor) if len(mu) else 0.0
    s_floor = max(floor, mu.spacing() / (1.0 - alpha)) if len(mu) else 0.0
    wd = unit_ball_volume(d)
    rng = np.random.default_rng(seed)
    dens = np.full(r.size, np.nan)
    efrac = np.full(r.size, np.nan)
    fval = np.full(r.size, np.nan)
    scales = []
    bases = [T.basis() for T in plane_grid]
    cloud = _unit_ball_samples(d, n_plane_points, seed)
    for i, R in enumerate(r):
        mass = mu.ball_mass(x, R)
        if mass <= 0:
            scales.append([])
            continue
        dens[i] = mass / (wd * R**d)
        idx = mu.tree.query_ball_point(x, R)
        idx = np.asarray(idx, dtype=int)
        w = mu.masses[idx]
        if idx.size > n_z:
            pick = rng.choice(idx.size, size=n_z, replace=False, p=w / w.sum())
            Z = mu.points[idx[pick]]
            zw = np.ones(n_z) / n_z
        else:
            Z = mu.points[idx]
            zw = w / w.sum()
        s_list = [R / 2**k for k in range(1, DYADIC_OCTAVES + 1) if R / 2**k >= s_floor]
        scales.append(s_list)
        in_e = np.zeros(len(Z), dtype=bool)
        for s in s_list:
            in_e |= mu.ball_masses(Z, s) / (wd * s**d) <= alpha * dens[i]
        efrac[i] = float(np.sum(zw[in_e])) if s_list else np.nan
        best = 0.0
        for E in bases:
            zs = x + R * cloud @ E.T
            best = max(best, float(mu.ball_masses(zs, beta * R).min()) / mass)
        fval[i] = best
    return PreissReport(d, alpha, beta, r, dens, efrac, fval, beta**d, scales, beta * r >= floor, floor, s_floor)


# -- varifold-level diagnostics -------------------------------------------------


def plane_distribution_profile(V, x, radii) -> dict:
    """Mass-weighted mean projection of the atoms in B_r(x) for each radius.

    Drift is measured in Frobenius norm against the smallest radius with mass.
    A finite-scale look at whether the plane distribution is independent of
    the blow-up scale; no pass/fail threshold is applied.
    """
    r = _radii(radii)
    x = np.asarray(x, dtype=float)
    dist = np.linalg.norm(V.points - x, axis=1)
    P = np.array([T.P for T in V.planes]) if len(V) else np.zeros((0, V.n, V.n))
    means = []
    for s in r:
        inside = dist <= s
        if not inside.any():
            means.append(None)
            continue
        w = V.masses[inside]
        means.append(np.einsum("k,kab->ab", w, P[inside]) / w.sum())
    ref = next((m for m in reversed(means) if m is not None), None)
    drift = [None if m is None else float(np.linalg.norm(m - ref)) for m in means]
    return {
        "radii": r.tolist(),
        "mean_projection": [None if m is None else m.tolist() for m in means],
        "drift": drift,
    }


def lower_density_part(V, radii, threshold: float, floor_factor: float = FLOOR_FACTOR):
    """Atoms whose smallest resolved density ratio over ``radii`` is >= threshold.

    A finite-scale stand-in for restricting V to the set of positive lower
    d-density.  Returns the restricted varifold and the per-atom minima.
    """
    mu = V.weight()
    r = _radii(radii)
    floor = mu.resolution_floor(floor_factor)
    r = r[r >= floor]
    if r.size == 0:
        raise ValueError("no radius above the resolution floor")
    wd = unit_ball_volume(V.d)
    lows = np.full(len(V), np.inf)
    for s in r:
        lows = np.minimum(lows, mu.ball_masses(V.points, s) / (wd * s**V.d))
    return V.restrict(lows >= threshold), lows
