"""Anisotropic integrands F(x, T) and the matrices B_F, C_F of the first variation.

``grad_T`` is a symmetric n x n matrix standing for the differential of
F(x, .) on the Grassmannian: along a curve T(t) with T'(0) = S the value
changes at rate <grad_T, S> = sum(grad_T * S).  Only the part of grad_T
seen by tangent vectors matters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grassmannian import Plane, moved_plane, projection_curve_derivative

EULER_TOL = 1e-8
FD_STEP = 1e-5


class Integrand:
    """Positive C^1 integrand on Omega x G(n, d).

    Subclasses implement ``value``, ``grad_x`` and ``grad_T``.  ``bounds``
    records constants 0 < lam <= F <= Lam valid on the whole domain (or on
    the compact set the instance was built for).
    """

    name = "integrand"
    autonomous = True

    def __init__(self, n: int, d: int, params: dict | None = None, bounds=(None, None)):
        if not (0 < d < n):
            raise ValueError(f"need 0 < d < n, got n={n}, d={d}")
        self.n = n
        self.d = d
        self.params = dict(params or {})
        self.bounds = bounds

    def value(self, x, T: Plane) -> float:
        raise NotImplementedError

    def grad_x(self, x, T: Plane) -> np.ndarray:
        return np.zeros(self.n)

    def grad_T(self, x, T: Plane) -> np.ndarray:
        return np.zeros((self.n, self.n))

    def spec(self) -> dict:
        return {"name": self.name, "params": _jsonable(self.params)}

    def _check(self, x, T: Plane):
        if (T.n, T.d) != (self.n, self.d):
            raise ValueError(f"plane in G({T.n},{T.d}) passed to an integrand on G({self.n},{self.d})")
        if np.shape(x) != (self.n,):
            raise ValueError(f"point must have shape ({self.n},), got {np.shape(x)}")

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, d={self.d}, params={self.params})"


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = np.asarray(v).tolist() if isinstance(v, np.ndarray) else v
    return out


def c_matrix(I: Integrand, x, T: Plane) -> np.ndarray:
    """The plane-derivative part C_F of B_F; annihilates v (x) w for v, w in T."""
    I._check(np.asarray(x, dtype=float), T)
    D = np.asarray(I.grad_T(np.asarray(x, dtype=float), T), dtype=float)
    return T.complement @ (D + D.T) @ T.P


def b_matrix(I: Integrand, x, T: Plane) -> np.ndarray:
    """B_F(x, T) = F(x, T) T + C_F(x, T).

    Defined by B:L = F (T:L) + <d_T F, T^perp L T + (T^perp L T)^*> for every
    n x n matrix L.
    """
    x = np.asarray(x, dtype=float)
    return I.value(x, T) * T.P + c_matrix(I, x, T)


class AreaIntegrand(Integrand):
    name = "area"

    def __init__(self, n: int, d: int):
        super().__init__(n, d, {}, (1.0, 1.0))

    def value(self, x, T):
        return 1.0


class ConstantIntegrand(Integrand):
    name = "constant"

    def __init__(self, n: int, d: int, c: float = 1.0):
        if c <= 0:
            raise ValueError("constant integrand must be positive")
        super().__init__(n, d, {"c": float(c)}, (float(c), float(c)))
        self.c = float(c)

    def value(self, x, T):
        return self.c


class SineModulatedIntegrand(Integrand):
    """F(x, T) = 1 + 1/2 sin(x_1) (T : E) with |T : E| <= 1 for every plane.

    ``E`` is symmetric; it is rescaled so that its spectral norm is 1/d,
    which keeps F within [1/2, 3/2].
    """

    name = "sine-modulated"
    autonomous = False

    def __init__(self, n: int, d: int, E=None, seed: int = 7):
        if E is None:
            g = np.random.default_rng(seed).standard_normal((n, n))
            E = g + g.T
        E = np.asarray(E, dtype=float)
        E = 0.5 * (E + E.T)
        s = np.linalg.norm(E, 2)
        if s == 0:
            raise ValueError("E must be nonzero")
        E = E / (s * d)
        super().__init__(n, d, {"E": E}, (0.5, 1.5))
        self.E = E

    def value(self, x, T):
        return 1.0 + 0.5 * np.sin(x[0]) * float(np.sum(T.P * self.E))

    def grad_x(self, x, T):
        g = np.zeros(self.n)
        g[0] = 0.5 * np.cos(x[0]) * float(np.sum(T.P * self.E))
        return g

    def grad_T(self, x, T):
        return 0.5 * np.sin(x[0]) * self.E


class FrozenIntegrand(Integrand):
    """F_x0(y, T) = F(x0, T): the base integrand with its point argument fixed."""

    autonomous = True

    def __init__(self, base: Integrand, x0):
        self.base = base
        self.x0 = np.array(x0, dtype=float)
        super().__init__(base.n, base.d, {"base": base.spec(), "x0": self.x0.tolist()}, base.bounds)
        self.name = f"frozen({base.name})"

    def value(self, x, T):
        return self.base.value(self.x0, T)

    def grad_T(self, x, T):
        return self.base.grad_T(self.x0, T)


def freeze(I: Integrand, x) -> Integrand:
    if I.autonomous:
        return I
    return FrozenIntegrand(I, x)


# -- codimension one: even, one-homogeneous norms on R^n ------------------------


@dataclass(frozen=True)
class NormIntegrand:
    """Even, positively one-homogeneous G on R^n minus the origin.

    ``g_value`` and ``g_grad`` act row-wise on arrays of shape (..., n).
    """

    n: int
    g_value: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    g_grad: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    name: str = "norm"
    params: dict = field(default_factory=dict)

    def spec(self) -> dict:
        return {"name": self.name, "params": _jsonable(self.params)}

    def euler_defect(self, V: np.ndarray) -> float:
        V = np.atleast_2d(V)
        lhs = np.einsum("ij,ij->i", self.g_grad(V), V)
        return float(np.max(np.abs(lhs - self.g_value(V))))


def euclidean_norm(n: int) -> NormIntegrand:
    def value(V):
        return np.linalg.norm(V, axis=-1)

    def grad(V):
        return V / np.linalg.norm(V, axis=-1, keepdims=True)

    return NormIntegrand(n, value, grad, "euclidean-norm", {})


def ellipsoidal_norm(A) -> NormIntegrand:
    """G(v) = sqrt(v^T A v) for symmetric positive definite A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be a square matrix")
    A = 0.5 * (A + A.T)
    if np.linalg.eigvalsh(A).min() <= 0:
        raise ValueError("A must be positive definite")

    def value(V):
        return np.sqrt(np.einsum("...i,ij,...j->...", V, A, V))

    def grad(V):
        return (V @ A) / value(V)[..., None]

    return NormIntegrand(A.shape[0], value, grad, "ellipsoidal-norm", {"A": A})


def perturbed_norm(n: int, eps: float) -> NormIntegrand:
    """G(v) = |v| (1 + eps * sum_i u_i^4) with u = v/|v|.

    In the plane G stays strictly convex exactly for -2/9 < eps < 1/3: the
    polar curvature h + h'' equals 1 + 3 eps/4 - (15 eps/4) cos 4 theta.
    """
    eps = float(eps)
    if eps <= -1.0:
        raise ValueError("eps must exceed -1 to keep G positive")

    def value(V):
        r = np.linalg.norm(V, axis=-1)
        U = V / r[..., None]
        return r * (1.0 + eps * np.sum(U**4, axis=-1))

    def grad(V):
        r = np.linalg.norm(V, axis=-1, keepdims=True)
        U = V / r
        p = np.sum(U**4, axis=-1, keepdims=True)
        return U * (1.0 - 3.0 * eps * p) + 4.0 * eps * U**3

    return NormIntegrand(n, value, grad, "perturbed-norm", {"eps": eps})


class NormInducedIntegrand(Integrand):
    """F(x, nu^perp) = G(nu) on G(n, n-1) for an even one-homogeneous G."""

    def __init__(self, norm: NormIntegrand):
        super().__init__(norm.n, norm.n - 1, norm.params)
        self.norm = norm
        self.name = norm.name

    def value(self, x, T):
        return float(self.norm.g_value(T.normal()))

    def grad_T(self, x, T):
        nu = T.normal()
        g = self.norm.g_grad(nu)
        # nu' = -S nu along a curve with T' = S, so dF = -<S, grad G (x) nu>
        return -0.5 * (np.outer(g, nu) + np.outer(nu, g))


def from_norm(N: NormIntegrand, n_check: int = 64, seed: int = 0) -> Integrand:
    V = np.random.default_rng(seed).standard_normal((n_check, N.n))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    vals = N.g_value(V)
    if np.any(vals <= 0):
        raise ValueError(f"{N.name}: G must be positive on the unit sphere")
    if N.euler_defect(V) > EULER_TOL * max(1.0, float(vals.max())):
        raise ValueError(f"{N.name}: gradient violates the Euler identity <dG(v), v> = G(v)")
    I = NormInducedIntegrand(N)
    I.bounds = (float(vals.min()), float(vals.max()))
    return I


def b_matrix_norm(N: NormIntegrand, nu) -> np.ndarray:
    """G(nu) Id - nu (x) dG(nu), computed from G directly."""
    nu = np.asarray(nu, dtype=float)
    return N.g_value(nu) * np.eye(N.n) - np.outer(nu, N.g_grad(nu))


# -- finite-difference validation ----------------------------------------------


@dataclass
class FDReport:
    max_x_error: float
    max_T_error: float
    argmax_x: int
    argmax_T: int
    h: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def fd_validate(I: Integrand, samples, h: float = FD_STEP, n_dirs: int = 3, seed: int = 0) -> FDReport:
    """Compare grad_x and grad_T with central differences of ``value``.

    ``samples`` is a sequence of (x, T).  Plane directions are the velocities
    of t -> projection onto (I + tL)(T) for seeded random L.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)
    ex = eT = 0.0
    ix = iT = -1
    for k, (x, T) in enumerate(samples):
        x = np.asarray(x, dtype=float)
        gx = I.grad_x(x, T)
        fd = np.empty(I.n)
        for i in range(I.n):
            e = np.zeros(I.n)
            e[i] = h
            fd[i] = (I.value(x + e, T) - I.value(x - e, T)) / (2 * h)
        err = float(np.max(np.abs(fd - gx)))
        if err > ex or ix < 0:
            ex, ix = err, k
        D = I.grad_T(x, T)
        for _ in range(n_dirs):
            L = rng.standard_normal((I.n, I.n))
            S = projection_curve_derivative(T, L).S
            fd_t = (I.value(x, moved_plane(T, L, h)) - I.value(x, moved_plane(T, L, -h))) / (2 * h)
            err = abs(fd_t - float(np.sum(D * S)))
            if err > eT or iT < 0:
                eT, iT = err, k
    return FDReport(ex, eT, ix, iT, h)


# -- catalogue -----------------------------------------------------------------

NORM_NAMES = ("euclidean-norm", "ellipsoidal-norm", "perturbed-norm")
INTEGRAND_NAMES = ("area", "constant", "sine-modulated") + NORM_NAMES


class UnknownIntegrandError(ValueError):
    pass


def make_norm(spec, n: int) -> NormIntegrand:
    name, params = _split_spec(spec)
    if name == "euclidean-norm":
        return euclidean_norm(n)
    if name == "ellipsoidal-norm":
        A = params.get("A")
        if A is None:
            A = np.diag(np.arange(1, n + 1, dtype=float))
        A = np.asarray(A, dtype=float)
        if A.ndim == 1:
            A = np.diag(A)
        if A.shape != (n, n):
            raise ValueError(f"params.A must be {n}x{n}, got shape {A.shape}")
        return ellipsoidal_norm(A)
    if name == "perturbed-norm":
        if "eps" not in params:
            raise ValueError("perturbed-norm needs params.eps")
        return perturbed_norm(n, params["eps"])
    if name in INTEGRAND_NAMES:
        raise ValueError(f"{name!r} is not a codimension-one norm; norms: {', '.join(NORM_NAMES)}")
    raise UnknownIntegrandError(f"unknown integrand {name!r}; available: {', '.join(INTEGRAND_NAMES)}")


def make_integrand(spec, n: int, d: int | None = None) -> Integrand:
    """Build an integrand from ``{"name": ..., "params": {...}}`` or a bare name."""
    name, params = _split_spec(spec)
    if name in NORM_NAMES:
        if d is not None and d != n - 1:
            raise ValueError(f"{name} lives on hyperplanes: d must be n - 1 = {n - 1}, got {d}")
        return from_norm(make_norm({"name": name, "params": params}, n))
    if name not in INTEGRAND_NAMES:
        raise UnknownIntegrandError(f"unknown integrand {name!r}; available: {', '.join(INTEGRAND_NAMES)}")
    if d is None:
        d = n - 1
    if name == "area":
        return AreaIntegrand(n, d)
    if name == "constant":
        return ConstantIntegrand(n, d, params.get("c", 1.0))
    return SineModulatedIntegrand(n, d, params.get("E"), params.get("seed", 7))


def _split_spec(spec) -> tuple[str, dict]:
    if isinstance(spec, str):
        return spec, {}
    if not isinstance(spec, dict):
        raise ValueError("integrand spec must be a name or an object with a 'name' field")
    if "name" not in spec:
        raise ValueError("integrand spec is missing field 'name'")
    params = spec.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ValueError("integrand spec field 'params' must be an object")
    return str(spec["name"]), dict(params)
