"""The averaged matrix A_x(mu), the atomic-condition search and the
codimension-one strict-convexity oracle.

The atomic condition at x asks that for every probability measure mu on
G(n, d): (i) dim Ker A_x(mu) <= n - d, and (ii) equality only for Dirac
masses.  ``check_ac`` looks for measures on a finite plane grid that break
(i) or (ii) and returns a certificate that can be re-checked by a single
SVD.  Finding nothing is relative to the grid and the search budget; it is
not a proof that the condition holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import brentq, linprog, nnls

from .grassmannian import Plane, normal_to_plane, sphere_directions, subspace_samples
from .integrand import Integrand, NormIntegrand, b_matrix, from_norm

RESOLUTION_FACTOR = 1e-3


class GrassmannMeasure:
    """Probability weights on a fixed list of planes."""

    def __init__(self, grid, weights, tol: float = 1e-12):
        grid = list(grid)
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(grid),):
            raise ValueError(f"{len(grid)} planes but weights of shape {w.shape}")
        if len(grid) == 0:
            raise ValueError("empty grid")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > tol:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        dims = {(T.n, T.d) for T in grid}
        if len(dims) != 1:
            raise ValueError(f"planes of mixed dimensions {sorted(dims)}")
        self.grid = grid
        self.weights = w
        self.n, self.d = dims.pop()
        check_distinct([grid[j] for j in self.support])

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    @classmethod
    def dirac(cls, T: Plane) -> "GrassmannMeasure":
        return cls([T], [1.0])

    def is_dirac(self) -> bool:
        return self.support.size == 1

    def to_dict(self) -> dict:
        s = self.support
        return {
            "weights": [float(v) for v in self.weights[s]],
            "planes": [self.grid[j].to_dict() for j in s],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GrassmannMeasure":
        planes = [Plane.from_dict(p) for p in data["planes"]]
        w = np.asarray(data["weights"], dtype=float)
        return cls(planes, w / w.sum())


def check_distinct(planes, min_dist: float = 1e-6):
    if len(planes) < 2:
        return
    P = np.array([T.P.ravel() for T in planes])
    sq = np.sum(P * P, axis=1)
    D2 = sq[:, None] + sq[None, :] - 2 * P @ P.T
    np.fill_diagonal(D2, np.inf)
    if D2.min() <= min_dist**2:
        i, j = np.unravel_index(np.argmin(D2), D2.shape)
        raise ValueError(f"grid planes {i} and {j} coincide (distance <= {min_dist})")


def a_matrix(I: Integrand, x, mu: GrassmannMeasure) -> np.ndarray:
    """A_x(mu) = sum_j mu_j B_F(x, T_j)."""
    if (mu.n, mu.d) != (I.n, I.d):
        raise ValueError(f"measure on G({mu.n},{mu.d}) vs integrand on G({I.n},{I.d})")
    A = np.zeros((I.n, I.n))
    for j in mu.support:
        A += mu.weights[j] * b_matrix(I, x, mu.grid[j])
    return A


def image_space(A, tau_rel: float = 1e-8) -> np.ndarray:
    """Orthonormal basis (columns) of Im A^T, cut at tau_rel * sigma_max."""
    A = np.asarray(A, dtype=float)
    _, s, Vt = np.linalg.svd(A)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((A.shape[1], 0))
    r = int(np.sum(s > tau_rel * s[0]))
    return Vt[:r].T


def kernel_dimension(A, tau_rel: float) -> int:
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if s[0] == 0.0:
        return A.shape[0]
    return int(np.sum(s <= tau_rel * s[0]))


# -- atomic-condition search ---------------------------------------------------


@dataclass
class ACOptions:
    """Search budget and tolerances for :func:`check_ac`.

    ``tau_rank`` is relative to sigma_max(A).  Certificates are polished
    until the claimed kernel is exact to rounding, so it can sit far
    below the LP tolerance.
    """

    seed: int = 42
    n_random: int = 200
    n_restarts: int = 50
    refine_iters: int = 5
    tau_rank: float = 1e-12
    eps_nd: float = 1e-3
    lp_tol: float = 1e-9
    polish_iters: int = 400
    pair_scan: bool = True
    max_pair_lps: int = 10

    def validate(self):
        for name in ("tau_rank", "eps_nd", "lp_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"option {name} must be positive")
        for name in ("n_random", "n_restarts", "refine_iters", "polish_iters"):
            if getattr(self, name) < 0:
                raise ValueError(f"option {name} must be nonnegative")
        if self.n_random + self.n_restarts == 0 and not self.pair_scan:
            raise ValueError("zero search budget")


@dataclass
class ACCertificate:
    measure: GrassmannMeasure
    grid_indices: list
    kernel_basis: np.ndarray
    singular_values: np.ndarray
    source: str
    status: str

    def to_dict(self) -> dict:
        data = self.measure.to_dict()
        return {
            "weights": data["weights"],
            "grid_indices": [int(i) for i in self.grid_indices],
            "kernel_basis": self.kernel_basis.T.tolist(),
            "singular_values": self.singular_values.tolist(),
            "planes": data["planes"],
            "source": self.source,
            "status": self.status,
        }


@dataclass
class ACReport:
    status: str
    certificate: ACCertificate | None
    budget: dict
    margins: dict = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return self.status != "no_violation_found"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "budget": dict(self.budget),
            "margins": dict(self.margins),
        }


class _Search:
    """State shared by the candidate generators of one ``check_ac`` call."""

    def __init__(self, Bs: np.ndarray, n: int, d: int, opts: ACOptions):
        self.Bs = Bs
        self.n, self.d = n, d
        self.opts = opts
        self.scale = float(np.max(np.linalg.norm(Bs, ord=2, axis=(1, 2))))
        self.best_sigma = np.inf

    def A(self, mu: np.ndarray) -> np.ndarray:
        return np.einsum("j,jab->ab", mu, self.Bs)

    # -- certificate validation

    def classify(self, mu: np.ndarray, source: str) -> ACCertificate | None:
        """Accept ``mu`` if its kernel breaks (i) or (ii); None otherwise."""
        o = self.opts
        mu = np.where(mu > 1e-15, mu, 0.0)
        mu = mu / mu.sum()
        A = self.A(mu)
        _, s, Vt = np.linalg.svd(A)
        kdim = int(np.sum(s <= o.tau_rank * s[0])) if s[0] > 0 else self.n
        if s[0] > 0:
            self.best_sigma = min(self.best_sigma, s[-(self.n - self.d)] / s[0])
        codim = self.n - self.d
        if kdim >= codim + 1:
            status = "violation_i"
        elif kdim == codim and np.sum(mu >= o.eps_nd) >= 2:
            status = "violation_ii"
        else:
            return None
        idx = np.flatnonzero(mu > 0)
        cert = ACCertificate(
            GrassmannMeasure([self.grid[j] for j in idx], mu[idx] / mu[idx].sum()),
            list(idx),
            Vt[self.n - kdim :].T,
            s,
            source,
            status,
        )
        return cert

    # -- LP over the normalized cone

    def cone_lp(self, K: np.ndarray, drop_zero: bool):
        """Min over the simplex of max|sum_j w_j u_j| with u_j = B_j K / |B_j K|.

        Returns (residual, mu) with mu the matching weights on the original
        columns, or (None, j) when column j vanishes and ``drop_zero`` is off.
        """
        V = np.einsum("jab,bk->jak", self.Bs, K).reshape(len(self.Bs), -1)
        nr = np.linalg.norm(V, axis=1)
        zero = nr <= 1e-13 * self.scale
        if zero.any() and not drop_zero:
            return None, int(np.flatnonzero(zero)[0])
        keep = np.flatnonzero(~zero)
        if keep.size < 2:
            return np.inf, None
        U = V[keep] / nr[keep, None]
        bound, w = self.separation(U, K.ravel())
        if bound > self.opts.lp_tol:
            mu = np.zeros(len(self.Bs))
            mu[keep] = w / nr[keep]
            return bound, mu / mu.sum()
        q = U.shape[1]
        M = keep.size
        c = np.zeros(M + 1)
        c[-1] = 1.0
        ones = np.ones((q, 1))
        A_ub = np.vstack([np.hstack([U.T, -ones]), np.hstack([-U.T, -ones])])
        A_eq = np.hstack([np.ones((1, M)), np.zeros((1, 1))])
        res = linprog(c, A_ub=A_ub, b_ub=np.zeros(2 * q), A_eq=A_eq, b_eq=[1.0],
                      bounds=(0, None), method="highs")
        if res.status != 0:
            return np.inf, None
        w = np.clip(res.x[:-1], 0.0, None)
        mu = np.zeros(len(self.Bs))
        mu[keep] = w / nr[keep]
        return float(res.fun), mu / mu.sum()

    @staticmethod
    def separation(U: np.ndarray, y0: np.ndarray, iters: int = 60):
        """Lower bound on min over the simplex of |sum_j w_j u_j|_inf.

        Any y with min_j <y, u_j> = delta > 0 gives the bound delta / |y|_1.
        Tries ``y0`` and then the iterates of Gilbert's minimum-norm-point
        method, whose convex weights are returned for reuse.
        """
        best = 0.0
        G = U @ y0
        if G.min() > 0:
            best = G.min() / np.abs(y0).sum()
        w = np.full(len(U), 1.0 / len(U))
        p = w @ U
        for it in range(iters):
            G = U @ p
            j = int(np.argmin(G))
            if G[j] > 0:
                best = max(best, G[j] / np.abs(p).sum())
            step = p - U[j]
            den = step @ step
            if den <= 0:
                break
            t = min(max((p @ step) / den, 0.0), 1.0)
            if t <= 0:
                break
            p = p - t * step
            w *= 1.0 - t
            w[j] += t
        return best, w

    def pair_lp(self, K: np.ndarray, a: int, b: int):
        """Max of min(mu_a, mu_b) over simplex measures with A(mu) K ~ 0."""
        V = np.einsum("jab,bk->jak", self.Bs, K).reshape(len(self.Bs), -1) / self.scale
        M, q = V.shape
        c = np.zeros(M + 1)
        c[-1] = -1.0
        tol = self.opts.lp_tol
        rows = [np.hstack([V.T, np.zeros((q, 1))]), np.hstack([-V.T, np.zeros((q, 1))])]
        rhs = [np.full(q, tol), np.full(q, tol)]
        for j in (a, b):
            r = np.zeros(M + 1)
            r[j], r[-1] = -1.0, 1.0
            rows.append(r[None])
            rhs.append([0.0])
        A_eq = np.hstack([np.ones((1, M)), np.zeros((1, 1))])
        res = linprog(c, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), A_eq=A_eq, b_eq=[1.0],
                      bounds=(0, None), method="highs")
        if res.status != 0:
            return 0.0, None
        return float(res.x[-1]), np.clip(res.x[:-1], 0.0, None)

    # -- polishing

    def polish(self, mu: np.ndarray, m: int) -> np.ndarray:
        """Alternate kernel and weights on supp(mu) to drive m singular values to 0."""
        S = np.flatnonzero(mu > 1e-14 * mu.max())
        if S.size < 2:
            return mu
        Bs = self.Bs[S] / self.scale
        w = mu[S] / mu[S].sum()
        big = 1e3
        prev = np.inf
        stall = 0
        for _ in range(self.opts.polish_iters):
            A = np.einsum("j,jab->ab", w, Bs)
            _, s, Vt = np.linalg.svd(A)
            crit = s[-m:].max() / s[0]
            if crit < 1e-15:
                break
            if crit > 0.999 * prev:
                stall += 1
                if stall > 20:
                    break
            else:
                stall = 0
            prev = min(prev, crit)
            K = Vt[-m:].T
            Mx = np.einsum("jab,bk->ajk", Bs, K).transpose(0, 2, 1).reshape(-1, S.size)
            lhs = np.vstack([Mx, big * np.ones((1, S.size))])
            rhs = np.zeros(lhs.shape[0])
            rhs[-1] = big
            w_new, _ = nnls(lhs, rhs, maxiter=50 * S.size)
            if w_new.sum() <= 0:
                break
            w = w_new / w_new.sum()
        out = np.zeros_like(mu)
        out[S] = w
        return out

    # -- generators

    def try_candidate(self, K: np.ndarray, m: int, nondirac: bool, source: str):
        res, mu = self.cone_lp(K, drop_zero=nondirac)
        if res is None:
            e = np.zeros(len(self.Bs))
            e[mu] = 1.0
            return self.classify(e, source), None
        if mu is None or res > self.opts.lp_tol:
            return None, mu
        cert = self.classify(self.polish(mu, m), source)
        if cert is not None or not nondirac:
            return cert, mu
        # a kernel was found but only near a Dirac: look for a balanced pair
        order = np.argsort(-mu)
        support = [j for j in order[: 5] if mu[j] > 0]
        tried = 0
        for i in range(len(support)):
            for j in range(i + 1, len(support)):
                if tried >= self.opts.max_pair_lps:
                    return None, mu
                tried += 1
                t, nu = self.pair_lp(K, support[i], support[j])
                if nu is not None and t >= self.opts.eps_nd:
                    cert = self.classify(self.polish(nu / nu.sum(), m), source + "+pair-lp")
                    if cert is not None:
                        return cert, mu
        return None, mu

    def lp_search(self, m: int, nondirac: bool, rng: np.random.Generator):
        o = self.opts
        tag = "ii" if nondirac else "i"
        for K in subspace_samples(self.n, m, o.n_random, o.seed):
            cert, _ = self.try_candidate(K, m, nondirac, f"lp-{tag}:sample")
            if cert is not None:
                return cert
        if m == self.n:
            return None
        M = len(self.Bs)
        for _ in range(o.n_restarts):
            size = int(rng.integers(2, min(self.n + 1, M) + 1))
            idx = rng.choice(M, size=size, replace=False)
            mu = np.zeros(M)
            mu[idx] = rng.dirichlet(np.ones(size))
            for _ in range(o.refine_iters):
                K = np.linalg.svd(self.A(mu))[2][-m:].T
                cert, mu_next = self.try_candidate(K, m, nondirac, f"lp-{tag}:refine")
                if cert is not None:
                    return cert
                if mu_next is None:
                    break
                mu = mu_next
        return None

    def pair_determinant_scan(self):
        """Codimension one: a sign change of det A over two-atom midpoints.

        Each pair midpoint is non-Dirac; if det A is negative at one and
        positive at another, the segment between them crosses det A = 0 at a
        non-Dirac measure, located by a bracketing root finder.
        """
        M = len(self.Bs)
        Bs = self.Bs / self.scale
        lo_val, hi_val = np.inf, -np.inf
        lo = hi = None
        for a in range(M - 1):
            D = np.linalg.det(0.5 * (Bs[a] + Bs[a + 1 :]))
            j = int(np.argmin(D))
            if D[j] < lo_val:
                lo_val, lo = float(D[j]), (a, a + 1 + j)
            j = int(np.argmax(D))
            if D[j] > hi_val:
                hi_val, hi = float(D[j]), (a, a + 1 + j)
        self.margins = {"min_pair_det": lo_val, "max_pair_det": hi_val}
        zero = 1e-14
        if lo is None:
            return None
        if abs(lo_val) <= zero:
            mu = np.zeros(M)
            mu[list(lo)] = 0.5
            cert = self.classify(mu, "pair-det:zero")
            if cert is not None:
                return cert
        if lo_val >= -zero or hi_val <= zero:
            return None
        mu0 = np.zeros(M)
        mu0[list(lo)] += 0.5
        mu1 = np.zeros(M)
        mu1[list(hi)] += 0.5

        def f(t):
            return np.linalg.det(np.einsum("j,jab->ab", (1 - t) * mu0 + t * mu1, Bs))

        t = brentq(f, 0.0, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
        return self.classify((1 - t) * mu0 + t * mu1, "pair-det:root")


def default_grid_size(n: int, d: int) -> int:
    if d == n - 1 and n == 2:
        return 720
    if d == n - 1 and n == 3:
        return 1000
    return 2000


def check_ac(I: Integrand, x, grid, options: ACOptions | None = None) -> ACReport:
    """Search a plane grid for measures violating the atomic condition at x."""
    o = options or ACOptions()
    o.validate()
    grid = list(grid)
    if not grid:
        raise ValueError("empty plane grid")
    check_distinct(grid)
    x = np.asarray(x, dtype=float)
    n, d = I.n, I.d
    Bs = np.array([b_matrix(I, x, T) for T in grid])
    search = _Search(Bs, n, d, o)
    search.grid = grid
    search.margins = {}
    budget = {
        "grid_size": len(grid),
        "n_random": o.n_random,
        "n_restarts": o.n_restarts,
        "refine_iters": o.refine_iters,
        "seed": o.seed,
        "tau_rank": o.tau_rank,
        "eps_nd": o.eps_nd,
        "lp_tol": o.lp_tol,
        "pair_scan": bool(o.pair_scan and n - d == 1),
    }
    rng = np.random.default_rng(o.seed + 1)
    cert = None
    if o.pair_scan and n - d == 1 and len(grid) >= 2:
        cert = search.pair_determinant_scan()
    if cert is None:
        cert = search.lp_search(n - d + 1, nondirac=False, rng=rng)
    if cert is None:
        cert = search.lp_search(n - d, nondirac=True, rng=rng)
    margins = dict(search.margins)
    margins["best_sigma_rel"] = search.best_sigma
    if cert is None:
        return ACReport("no_violation_found", None, budget, margins)
    return ACReport(cert.status, cert, budget, margins)


def validate_certificate(I: Integrand, x, cert: ACCertificate, tau_rank: float = 1e-12,
                         eps_nd: float = 1e-3) -> str | None:
    """Recompute A(mu) from scratch and return the violation class it proves."""
    A = a_matrix(I, x, cert.measure)
    k = kernel_dimension(A, tau_rank)
    codim = I.n - I.d
    if k >= codim + 1:
        return "violation_i"
    if k == codim and np.sum(cert.measure.weights >= eps_nd) >= 2:
        return "violation_ii"
    return None


# -- codimension one: strict convexity ----------------------------------------


@dataclass
class ConvexityReport:
    min_q1: float
    argmin_q1: dict
    min_q2: float
    argmin_q2: dict
    verdict: str
    resolution: float
    theta_min: float
    tol_pos: float
    n_directions: int

    @property
    def strictly_convex(self) -> bool:
        return self.verdict == "strictly_convex"

    def margin(self) -> float:
        return min(abs(self.min_q1), abs(self.min_q2))

    def to_dict(self) -> dict:
        return asdict(self)


def grid_resolution(dirs: np.ndarray) -> float:
    """Largest angle from a grid line to its nearest neighbour."""
    C = np.abs(dirs @ dirs.T)
    np.fill_diagonal(C, -np.inf)
    return float(np.arccos(np.clip(C.max(axis=1), -1.0, 1.0)).max())


def check_strict_convexity(N: NormIntegrand, directions=None, theta_min: float = 1e-3,
                           tol_pos: float = 1e-12) -> ConvexityReport:
    """Brute-force both convexity forms over all pairs of an antipodally reduced grid.

    Q1(nu, nubar) = G(nu) - <dG(nubar), nu> (checked for nu and -nu) and
    Q2(nu, nubar) = G(nu) G(nubar) - <dG(nubar), nu><dG(nu), nubar>,
    over pairs of lines at angle >= theta_min.
    """
    dirs = sphere_directions(N.n, default_grid_size(N.n, N.n - 1)) if directions is None else np.asarray(directions, float)
    M = len(dirs)
    if M < 8:
        raise ValueError(f"grid too small: {M} directions (need at least 8)")
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    G = N.g_value(dirs)
    D = N.g_grad(dirs)
    P = D @ dirs.T  # P[b, a] = <dG(nu_b), nu_a>
    far = np.abs(dirs @ dirs.T) < np.cos(theta_min)
    Q1 = np.where(far, G[None, :] - np.abs(P), np.inf)
    Q2 = np.where(far, np.outer(G, G) - P * P.T, np.inf)
    b1, a1 = np.unravel_index(np.argmin(Q1), Q1.shape)
    b2, a2 = np.unravel_index(np.argmin(Q2), Q2.shape)
    s = 1.0 if P[b1, a1] >= 0 else -1.0  # sign of nu realizing |.|
    q1, q2 = float(Q1[b1, a1]), float(Q2[b2, a2])
    h = grid_resolution(dirs)
    return ConvexityReport(
        min_q1=q1,
        argmin_q1={"nu": (s * dirs[a1]).tolist(), "nubar": dirs[b1].tolist(), "indices": [int(a1), int(b1)]},
        min_q2=q2,
        argmin_q2={"nu": dirs[a2].tolist(), "nubar": dirs[b2].tolist(), "indices": [int(a2), int(b2)]},
        verdict="strictly_convex" if min(q1, q2) > tol_pos else "not_strictly_convex",
        resolution=RESOLUTION_FACTOR * h * h * float(G.max()),
        theta_min=theta_min,
        tol_pos=tol_pos,
        n_directions=M,
    )


@dataclass
class CrosscheckReport:
    verdict: str
    convex: bool
    ac_satisfied: bool
    convexity: ConvexityReport
    ac: ACReport

    @property
    def exit_code(self) -> int:
        if self.verdict != "consistent":
            return 3
        return 0 if self.convex else 2

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "convex": self.convex,
            "ac_satisfied": self.ac_satisfied,
            "convexity": self.convexity.to_dict(),
            "ac": self.ac.to_dict(),
        }


def theorem12_crosscheck(N: NormIntegrand, directions=None, options: ACOptions | None = None,
                         theta_min: float = 1e-3, tol_pos: float = 1e-12) -> CrosscheckReport:
    """Run the AC search and the convexity scan on the same direction grid."""
    dirs = sphere_directions(N.n, default_grid_size(N.n, N.n - 1)) if directions is None else np.asarray(directions, float)
    conv = check_strict_convexity(N, dirs, theta_min, tol_pos)
    I = from_norm(N)
    grid = [normal_to_plane(v) for v in dirs]
    ac = check_ac(I, np.zeros(N.n), grid, options)
    convex = conv.strictly_convex
    ok = not ac.violated
    if convex == ok:
        verdict = "consistent"
    elif conv.margin() <= conv.resolution:
        verdict = "inconsistent-at-resolution"
    else:
        verdict = "inconsistent"
    return CrosscheckReport(verdict, convex, ok, conv, ac)
