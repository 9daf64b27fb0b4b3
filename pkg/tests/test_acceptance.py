"""Exit criteria, one test per criterion.

Each test is named ``test_<k>_...``; conftest prints a PASS/FAIL line per
criterion at the end of the run.  Runtime limits are asserted in-test.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from anisovar.atomic import (
    GrassmannMeasure,
    check_ac,
    check_strict_convexity,
    theorem12_crosscheck,
    validate_certificate,
)
from anisovar.blowup import (
    DiscreteMeasure,
    density_profile,
    lemma21_scan,
    preiss_constants,
    preiss_constants_exact,
    rescale,
)
from anisovar.cli import main
from anisovar.grassmannian import (
    moved_plane,
    normal_to_plane,
    plane_from_basis,
    projection_curve_derivative,
    sphere_directions,
)
from anisovar.integrand import (
    INTEGRAND_NAMES,
    AreaIntegrand,
    SineModulatedIntegrand,
    b_matrix,
    c_matrix,
    ellipsoidal_norm,
    euclidean_norm,
    from_norm,
    make_integrand,
    perturbed_norm,
)
from anisovar.serialize import save_varifold, write_measure_csv
from anisovar.varifold import (
    DiscreteVarifold,
    blowup_varifold,
    counterexample_varifold,
    first_variation_fd_check,
    random_bump_fields,
    stationarity_scan,
)

pytestmark = pytest.mark.acceptance

SHAPES = [(2, 1), (3, 1), (3, 2), (4, 2), (4, 3)]
# strict convexity of |v|(1 + eps sum u_i^4) in the plane fails past eps = 1/3
PERTURBED_THRESHOLD = 1 / 3


def random_plane(rng, n, d):
    return plane_from_basis(rng.standard_normal((d, n)))


def lattice(n, d, h, R, k=None):
    """Cell-mass samples of a k-disk (default k = d) in the first coordinates of R^n."""
    k = d if k is None else k
    c = np.arange(-R, R + h / 2, h)
    g = np.stack(np.meshgrid(*([c] * k), indexing="ij"), -1).reshape(-1, k)
    g = g[np.linalg.norm(g, axis=1) <= R]
    pts = np.zeros((len(g), n))
    pts[:, :k] = g
    return DiscreteMeasure(n, pts, np.full(len(g), h**k))


def test_1_area_b_matrix_is_the_plane():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for i in range(500):
        n, d = SHAPES[i % len(SHAPES)]
        T = random_plane(rng, n, d)
        worst = max(worst, np.linalg.norm(b_matrix(AreaIntegrand(n, d), rng.standard_normal(n), T) - T.P))
    elapsed = time.perf_counter() - start
    print(f"max |B_area - T|_F = {worst:.3g}, {elapsed:.2f} s")
    assert worst <= 1e-12
    assert elapsed < 1.0


def test_2_projection_derivative_matches_finite_differences():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    ts = (1e-3, 1e-4, 1e-5)
    errors = np.zeros((100, 3))
    for i in range(100):
        n, d = SHAPES[i % len(SHAPES)]
        T = random_plane(rng, n, d)
        L = rng.standard_normal((n, n))
        L /= np.linalg.norm(L)
        D = projection_curve_derivative(T, L).S
        for j, t in enumerate(ts):
            errors[i, j] = np.linalg.norm((moved_plane(T, L, t).P - T.P) / t - D)
    elapsed = time.perf_counter() - start
    drop = errors[:, :-1] / errors[:, 1:]
    print(f"max err at 1e-4 = {errors[:, 1].max():.3g}, min drop per decade = {drop.min():.3g}, {elapsed:.2f} s")
    assert np.all(errors[:, 1] <= 10 * 1e-4)
    assert np.all(drop >= 8)
    assert elapsed < 5.0


def test_3_first_variation_is_second_order_consistent():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    integrands = [SineModulatedIntegrand(3, 2), from_norm(ellipsoidal_norm(np.diag([1.0, 2.0, 4.0]))),
                  from_norm(perturbed_norm(3, 0.2))]
    orders = []
    for v in range(3):
        planes = [random_plane(rng, 3, 2) for _ in range(8)]
        V = DiscreteVarifold(3, 2, 0.3 * rng.standard_normal((8, 3)), planes, rng.uniform(0.5, 2.0, 8))
        fields = random_bump_fields(3, 5, 0.2, 0.9, seed=v)
        for I in integrands:
            for g in fields:
                coarse = first_variation_fd_check(V, I, g, 1e-2).gap
                fine = first_variation_fd_check(V, I, g, 1e-3).gap
                orders.append(math.log10(coarse / fine))
    elapsed = time.perf_counter() - start
    print(f"{len(orders)} cases, min measured order = {min(orders):.3f}, {elapsed:.2f} s")
    assert len(orders) == 45
    assert min(orders) >= 1.9
    assert elapsed < 10.0


def test_4_c_matrix_annihilates_tangential_pairs():
    rng = np.random.default_rng(4)
    worst = {}
    for name in INTEGRAND_NAMES:
        spec = {"name": name, "params": {"eps": 0.3}} if name == "perturbed-norm" else name
        err = 0.0
        for i in range(1000):
            n = 2 + i % 3
            d = n - 1 if name.endswith("norm") else 1 + i % (n - 1)
            I = make_integrand(spec, n, d)
            T = random_plane(rng, n, d)
            x = rng.standard_normal(n)
            v, w = T.P @ rng.standard_normal(n), T.P @ rng.standard_normal(n)
            err = max(err, abs(np.sum(c_matrix(I, x, T) * np.outer(v, w))))
        worst[name] = err
    print("max |C : v(x)w| per integrand:", {k: f"{v:.2g}" for k, v in worst.items()})
    assert max(worst.values()) <= 1e-10


@pytest.fixture(scope="module")
def convexity_battery():
    """Crosschecks on six codimension-one norms plus the bisected convexity threshold."""
    start = time.perf_counter()
    battery = [euclidean_norm(2), ellipsoidal_norm(np.diag([1.0, 4.0])), ellipsoidal_norm(np.diag([1.0, 3.0, 7.0]))]
    battery += [perturbed_norm(2, eps) for eps in (0.1, 0.5, 1.0)]
    reports = [(N, theorem12_crosscheck(N)) for N in battery]
    # locate the threshold by bisection on the brute-force pair scan
    dirs = sphere_directions(2, 720)
    lo, hi = 0.1, 0.5
    while hi - lo >= 1e-3 / 2:
        mid = 0.5 * (lo + hi)
        if check_strict_convexity(perturbed_norm(2, mid), dirs).strictly_convex:
            lo = mid
        else:
            hi = mid
    grid = [normal_to_plane(v) for v in dirs]
    below = check_ac(from_norm(perturbed_norm(2, lo)), np.zeros(2), grid)
    above = check_ac(from_norm(perturbed_norm(2, hi)), np.zeros(2), grid)
    certificates = [(from_norm(N), rep.ac.certificate.measure) for N, rep in reports if rep.ac.certificate]
    if above.certificate is not None:
        certificates.append((from_norm(perturbed_norm(2, hi)), above.certificate.measure))
    return {"reports": reports, "bracket": (lo, hi), "below": below, "above": above,
            "certificates": certificates, "elapsed": time.perf_counter() - start}


def test_5_convexity_and_atomic_condition_agree(convexity_battery):
    for N, rep in convexity_battery["reports"]:
        conv = rep.convexity
        print(f"{N.name} {N.params}: {rep.verdict}, convex={rep.convex}, ac={rep.ac_satisfied}, "
              f"margin={conv.margin():.3g}, resolution={conv.resolution:.3g}")
        assert rep.verdict != "inconsistent"
        if conv.margin() > conv.resolution:
            assert rep.convex == rep.ac_satisfied
    lo, hi = convexity_battery["bracket"]
    below, above = convexity_battery["below"], convexity_battery["above"]
    elapsed = convexity_battery["elapsed"]
    print(f"convexity threshold in [{lo:.6f}, {hi:.6f}]; AC below: {below.status}, above: {above.status}; "
          f"{elapsed:.1f} s")
    assert hi - lo < 1e-3 and lo <= PERTURBED_THRESHOLD <= hi
    assert not below.violated and above.violated
    assert validate_certificate(from_norm(perturbed_norm(2, hi)), np.zeros(2), above.certificate) == above.status
    assert elapsed < 60.0


def test_6_counterexamples_are_stationary(convexity_battery):
    start = time.perf_counter()
    certificates = convexity_battery["certificates"]
    assert certificates, "the convexity battery produced no violation certificates"
    T = plane_from_basis([[1.0, 2.0, 0.0], [0.0, 1.0, 1.0]])
    cases = [(I, mu, 64) for I, mu in certificates] + [(AreaIntegrand(3, 2), GrassmannMeasure.dirac(T), 32)]
    C = 1e-2
    for I, mu, N in cases:
        fields = random_bump_fields(I.n, 20, 0.4, 0.35, seed=42)
        scans = []
        for cells in (N, 2 * N):
            V = counterexample_varifold(I, mu, 1.0, cells)
            scans.append((V.meta["h_grid"], stationarity_scan(V, I, fields).max_ratio))
        (h1, s1), (h2, s2) = scans
        print(f"{I.name} {I.params}: h={h1:.4g} -> {s1:.3g}, h={h2:.4g} -> {s2:.3g}, tightening x{s1 / s2:.2f}")
        assert s1 <= C * h1 and s2 <= C * h2
        assert s1 / s2 >= 1.8
    elapsed = time.perf_counter() - start
    print(f"{len(cases)} cases, {elapsed:.2f} s")
    assert elapsed < 60.0


def test_7_density_ratios_of_sampled_planes():
    x = np.array([0.0007, 0.0003, 0.0, 0.0])
    radii = np.geomspace(0.5, 0.05, 6)
    for n, d, h in [(2, 1, 1e-3), (3, 2, 0.004), (4, 2, 0.004)]:
        prof = density_profile(lattice(n, d, h, 1.0), x[:n], d, radii)
        dev = np.abs(prof.ratios[prof.resolved] - 1)
        print(f"d-plane n={n} d={d}: {prof.resolved.sum()} resolved radii, max |ratio - 1| = {dev.max():.3g}")
        assert prof.resolved.sum() >= 2 and dev.max() <= 0.05
    for n, k, d, h in [(3, 1, 2, 1e-3), (3, 1, 3, 1e-3), (3, 2, 3, 0.004)]:
        slope = density_profile(lattice(n, d, h, 1.0, k), x[:n], d, radii).slope()
        print(f"{k}-plane measured at d={d}: slope {slope:.4f} (expected {k - d})")
        assert abs(slope - (k - d)) <= 0.1


def test_8_inner_ball_ratio_reaches_t_to_the_d():
    x = np.array([0.0007, 0.0003, 0.0])
    radii = np.geomspace(0.5, 0.05, 6)
    for d, h in [(1, 1e-3), (2, 0.004)]:
        mu = lattice(3, d, h, 1.0)
        for t in (0.25, 0.5, 0.75):
            rep = lemma21_scan(mu, x, d, t, radii)
            print(f"d={d} t={t}: max ratio {rep.max_ratio:.4f} vs t^d = {t**d:.4f}")
            assert rep.max_ratio >= t**d - 0.02


def test_9_preiss_constants_are_exact():
    for d in range(1, 5):
        alpha, beta = preiss_constants_exact(d)
        assert alpha == 1 - Fraction(1, 2 ** (d + 6))
        assert beta == Fraction(1, 2 ** (d + 9) * d**4)
        fa, fb = preiss_constants(d)
        assert fa == 1 - 2.0 ** (-d - 6) and fb == 2.0 ** (-d - 9) / d**4
        # alpha is dyadic; beta has no exact double for d = 3, so the float is the nearest one
        assert Fraction(fa) == alpha and fb == float(beta)
        print(f"d={d}: alpha={alpha}, beta={beta}")


def test_10_weight_of_blowup_is_blowup_of_weight():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 5))
        d = int(rng.integers(1, n))
        k = int(rng.integers(1, 60))
        V = DiscreteVarifold(n, d, rng.standard_normal((k, n)), [random_plane(rng, n, d) for _ in range(k)],
                             rng.uniform(0.1, 3.0, k))
        x = V.points[rng.integers(k)] if rng.random() < 0.5 else rng.standard_normal(n) * 0.1
        r = float(rng.uniform(0.2, 3.0))
        if V.weight().ball_mass(x, r) == 0:
            x = V.points[0]
        left = blowup_varifold(V, x, r).weight()
        right = rescale(V.weight(), x, r)
        assert np.array_equal(left.points, right.points), seed
        assert np.array_equal(left.masses, right.masses), seed
    print("50 varifolds: weight of the blow-up equals the blow-up of the weight bitwise")


def test_11_cli_reports_are_byte_identical(tmp_path, capsys):
    rng = np.random.default_rng(11)
    T = plane_from_basis([[1.0, 0.0]])
    xs = np.column_stack([np.linspace(-0.5, 0.5, 21), 0.01 * rng.standard_normal(21)])
    vpath = tmp_path / "v.csv"
    save_varifold(DiscreteVarifold(2, 1, xs, [T] * 21, np.full(21, 0.05)), vpath)
    mpath = tmp_path / "m.csv"
    write_measure_csv(lattice(2, 1, 1e-3, 1.0), mpath)
    cert = tmp_path / "cert.json"
    assert main(["check-ac", "--integrand", "perturbed-norm", "--eps", "0.5", "--n", "2", "--out", str(cert)]) == 2
    commands = {
        "check-ac": ["check-ac", "--integrand", "perturbed-norm", "--eps", "0.5", "--n", "2"],
        "convexity": ["convexity", "--integrand", "perturbed-norm", "--eps", "0.5", "--n", "2"],
        "first-variation": ["first-variation", "--integrand", "sine-modulated", "--n", "2", "--varifold", str(vpath)],
        "counterexample": ["counterexample", "--certificate", str(cert), "--varifold-out", "{dir}/cx.csv"],
        "blowup": ["blowup", "--measure", str(mpath), "--d", "1", "--points", "0,0;0.3,0", "--summary",
                   "{dir}/summary.json"],
    }
    for name, argv in commands.items():
        outputs = []
        for run in ("a", "b"):
            run_dir = tmp_path / f"{name}-{run}"
            run_dir.mkdir()
            code = main([a.format(dir=run_dir) for a in argv] + ["--out", str(run_dir / "report")])
            capsys.readouterr()
            files = sorted(p.name for p in run_dir.iterdir())
            outputs.append((code, files, [(run_dir / f).read_bytes() for f in files]))
        assert outputs[0] == outputs[1], name
        assert outputs[0][2][0], name
        print(f"{name}: exit {outputs[0][0]}, {len(outputs[0][1])} identical file(s)")
