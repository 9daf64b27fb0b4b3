"""Command-line front end: ``anisovar <subcommand> ...``.

Exit codes: 0 success (no violation / consistent and convex), 1 usage or
data error, 2 violation found (check-ac) or consistent non-convex
(convexity), 3 convexity and atomic-condition verdicts disagree.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .atomic import (
    ACOptions,
    GrassmannMeasure,
    check_ac,
    default_grid_size,
    kernel_dimension,
    a_matrix,
    theorem12_crosscheck,
)
from .blowup import density_profile, lemma21_scan, preiss_diagnostics
from .grassmannian import sample_grid, sphere_directions
from .integrand import NORM_NAMES, make_integrand, make_norm
from .serialize import dumps, load_json, load_varifold, read_measure_csv, report, save_varifold
from .varifold import (
    bump_field,
    counterexample_varifold,
    first_variation_fd_check,
    random_bump_fields,
    stationarity_scan,
    zero_field,
)

DEFAULT_SEED = 42


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


@dataclass
class RunConfig:
    """Resolved options shared by the subcommands."""

    subcommand: str
    integrand: object
    n: int
    d: int
    seed: int
    grid: int | None
    tol: float | None
    out: str | None


def _read_spec(text: str):
    """An integrand spec given inline as JSON, as a path to a JSON file, or as a name."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise UsageError(f"--integrand: malformed JSON ({e.msg} at column {e.colno})") from None
    p = Path(text)
    if p.suffix.lower() == ".json" and p.exists():
        try:
            return json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise UsageError(f"--integrand {p}: malformed JSON ({e.msg} at line {e.lineno})") from None
    return text


def _config(args) -> RunConfig:
    spec = _read_spec(args.integrand) if getattr(args, "integrand", None) else None
    if getattr(args, "eps", None) is not None:
        if spec is None:
            raise UsageError("--eps needs --integrand")
        spec = {"name": spec, "params": {}} if isinstance(spec, str) else dict(spec)
        spec["params"] = {**spec.get("params", {}), "eps": args.eps}
    n = args.n
    d = args.d if args.d is not None else n - 1
    if not 0 < d < n:
        raise UsageError(f"need 0 < d < n, got n={n}, d={d}")
    return RunConfig(args.command, spec, n, d, args.seed, getattr(args, "grid", None),
                     getattr(args, "tol", None), args.out)


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _spec_dict(spec) -> dict:
    return {"name": spec, "params": {}} if isinstance(spec, str) else spec


# -- subcommands ----------------------------------------------------------------


def _ac_options(args, cfg: RunConfig) -> ACOptions:
    o = ACOptions(seed=cfg.seed)
    if cfg.tol is not None:
        o.tau_rank = cfg.tol
    if args.samples is not None:
        o.n_random = args.samples
    if args.restarts is not None:
        o.n_restarts = args.restarts
    return o


def cmd_check_ac(args) -> int:
    cfg = _config(args)
    I = make_integrand(cfg.integrand, cfg.n, cfg.d)
    M = cfg.grid or default_grid_size(cfg.n, cfg.d)
    grid = sample_grid(cfg.n, cfg.d, M, cfg.seed)
    x = np.zeros(cfg.n) if args.x is None else np.asarray(args.x, dtype=float)
    if x.size != cfg.n:
        raise UsageError(f"--x has {x.size} coordinates, expected {cfg.n}")
    rep = check_ac(I, x, grid, _ac_options(args, cfg))
    body = rep.to_dict()
    if body["certificate"] is not None:
        body["certificate"].update({"integrand": _spec_dict(cfg.integrand), "n": cfg.n, "d": cfg.d,
                                    "x": x.tolist()})
    out = report("check-ac", {"integrand": _spec_dict(cfg.integrand), "n": cfg.n, "d": cfg.d,
                              "x": x.tolist(), **body})
    _emit(dumps(out), cfg.out)
    return 2 if rep.violated else 0


def cmd_convexity(args) -> int:
    cfg = _config(args)
    if cfg.d != cfg.n - 1:
        raise UsageError(f"convexity is a codimension-one check: d must be n - 1 = {cfg.n - 1}")
    name = cfg.integrand if isinstance(cfg.integrand, str) else cfg.integrand.get("name")
    if name not in NORM_NAMES:
        raise UsageError(f"convexity needs a norm integrand ({', '.join(NORM_NAMES)}), got {name!r}")
    N = make_norm(cfg.integrand, cfg.n)
    M = cfg.grid or default_grid_size(cfg.n, cfg.n - 1)
    dirs = sphere_directions(cfg.n, M, cfg.seed)
    opts = _ac_options(args, cfg)
    tol_pos = args.tol_pos
    rep = theorem12_crosscheck(N, dirs, opts, theta_min=args.theta_min, tol_pos=tol_pos)
    out = report("convexity", {"integrand": _spec_dict(cfg.integrand), "n": cfg.n, **rep.to_dict()})
    _emit(dumps(out), cfg.out)
    return rep.exit_code


def _load_fields(text: str | None, n: int, seed: int):
    if text is None:
        return random_bump_fields(n, 5, 0.5, 0.4, seed)
    data = _read_field_json(text)
    if data == "zero":
        return [zero_field(n)]
    items = data if isinstance(data, list) else [data]
    fields = []
    for k, item in enumerate(items):
        if item == "zero":
            fields.append(zero_field(n))
            continue
        if not isinstance(item, dict):
            raise UsageError(f"field {k}: expected an object or \"zero\"")
        if "random" in item:
            fields += random_bump_fields(n, int(item["random"]), float(item.get("center_radius", 0.5)),
                                         float(item.get("half_width", 0.4)), int(item.get("seed", seed)))
            continue
        for key in ("center", "half_width", "direction"):
            if key not in item:
                raise UsageError(f"field {k}: missing field {key!r}")
        if len(item["center"]) != n or len(item["direction"]) != n:
            raise UsageError(f"field {k}: center and direction must have {n} coordinates")
        fields.append(bump_field(item["center"], float(item["half_width"]), item["direction"],
                                 float(item.get("amplitude", 1.0))))
    return fields


def _read_field_json(text: str):
    text = text.strip()
    if text == "zero":
        return "zero"
    p = Path(text)
    if not text.startswith(("[", "{")) and p.exists():
        text = p.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise UsageError(f"--fields: malformed JSON ({e.msg} at column {e.colno})") from None


def cmd_first_variation(args) -> int:
    cfg = _config(args)
    I = make_integrand(cfg.integrand, cfg.n, cfg.d)
    V = load_varifold(args.varifold, cfg.n)
    if V.d != cfg.d:
        raise UsageError(f"{args.varifold}: planes have dimension {V.d}, expected {cfg.d}")
    rows = []
    for g in _load_fields(args.fields, cfg.n, cfg.seed):
        chk = first_variation_fd_check(V, I, g, args.t)
        rows.append({"field": g.spec(), "analytic": chk.analytic, "fd": chk.fd, "gap": chk.gap})
    out = report("first-variation", {"integrand": _spec_dict(cfg.integrand), "n": cfg.n, "d": cfg.d,
                                     "t": args.t, "atoms": len(V), "results": rows,
                                     "max_gap": max(r["gap"] for r in rows)})
    _emit(dumps(out), cfg.out)
    return 0


def _load_certificate(path: str):
    try:
        data = load_json(path)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read certificate {path}: {e}") from None
    if isinstance(data, dict) and "certificate" in data:
        data = data["certificate"]
    if not isinstance(data, dict):
        raise UsageError(f"{path}: no certificate found (status without violation?)")
    for key in ("weights", "planes"):
        if key not in data:
            raise UsageError(f"{path}: certificate is missing field {key!r}")
    try:
        mu = GrassmannMeasure.from_dict(data)
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(f"{path}: invalid certificate: {e}") from None
    return data, mu


def cmd_counterexample(args) -> int:
    data, mu = _load_certificate(args.certificate)
    spec = _read_spec(args.integrand) if args.integrand else data.get("integrand")
    if spec is None:
        raise UsageError("certificate has no integrand; pass --integrand")
    I = make_integrand(spec, mu.n, mu.d)
    V = counterexample_varifold(I, mu, args.R, args.N)
    k = V.meta["k"]
    tau = args.tol if args.tol is not None else 1e-12
    kdim = kernel_dimension(a_matrix(I, np.zeros(mu.n), mu), tau)
    fields = random_bump_fields(mu.n, args.fields, 0.4 * args.R, 0.35 * args.R, args.seed)
    scan = stationarity_scan(V, I, fields)
    if args.varifold_out:
        save_varifold(V, args.varifold_out)
    meta = {key: v for key, v in V.meta.items()}
    out = report("counterexample", {
        "integrand": _spec_dict(spec),
        "n": mu.n,
        "d": mu.d,
        "k": k,
        "kernel_dimension": kdim,
        "is_dirac": meta["is_dirac"],
        "rectifiable": meta["rectifiable"],
        "h_grid": meta["h_grid"],
        "R": meta["R"],
        "atoms": len(V),
        "total_mass": V.total_mass(),
        "W_basis": meta["W_basis"],
        "seed": args.seed,
        "stationarity": scan.to_dict(),
    })
    _emit(dumps(out), args.out)
    return 0


def _points(args, n: int) -> np.ndarray:
    if args.points:
        rows = [_floats(chunk) for chunk in args.points.split(";") if chunk.strip()]
    else:
        rows = [[0.0] * n]
    P = np.array(rows, dtype=float)
    if P.ndim != 2 or P.shape[1] != n:
        raise UsageError(f"--points must list points with {n} coordinates")
    return P


def cmd_blowup(args) -> int:
    try:
        mu = read_measure_csv(args.measure)
    except OSError as e:
        raise UsageError(f"cannot read {args.measure}: {e}") from None
    if args.n is not None and args.n != mu.n:
        raise UsageError(f"{args.measure}: atoms live in R^{mu.n}, expected R^{args.n}")
    d = args.d
    if not 0 < d <= mu.n:
        raise UsageError(f"need 0 < d <= n = {mu.n}")
    radii = np.array(args.radii) if args.radii else np.geomspace(args.r_max, args.r_max / 10, 6)
    if np.any(radii <= 0):
        raise UsageError("--radii must be positive")
    pts = _points(args, mu.n)
    lo, hi = (mu.points.min(axis=0), mu.points.max(axis=0)) if len(mu) else (None, None)
    planes = sample_grid(mu.n, d, args.grid or 32, args.seed) if d < mu.n else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    ts = args.t
    w.writerow(["point", "radius", "density_ratio", "resolved"] + [f"inner_ratio_t{t:g}" for t in ts]
               + ["e_fraction", "f_value", "flag"])
    summary = []
    for i, x in enumerate(pts):
        prof = density_profile(mu, x, d, radii)
        scans = [lemma21_scan(mu, x, d, t, prof.radii) for t in ts]
        pre = preiss_diagnostics(mu, x, d, prof.radii, planes, seed=args.seed) if planes else None
        outside = lo is None or bool(np.any(x < lo) or np.any(x > hi))
        for j, r in enumerate(prof.radii):
            flags = []
            if outside:
                flags.append("outside-support")
            if prof.masses[j] == 0:
                flags.append("empty-ball")
            if not prof.resolved[j]:
                flags.append("unresolved")
            row = [i, "%.17g" % r, "%.17g" % prof.ratios[j], int(prof.resolved[j])]
            row += ["" if np.isnan(s.ratios[j]) else "%.17g" % s.ratios[j] for s in scans]
            if pre is not None:
                row += ["" if np.isnan(v) else "%.17g" % v for v in (pre.e_fraction[j], pre.f_value[j])]
            else:
                row += ["", ""]
            row.append("|".join(flags) or "ok")
            w.writerow(row)
        summary.append({
            "point": x.tolist(),
            "outside_support": outside,
            "profile": prof.to_dict(),
            "inner_ratio": [s.to_dict() for s in scans],
            "preiss": None if pre is None else pre.to_dict(),
        })
    _emit(buf.getvalue(), args.out)
    if args.summary:
        Path(args.summary).write_text(dumps(report("blowup", {"d": d, "seed": args.seed, "points": summary})),
                                      encoding="utf-8")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="anisovar", description="Anisotropic varifold diagnostics.")
    p.add_argument("--version", action="version", version=f"anisovar {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, integrand_required=True, n_required=True):
        sp.add_argument("--integrand", required=integrand_required,
                        help="integrand name, inline JSON {\"name\":..,\"params\":..}, or a .json file")
        sp.add_argument("--n", type=_positive(int), required=n_required, help="ambient dimension")
        sp.add_argument("--d", type=_positive(int), help="plane dimension (default n - 1)")
        sp.add_argument("--eps", type=float, help="shortcut for params.eps")
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
        sp.add_argument("--out", help="output path (default stdout)")

    sp = sub.add_parser("check-ac", help="search for atomic-condition violations")
    common(sp)
    sp.add_argument("--grid", type=_positive(int), help="number of grid planes")
    sp.add_argument("--tol", type=_positive(float), help="relative rank threshold")
    sp.add_argument("--samples", type=int, help="quasi-random kernel candidates")
    sp.add_argument("--restarts", type=int, help="alternating-refinement restarts")
    sp.add_argument("--x", type=_floats, help="base point (default origin)")
    sp.set_defaults(func=cmd_check_ac)

    sp = sub.add_parser("convexity", help="strict convexity versus the atomic condition for a norm")
    common(sp)
    sp.add_argument("--grid", type=_positive(int), help="number of directions")
    sp.add_argument("--tol", type=_positive(float), help="relative rank threshold for the AC search")
    sp.add_argument("--tol-pos", type=_positive(float), default=1e-12, help="positivity threshold")
    sp.add_argument("--theta-min", type=_positive(float), default=1e-3, help="minimal pair angle (rad)")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--restarts", type=int)
    sp.set_defaults(func=cmd_convexity)

    sp = sub.add_parser("first-variation", help="analytic vs finite-difference first variation")
    common(sp)
    sp.add_argument("--varifold", required=True, help="atom file (.csv or .json)")
    sp.add_argument("--fields", help="field spec JSON, a path to one, or 'zero' (default: 5 seeded bumps)")
    sp.add_argument("--t", type=_positive(float), default=1e-4, help="finite-difference step")
    sp.set_defaults(func=cmd_first_variation)

    sp = sub.add_parser("counterexample", help="sample the stationary varifold of a certificate")
    sp.add_argument("--certificate", required=True, help="check-ac report or certificate JSON")
    sp.add_argument("--integrand", help="override the integrand stored in the certificate")
    sp.add_argument("--R", type=_positive(float), default=1.0, help="radius of the sampled ball")
    sp.add_argument("--N", type=_positive(int), default=64, help="cells per axis")
    sp.add_argument("--fields", type=_positive(int), default=20, help="number of test fields")
    sp.add_argument("--tol", type=_positive(float), help="relative rank threshold")
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sp.add_argument("--varifold-out", help="write the sampled varifold (.csv or .json)")
    sp.add_argument("--out", help="report path (default stdout)")
    sp.set_defaults(func=cmd_counterexample)

    sp = sub.add_parser("blowup", help="density ratios, ball-ratio scans and Preiss diagnostics as CSV")
    sp.add_argument("--measure", required=True, help="measure CSV (x1..xn,mass) or varifold CSV")
    sp.add_argument("--d", type=_positive(int), required=True, help="density dimension")
    sp.add_argument("--n", type=_positive(int), help="expected ambient dimension")
    sp.add_argument("--points", help="points 'x1,x2;y1,y2' (default origin)")
    sp.add_argument("--radii", type=_floats, help="comma-separated radii")
    sp.add_argument("--r-max", type=_positive(float), default=0.5, help="largest radius of the default decade")
    sp.add_argument("--t", type=_floats, default=[0.25, 0.5, 0.75], help="inner-ball fractions t for the ratio scan")
    sp.add_argument("--grid", type=_positive(int), help="planes for the Preiss F-scan (default 32)")
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sp.add_argument("--summary", help="also write a JSON summary here")
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_blowup)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # usage errors, --help and --version
        return e.code if isinstance(e.code, int) else 1
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError, TypeError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        sys.stderr.write(f"anisovar {args.command}: error: {msg}\n")
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
