"""Deterministic JSON and the CSV formats for varifolds and measures."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .blowup import DiscreteMeasure
from .grassmannian import Plane, plane_from_basis
from .varifold import DiscreteVarifold

SCHEMA = 1


def _float(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    s = "%.17g" % v
    if all(c not in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent: int = 2) -> str:
    """JSON with every float printed to 17 significant digits.

    Keys keep insertion order; numpy scalars and arrays are converted.
    Non-finite floats become the strings "nan", "inf" and "-inf".
    """
    out: list[str] = []

    def emit(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, np.ndarray):
            o = o.tolist()
        if isinstance(o, np.generic):
            o = o.item()
        if o is None or isinstance(o, bool):
            out.append(json.dumps(o))
        elif isinstance(o, int):
            out.append(str(o))
        elif isinstance(o, float):
            out.append(_float(o))
        elif isinstance(o, str):
            out.append(json.dumps(o, ensure_ascii=False))
        elif isinstance(o, dict):
            if not o:
                out.append("{}")
                return
            out.append("{\n")
            for i, (k, v) in enumerate(o.items()):
                out.append(pad + json.dumps(str(k), ensure_ascii=False) + ": ")
                emit(v, level + 1)
                out.append(",\n" if i < len(o) - 1 else "\n")
            out.append(end + "}")
        elif isinstance(o, (list, tuple)):
            if not o:
                out.append("[]")
                return
            if all(isinstance(v, (int, float, np.generic)) and not isinstance(v, bool) for v in o):
                out.append("[")
                for i, v in enumerate(o):
                    emit(v, level + 1)
                    if i < len(o) - 1:
                        out.append(", ")
                out.append("]")
                return
            out.append("[\n")
            for i, v in enumerate(o):
                out.append(pad)
                emit(v, level + 1)
                out.append(",\n" if i < len(o) - 1 else "\n")
            out.append(end + "]")
        else:
            raise TypeError(f"cannot serialize {type(o).__name__}")

    emit(obj, 0)
    return "".join(out) + "\n"


def report(kind: str, body: dict) -> dict:
    return {"schema": SCHEMA, "report": kind, **body}


def _load_json_floats(text: str):
    consts = {"nan": math.nan, "inf": math.inf, "-inf": -math.inf}
    return json.loads(text, object_hook=lambda d: {k: consts.get(v, v) if isinstance(v, str) else v
                                                   for k, v in d.items()})


# -- varifolds ------------------------------------------------------------------


def varifold_header(n: int, d: int) -> list[str]:
    cols = [f"x{i + 1}" for i in range(n)]
    cols += [f"b{j + 1}_{i + 1}" for j in range(d) for i in range(n)]
    return cols + ["mass"]


def write_varifold_csv(V: DiscreteVarifold, path) -> None:
    """One row per atom: x_1..x_n, the d orthonormal basis vectors of its plane, mass."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(varifold_header(V.n, V.d))
        for x, T, m in zip(V.points, V.planes, V.masses):
            E = T.basis().T.ravel()
            w.writerow(["%.17g" % v for v in (*x, *E, m)])


def _parse_header(header: list[str]) -> tuple[int, int]:
    header = [h.strip() for h in header]
    if not header or header[-1] != "mass":
        raise ValueError("atom CSV header must end with 'mass'")
    n = sum(1 for h in header if h.startswith("x"))
    nb = sum(1 for h in header if h.startswith("b"))
    if n == 0 or nb % n or len(header) != n + nb + 1 or header != varifold_header(n, nb // n):
        raise ValueError(f"unrecognized atom CSV header: {header}")
    return n, nb // n


def read_varifold_csv(path, n: int | None = None) -> DiscreteVarifold:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty atom file")
    n_file, d = _parse_header(rows[0])
    if n is not None and n_file != n:
        raise ValueError(f"{path}: atoms live in R^{n_file}, expected R^{n}")
    pts, planes, masses = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != n_file * (d + 1) + 1:
            raise ValueError(f"{path}:{lineno}: expected {n_file * (d + 1) + 1} columns, got {len(row)}")
        vals = [float(v) for v in row]
        pts.append(vals[:n_file])
        planes.append(plane_from_basis(np.reshape(vals[n_file:-1], (d, n_file))))
        masses.append(vals[-1])
    return DiscreteVarifold(n_file, d, pts, planes, masses)


def varifold_to_dict(V: DiscreteVarifold) -> dict:
    return {
        "n": V.n,
        "d": V.d,
        "atoms": [{"x": x.tolist(), "plane": T.to_dict(), "mass": float(m)}
                  for x, T, m in zip(V.points, V.planes, V.masses)],
        "meta": dict(V.meta),
    }


def varifold_from_dict(data: dict) -> DiscreteVarifold:
    try:
        n, d = int(data["n"]), int(data["d"])
        atoms = data["atoms"]
        return DiscreteVarifold(n, d, [a["x"] for a in atoms], [Plane.from_dict(a["plane"]) for a in atoms],
                                [a["mass"] for a in atoms], dict(data.get("meta", {})))
    except KeyError as e:
        raise ValueError(f"varifold JSON is missing field {e.args[0]!r}") from None


def load_varifold(path, n: int | None = None) -> DiscreteVarifold:
    path = Path(path)
    if path.suffix.lower() == ".json":
        V = varifold_from_dict(_load_json_floats(path.read_text(encoding="utf-8")))
        if n is not None and V.n != n:
            raise ValueError(f"{path}: atoms live in R^{V.n}, expected R^{n}")
        return V
    return read_varifold_csv(path, n)


def save_varifold(V: DiscreteVarifold, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(dumps(report("varifold", varifold_to_dict(V))), encoding="utf-8")
    else:
        write_varifold_csv(V, path)


# -- measures -------------------------------------------------------------------


def read_measure_csv(path) -> DiscreteMeasure:
    """Rows x_1..x_n, mass; a varifold file is accepted and reduced to its weight."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty measure file")
    header = [h.strip() for h in rows[0]]
    if any(h.startswith("b") for h in header):
        return read_varifold_csv(path).weight()
    if header[-1] != "mass" or header[:-1] != [f"x{i + 1}" for i in range(len(header) - 1)]:
        raise ValueError(f"{path}: measure header must be x1..xn,mass")
    n = len(header) - 1
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, n + 1)
    return DiscreteMeasure(n, data[:, :n], data[:, n])


def write_measure_csv(mu: DiscreteMeasure, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(mu.n)] + ["mass"])
        for x, m in zip(mu.points, mu.masses):
            w.writerow(["%.17g" % v for v in (*x, m)])


def load_json(path):
    return _load_json_floats(Path(path).read_text(encoding="utf-8"))
