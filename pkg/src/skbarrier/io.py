"""Flat-file formats: measure JSON, potential-profile CSV and GridFunction CSV."""
import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .envelope import GridFunction
from .measures import MASS_TOL, DiscreteMeasure, MeasureError, RadialMeasure


def measure_from_dict(obj):
    kind = obj.get("kind", "radial")
    if kind == "radial":
        atoms = [(float(a["r"]), float(a["w"])) for a in obj["atoms"]]
        total = sum(w for _, w in atoms)
        if abs(total - 1.0) > MASS_TOL:
            raise MeasureError(f"weights sum to {total!r}, expected 1")
        return RadialMeasure.from_atoms(int(obj["dimension"]), atoms)
    if kind == "discrete":
        return DiscreteMeasure(np.array(obj["points"], dtype=float), np.array(obj["weights"], dtype=float))
    raise MeasureError(f"unknown measure kind {kind!r}")


def measure_to_dict(m):
    if isinstance(m, RadialMeasure):
        return {"dimension": m.dimension, "kind": "radial",
                "atoms": [{"r": r, "w": w} for r, w in m.atoms]}
    return {"kind": "discrete", "points": m.points.tolist(), "weights": m.weights.tolist()}


def load_measure(path):
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise MeasureError(f"cannot read measure file {path}: {exc}") from exc
    try:
        return measure_from_dict(obj)
    except (KeyError, TypeError) as exc:
        raise MeasureError(f"malformed measure file {path}: missing {exc}") from exc


def save_measure(m, path):
    Path(path).write_text(json.dumps(measure_to_dict(m), indent=2, sort_keys=True) + "\n")


def _num(v):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def profile_to_csv(profile):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r", "n_value"])
    for r, v in zip(profile.radii, profile.values):
        w.writerow([_num(r), _num(v)])
    return buf.getvalue()


def grid_function_to_csv(f):
    buf = io.StringIO()
    buf.write(f"# {f.dimension},{f.n},{f.radius!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    if f.radial:
        w.writerow(["r", "value"])
        for r, v in zip(f.nodes(), f.values):
            w.writerow([_num(r), _num(v)])
    else:
        w.writerow(["x0", "x1", "value"])
        nodes = f.nodes().reshape(-1, 2)
        for (a, b), v in zip(nodes, f.values.reshape(-1)):
            w.writerow([_num(a), _num(b), _num(v)])
    return buf.getvalue()


def grid_function_from_csv(text):
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("missing '# dim,resolution,radius' line")
    dim, n, radius = lines[0][1:].strip().split(",")
    dim, n, radius = int(dim), int(n), float(radius)
    rows = list(csv.reader(lines[1:]))
    header, body = rows[0], rows[1:]
    vals = np.array([float(r[-1]) for r in body])
    if header == ["r", "value"]:
        return GridFunction(vals, radius, dim, radial=True)
    return GridFunction(vals.reshape(n, n), radius, dim)
