"""JSON and CSV formats for scenarios, trajectories and reports.

Scenario JSON::

    {"n": 2,
     "physical": {"weights": [[...], [...]]},
     "social": {"weights": [[...], [...]]},
     "params": {"beta": [...], "gamma": [...], "theta": [...], "delta": [...],
                "lambda": [...], "xi": [...], "prejudice": [...]},
     "initial": {"a": [...], "d": [...], "x": [...]}}

Floats are written with ``repr`` precision so documents round-trip exactly.
"""

from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DimensionError, PreconditionError
from .model import ModelParams, NetworkLayer, Scenario, SystemState, Trajectory

PARAM_KEYS = {"beta": "beta", "gamma": "gamma", "theta": "theta", "delta": "delta",
              "lambda": "lam", "xi": "xi", "prejudice": "prejudice"}


class FormatError(PreconditionError):
    """A document does not follow the expected schema."""


def scenario_to_dict(sc: Scenario) -> dict:
    p = sc.params
    return {
        "n": sc.n,
        "physical": {"weights": sc.physical.weights.tolist()},
        "social": {"weights": sc.social.weights.tolist()},
        "params": {k: getattr(p, attr).tolist() for k, attr in PARAM_KEYS.items()},
        "initial": {"a": sc.initial.a.tolist(), "d": sc.initial.d.tolist(),
                    "x": sc.initial.x.tolist()},
    }


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        params = doc["params"]
        n = int(doc["n"])
        kw = {attr: params[k] for k, attr in PARAM_KEYS.items()}
        p = ModelParams(**kw)
        init = doc.get("initial", {})
        a = init.get("a", [0.0] * n)
        d = init.get("d", [0.0] * n)
        x = init.get("x", p.prejudice)
        sc = Scenario(NetworkLayer(doc["physical"]["weights"]), NetworkLayer(doc["social"]["weights"]),
                      p, SystemState(a, d, x))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DimensionError):
            raise
        raise FormatError(f"malformed scenario document: {exc!r}") from exc
    if sc.n != n:
        raise DimensionError(f"document declares n={n} but vectors have length {sc.n}")
    return sc


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_text(path, text: str) -> None:
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_json(path) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def save_scenario(sc: Scenario, path) -> None:
    write_text(path, dumps(scenario_to_dict(sc)))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(read_json(path))


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "t0": traj.t0,
        "a": traj.a.tolist(),
        "d": traj.d.tolist(),
        "x": traj.x.tolist(),
        "controls": None if traj.controls is None else traj.controls.tolist(),
        "meta": traj.meta,
    }


def trajectory_from_dict(doc: dict) -> Trajectory:
    controls = doc.get("controls")
    n = len(doc["a"][0])
    return Trajectory(np.array(doc["a"], dtype=np.float64).reshape(-1, n),
                      np.array(doc["d"], dtype=np.float64).reshape(-1, n),
                      np.array(doc["x"], dtype=np.float64).reshape(-1, n),
                      None if controls is None else np.array(controls, dtype=np.float64).reshape(-1, n),
                      int(doc.get("t0", 0)), dict(doc.get("meta", {})))


def _csv(rows, header) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v: float) -> str:
    return repr(float(v))


def trajectory_csv(traj: Trajectory) -> str:
    """Long format ``t, j, s, a, d, x, u``; ``u`` is empty after the last step."""
    U = traj.control_matrix()
    s = traj.s
    rows = []
    for t in range(len(traj)):
        for j in range(traj.n):
            u = _num(U[t, j]) if t < traj.horizon else ""
            rows.append([traj.t0 + t, j, _num(s[t, j]), _num(traj.a[t, j]), _num(traj.d[t, j]),
                         _num(traj.x[t, j]), u])
    return _csv(rows, ["t", "j", "s", "a", "d", "x", "u"])


def controls_csv(traj: Trajectory) -> str:
    U = traj.control_matrix()
    rows = [[traj.t0 + t, j, _num(U[t, j])] for t in range(U.shape[0]) for j in range(traj.n)]
    return _csv(rows, ["t", "j", "u"])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FormatError(f"{path}: empty trajectory")
    T = max(int(r["t"]) for r in rows)
    t0 = min(int(r["t"]) for r in rows)
    n = max(int(r["j"]) for r in rows) + 1
    A = np.zeros((T - t0 + 1, n))
    D, X, U = A.copy(), A.copy(), np.zeros((T - t0, n))
    for r in rows:
        t, j = int(r["t"]) - t0, int(r["j"])
        A[t, j], D[t, j], X[t, j] = float(r["a"]), float(r["d"]), float(r["x"])
        if r["u"] != "":
            U[t, j] = float(r["u"])
    return Trajectory(A, D, X, U, t0)
