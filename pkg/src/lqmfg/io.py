"""Artifact writers: CSV tables and JSON reports, written atomically.

Every writer goes through a temp-file-plus-rename so a crash mid-run never
leaves a truncated artifact behind. Floats are written with shortest
round-trip formatting, so rerunning with the same seed reproduces files
byte for byte.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np


def _fmt(x) -> str:
    return repr(float(x))


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory,
                               prefix=os.path.basename(path) + ".",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _jsonable(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True,
                                       default=_jsonable) + "\n")


def _matrix_headers(name: str, rows: int, cols: int) -> list[str]:
    return [f"{name}_{i + 1}_{j + 1}"
            for i in range(rows) for j in range(cols)]


def _vector_headers(name: str, rows: int) -> list[str]:
    return [f"{name}_{i + 1}" for i in range(rows)]


def _csv(headers, columns) -> str:
    lines = [",".join(headers)]
    rows = len(columns[0])
    for j in range(rows):
        lines.append(",".join(_fmt(col[j]) for col in columns))
    return "\n".join(lines) + "\n"


def _matrix_columns(values) -> list:
    # (M+1, r, c) -> r*c flat columns in row-major header order
    count, rows, cols = values.shape
    return [values[:, i, j] for i in range(rows) for j in range(cols)]


def write_riccati_csv(path, solution, feedback) -> None:
    """One row per grid node: P, Gamma, Phi, Sigma, and the feedback law."""
    n = solution.P.shape[1]
    k = solution.Sigma.shape[1]
    headers = (["t"] + _matrix_headers("P", n, n)
               + _matrix_headers("Gamma", n, n)
               + _vector_headers("Phi", n)
               + _matrix_headers("Sigma", k, k)
               + _matrix_headers("K_z", k, n)
               + _matrix_headers("K_m", k, n)
               + _vector_headers("c_u", k))
    columns = ([solution.grid.nodes]
               + _matrix_columns(solution.P)
               + _matrix_columns(solution.Gamma)
               + [solution.Phi[:, i] for i in range(n)]
               + _matrix_columns(solution.Sigma)
               + _matrix_columns(feedback.K_z)
               + _matrix_columns(feedback.K_m)
               + [feedback.c_u[:, i] for i in range(k)])
    atomic_write_text(path, _csv(headers, columns))


def write_meanfield_csv(path, grid, m, Em) -> None:
    n = m.shape[1]
    headers = ["t"] + _vector_headers("m", n) + _vector_headers("Em", n)
    columns = ([grid.nodes] + [m[:, i] for i in range(n)]
               + [Em[:, i] for i in range(n)])
    atomic_write_text(path, _csv(headers, columns))


def write_agent_csv(path, grid, z_hat, u) -> None:
    n = z_hat.shape[1]
    k = u.shape[1]
    headers = (["t"] + _vector_headers("zhat", n) + _vector_headers("u", k))
    columns = ([grid.nodes] + [z_hat[:, i] for i in range(n)]
               + [u[:, i] for i in range(k)])
    atomic_write_text(path, _csv(headers, columns))


def rate_report_dict(report) -> dict:
    out = {
        "name": report.name,
        "Ns": list(report.Ns),
        "values": [float(v) for v in report.values],
        "stderrs": [float(v) for v in report.stderrs],
        "slope": float(report.slope),
        "intercept": float(report.intercept),
        "slope_stderr": float(report.slope_stderr),
        "degenerate": bool(report.degenerate),
        "sample_count": int(report.sample_count),
        "seed": int(report.seed),
    }
    if report.companions:
        out["companions"] = [rate_report_dict(c) for c in report.companions]
    return out


def write_rate_csv(path, report) -> None:
    headers = ["N", report.name, f"{report.name}_stderr"]
    columns = [np.asarray(report.Ns, float),
               np.asarray(report.values), np.asarray(report.stderrs)]
    for comp in report.companions:
        headers += [comp.name, f"{comp.name}_stderr"]
        columns += [np.asarray(comp.values), np.asarray(comp.stderrs)]
    atomic_write_text(path, _csv(headers, columns))


def deviation_report_dict(report) -> dict:
    return {
        "N": int(report.N),
        "S": int(report.S),
        "seed": int(report.seed),
        "baseline_mean_cost": float(report.baseline_mean_cost),
        "baseline_stderr": float(report.baseline_stderr),
        "max_gain": float(report.max_gain),
        "candidates": [{
            "name": r.name,
            "mean_cost": float(r.mean_cost),
            "cost_stderr": float(r.cost_stderr),
            "gain": float(r.gain),
            "gain_stderr": float(r.gain_stderr),
        } for r in report.results],
    }
