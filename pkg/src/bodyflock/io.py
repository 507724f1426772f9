"""Serialization helpers: deterministic JSON/CSV writers and snapshot schemas.

Payloads never contain timestamps and keys are sorted, so identical runs
produce byte-identical files.  Matrices serialize as row-major 9-tuples.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def _coerce(value):
    if isinstance(value, np.ndarray):
        return [_coerce(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _coerce(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_coerce(v) for v in value]
    return value


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    body.setdefault("schema_version", SCHEMA_VERSION)
    path.write_text(json.dumps(_coerce(body), indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path: str | Path, header: list[str], rows) -> Path:
    """Plain CSV with full-precision floats (repr), no quoting needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _format_cell(cell) -> str:
    if isinstance(cell, (float, np.floating)):
        return repr(float(cell))
    if isinstance(cell, (int, np.integer)):
        return str(int(cell))
    return str(cell)


def rotation_to_row(matrix) -> list[float]:
    return [float(x) for x in np.asarray(matrix).reshape(9)]


def ensemble_to_payload(ensemble) -> dict:
    """Particle snapshot: list of (position 3-tuple, rotation 9-tuple)."""
    return {
        "schema_version": SCHEMA_VERSION,
        "time": float(ensemble.time),
        "n_agents": int(ensemble.n_agents),
        "agents": [
            {
                "position": [float(x) for x in pos],
                "rotation": rotation_to_row(att),
            }
            for pos, att in zip(ensemble.positions, ensemble.attitudes)
        ],
    }


def frame_field_rows(field) -> list[list]:
    """Flattened cell rows: index, coordinates, density, frame vectors."""
    rows = []
    shape = field.shape
    for flat, idx in enumerate(np.ndindex(*shape)):
        rows.append(
            [flat]
            + [field.dx * i for i in idx]
            + [float(field.rho[idx])]
            + [float(x) for x in field.omega[idx]]
            + [float(x) for x in field.u[idx]]
            + [float(x) for x in field.v[idx]]
        )
    return rows


def frame_field_header(ndim: int) -> list[str]:
    coords = ["x1", "x2", "x3"][:ndim]
    return (
        ["cell"]
        + coords
        + ["rho"]
        + [f"omega_{i}" for i in "123"]
        + [f"u_{i}" for i in "123"]
        + [f"v_{i}" for i in "123"]
    )
