"""File formats: samples, kernel, rhs and solution.

All CSV files may start with a single comment line ``# {json}`` carrying
metadata (seed, config hash, grid); readers skip any ``#`` line before the
header. Floats are written with 17 significant digits so a round trip is
exact.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any

import numpy as np

from .estimation import KernelMatrix, RhsVector
from .model import SampleSet
from .solver import RegularizedSolution

__all__ = [
    "DataFormatError",
    "fmt",
    "dump_json",
    "write_samples_csv",
    "read_samples_csv",
    "write_kernel_csv",
    "read_kernel_csv",
    "write_rhs_csv",
    "read_rhs_csv",
    "write_solution",
    "read_theta_csv",
]


class DataFormatError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


def fmt(v: float) -> str:
    return "%.17g" % v


def dump_json(obj: Any) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _meta_line(meta: dict | None) -> str:
    if not meta:
        return ""
    return "# " + json.dumps(_plain(meta), sort_keys=True, separators=(",", ":")) + "\n"


def _write(path: Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")


def _read_table(path) -> tuple[dict, list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(path, None, f"cannot read file ({exc.strerror})") from None
    meta: dict = {}
    header = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if header is None and line.lstrip().startswith("#"):
            body = line.lstrip()[1:].strip()
            if body.startswith("{"):
                try:
                    meta = json.loads(body)
                except json.JSONDecodeError as exc:
                    raise DataFormatError(path, lineno, f"bad JSON metadata: {exc.msg}") from None
            continue
        row = next(csv.reader(io.StringIO(line)))
        if header is None:
            header = [h.strip() for h in row]
            continue
        rows.append((lineno, row))
    if header is None:
        raise DataFormatError(path, None, "no header row")
    return meta, header, rows


def _floats(path, lineno, row, width) -> list[float]:
    if len(row) != width:
        raise DataFormatError(path, lineno, f"expected {width} fields, got {len(row)}")
    try:
        return [float(v) for v in row]
    except ValueError as exc:
        raise DataFormatError(path, lineno, str(exc)) from None


# ---------------------------------------------------------------------------
# samples
# ---------------------------------------------------------------------------


def write_samples_csv(sample_set: SampleSet, path, meta: dict | None = None) -> None:
    out = [_meta_line(meta), "z,x,y\n"]
    for z, (x, y) in sample_set.groups.items():
        zs = fmt(z)
        out.extend(f"{zs},{fmt(a)},{fmt(b)}\n" for a, b in zip(x.tolist(), y.tolist()))
    _write(path, "".join(out))


def read_samples_csv(path, baseline_z: float | None = None) -> SampleSet:
    """Load a ``z,x,y`` table; groups may be unbalanced (``n_per_level`` is then ``None``)."""
    meta, header, rows = _read_table(path)
    if header != ["z", "x", "y"]:
        raise DataFormatError(path, None, f"header must be z,x,y, got {','.join(header)}")
    groups: dict[float, tuple[list, list]] = {}
    for lineno, row in rows:
        z, x, y = _floats(path, lineno, row, 3)
        if not (np.isfinite(x) and np.isfinite(y) and np.isfinite(z)):
            raise DataFormatError(path, lineno, "non-finite value")
        gx, gy = groups.setdefault(z, ([], []))
        gx.append(x)
        gy.append(y)
    if not groups:
        raise DataFormatError(path, None, "no data rows")
    if baseline_z is None:
        baseline_z = float(meta.get("baseline_z", 0.0))
    sizes = {len(gx) for gx, _ in groups.values()}
    return SampleSet(
        scenario_id=str(meta.get("scenario_id", "user-data")),
        seed=meta.get("seed"),
        groups={z: (np.array(gx), np.array(gy)) for z, (gx, gy) in groups.items()},
        n_per_level=sizes.pop() if len(sizes) == 1 else None,
        baseline_z=baseline_z,
    )


# ---------------------------------------------------------------------------
# kernel and rhs
# ---------------------------------------------------------------------------


def write_kernel_csv(kernel: KernelMatrix, path, meta: dict | None = None) -> None:
    m = dict(meta or {})
    m.update(x_grid=kernel.x_grid, baseline_z=kernel.baseline_z, z_levels=kernel.z_levels)
    j = kernel.entries.shape[1]
    out = [_meta_line(m), "z," + ",".join(f"k{i}" for i in range(j)) + "\n"]
    for z, row in zip(kernel.z_levels, kernel.entries):
        out.append(fmt(z) + "," + ",".join(fmt(v) for v in row.tolist()) + "\n")
    _write(path, "".join(out))


def read_kernel_csv(path) -> KernelMatrix:
    meta, header, rows = _read_table(path)
    if "x_grid" not in meta:
        raise DataFormatError(path, 1, "metadata line must carry x_grid")
    x_grid = np.asarray(meta["x_grid"], dtype=float)
    width = len(x_grid) + 1
    if len(header) != width or header[0] != "z":
        raise DataFormatError(path, None, f"header must be z plus {len(x_grid)} kernel columns")
    zs, entries = [], []
    for lineno, row in rows:
        vals = _floats(path, lineno, row, width)
        zs.append(vals[0])
        entries.append(vals[1:])
    entries = np.array(entries, dtype=float).reshape(len(zs), len(x_grid))
    return KernelMatrix(
        x_grid=x_grid,
        z_levels=tuple(zs),
        baseline_z=float(meta.get("baseline_z", 0.0)),
        entries=entries,
        stderr=np.full_like(entries, np.nan),
    )


def write_rhs_csv(rhs: RhsVector, path, meta: dict | None = None) -> None:
    out = [_meta_line(meta), "z,value,noise_scale\n"]
    for z, v, s in zip(rhs.z_levels, rhs.values.tolist(), rhs.noise_scale.tolist()):
        out.append(f"{fmt(z)},{fmt(v)},{fmt(s)}\n")
    _write(path, "".join(out))


def read_rhs_csv(path) -> RhsVector:
    _, header, rows = _read_table(path)
    if header != ["z", "value", "noise_scale"]:
        raise DataFormatError(path, None, "header must be z,value,noise_scale")
    data = [_floats(path, lineno, row, 3) for lineno, row in rows]
    if not data:
        raise DataFormatError(path, None, "no data rows")
    arr = np.array(data)
    return RhsVector(tuple(arr[:, 0].tolist()), arr[:, 1], arr[:, 2])


# ---------------------------------------------------------------------------
# solution
# ---------------------------------------------------------------------------


def write_solution(
    solution: RegularizedSolution, x_grid, theta_path, json_path, extra: dict | None = None
) -> None:
    meta = dict(extra or {})
    out = [_meta_line({k: meta[k] for k in ("seed", "config_hash") if k in meta}), "x,theta_hat\n"]
    out.extend(f"{fmt(x)},{fmt(t)}\n" for x, t in zip(np.asarray(x_grid).tolist(), solution.theta.tolist()))
    _write(theta_path, "".join(out))
    meta.update(
        lambda_=solution.lam,
        penalty_kind=solution.penalty_kind,
        residual_norm=solution.residual_norm,
        solution_seminorm=solution.solution_seminorm,
        singular_values=solution.singular_values,
        truncation_rank=solution.truncation_rank,
    )
    meta["lambda"] = meta.pop("lambda_")
    _write(json_path, dump_json(meta))


def read_theta_csv(path) -> tuple[np.ndarray, np.ndarray]:
    _, header, rows = _read_table(path)
    if header != ["x", "theta_hat"]:
        raise DataFormatError(path, None, "header must be x,theta_hat")
    arr = np.array([_floats(path, lineno, row, 2) for lineno, row in rows])
    return arr[:, 0], arr[:, 1]
