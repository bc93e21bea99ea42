"""
CSV persistence for fields, kernels, controls, trajectories and histories.

Numbers are written with 17 significant digits and '\n' line endings so that
identical runs produce byte-identical files.
"""
import csv
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .dynamics import ControlParams, Trajectory
from .errors import ConfigError
from .grid import Field, Grid, KernelSlice, TimeGrid

logger = logging.getLogger(__name__)

NODE_TOL = 1e-9
FLOAT_FMT = "%.17g"


# ============================================================================
# WRITING
# ============================================================================

def _fmt(x: float) -> str:
    return FLOAT_FMT % float(x)


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[float]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else _fmt(v) for v in row) for row in rows]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def write_field(path: Path, values: Field, grid: Grid) -> Path:
    return write_rows(path, ("y", "value"), zip(grid.nodes, values))


def write_kernel(path: Path, k: KernelSlice, grid: Grid) -> Path:
    rows = ((grid.nodes[i], grid.nodes[j], k[i, j]) for i in range(grid.n) for j in range(grid.n))
    return write_rows(path, ("y", "z", "value"), rows)


def write_series(path: Path, series: np.ndarray, times: np.ndarray, grid: Grid) -> Path:
    """t,y,value rows for a time-indexed sequence of fields."""
    rows = ((times[l], grid.nodes[i], series[l, i]) for l in range(series.shape[0]) for i in range(grid.n))
    return write_rows(path, ("t", "y", "value"), rows)


def write_trajectory(path: Path, traj: Trajectory) -> Path:
    return write_series(path, traj.states, traj.times, traj.grid)


def write_controls(out_dir: Path, params: ControlParams, grid: Grid, time_grid: TimeGrid) -> List[Path]:
    times = time_grid.times[: params.steps]
    b_rows = (
        (times[l], grid.nodes[i], grid.nodes[j], params.b[l, i, j])
        for l in range(params.steps) for i in range(grid.n) for j in range(grid.n)
    )
    return [
        write_series(Path(out_dir) / "a.csv", params.a, times, grid),
        write_rows(Path(out_dir) / "b.csv", ("t", "y", "z", "value"), b_rows),
    ]


def write_history(path: Path, values: Sequence[float]) -> Path:
    return write_rows(path, ("iter", "value"), enumerate(values))


# ============================================================================
# READING
# ============================================================================

def read_rows(path: Path) -> Tuple[List[str], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"data file is empty: {path}")
        try:
            rows = [[float(x) for x in row] for row in reader if row]
        except ValueError as e:
            raise ConfigError(f"non-numeric entry in {path}: {e}")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    if not np.all(np.isfinite(data)):
        raise ConfigError(f"non-finite entry in {path}")
    return header, data


def _match_nodes(values: np.ndarray, grid: Grid, path: Path) -> np.ndarray:
    """Index of the grid node for every value; values must sit on nodes within NODE_TOL."""
    idx = np.clip(np.searchsorted(grid.nodes, values), 0, grid.n - 1)
    left = np.clip(idx - 1, 0, grid.n - 1)
    nearer = np.where(np.abs(grid.nodes[left] - values) < np.abs(grid.nodes[idx] - values), left, idx)
    if np.any(np.abs(grid.nodes[nearer] - values) > NODE_TOL):
        raise ConfigError(f"{path}: positions do not match the configured grid within {NODE_TOL}")
    return nearer


def _match_times(values: np.ndarray, time_grid: TimeGrid, path: Path) -> np.ndarray:
    idx = np.rint(values / time_grid.dt).astype(int)
    if np.any(idx < 0) or np.any(idx >= time_grid.steps) or np.any(np.abs(idx * time_grid.dt - values) > NODE_TOL):
        raise ConfigError(f"{path}: times must be grid times t_0..t_(steps-1)")
    return idx


def _fill(shape: Tuple[int, ...], index: Tuple[np.ndarray, ...], values: np.ndarray, path: Path) -> np.ndarray:
    out = np.full(shape, np.nan)
    out[index] = values
    if np.any(np.isnan(out)) or values.size != out.size:
        raise ConfigError(f"{path}: expected exactly one row per grid point ({out.size} rows), got {values.size}")
    return out


def read_field(path: Path, grid: Grid) -> Field:
    header, data = read_rows(path)
    if header != ["y", "value"]:
        raise ConfigError(f"{path}: field files need header 'y,value', got {','.join(header)}")
    return _fill((grid.n,), (_match_nodes(data[:, 0], grid, path),), data[:, 1], path)


def read_kernel(path: Path, grid: Grid) -> KernelSlice:
    header, data = read_rows(path)
    if header != ["y", "z", "value"]:
        raise ConfigError(f"{path}: kernel files need header 'y,z,value', got {','.join(header)}")
    i = _match_nodes(data[:, 0], grid, path)
    j = _match_nodes(data[:, 1], grid, path)
    return _fill((grid.n, grid.n), (i, j), data[:, 2], path)


def read_bias(path: Path, grid: Grid, time_grid: TimeGrid) -> Tuple[np.ndarray, bool]:
    """(steps, n) bias and whether the file was time-dependent (header t,y,value)."""
    header, data = read_rows(path)
    if header == ["y", "value"]:
        return np.broadcast_to(read_field(path, grid), (time_grid.steps, grid.n)).copy(), False
    if header != ["t", "y", "value"]:
        raise ConfigError(f"{path}: bias files need header 'y,value' or 't,y,value'")
    l = _match_times(data[:, 0], time_grid, path)
    i = _match_nodes(data[:, 1], grid, path)
    return _fill((time_grid.steps, grid.n), (l, i), data[:, 2], path), True


def read_kernel_series(path: Path, grid: Grid, time_grid: TimeGrid) -> Tuple[np.ndarray, bool]:
    """(steps, n, n) kernel and whether the file was time-dependent (header t,y,z,value)."""
    header, data = read_rows(path)
    if header == ["y", "z", "value"]:
        return np.broadcast_to(read_kernel(path, grid), (time_grid.steps, grid.n, grid.n)).copy(), False
    if header != ["t", "y", "z", "value"]:
        raise ConfigError(f"{path}: kernel files need header 'y,z,value' or 't,y,z,value'")
    l = _match_times(data[:, 0], time_grid, path)
    i = _match_nodes(data[:, 1], grid, path)
    j = _match_nodes(data[:, 2], grid, path)
    return _fill((time_grid.steps, grid.n, grid.n), (l, i, j), data[:, 3], path), True
