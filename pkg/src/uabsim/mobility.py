"""Ground-user mobility: trace files and a synthetic street-grid generator.

Traces are the sole driver of ground-user motion. They come either from a
CSV file (header ``t,gue_id,x,y``, rows sorted by gue_id then t) or from
the built-in generator, which moves vehicles along an axis-aligned street
grid: straight at constant speed, random turns at intersections, reflection
at the area boundary.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SimConfig
from .errors import ConfigError, TraceBoundsError, TraceCoverageError, TraceParseError

TRACE_HEADER = ["t", "gue_id", "x", "y"]


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    def __iter__(self):
        yield self.x
        yield self.y


@dataclass
class GueTrace:
    gue_id: int
    positions: np.ndarray  # shape (steps, 2), steps >= episode_len + 1

    def __len__(self) -> int:
        return self.positions.shape[0]


def gue_positions_at(traces: list[GueTrace], t: int) -> list[Position]:
    """Positions of every ground user at step t, in gue_id order."""
    if not traces:
        return []
    horizon = min(len(tr) for tr in traces) - 1
    if not 0 <= t <= horizon:
        raise IndexError(f"step {t} outside trace horizon [0, {horizon}]")
    return [Position(float(tr.positions[t, 0]), float(tr.positions[t, 1])) for tr in traces]


def stack_traces(traces: list[GueTrace], horizon: int) -> np.ndarray:
    """Dense (num_gues, horizon+1, 2) array view used by the environment."""
    out = np.empty((len(traces), horizon + 1, 2), dtype=float)
    for i, tr in enumerate(traces):
        if len(tr) < horizon + 1:
            raise TraceCoverageError(
                f"gue {tr.gue_id}: trace has {len(tr)} steps, needs {horizon + 1}")
        out[i] = tr.positions[: horizon + 1]
    return out


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_traces(path, config: SimConfig) -> list[GueTrace]:
    """Load and validate traces from a ``t,gue_id,x,y`` CSV file.

    Every ground user must cover steps 0..episode_len contiguously; points
    outside the service area or per-step jumps beyond the configured max
    vehicle speed are rejected with the offending line number.
    """
    path = Path(path)
    if not path.exists():
        raise TraceCoverageError(f"trace file not found: {path}")
    per_gue: dict[int, list[tuple[int, float, float, int]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceCoverageError(f"{path}: 0 traces, expected >= 1") from None
        if [h.strip() for h in header] != TRACE_HEADER:
            raise TraceParseError(path, 1, f"expected header {','.join(TRACE_HEADER)!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise TraceParseError(path, line_no, f"expected 4 fields, got {len(row)}")
            try:
                t = int(row[0])
                gue_id = int(row[1])
                x = float(row[2])
                y = float(row[3])
            except ValueError:
                raise TraceParseError(path, line_no, f"malformed row: {','.join(row)!r}") from None
            if not (0.0 <= x <= config.area_width_m and 0.0 <= y <= config.area_height_m):
                raise TraceBoundsError(
                    path, line_no,
                    f"point ({x}, {y}) outside area "
                    f"{config.area_width_m}x{config.area_height_m}")
            per_gue.setdefault(gue_id, []).append((t, x, y, line_no))

    if not per_gue:
        raise TraceCoverageError(f"{path}: 0 traces, expected >= 1")

    needed = config.episode_len + 1
    max_step = config.max_vehicle_speed_mps * config.timestep_s
    traces = []
    for gue_id in sorted(per_gue):
        rows = sorted(per_gue[gue_id])
        steps = [r[0] for r in rows]
        if steps != list(range(len(rows))):
            raise TraceCoverageError(
                f"{path}: gue {gue_id}: steps not contiguous from 0 (got {steps[:5]}...)")
        if len(rows) < needed:
            raise TraceCoverageError(
                f"{path}: gue {gue_id}: trace covers {len(rows)} steps, expected >= {needed}")
        pos = np.array([[r[1], r[2]] for r in rows], dtype=float)
        jumps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
        too_fast = np.nonzero(jumps > max_step + 1e-9)[0]
        if too_fast.size:
            k = int(too_fast[0])
            raise TraceBoundsError(
                path, rows[k + 1][3],
                f"gue {gue_id}: displacement {jumps[k]:.2f} m exceeds "
                f"max {max_step:.2f} m per step")
        traces.append(GueTrace(gue_id=gue_id, positions=pos[:needed]))
    return traces


def save_traces(traces: list[GueTrace], path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for tr in traces:
        for t in range(len(tr)):
            writer.writerow([t, tr.gue_id, f"{tr.positions[t, 0]:.6f}", f"{tr.positions[t, 1]:.6f}"])
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# Synthetic street-grid generator
# ---------------------------------------------------------------------------

@dataclass
class _Vehicle:
    x: float
    y: float
    direction: np.ndarray  # unit vector along one axis


def generate_manhattan_traces(
    config: SimConfig,
    block_size: float | None = None,
    vehicle_speed: float | None = None,
    rng: np.random.Generator | None = None,
) -> list[GueTrace]:
    """Generate one trace per ground user on an axis-aligned street grid.

    Vehicles drive along street lines spaced ``block_size`` apart. At each
    intersection they take each available turn with probability
    ``config.turn_prob`` (stopping at the intersection on the turning step),
    otherwise continue straight; they reflect at the area boundary.
    Deterministic for a given generator state.
    """
    block = config.block_size_m if block_size is None else float(block_size)
    speed = config.vehicle_speed_mps if vehicle_speed is None else float(vehicle_speed)
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    if speed <= 0:
        raise ConfigError("vehicle_speed must be positive")
    if block <= 0:
        raise ConfigError("block_size must be positive")
    w, h = config.area_width_m, config.area_height_m
    if w < 2 * block or h < 2 * block:
        raise ConfigError(
            f"block_size {block} m too large for area {w}x{h} m "
            "(need at least two blocks per dimension)")

    xs = _street_lines(w, block)
    ys = _street_lines(h, block)
    steps = config.episode_len + 1
    step_dist = speed * config.timestep_s

    traces = []
    for gue_id in range(config.num_gues):
        veh = _spawn_vehicle(rng, xs, ys, w, h)
        pos = np.empty((steps, 2), dtype=float)
        pos[0] = (veh.x, veh.y)
        for t in range(1, steps):
            _advance(veh, step_dist, block, w, h, config.turn_prob, rng)
            pos[t] = (veh.x, veh.y)
        traces.append(GueTrace(gue_id=gue_id, positions=pos))
    return traces


def _street_lines(extent: float, block: float) -> np.ndarray:
    n = int(extent // block)
    return np.arange(n + 1) * block


def _spawn_vehicle(rng, xs, ys, w, h) -> _Vehicle:
    horizontal = rng.random() < 0.5
    sign = 1.0 if rng.random() < 0.5 else -1.0
    if horizontal:
        y = float(rng.choice(ys))
        x = float(rng.uniform(0.0, w))
        return _Vehicle(x=x, y=y, direction=np.array([sign, 0.0]))
    x = float(rng.choice(xs))
    y = float(rng.uniform(0.0, h))
    return _Vehicle(x=x, y=y, direction=np.array([0.0, sign]))


def _advance(veh, step_dist, block, w, h, turn_prob, rng):
    remaining = step_dist
    # At most a few segment events per step; bound the loop defensively.
    for _ in range(64):
        if remaining <= 1e-9:
            return
        axis = 0 if veh.direction[0] != 0.0 else 1
        coord = veh.x if axis == 0 else veh.y
        sign = veh.direction[axis]
        limit = (w if axis == 0 else h) if sign > 0 else 0.0
        dist_boundary = abs(limit - coord)
        dist_inter = _dist_to_next_intersection(coord, sign, block)

        if dist_boundary <= dist_inter + 1e-9 and dist_boundary < remaining:
            # Reflect: stop exactly at the wall, reverse, end the step there.
            _set_coord(veh, axis, limit)
            veh.direction = -veh.direction
            return
        if dist_inter < remaining:
            _set_coord(veh, axis, _round_to_grid(coord + sign * dist_inter, block))
            remaining -= dist_inter
            if _maybe_turn(veh, axis, w, h, turn_prob, rng):
                return  # turning consumes the rest of the step
            continue
        _set_coord(veh, axis, coord + sign * remaining)
        return


def _dist_to_next_intersection(coord: float, sign: float, block: float) -> float:
    k = coord / block
    if sign > 0:
        nxt = np.floor(k + 1e-9) + 1
    else:
        nxt = np.ceil(k - 1e-9) - 1
    return abs(nxt * block - coord)


def _round_to_grid(coord: float, block: float) -> float:
    return round(coord / block) * block


def _set_coord(veh, axis, value):
    if axis == 0:
        veh.x = value
    else:
        veh.y = value


def _maybe_turn(veh, axis, w, h, turn_prob, rng) -> bool:
    """Pick a turn at an intersection; returns True if the vehicle turned."""
    cross = 1 - axis
    extent = h if cross == 1 else w
    coord = veh.y if cross == 1 else veh.x
    options = []
    if coord < extent - 1e-9:
        options.append(1.0)
    if coord > 1e-9:
        options.append(-1.0)
    u = rng.random()
    for i, sign in enumerate(options):
        if u < turn_prob * (i + 1):
            direction = np.zeros(2)
            direction[cross] = sign
            veh.direction = direction
            return True
    return False
