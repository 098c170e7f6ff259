"""Built-in scenarios.

``example1_model`` is a small three-state, two-action model with a noisy
sensor whose confusion is strong between the two rewarding states; it is
the standard smoke-test model throughout the test suite and the CLI.

``gridworld_model`` builds a slippery grid with an absorbing target cell
and a range sensor: the observation is a noisy reading of the Manhattan
distance between the agent and a fixed sensor cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .belief import ObservationModel
from .errors import ModelFormatError
from .mdp import MdpModel

# ---------------------------------------------------------------------------
# three-state example

def example1_model() -> tuple[MdpModel, ObservationModel]:
    """Three states with rewards 1, 0.8, 0; action 0 tends to hold the
    current state, action 1 tends to rotate; the sensor confuses the two
    rewarding states far more than the third."""
    hold = np.array([
        [0.8, 0.1, 0.1],
        [0.1, 0.8, 0.1],
        [0.1, 0.1, 0.8],
    ])
    rotate = np.array([
        [0.1, 0.1, 0.8],
        [0.8, 0.1, 0.1],
        [0.1, 0.8, 0.1],
    ])
    transition = np.stack([hold, rotate], axis=2)  # (dest, source, action)
    reward = np.array([
        [1.0, 1.0],
        [0.8, 0.8],
        [0.0, 0.0],
    ])
    model = MdpModel(3, 2, transition, reward, 0.95)
    likelihood = np.array([
        [0.70, 0.10, 0.05],
        [0.15, 0.45, 0.05],
        [0.15, 0.45, 0.90],
    ])
    return model, ObservationModel(3, likelihood)


# ---------------------------------------------------------------------------
# gridworld with a range sensor

_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))  # up, down, left, right, stay
GRIDWORLD_ACTIONS = ("up", "down", "left", "right", "stay")

# Readings further than this many sigmas from the true distance get exactly
# zero likelihood. Untruncated Gaussian tails sit astride the zero threshold
# of the prohibition test (positive as an emission probability, zero once
# scaled by small belief mass in the observer's predictive), which would
# prohibit every action; truncation keeps "possible reading" a sharp set.
SENSOR_SUPPORT_SIGMAS = 3.0


@dataclass(frozen=True)
class GridWorldSpec:
    width: int
    height: int
    start: tuple[int, int]
    target: tuple[int, int]
    sensor: tuple[int, int]
    slip_prob: float = 0.1
    target_reward: float = 1.0
    noise_sigma: float = 1.0
    discount: float = 0.95

    def cell_index(self, row: int, col: int) -> int:
        return row * self.width + col

    def cell_of(self, index: int) -> tuple[int, int]:
        return divmod(index, self.width)

    @property
    def num_cells(self) -> int:
        return self.width * self.height


def desk_gridworld() -> GridWorldSpec:
    """Default 7x7 scenario: reach the far corner while a range sensor
    placed on that corner listens."""
    return GridWorldSpec(
        width=7,
        height=7,
        start=(0, 0),
        target=(6, 6),
        sensor=(6, 6),
    )


def _resolved_moves(spec: GridWorldSpec, row: int, col: int) -> list[int]:
    cells = []
    for dr, dc in _MOVES:
        r, c = row + dr, col + dc
        if 0 <= r < spec.height and 0 <= c < spec.width:
            cells.append(spec.cell_index(r, c))
        else:
            cells.append(spec.cell_index(row, col))  # off-grid moves stay put
    return cells


def gridworld_model(spec: GridWorldSpec) -> tuple[MdpModel, ObservationModel]:
    n = spec.num_cells
    num_u = len(_MOVES)
    for name in ("start", "target", "sensor"):
        r, c = getattr(spec, name)
        if not (0 <= r < spec.height and 0 <= c < spec.width):
            raise ValueError(f"{name} cell {(r, c)} outside the grid")
    if spec.start == spec.target:
        raise ValueError("start and target must be different cells")
    if not 0.0 <= spec.slip_prob < 1.0:
        raise ValueError(f"slip_prob must be in [0, 1), got {spec.slip_prob}")
    if spec.noise_sigma <= 0.0:
        raise ValueError(f"noise_sigma must be positive, got {spec.noise_sigma}")

    target = spec.cell_index(*spec.target)
    transition = np.zeros((n, n, num_u))
    reward = np.zeros((n, num_u))
    for row in range(spec.height):
        for col in range(spec.width):
            src = spec.cell_index(row, col)
            if src == target:
                transition[src, src, :] = 1.0  # absorbing
                reward[src, :] = spec.target_reward
                continue
            resolved = _resolved_moves(spec, row, col)
            for u in range(num_u):
                transition[resolved[u], src, u] += 1.0 - spec.slip_prob
                for other in resolved:
                    transition[other, src, u] += spec.slip_prob / num_u

    # noisy reading of the Manhattan distance to the sensor
    sr, sc = spec.sensor
    max_dist = (spec.width - 1) + (spec.height - 1)
    readings = np.arange(max_dist + 1)
    likelihood = np.zeros((max_dist + 1, n))
    for row in range(spec.height):
        for col in range(spec.width):
            cell = spec.cell_index(row, col)
            d = abs(row - sr) + abs(col - sc)
            w = np.exp(-((readings - d) ** 2) / (2.0 * spec.noise_sigma ** 2))
            w[np.abs(readings - d) > SENSOR_SUPPORT_SIGMAS * spec.noise_sigma] = 0.0
            likelihood[:, cell] = w / w.sum()

    model = MdpModel(n, num_u, transition, reward, spec.discount)
    return model, ObservationModel(max_dist + 1, likelihood)


# ---------------------------------------------------------------------------
# gridworld spec files

_SPEC_KEYS = {
    "width", "height", "start", "target", "sensor",
    "slip_prob", "target_reward", "noise_sigma", "discount",
}
_SPEC_REQUIRED = {"width", "height", "start", "target", "sensor"}


def gridworld_spec_from_dict(doc: dict) -> GridWorldSpec:
    missing = _SPEC_REQUIRED - doc.keys()
    if missing:
        raise ModelFormatError([f"missing field {k!r}" for k in sorted(missing)])
    unknown = doc.keys() - _SPEC_KEYS
    if unknown:
        raise ModelFormatError([f"unknown field {k!r}" for k in sorted(unknown)])
    base = desk_gridworld()
    try:
        spec = replace(
            base,
            width=int(doc["width"]),
            height=int(doc["height"]),
            start=tuple(int(v) for v in doc["start"]),
            target=tuple(int(v) for v in doc["target"]),
            sensor=tuple(int(v) for v in doc["sensor"]),
            slip_prob=float(doc.get("slip_prob", base.slip_prob)),
            target_reward=float(doc.get("target_reward", base.target_reward)),
            noise_sigma=float(doc.get("noise_sigma", base.noise_sigma)),
            discount=float(doc.get("discount", base.discount)),
        )
    except (TypeError, ValueError) as exc:
        raise ModelFormatError([f"malformed gridworld spec: {exc}"]) from exc
    for name in ("start", "target", "sensor"):
        if len(getattr(spec, name)) != 2:
            raise ModelFormatError([f"{name} must be a [row, col] pair"])
    return spec


def load_gridworld_spec(path: str | Path) -> GridWorldSpec:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ModelFormatError(["top-level document must be an object"])
    return gridworld_spec_from_dict(doc)
