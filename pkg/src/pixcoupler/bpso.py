"""Binary particle swarm optimisation (maximisation, global-best topology).

Velocity update per bit ``d``::

    v' = w v + c1 r1 (pbest_d - x_d) + c2 r2 (gbest_d - x_d),   |v'| <= v_max

with fresh uniform ``r1``, ``r2`` per bit.  A transfer function maps ``v'``
to a probability: S-shaped (sigmoid) sets the bit to 1 with that
probability, V-shaped (``|tanh|``) flips the current bit with it.  The
inertia weight falls linearly from ``w_start`` at iteration 1 to ``w_end``
at the last iteration.

Each iteration draws, in this order and from one seeded generator, an
``(n, d)`` block for ``r1``, one for ``r2`` and one for the position
update, so a trajectory depends only on ``(config, fitness)`` and never on
how the fitness calls are scheduled.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from os import PathLike
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

from .errors import DomainError, FitnessEvaluationError, FormatError

Fitness = Callable[[np.ndarray], float]

CHECKPOINT_FORMAT = "pixcoupler-swarm"
CHECKPOINT_VERSION = 1
CSV_HEADER = ["iteration", "gbest_fitness", "transfer_kind", "seed"]


class TransferKind(enum.Enum):
    S_SHAPED = "s"
    V_SHAPED = "v"

    @classmethod
    def parse(cls, value) -> "TransferKind":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        for kind in cls:
            if text in (kind.value, kind.name.lower(), kind.name.lower().replace("_", "-")):
                return kind
        raise DomainError(f"unknown transfer kind {value!r} (expected 's' or 'v')")


class StopReason(enum.Enum):
    TARGET_REACHED = "TARGET_REACHED"
    BUDGET_EXHAUSTED = "BUDGET_EXHAUSTED"


@dataclass(frozen=True)
class BpsoConfig:
    dimension: int
    swarm_size: int = 20
    max_iterations: int = 100
    c1: float = 2.0
    c2: float = 2.0
    w_start: float = 0.9
    w_end: float = 0.4
    v_max: float = 6.0
    transfer_kind: TransferKind = TransferKind.V_SHAPED
    target_fitness: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "transfer_kind", TransferKind.parse(self.transfer_kind))
        if self.swarm_size < 2:
            raise DomainError("swarm_size must be >= 2")
        if self.dimension < 1:
            raise DomainError("dimension must be >= 1")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if not self.w_start >= self.w_end > 0:
            raise DomainError("inertia must satisfy w_start >= w_end > 0")
        if not self.v_max > 0:
            raise DomainError("v_max must be positive")
        if not 0 <= int(self.rng_seed) < 2 ** 64:
            raise DomainError("rng_seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["transfer_kind"] = self.transfer_kind.value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BpsoConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    pbest_position: np.ndarray
    pbest_fitness: float = -math.inf


@dataclass
class SwarmState:
    """Whole-swarm arrays; row ``k`` of each array belongs to particle ``k``."""

    positions: np.ndarray
    velocities: np.ndarray
    pbest_positions: np.ndarray
    pbest_fitness: np.ndarray
    gbest_position: np.ndarray
    gbest_fitness: float
    rng: np.random.Generator
    iteration: int = 0
    history: list = field(default_factory=list)

    @property
    def particles(self) -> list:
        return [Particle(self.positions[k].copy(), self.velocities[k].copy(),
                         self.pbest_positions[k].copy(), float(self.pbest_fitness[k]))
                for k in range(self.positions.shape[0])]

    def copy(self) -> "SwarmState":
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return SwarmState(self.positions.copy(), self.velocities.copy(),
                          self.pbest_positions.copy(), self.pbest_fitness.copy(),
                          self.gbest_position.copy(), float(self.gbest_fitness), rng,
                          self.iteration, list(self.history))


def initialize_swarm(config: BpsoConfig) -> SwarmState:
    rng = np.random.default_rng(int(config.rng_seed))
    shape = (config.swarm_size, config.dimension)
    positions = (rng.random(shape) < 0.5).astype(np.uint8)
    return SwarmState(
        positions=positions,
        velocities=np.zeros(shape),
        pbest_positions=positions.copy(),
        pbest_fitness=np.full(config.swarm_size, -math.inf),
        gbest_position=positions[0].copy(),
        gbest_fitness=-math.inf,
        rng=rng,
    )


def transfer(v, kind: TransferKind):
    """Bit probability for velocity ``v``: sigmoid (S) or ``|tanh|`` (V)."""
    kind = TransferKind.parse(kind)
    v = np.asarray(v, dtype=float)
    if kind is TransferKind.S_SHAPED:
        return expit(v)[()]
    return np.abs(np.tanh(v))[()]


def update_velocity(v, x, pbest, gbest, w: float, c1: float, c2: float,
                    rng: np.random.Generator, v_max: float = 6.0):
    """Clamped velocity update; draws ``r1`` then ``r2`` shaped like ``x``."""
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    if not (v.shape == x.shape == np.shape(pbest)) or np.shape(gbest) != x.shape[-1:]:
        raise DomainError("velocity, position and best vectors must agree in length")
    r1 = rng.random(x.shape)
    r2 = rng.random(x.shape)
    new = w * v + c1 * r1 * (pbest - x) + c2 * r2 * (gbest - x)
    return np.clip(new, -v_max, v_max)


def update_position(x, v, kind: TransferKind, rng: np.random.Generator):
    """New bits: S-shaped sets 1 with probability T(v), V-shaped flips with it."""
    kind = TransferKind.parse(kind)
    x = np.asarray(x, dtype=np.uint8)
    u = rng.random(np.shape(x))
    hit = u < transfer(v, kind)
    if kind is TransferKind.S_SHAPED:
        return hit.astype(np.uint8)
    return np.where(hit, 1 - x, x).astype(np.uint8)


def inertia_at(i: int, config: BpsoConfig) -> float:
    """Inertia for 1-based iteration ``i``."""
    n = config.max_iterations
    if not 1 <= i <= n:
        raise DomainError(f"iteration {i} outside 1..{n}")
    if n == 1:
        return float(config.w_start)
    return config.w_start - (config.w_start - config.w_end) * (i - 1) / (n - 1)


def evaluate_swarm(positions: np.ndarray, fitness: Fitness, executor=None) -> np.ndarray:
    """Fitness of every row; ``executor`` may be any object with ``map``."""
    rows = [positions[k].copy() for k in range(positions.shape[0])]
    values = np.empty(len(rows))
    results = iter((executor.map if executor is not None else map)(fitness, rows))
    for k in range(len(rows)):
        try:
            value = float(next(results))
        except FitnessEvaluationError as exc:
            if exc.particle is None:
                exc.particle = k
            raise
        except Exception as exc:
            raise FitnessEvaluationError(f"fitness of particle {k} failed: {exc}",
                                         particle=k) from exc
        if math.isnan(value):
            raise FitnessEvaluationError(f"fitness of particle {k} is NaN", particle=k)
        values[k] = value
    return values


def step(state: SwarmState, fitness: Fitness, config: BpsoConfig, executor=None) -> SwarmState:
    """One iteration: evaluate, update bests, then move every particle.

    Returns a new state; ``state`` itself is never modified.
    """
    if state.iteration >= config.max_iterations:
        raise DomainError("swarm has already used its iteration budget")
    values = evaluate_swarm(state.positions, fitness, executor)
    new = state.copy()
    improved = values > new.pbest_fitness
    new.pbest_fitness[improved] = values[improved]
    new.pbest_positions[improved] = new.positions[improved]
    best = int(np.argmax(new.pbest_fitness))
    if new.pbest_fitness[best] > new.gbest_fitness:
        new.gbest_fitness = float(new.pbest_fitness[best])
        new.gbest_position = new.pbest_positions[best].copy()
    new.iteration += 1
    new.history.append(new.gbest_fitness)

    w = inertia_at(new.iteration, config)
    new.velocities = update_velocity(new.velocities, new.positions, new.pbest_positions,
                                     new.gbest_position, w, config.c1, config.c2,
                                     new.rng, config.v_max)
    new.positions = update_position(new.positions, new.velocities,
                                    config.transfer_kind, new.rng)
    return new


@dataclass
class RunResult:
    best_position: np.ndarray
    best_fitness: float
    history: list
    stop_reason: StopReason
    state: SwarmState


def _target_hit(state, config):
    return config.target_fitness is not None and state.gbest_fitness > config.target_fitness


def run(fitness: Fitness, config: BpsoConfig, state: SwarmState | None = None,
        callback: Callable[[SwarmState], None] | None = None, executor=None) -> RunResult:
    """Iterate until the target is exceeded or the budget is spent.

    ``state`` resumes a previous run; ``callback`` sees the state after every
    iteration (checkpointing, progress) and may raise to abort.
    """
    if state is None:
        state = initialize_swarm(config)
    while not _target_hit(state, config) and state.iteration < config.max_iterations:
        state = step(state, fitness, config, executor)
        if callback is not None:
            callback(state)
    reason = StopReason.TARGET_REACHED if _target_hit(state, config) else StopReason.BUDGET_EXHAUSTED
    return RunResult(state.gbest_position.copy(), state.gbest_fitness, list(state.history),
                     reason, state)


# --- persistence -----------------------------------------------------------

def _hex(values: Iterable[float]) -> list:
    return [float(v).hex() for v in values]


def _unhex(values) -> np.ndarray:
    return np.array([float.fromhex(v) for v in values], dtype=float)


def _bits(arr) -> str:
    return "".join("1" if b else "0" for b in np.asarray(arr).ravel())


def _unbits(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("ascii"), dtype=np.uint8) - ord("0")


def state_to_dict(state: SwarmState, config: BpsoConfig, extra: dict | None = None) -> dict:
    """JSON-ready record of a swarm; floats are stored as ``float.hex``."""
    bg = state.rng.bit_generator
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "iteration": state.iteration,
        "positions": [_bits(row) for row in state.positions],
        "velocities": [_hex(row) for row in state.velocities],
        "pbest_positions": [_bits(row) for row in state.pbest_positions],
        "pbest_fitness": _hex(state.pbest_fitness),
        "gbest_position": _bits(state.gbest_position),
        "gbest_fitness": float(state.gbest_fitness).hex(),
        "history": _hex(state.history),
        "rng": {"bit_generator": type(bg).__name__, "state": bg.state},
        "extra": extra or {},
    }


def state_from_dict(data: dict):
    """Inverse of :func:`state_to_dict`; returns ``(state, config, extra)``."""
    if data.get("format") != CHECKPOINT_FORMAT:
        raise FormatError("not a swarm checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {data.get('version')!r}")
    try:
        config = BpsoConfig.from_dict(data["config"])
        bg_cls = getattr(np.random, data["rng"]["bit_generator"])
        rng = np.random.Generator(bg_cls())
        rng.bit_generator.state = data["rng"]["state"]
        state = SwarmState(
            positions=np.stack([_unbits(r) for r in data["positions"]]),
            velocities=np.stack([_unhex(r) for r in data["velocities"]]),
            pbest_positions=np.stack([_unbits(r) for r in data["pbest_positions"]]),
            pbest_fitness=_unhex(data["pbest_fitness"]),
            gbest_position=_unbits(data["gbest_position"]),
            gbest_fitness=float.fromhex(data["gbest_fitness"]),
            rng=rng,
            iteration=int(data["iteration"]),
            history=[float(v) for v in _unhex(data["history"])],
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from exc
    return state, config, data.get("extra", {})


def save_checkpoint(path: str | PathLike, state: SwarmState, config: BpsoConfig,
                    extra: dict | None = None):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        json.dump(state_to_dict(state, config, extra), fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str | PathLike):
    try:
        with open(path, encoding="ascii") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint is not JSON: {exc.msg}", line=exc.lineno, path=str(path)) from exc
    return state_from_dict(data)


def write_convergence_csv(path: str | PathLike, history, kind: TransferKind, seed: int):
    kind = TransferKind.parse(kind)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for i, value in enumerate(history, start=1):
            writer.writerow([i, repr(float(value)), kind.value, int(seed)])


def read_convergence_csv(path: str | PathLike) -> list:
    """Rows as dicts with typed values."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise FormatError(f"unexpected convergence header {reader.fieldnames}", line=1, path=str(path))
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append({"iteration": int(row["iteration"]),
                             "gbest_fitness": float(row["gbest_fitness"]),
                             "transfer_kind": TransferKind.parse(row["transfer_kind"]),
                             "seed": int(row["seed"])})
            except (ValueError, DomainError) as exc:
                raise FormatError(str(exc), line=lineno, path=str(path)) from exc
    return rows
