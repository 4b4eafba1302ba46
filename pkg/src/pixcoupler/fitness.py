"""Fitness functions: the coupler (surrogate or external solver) and benchmarks.

Bit-vector layout for the coupler:

* ``MIRRORED_FOUR_AREAS``: ``rows*cols`` bits, row-major, one area pattern
  copied (mirrored about the strip) into all four pixel areas.
* ``INDEPENDENT_AREAS``: ``4*rows*cols`` bits, four row-major area blocks in
  the order up-side upper flank, up-side lower flank, down-side upper flank,
  down-side lower flank.  In every block row 0 is the row farthest from the
  strip.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
import os
import shlex
import subprocess
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import touchstone
from .capacitance import BareStripParams, bare_strip_params
from .coupled_line import (DB_FLOOR, CouplerGeometry, LineModeParams, PortTopology,
                           SParameterSet, two_port_sparams)
from .errors import (DomainError, ExternalSolverError, ExternalTimeoutError,
                     FitnessEvaluationError, FormatError)
from .pixels import PixelMask
from .surrogate import surrogate_mode_params

log = logging.getLogger(__name__)

PASSIVITY_TOL = 1e-9
GEOMETRY_KEYS = ("W", "L", "T", "D", "h", "d", "eps_r", "tan_d", "rows", "cols",
                 "alpha_deg", "offset_x", "offset_y", "f_target_hz")


def default_grid(start=2e9, stop=8e9, points=601) -> tuple:
    return tuple(float(f) for f in np.linspace(start, stop, points))


class SymmetryMode(enum.Enum):
    MIRRORED_FOUR_AREAS = "mirrored"
    INDEPENDENT_AREAS = "independent"


class Evaluator(enum.Enum):
    SURROGATE = "surrogate"
    EXTERNAL = "external"


class Objective(enum.Enum):
    TARGET = "target"
    BAND_AVERAGE = "band_average"


@dataclass(frozen=True)
class ExternalSolver:
    """How to call an outside field solver.

    ``command`` is split with shell rules and the candidate directory is
    appended as its only argument.
    """

    command: str
    timeout: float = 600.0
    workdir: str | None = None
    penalize_failures: bool = False


@dataclass(frozen=True)
class CouplerFitnessSpec:
    geometry: CouplerGeometry = field(default_factory=CouplerGeometry)
    target_frequency: float = 3.5e9
    frequency_grid: tuple = field(default_factory=default_grid)
    symmetry_mode: SymmetryMode = SymmetryMode.MIRRORED_FOUR_AREAS
    evaluator: Evaluator = Evaluator.SURROGATE
    rotation_deg: float = 0.0
    gap_override: float | None = None
    offset: tuple = (0.0, 0.0)
    objective: Objective = Objective.TARGET
    band: tuple | None = None
    reference_impedance: float = 50.0
    port_topology: PortTopology = PortTopology.DIAGONAL
    cell_size: float | None = None
    external: ExternalSolver | None = None

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("symmetry_mode", SymmetryMode(self.symmetry_mode))
        set_("evaluator", Evaluator(self.evaluator))
        set_("objective", Objective(self.objective))
        set_("port_topology", PortTopology(self.port_topology))
        set_("frequency_grid", tuple(float(f) for f in self.frequency_grid))
        set_("offset", tuple(float(v) for v in self.offset))
        grid = self.frequency_grid
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise DomainError("frequency_grid must be non-empty and strictly increasing")
        if not grid[0] <= self.target_frequency <= grid[-1]:
            raise DomainError("target_frequency lies outside the frequency grid")
        if self.gap_override is not None and not self.gap_override > 0:
            raise DomainError("gap_override must be positive")
        if not 0 <= self.rotation_deg < 360:
            raise DomainError("rotation_deg must lie in [0, 360)")
        if self.objective is Objective.BAND_AVERAGE:
            if self.band is None or not grid[0] <= self.band[0] < self.band[1] <= grid[-1]:
                raise DomainError("band_average needs a band (lo, hi) inside the grid")
        if self.evaluator is Evaluator.EXTERNAL and self.external is None:
            raise DomainError("external evaluator selected without an external command")

    @property
    def effective_geometry(self) -> CouplerGeometry:
        if self.gap_override is None:
            return self.geometry
        return self.geometry.replace(inter_line_gap=self.gap_override)

    @property
    def area_bits(self) -> int:
        return self.geometry.pixel_rows * self.geometry.pixel_cols

    @property
    def dimension(self) -> int:
        if self.symmetry_mode is SymmetryMode.MIRRORED_FOUR_AREAS:
            return self.area_bits
        return 4 * self.area_bits

    def replace(self, **changes) -> "CouplerFitnessSpec":
        return replace(self, **changes)


def decode(bits, spec: CouplerFitnessSpec):
    """Bit vector -> ``(mask_up, mask_down)``."""
    bits = np.asarray(bits)
    if bits.ndim != 1 or bits.size != spec.dimension:
        raise DomainError(f"expected {spec.dimension} bits, got shape {bits.shape}")
    R, C = spec.geometry.pixel_rows, spec.geometry.pixel_cols
    if spec.symmetry_mode is SymmetryMode.MIRRORED_FOUR_AREAS:
        mask = PixelMask.from_flat(bits, R, C)
        return mask, mask
    blocks = bits.reshape(4, R, C)
    up = PixelMask(np.vstack([blocks[0], blocks[1][::-1]]))
    down = PixelMask(np.vstack([blocks[2], blocks[3][::-1]]))
    return up, down


def encode(mask_up: PixelMask, mask_down: PixelMask, spec: CouplerFitnessSpec) -> np.ndarray:
    """Inverse of :func:`decode`."""
    R, C = spec.geometry.pixel_rows, spec.geometry.pixel_cols
    if spec.symmetry_mode is SymmetryMode.MIRRORED_FOUR_AREAS:
        if mask_up != mask_down or mask_up.bits.shape != (R, C):
            raise DomainError("mirrored mode needs two identical rows x cols masks")
        return mask_up.flat.copy()
    blocks = []
    for mask in (mask_up, mask_down):
        if mask.bits.shape != (2 * R, C):
            raise DomainError(f"independent mode needs {2 * R}x{C} side masks")
        blocks += [mask.bits[:R], mask.bits[R:][::-1]]
    return np.concatenate([b.ravel() for b in blocks]).astype(np.uint8)


@dataclass
class CouplerEvaluation:
    fitness_db: float
    sparams: SParameterSet
    modes: LineModeParams
    mask_up: PixelMask
    mask_down: PixelMask
    evaluated_frequency: float
    flagged: bool = False


def check_network(sp: SParameterSet, tol: float = PASSIVITY_TOL):
    """Raise if reciprocity or lossless power balance fails off the flagged points."""
    if not np.array_equal(sp.s21, sp.s12):
        raise FitnessEvaluationError("network is not reciprocal (s21 != s12)")
    ok = ~sp.flags
    err = np.abs(np.abs(sp.s11[ok]) ** 2 + np.abs(sp.s21[ok]) ** 2 - 1.0)
    if err.size and err.max() > tol:
        raise FitnessEvaluationError(f"power balance off by {err.max():.2e}")


def _target_value(sp: SParameterSet, f: float):
    """(dB, frequency actually used, flagged) at ``f``."""
    freqs = sp.frequencies
    db = sp.s21_db
    hi = int(np.searchsorted(freqs, f))
    exact = hi < freqs.size and freqs[hi] == f
    bracket = [hi] if exact else [max(hi - 1, 0), min(hi, freqs.size - 1)]
    if not sp.flags[bracket].any():
        if exact:
            return float(db[hi]), f, False
        return float(np.interp(f, freqs, db)), f, False
    good = np.flatnonzero(~sp.flags)
    if good.size == 0:
        raise FitnessEvaluationError("every grid point is singular")
    k = good[np.argmin(np.abs(freqs[good] - f))]
    return float(db[k]), float(freqs[k]), True


class CouplerFitness:
    """Callable fitness (``bits -> dB``) for one :class:`CouplerFitnessSpec`.

    Keeps the full evaluation of recent candidates so reporting code can pick
    up the S-parameters without recomputing them.
    """

    cache_size = 4096

    def __init__(self, spec: CouplerFitnessSpec, baseline: BareStripParams | None = None):
        self.spec = spec
        self.geometry = spec.effective_geometry
        self._baseline = baseline
        self._grid = np.asarray(spec.frequency_grid)
        self._cache: OrderedDict = OrderedDict()

    @property
    def baseline(self) -> BareStripParams:
        if self._baseline is None:
            self._baseline = bare_strip_params(self.geometry, self.spec.cell_size)
        return self._baseline

    def evaluate(self, bits) -> CouplerEvaluation:
        bits = np.asarray(bits, dtype=np.uint8)
        key = bits.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        mask_up, mask_down = decode(bits, self.spec)
        result = self.evaluate_masks(mask_up, mask_down)
        self._cache[key] = result
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return result

    def evaluate_masks(self, mask_up: PixelMask, mask_down: PixelMask) -> CouplerEvaluation:
        spec = self.spec
        modes = surrogate_mode_params(mask_up, mask_down, self.geometry, spec.rotation_deg,
                                      spec.offset, baseline=self.baseline)
        sp = two_port_sparams(modes, self.geometry.coupler_length, self._grid,
                              spec.reference_impedance, spec.port_topology)
        check_network(sp)
        if spec.objective is Objective.BAND_AVERAGE:
            lo, hi = spec.band
            sel = (sp.frequencies >= lo) & (sp.frequencies <= hi) & ~sp.flags
            value, used, flagged = float(sp.s21_db[sel].mean()), spec.target_frequency, False
        else:
            value, used, flagged = _target_value(sp, spec.target_frequency)
        if value > PASSIVITY_TOL:
            raise FitnessEvaluationError(f"passive coupler returned {value:.3e} dB > 0")
        return CouplerEvaluation(min(value, 0.0), sp, modes, mask_up, mask_down, used, flagged)

    def __call__(self, bits) -> float:
        if self.spec.evaluator is Evaluator.EXTERNAL:
            return external_evaluate(bits, self.spec)
        return self.evaluate(bits).fitness_db


@lru_cache(maxsize=32)
def _fitness_for(spec: CouplerFitnessSpec) -> CouplerFitness:
    return CouplerFitness(spec)


def coupler_fitness(bits, spec: CouplerFitnessSpec) -> float:
    """|s21| in dB at the target frequency under the surrogate."""
    return _fitness_for(spec).evaluate(bits).fitness_db


# --- external solver -------------------------------------------------------

def geometry_txt(spec: CouplerFitnessSpec) -> str:
    g = spec.effective_geometry
    values = {"W": g.strip_width, "L": g.coupler_length, "T": g.strip_thickness,
              "D": g.pixel_pitch, "h": g.substrate_height, "d": g.inter_line_gap,
              "eps_r": g.eps_r, "tan_d": g.loss_tangent, "rows": g.pixel_rows,
              "cols": g.pixel_cols, "alpha_deg": spec.rotation_deg,
              "offset_x": spec.offset[0], "offset_y": spec.offset[1],
              "f_target_hz": spec.target_frequency}
    lines = []
    for key in GEOMETRY_KEYS:
        v = values[key]
        lines.append(f"{key} {v}" if isinstance(v, int) else f"{key} {float(v)!r}")
    return "\n".join(lines) + "\n"


def parse_geometry_txt(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in GEOMETRY_KEYS:
            raise FormatError(f"bad geometry line {line!r}", line=lineno)
        key, raw = parts
        out[key] = int(raw) if key in ("rows", "cols") else float(raw)
    missing = set(GEOMETRY_KEYS) - set(out)
    if missing:
        raise FormatError(f"geometry file lacks keys {sorted(missing)}")
    return out


def write_candidate(directory: str, bits, spec: CouplerFitnessSpec):
    mask_up, mask_down = decode(bits, spec)
    mask_up.write_pbm(os.path.join(directory, "mask_up.pbm"))
    mask_down.write_pbm(os.path.join(directory, "mask_down.pbm"))
    with open(os.path.join(directory, "geometry.txt"), "w", encoding="ascii", newline="\n") as fh:
        fh.write(geometry_txt(spec))


def external_evaluate(bits, spec: CouplerFitnessSpec, workdir: str | None = None) -> float:
    """Hand one candidate to the external solver and read back |s21| (dB).

    Each call gets its own candidate directory (``workdir`` or a fresh one
    under ``spec.external.workdir``) holding ``mask_up.pbm``,
    ``mask_down.pbm`` and ``geometry.txt``; the solver must leave
    ``result.s2p`` there.
    """
    ext = spec.external
    if ext is None:
        raise DomainError("no external solver configured")
    if workdir is None:
        root = ext.workdir or tempfile.gettempdir()
        os.makedirs(root, exist_ok=True)
        workdir = tempfile.mkdtemp(prefix="candidate_", dir=root)
    else:
        os.makedirs(workdir, exist_ok=True)
    try:
        write_candidate(workdir, bits, spec)
        argv = shlex.split(ext.command) + [workdir]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=ext.timeout)
        except subprocess.TimeoutExpired:
            raise ExternalTimeoutError(f"external solver timed out after {ext.timeout} s "
                                       f"(candidate {workdir})", workdir=workdir) from None
        except OSError as exc:
            raise ExternalSolverError(f"cannot start external solver: {exc} "
                                      f"(candidate {workdir})", workdir=workdir) from exc
        if proc.returncode != 0:
            tail = (proc.stderr or "").strip().splitlines()[-1:] or [""]
            raise ExternalSolverError(f"external solver exited with code {proc.returncode} "
                                      f"(candidate {workdir}) {tail[0]}".rstrip(), workdir=workdir)
        result = os.path.join(workdir, "result.s2p")
        try:
            sp = touchstone.read(result)
        except (OSError, FormatError) as exc:
            raise ExternalSolverError(f"unreadable result.s2p: {exc} (candidate {workdir})",
                                      workdir=workdir) from exc
        if not sp.frequencies[0] <= spec.target_frequency <= sp.frequencies[-1]:
            raise ExternalSolverError(f"result.s2p does not span the target frequency "
                                      f"(candidate {workdir})", workdir=workdir)
        value = sp.s21_db_at(spec.target_frequency)
        if math.isnan(value):
            raise ExternalSolverError(f"result.s2p gives NaN at target (candidate {workdir})",
                                      workdir=workdir)
        return value
    except ExternalSolverError:
        if ext.penalize_failures:
            log.warning("external evaluation failed in %s; penalised", workdir)
            return DB_FLOOR
        raise


# --- benchmark fitnesses ---------------------------------------------------

def onemax(bits) -> float:
    return float(np.count_nonzero(bits))


def knapsack(bits, weights, values, capacity) -> float:
    """Total value if feasible, else the (negative) overweight ``capacity - weight``."""
    bits = np.asarray(bits)
    weights = np.asarray(weights, dtype=float)
    values = np.asarray(values, dtype=float)
    if not (bits.shape == weights.shape == values.shape):
        raise DomainError("bits, weights and values must have equal length")
    w = float(weights @ bits)
    if w <= capacity:
        return float(values @ bits)
    return float(capacity - w)


def knapsack_optimum(weights, values, capacity) -> float:
    """Best feasible value by enumeration (small instances only)."""
    n = len(weights)
    if n > 22:
        raise DomainError("enumeration limited to 22 items")
    table = np.array(list(itertools.product((0, 1), repeat=n)), dtype=float)
    w = table @ np.asarray(weights, dtype=float)
    v = table @ np.asarray(values, dtype=float)
    return float(v[w <= capacity].max())


def random_knapsack(rng: np.random.Generator, n: int = 12):
    """Integer instance: weights 1..20, values 1..30, capacity half the total weight."""
    weights = rng.integers(1, 21, n).astype(float)
    values = rng.integers(1, 31, n).astype(float)
    return weights, values, float(np.floor(weights.sum() / 2))
