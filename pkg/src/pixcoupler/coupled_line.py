"""Even/odd-mode theory of a symmetric broadside coupled-line pair.

The pair is described by per-unit-length quantities: the inductance of each
line ``L``, the capacitance of each strip to its own ground ``C`` and the
strip-to-strip capacitance ``C_ud``.  Mutual inductance is neglected, so both
modes share ``L`` and differ only in capacitance::

    C_e = C             Z0e = sqrt(L / C_e)     beta_e = w sqrt(L C_e)
    C_o = C + 2 C_ud    Z0o = sqrt(L / C_o)     beta_o = w sqrt(L C_o)

All functions are pure and accept numpy arrays where that makes sense.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InfiniteLengthError

__all__ = [
    "CouplerGeometry",
    "LineModeParams",
    "ModePropagation",
    "PortTopology",
    "SParameterSet",
    "coupling_coefficient",
    "line_mode_params",
    "max_coupling_length",
    "mode_capacitances",
    "mode_impedances",
    "mode_propagation",
    "propagation_constants",
    "two_port_sparams",
]

MM = 1e-3


@dataclass(frozen=True)
class CouplerGeometry:
    """Physical dimensions (SI) and material stack of the coupler.

    The defaults are the fabricated design: 20 mm strips, 17 mm long, 1 mm
    thick, 0.5 mm pixel pitch, 3.2 mm Rogers 4003C boards (eps_r 3.55,
    tan_d 0.0025) held 5 mm apart, with 14 x 30 pixel areas.

    ``inter_line_gap`` is the face-to-face distance between the two strips;
    ``loss_tangent`` is carried for the record but the network is lossless.
    """

    strip_width: float = 20 * MM
    coupler_length: float = 17 * MM
    strip_thickness: float = 1 * MM
    pixel_pitch: float = 0.5 * MM
    substrate_height: float = 3.2 * MM
    inter_line_gap: float = 5 * MM
    eps_r: float = 3.55
    loss_tangent: float = 0.0025
    pixel_rows: int = 14
    pixel_cols: int = 30

    def __post_init__(self):
        for name in ("strip_width", "coupler_length", "strip_thickness",
                     "pixel_pitch", "substrate_height", "inter_line_gap"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be a positive length, got {value!r}")
        if not self.eps_r >= 1:
            raise DomainError(f"eps_r must be >= 1, got {self.eps_r!r}")
        if not 0 <= self.loss_tangent < 1:
            raise DomainError(f"loss_tangent must lie in [0, 1), got {self.loss_tangent!r}")
        for name in ("pixel_rows", "pixel_cols"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DomainError(f"{name} must be a positive integer, got {value!r}")

    @property
    def strip_area(self) -> float:
        """Plan-view area of one bare strip (W x Lc)."""
        return self.strip_width * self.coupler_length

    def replace(self, **changes) -> "CouplerGeometry":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class LineModeParams:
    """Per-unit-length line constants and the derived mode quantities."""

    inductance_pul: float
    self_capacitance_pul: float
    mutual_capacitance_pul: float
    even_capacitance: float
    odd_capacitance: float
    even_impedance: float
    odd_impedance: float

    @classmethod
    def from_pul(cls, L: float, C: float, C_ud: float) -> "LineModeParams":
        C_e, C_o = mode_capacitances(C, C_ud)
        Z0e, Z0o = mode_impedances(L, C_e, C_o)
        return cls(float(L), float(C), float(C_ud), float(C_e), float(C_o),
                   float(Z0e), float(Z0o))

    # short aliases used throughout the numerical code
    @property
    def L(self) -> float:
        return self.inductance_pul

    @property
    def C(self) -> float:
        return self.self_capacitance_pul

    @property
    def C_ud(self) -> float:
        return self.mutual_capacitance_pul


line_mode_params = LineModeParams.from_pul


@dataclass(frozen=True)
class ModePropagation:
    frequency: float
    angular_frequency: float
    beta_even: float
    beta_odd: float
    length: float
    electrical_angle: float


def _require_positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite")
    return arr


def mode_capacitances(C, C_ud):
    """Return ``(C_e, C_o) = (C, C + 2 C_ud)``."""
    C = _require_positive("C", C)
    C_ud = np.asarray(C_ud, dtype=float)
    if not np.all(np.isfinite(C_ud)) or np.any(C_ud < 0):
        raise DomainError("C_ud must be non-negative and finite")
    C_e = C * 1.0
    C_o = C + 2.0 * C_ud
    return C_e[()], C_o[()]


def mode_impedances(L, C_e, C_o):
    """Return ``(Z0e, Z0o)`` with ``Z0m = sqrt(L / C_m)``."""
    L = _require_positive("L", L)
    C_e = _require_positive("C_e", C_e)
    C_o = _require_positive("C_o", C_o)
    if np.any(C_o < C_e):
        raise DomainError("C_o must not be smaller than C_e")
    return np.sqrt(L / C_e)[()], np.sqrt(L / C_o)[()]


def propagation_constants(L, C, C_ud, f):
    """Even and odd phase constants (rad/m) at frequency ``f`` (Hz)."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)) or np.any(f <= 0):
        raise DomainError("frequency must be positive")
    L = _require_positive("L", L)
    C_e, C_o = mode_capacitances(C, C_ud)
    omega = 2.0 * np.pi * f
    beta_e = omega * np.sqrt(L * C_e)
    beta_o = omega * np.sqrt(L * C_o)
    return beta_e[()], beta_o[()]


def mode_propagation(modes: LineModeParams, f: float, length: float) -> ModePropagation:
    length = float(_require_positive("length", length))
    beta_e, beta_o = propagation_constants(modes.L, modes.C, modes.C_ud, f)
    theta = abs(beta_o - beta_e) * length / 2.0
    return ModePropagation(float(f), 2.0 * math.pi * float(f), float(beta_e),
                           float(beta_o), length, float(theta))


def coupling_coefficient(beta_e, beta_o, length):
    """Forward coupling ``|sin(|beta_o - beta_e| l / 2)|`` in [0, 1]."""
    beta_e = _require_positive("beta_e", beta_e)
    beta_o = _require_positive("beta_o", beta_o)
    length = _require_positive("length", length)
    return np.abs(np.sin(np.abs(beta_o - beta_e) * length / 2.0))[()]


def max_coupling_length(beta_e, beta_o):
    """Shortest length giving full coupling, ``pi / |beta_o - beta_e|``."""
    beta_e = _require_positive("beta_e", beta_e)
    beta_o = _require_positive("beta_o", beta_o)
    diff = np.abs(beta_o - beta_e)
    if np.any(diff == 0):
        raise InfiniteLengthError("beta_e == beta_o: coupling never reaches 1 at finite length")
    return (np.pi / diff)[()]


class PortTopology(enum.Enum):
    """Which two of the four coupled-line ports are driven.

    Ports are numbered 1 = up-line left, 2 = up-line right, 3 = down-line
    left, 4 = down-line right.  DIAGONAL drives 1 and 4 (2 and 3 open),
    SAME_END drives 1 and 3 (2 and 4 open).
    """

    DIAGONAL = "diagonal"
    SAME_END = "same_end"


@dataclass
class SParameterSet:
    """Two-port scattering data on a frequency grid.

    ``flags`` marks points where a mode line is (near) a multiple of a half
    wavelength.  The open-port impedance matrix is singular there, so those
    values come from the wave-domain fallback instead of the Z route.
    """

    frequencies: np.ndarray
    s11: np.ndarray
    s21: np.ndarray
    s12: np.ndarray
    s22: np.ndarray
    reference_impedance: float = 50.0
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        n = self.frequencies.shape[0]
        for name in ("s11", "s21", "s12", "s22"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != (n,):
                raise DomainError(f"{name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)
        if self.flags is None:
            self.flags = np.zeros(n, dtype=bool)
        else:
            self.flags = np.asarray(self.flags, dtype=bool)
        if n and np.any(np.diff(self.frequencies) <= 0):
            raise DomainError("frequencies must be strictly increasing")

    def __len__(self):
        return self.frequencies.shape[0]

    @property
    def s21_db(self) -> np.ndarray:
        return _db(self.s21)

    @property
    def s11_db(self) -> np.ndarray:
        return _db(self.s11)

    def peak_s21(self):
        """``(frequency, |s21| dB)`` of the largest transmission on the grid."""
        i = int(np.argmax(np.abs(self.s21)))
        return float(self.frequencies[i]), float(self.s21_db[i])

    def s21_db_at(self, f: float) -> float:
        """|s21| in dB linearly interpolated in dB at ``f``."""
        return float(np.interp(f, self.frequencies, self.s21_db))

    def matrix(self) -> np.ndarray:
        """``(n, 2, 2)`` complex array."""
        return np.stack([np.stack([self.s11, self.s12], -1),
                         np.stack([self.s21, self.s22], -1)], -2)


DB_FLOOR = -200.0


def _db(s):
    mag = np.abs(s)
    with np.errstate(divide="ignore"):
        out = 20.0 * np.log10(mag)
    return np.maximum(out, DB_FLOOR)


# Z route is trusted while the normalised determinant stays above this.
_SINGULAR_TOL = 1e-7


def _line_s(zn, theta):
    """S of a uniform line (normalised impedance ``zn``) at reference Z0."""
    s, c = np.sin(theta), np.cos(theta)
    den = 2.0 * zn * c + 1j * (zn * zn + 1.0) * s
    return 1j * (zn * zn - 1.0) * s / den, 2.0 * zn / den


def _wave_route(zne, zno, th_e, th_o, topology):
    """Open-terminated four-port reduced in the wave domain (never singular)."""
    s11e, s21e = _line_s(zne, th_e)
    s11o, s21o = _line_s(zno, th_o)
    same_self = (s11e + s11o) / 2
    cross_self = (s11e - s11o) / 2
    same_thru = (s21e + s21o) / 2
    cross_thru = (s21e - s21o) / 2
    n = th_e.shape[0]
    S = np.empty((n, 4, 4), dtype=complex)
    # ports 1..4 = up-left, up-right, down-left, down-right
    S[:, 0, 0] = S[:, 1, 1] = S[:, 2, 2] = S[:, 3, 3] = same_self
    S[:, 0, 1] = S[:, 1, 0] = S[:, 2, 3] = S[:, 3, 2] = same_thru
    S[:, 0, 2] = S[:, 2, 0] = S[:, 1, 3] = S[:, 3, 1] = cross_self
    S[:, 0, 3] = S[:, 3, 0] = S[:, 1, 2] = S[:, 2, 1] = cross_thru
    if topology is PortTopology.DIAGONAL:
        drv, opn = [0, 3], [1, 2]
    else:
        drv, opn = [0, 2], [1, 3]
    Sdd = S[:, drv][:, :, drv]
    Sdo = S[:, drv][:, :, opn]
    Sod = S[:, opn][:, :, drv]
    Soo = S[:, opn][:, :, opn]
    # open circuit: reflected wave returns with gamma = +1
    red = Sdd + Sdo @ np.linalg.solve(np.eye(2) - Soo, Sod)
    return red[:, 0, 0], red[:, 1, 0], red[:, 0, 1], red[:, 1, 1]


def two_port_sparams(modes: LineModeParams, lc: float, freq_grid,
                     z0: float = 50.0,
                     port_topology: PortTopology = PortTopology.DIAGONAL) -> SParameterSet:
    """Two-port response of the coupled section with two ports left open.

    The four-port open-circuit impedance matrix is assembled by even/odd
    superposition of single-line matrices ``-j Z0m cot(theta_m)`` and
    ``-j Z0m csc(theta_m)``; the driven-port 2x2 block is then converted to S.
    Arithmetic is carried out after multiplying through by
    ``sin(theta_e) sin(theta_o)`` so no cot/csc is ever formed.
    """
    lc = float(_require_positive("lc", lc))
    z0 = float(_require_positive("z0", z0))
    port_topology = PortTopology(port_topology)
    f = np.atleast_1d(np.asarray(freq_grid, dtype=float))
    if f.ndim != 1 or f.size == 0:
        raise DomainError("freq_grid must be a non-empty 1-D sequence")
    if np.any(np.diff(f) <= 0):
        raise DomainError("freq_grid must be strictly increasing")
    beta_e, beta_o = propagation_constants(modes.L, modes.C, modes.C_ud, f)
    th_e = np.atleast_1d(beta_e) * lc
    th_o = np.atleast_1d(beta_o) * lc
    zne = modes.even_impedance / z0
    zno = modes.odd_impedance / z0

    se, ce = np.sin(th_e), np.cos(th_e)
    so, co = np.sin(th_o), np.cos(th_o)
    sc = se * so
    # normalised driven-port reactances times sin(th_e) sin(th_o):
    # self term (Z11e + Z11o)/2, transfer term (Z12e -/+ Z12o)/2
    a = (zne * ce * so + zno * co * se) / 2.0
    if port_topology is PortTopology.DIAGONAL:
        b = (zne * so - zno * se) / 2.0
    else:
        b = (zne * ce * so - zno * co * se) / 2.0
    # Z = -j X, S = (Z - 1)(Z + 1)^-1 for the symmetric block [[a, b], [b, a]]
    den = (sc - 1j * a) ** 2 + b * b
    s11 = (b * b - a * a - sc * sc) / np.where(den == 0, 1.0, den)
    s21 = -2j * b * sc / np.where(den == 0, 1.0, den)

    scale = a * a + b * b + sc * sc
    flags = np.abs(den) <= _SINGULAR_TOL * np.where(scale > 0, scale, 1.0)
    if np.any(flags):
        w11, w21, w12, w22 = _wave_route(zne, zno, th_e[flags], th_o[flags], port_topology)
        s11 = s11.copy()
        s21 = s21.copy()
        s11[flags] = w11
        s21[flags] = w21
    return SParameterSet(f, s11, s21, s21.copy(), s11.copy(), z0, flags)
