"""Quasi-static per-unit-length extraction on a uniform 2-D grid.

Potentials live on grid nodes, relative permittivity on cells.  The
discretisation is the standard five-point finite-volume stencil whose edge
weight is the mean permittivity of the (one or two) cells touching that edge;
outer boundary nodes that are not conductors get the natural zero-flux
(Neumann) condition for free.

Capacitances come from stored energy, ``W = 1/2 eps0 sum_edges w (dphi)^2``,
which is the exact quadratic form of the discrete operator, so energy and
charge give the same number on the discrete problem.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.constants import epsilon_0, speed_of_light

from .coupled_line import CouplerGeometry
from .errors import DomainError, ExtractionError, SolverError

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
MIN_GRID = 16


class Conductor(enum.IntEnum):
    NONE = 0
    GROUND_TOP = 1
    GROUND_BOTTOM = 2
    STRIP_UP = 3
    STRIP_DOWN = 4


GROUNDS = (Conductor.GROUND_TOP, Conductor.GROUND_BOTTOM)
SIDES = ("top", "bottom", "left", "right")


@dataclass
class CrossSection2D:
    """Discretised cross-section.

    ``eps_r`` has shape ``(ny, nx)`` (cells, row 0 at the bottom) and
    ``labels`` has shape ``(ny + 1, nx + 1)`` (nodes).  ``boundary`` declares
    each outer side as ``"ground"`` or ``"neumann"``.  ``symmetric`` promises
    up/down mirror symmetry of the stack, which extraction then verifies.
    """

    eps_r: np.ndarray
    labels: np.ndarray
    cell_size: float
    boundary: dict = field(default_factory=lambda: {s: "neumann" for s in SIDES})
    symmetric: bool = False

    def __post_init__(self):
        self.eps_r = np.asarray(self.eps_r, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        ny, nx = self.eps_r.shape
        if self.labels.shape != (ny + 1, nx + 1):
            raise DomainError(f"labels shape {self.labels.shape} does not match cells {(ny, nx)}")
        if nx < MIN_GRID or ny < MIN_GRID:
            raise DomainError(f"grid must have at least {MIN_GRID} cells per direction, got {nx}x{ny}")
        if not self.cell_size > 0:
            raise DomainError("cell_size must be positive")
        if not np.all(np.isfinite(self.eps_r)) or np.any(self.eps_r < 1):
            raise DomainError("relative permittivity must be >= 1 in every cell")
        unknown = set(np.unique(self.labels)) - {c.value for c in Conductor}
        if unknown:
            raise DomainError(f"unknown conductor labels {sorted(unknown)}")
        for label in self.conductors:
            _, count = ndimage.label(self.labels == label)
            if count != 1:
                raise DomainError(f"conductor {label.name} is split into {count} regions")
        edges = {"bottom": self.labels[0, :], "top": self.labels[-1, :],
                 "left": self.labels[:, 0], "right": self.labels[:, -1]}
        for side in SIDES:
            kind = self.boundary.get(side, "neumann")
            if kind not in ("ground", "neumann"):
                raise DomainError(f"boundary {side!r} must be 'ground' or 'neumann'")
            if kind == "ground" and not np.all(np.isin(edges[side], [g.value for g in GROUNDS])):
                raise DomainError(f"boundary {side!r} declared ground but not fully grounded")

    @property
    def nx(self) -> int:
        return self.eps_r.shape[1]

    @property
    def ny(self) -> int:
        return self.eps_r.shape[0]

    @property
    def conductors(self) -> list:
        present = np.unique(self.labels)
        return [Conductor(v) for v in present if v != Conductor.NONE]

    def with_eps(self, eps_r) -> "CrossSection2D":
        eps = np.broadcast_to(np.asarray(eps_r, dtype=float), self.eps_r.shape).copy()
        return CrossSection2D(eps, self.labels.copy(), self.cell_size,
                              dict(self.boundary), self.symmetric)

    def air_filled(self) -> "CrossSection2D":
        return self.with_eps(1.0)

    def describe(self) -> str:
        """Plain-text summary of the grid (one ``key value`` per line)."""
        lines = [f"nx {self.nx}", f"ny {self.ny}", f"cell_size {self.cell_size!r}"]
        lines += [f"boundary_{s} {self.boundary.get(s, 'neumann')}" for s in SIDES]
        for c in self.conductors:
            lines.append(f"nodes_{c.name.lower()} {int(np.count_nonzero(self.labels == c))}")
        lines.append(f"eps_r_max {float(self.eps_r.max())!r}")
        return "\n".join(lines) + "\n"


def default_cell_size(geometry: CouplerGeometry) -> float:
    """0.2 mm, or a fifteenth of the thinner of board and gap if that is finer."""
    return min(0.2e-3, min(geometry.substrate_height, geometry.inter_line_gap) / 15.0)


def broadside_section(geometry: CouplerGeometry, cell_size: float | None = None,
                      lateral_margin: float | None = None) -> CrossSection2D:
    """Grid of the stacked pair: ground / board / strip, air gap, strip / board / ground.

    Each strip (thickness T, width W) sits on the inner face of its board and
    ``inter_line_gap`` is the air gap between the strip faces.  Boards and
    ground planes fill the full width of the box; the lateral walls are
    Neumann, ``lateral_margin`` from the strip edges (default twice the
    stack height).  Dimensions are snapped to whole cells.
    """
    g = geometry
    if cell_size is None:
        cell_size = default_cell_size(g)
    if not cell_size > 0:
        raise DomainError("cell_size must be positive")

    def cells(length, minimum=1):
        return max(minimum, int(round(length / cell_size)))

    nh = cells(g.substrate_height)
    nt = int(round(g.strip_thickness / cell_size))
    nd = cells(g.inter_line_gap)
    nw = cells(g.strip_width)
    stack = 2 * nh + 2 * nt + nd
    if lateral_margin is None:
        lateral_margin = 2.0 * stack * cell_size
    nm = cells(lateral_margin)
    nx = nw + 2 * nm
    ny = stack

    eps = np.ones((ny, nx))
    eps[:nh, :] = g.eps_r
    eps[ny - nh:, :] = g.eps_r
    labels = np.zeros((ny + 1, nx + 1), dtype=np.int8)
    labels[0, :] = Conductor.GROUND_BOTTOM
    labels[ny, :] = Conductor.GROUND_TOP
    labels[nh:nh + nt + 1, nm:nm + nw + 1] = Conductor.STRIP_DOWN
    top_face = nh + nt + nd
    labels[top_face:top_face + nt + 1, nm:nm + nw + 1] = Conductor.STRIP_UP
    boundary = {"top": "ground", "bottom": "ground", "left": "neumann", "right": "neumann"}
    return CrossSection2D(eps, labels, float(cell_size), boundary, symmetric=True)


def _edge_weights(eps):
    """Horizontal and vertical edge weights for node grid ``(ny+1, nx+1)``."""
    ny, nx = eps.shape
    pad = np.zeros((ny + 2, nx))
    pad[1:-1] = eps
    wh = 0.5 * (pad[:-1] + pad[1:])  # (ny+1, nx): edge (j,i)-(j,i+1)
    pad = np.zeros((ny, nx + 2))
    pad[:, 1:-1] = eps
    wv = 0.5 * (pad[:, :-1] + pad[:, 1:])  # (ny, nx+1): edge (j,i)-(j+1,i)
    return wh, wv


def _stiffness(section):
    ny, nx = section.ny, section.nx
    wh, wv = _edge_weights(section.eps_r)
    idx = np.arange((ny + 1) * (nx + 1)).reshape(ny + 1, nx + 1)
    a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    w = np.concatenate([wh.ravel(), wv.ravel()])
    n = idx.size
    off = sp.coo_matrix((-w, (a, b)), shape=(n, n))
    diag = np.bincount(a, w, n) + np.bincount(b, w, n)
    return (off + off.T + sp.diags(diag)).tocsr()


class LaplaceProblem:
    """Assembled operator for one section; reusable across excitations.

    ``method="direct"`` factorises the free-node block once (sparse LU) and
    back-substitutes per excitation.  ``method="sor"`` runs red-black
    successive over-relaxation on the stencil instead.
    """

    def __init__(self, section: CrossSection2D, method: str = "direct",
                 tol: float = RESIDUAL_TOL, max_iter: int | None = None,
                 omega: float | None = None):
        if method not in ("direct", "sor"):
            raise DomainError(f"unknown solver method {method!r}")
        if not section.conductors:
            raise DomainError("section has no fixed-potential nodes")
        self.section = section
        self.method = method
        self.tol = tol
        self.max_iter = max_iter or 200 * max(section.nx, section.ny)
        self.omega = omega
        self.K = _stiffness(section)
        labels = section.labels.ravel()
        self.fixed = labels != Conductor.NONE
        self.free = ~self.fixed
        self._K_ff = self.K[self.free][:, self.free].tocsc()
        self._K_fb = self.K[self.free][:, self.fixed].tocsr()
        self._lu = None
        self.last_residual = np.nan
        self.last_iterations = 0

    def boundary_values(self, excitation: Mapping) -> np.ndarray:
        labels = self.section.labels.ravel()
        phi = np.zeros(labels.shape)
        for cond, volts in excitation.items():
            cond = Conductor(cond)
            mask = labels == cond
            if not mask.any():
                raise DomainError(f"excitation names absent conductor {cond.name}")
            phi[mask] = float(volts)
        return phi

    def solve(self, excitation: Mapping) -> np.ndarray:
        """Node potentials, shape ``(ny + 1, nx + 1)``."""
        phi = self.boundary_values(excitation)
        rhs = -(self._K_fb @ phi[self.fixed])
        if not self.free.any():
            return phi.reshape(self.section.labels.shape)
        if self.method == "direct":
            if self._lu is None:
                self._lu = spla.splu(self._K_ff)
            x = self._lu.solve(rhs)
            self.last_iterations = 1
        else:
            x = self._sor(phi)
        res = self._K_ff @ x - rhs
        scale = np.linalg.norm(rhs)
        self.last_residual = float(np.linalg.norm(res) / scale) if scale > 0 else float(np.linalg.norm(res))
        if not self.last_residual <= self.tol:
            raise SolverError(f"Laplace solve residual {self.last_residual:.3e} above {self.tol:.1e}",
                              residual=self.last_residual)
        phi[self.free] = x
        return phi.reshape(self.section.labels.shape)

    def _sor(self, phi_flat):
        sec = self.section
        ny, nx = sec.ny, sec.nx
        wh, wv = _edge_weights(sec.eps_r)
        shape = (ny + 1, nx + 1)
        wE = np.zeros(shape); wW = np.zeros(shape); wN = np.zeros(shape); wS = np.zeros(shape)
        wE[:, :-1] = wh; wW[:, 1:] = wh; wN[:-1, :] = wv; wS[1:, :] = wv
        diag = wE + wW + wN + wS
        phi = phi_flat.reshape(shape).copy()
        free = self.free.reshape(shape)
        jj, ii = np.indices(shape)
        colours = [free & ((jj + ii) % 2 == k) for k in (0, 1)]
        omega = self.omega or 2.0 / (1.0 + np.pi / max(nx, ny))
        rhs = -(self._K_fb @ phi_flat[self.fixed])
        scale = np.linalg.norm(rhs) or 1.0
        free_flat = self.free
        p = np.zeros((ny + 3, nx + 3))
        for it in range(1, self.max_iter + 1):
            for mask in colours:
                p[1:-1, 1:-1] = phi
                nb = (wE * p[1:-1, 2:] + wW * p[1:-1, :-2]
                      + wN * p[2:, 1:-1] + wS * p[:-2, 1:-1])
                phi[mask] += omega * (nb[mask] / diag[mask] - phi[mask])
            if it % 20 == 0:
                x = phi.ravel()[free_flat]
                r = np.linalg.norm(self._K_ff @ x - rhs) / scale
                if r <= self.tol:
                    self.last_iterations = it
                    return x
        x = phi.ravel()[free_flat]
        r = float(np.linalg.norm(self._K_ff @ x - rhs) / scale)
        self.last_iterations = self.max_iter
        raise SolverError(f"SOR did not converge in {self.max_iter} iterations "
                          f"(residual {r:.3e})", residual=r)

    def energy(self, phi) -> float:
        """Stored energy per unit length (J/m) of a node potential field."""
        x = np.asarray(phi, dtype=float).ravel()
        return 0.5 * epsilon_0 * float(x @ (self.K @ x))


def solve_laplace(section: CrossSection2D, excitation: Mapping, method: str = "direct") -> np.ndarray:
    """Solve ``div(eps grad phi) = 0`` with conductors held at ``excitation``.

    Conductors missing from ``excitation`` are held at 0 V.
    """
    return LaplaceProblem(section, method).solve(excitation)


@dataclass(frozen=True)
class CapacitanceMatrix2:
    """Partial capacitances (F/m): each strip to ground and strip to strip."""

    c11: float
    c22: float
    c12: float

    @property
    def self_capacitance(self) -> float:
        return 0.5 * (self.c11 + self.c22)

    @property
    def mutual_capacitance(self) -> float:
        return self.c12


def _require_strips(section):
    present = set(section.conductors)
    if not {Conductor.STRIP_UP, Conductor.STRIP_DOWN} <= present:
        raise DomainError("section must contain both STRIP_UP and STRIP_DOWN")
    if not present & set(GROUNDS):
        raise DomainError("section must contain at least one ground")


def extract_capacitances(section: CrossSection2D, method: str = "direct") -> CapacitanceMatrix2:
    """Even/odd energy extraction of ``C`` and ``C_ud``.

    Even (+1/+1 V) and odd (+1/-1 V) drives give ``C_e = W_even`` and
    ``C_o = W_odd`` per line, so ``C_ud = (C_o - C_e) / 2``.  Two single-strip
    drives then split ``C`` into the individual strip terms ``c11``, ``c22``.
    """
    _require_strips(section)
    prob = LaplaceProblem(section, method)
    up, down = Conductor.STRIP_UP, Conductor.STRIP_DOWN
    w_even = prob.energy(prob.solve({up: 1.0, down: 1.0}))
    w_odd = prob.energy(prob.solve({up: 1.0, down: -1.0}))
    w_up = prob.energy(prob.solve({up: 1.0, down: 0.0}))
    w_down = prob.energy(prob.solve({up: 0.0, down: 1.0}))
    c_even, c_odd = w_even, w_odd
    c_ud = 0.5 * (c_odd - c_even)
    if c_ud < 0:
        if c_ud < -1e-3 * c_even:
            raise ExtractionError(f"negative mutual capacitance {c_ud:.4e} F/m")
        c_ud = 0.0
    # single drive energy is half the Maxwell diagonal term c_ii + c_ud
    c11 = 2.0 * w_up - c_ud
    c22 = 2.0 * w_down - c_ud
    if not (c11 > 0 and c22 > 0):
        raise ExtractionError(f"non-positive self capacitance (c11={c11:.4e}, c22={c22:.4e})")
    if section.symmetric and abs(c11 - c22) > 1e-6 * c11:
        raise ExtractionError(f"up/down asymmetry {abs(c11 - c22) / c11:.2e} in a symmetric stack")
    return CapacitanceMatrix2(float(c11), float(c22), float(c_ud))


def extract_inductance(section: CrossSection2D, method: str = "direct") -> float:
    """Line inductance from the air-filled even-mode capacitance.

    ``L = 1 / (c0^2 C_air)`` (quasi-TEM; no mutual inductance).
    """
    air = extract_capacitances(section.air_filled(), method)
    return 1.0 / (speed_of_light ** 2 * air.self_capacitance)


@dataclass(frozen=True)
class BareStripParams:
    """Baseline of a geometry before pixels: extracted ``L``, ``C``, ``C_ud``."""

    L: float
    C: float
    C_ud: float
    C_air: float
    cell_size: float


_BASELINE_CACHE: dict = {}


def bare_strip_params(geometry: CouplerGeometry, cell_size: float | None = None,
                      method: str = "direct") -> BareStripParams:
    """Extract (and memoise) the bare-strip line constants of ``geometry``."""
    key = (geometry.strip_width, geometry.strip_thickness, geometry.substrate_height,
           geometry.inter_line_gap, geometry.eps_r, cell_size, method)
    hit = _BASELINE_CACHE.get(key)
    if hit is not None:
        return hit
    section = broadside_section(geometry, cell_size)
    caps = extract_capacitances(section, method)
    air = extract_capacitances(section.air_filled(), method)
    L = 1.0 / (speed_of_light ** 2 * air.self_capacitance)
    out = BareStripParams(L, caps.self_capacitance, caps.mutual_capacitance,
                          air.self_capacitance, section.cell_size)
    log.debug("bare strip extraction %s -> %s", key, out)
    _BASELINE_CACHE[key] = out
    return out
