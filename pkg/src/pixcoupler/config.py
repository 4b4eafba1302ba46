"""Run configuration: a sectioned INI file, flag overrides, and snapshots.

Every key below can be set in the file or overridden on the command line
with ``--set section.key=value``; dedicated flags (``--seed`` and friends)
are shorthands for the common ones.  Lengths in ``[geometry]`` are in mm,
frequencies in GHz.
"""

from __future__ import annotations

import configparser
import io
import platform
from dataclasses import dataclass
from os import PathLike

import numpy as np

from . import __version__
from .bpso import BpsoConfig, TransferKind
from .coupled_line import CouplerGeometry, PortTopology
from .errors import ConfigError, PixCouplerError
from .fitness import (CouplerFitnessSpec, Evaluator, ExternalSolver, Objective,
                      SymmetryMode)

GHZ = 1e9

DEFAULTS = {
    "geometry": {
        "strip_width_mm": "20",
        "coupler_length_mm": "17",
        "strip_thickness_mm": "1",
        "pixel_pitch_mm": "0.5",
        "substrate_height_mm": "3.2",
        "inter_line_gap_mm": "5",
        "eps_r": "3.55",
        "loss_tangent": "0.0025",
        "pixel_rows": "14",
        "pixel_cols": "30",
    },
    "bpso": {
        "swarm_size": "20",
        "max_iterations": "100",
        "c1": "2.0",
        "c2": "2.0",
        "w_start": "0.9",
        "w_end": "0.4",
        "v_max": "6.0",
        "transfer": "v",
        "target_db": "-2.0",
        "seed": "0",
    },
    "fitness": {
        "target_ghz": "3.5",
        "grid_start_ghz": "2",
        "grid_stop_ghz": "8",
        "grid_points": "601",
        "symmetry": "mirrored",
        "evaluator": "surrogate",
        "rotation_deg": "0",
        "gap_override_mm": "",
        "offset_x_mm": "0",
        "offset_y_mm": "0",
        "objective": "target",
        "band_start_ghz": "",
        "band_stop_ghz": "",
        "z0": "50",
        "port_topology": "diagonal",
        "cell_size_mm": "",
        "external_command": "",
        "external_timeout_s": "600",
        "external_workdir": "",
        "penalize_failures": "false",
    },
    "run": {
        "out": "run",
        "checkpoint_interval": "10",
        "workers": "1",
    },
    "sweep": {
        "variable": "rotation",
        "values": "",
        "mask_up": "",
        "mask_down": "",
    },
    "bench": {
        "problems": "onemax,knapsack",
        "seeds": "100",
        "first_seed": "0",
        "onemax_dimension": "30",
        "knapsack_items": "12",
        "knapsack_fraction": "0.9",
        "swarm_size": "20",
        "max_iterations": "100",
    },
}

# keys whose value feeds the fitness; a checkpoint is only resumable under the same ones
FITNESS_SECTIONS = ("geometry", "fitness")
# where a run is written does not describe the run
SNAPSHOT_SKIP = {("run", "out")}


@dataclass
class RunConfig:
    """Merged configuration with typed accessors for each block."""

    parser: configparser.ConfigParser

    # --- raw access ------------------------------------------------------

    def get(self, section: str, key: str) -> str:
        return self.parser.get(section, key).strip()

    def _typed(self, section, key, conv, optional=False):
        raw = self.get(section, key)
        if raw == "" and optional:
            return None
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid "
                              f"{getattr(conv, '__name__', 'value')}") from None

    def getfloat(self, section, key, optional=False):
        return self._typed(section, key, float, optional)

    def getint(self, section, key, optional=False):
        return self._typed(section, key, int, optional)

    def getbool(self, section, key) -> bool:
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"[{section}] {key} is not a boolean") from None

    def set(self, section: str, key: str, value):
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        self.parser.set(section, key, str(value))

    # --- typed blocks ----------------------------------------------------

    def geometry(self) -> CouplerGeometry:
        f = lambda k: self.getfloat("geometry", k) / 1e3  # noqa: E731
        try:
            return CouplerGeometry(
                strip_width=f("strip_width_mm"), coupler_length=f("coupler_length_mm"),
                strip_thickness=f("strip_thickness_mm"), pixel_pitch=f("pixel_pitch_mm"),
                substrate_height=f("substrate_height_mm"), inter_line_gap=f("inter_line_gap_mm"),
                eps_r=self.getfloat("geometry", "eps_r"),
                loss_tangent=self.getfloat("geometry", "loss_tangent"),
                pixel_rows=self.getint("geometry", "pixel_rows"),
                pixel_cols=self.getint("geometry", "pixel_cols"))
        except PixCouplerError as exc:
            raise ConfigError(f"[geometry] {exc}") from exc

    def frequency_grid(self) -> tuple:
        start = self.getfloat("fitness", "grid_start_ghz") * GHZ
        stop = self.getfloat("fitness", "grid_stop_ghz") * GHZ
        points = self.getint("fitness", "grid_points")
        if points < 2 or not stop > start > 0:
            raise ConfigError("frequency grid needs 0 < start < stop and >= 2 points")
        return tuple(float(v) for v in np.linspace(start, stop, points))

    def fitness_spec(self) -> CouplerFitnessSpec:
        fl = self.getfloat
        external = None
        command = self.get("fitness", "external_command")
        if command:
            external = ExternalSolver(command, fl("fitness", "external_timeout_s"),
                                      self.get("fitness", "external_workdir") or None,
                                      self.getbool("fitness", "penalize_failures"))
        gap = fl("fitness", "gap_override_mm", optional=True)
        cell = fl("fitness", "cell_size_mm", optional=True)
        lo = fl("fitness", "band_start_ghz", optional=True)
        hi = fl("fitness", "band_stop_ghz", optional=True)
        band = None if lo is None or hi is None else (lo * GHZ, hi * GHZ)
        try:
            return CouplerFitnessSpec(
                geometry=self.geometry(),
                target_frequency=fl("fitness", "target_ghz") * GHZ,
                frequency_grid=self.frequency_grid(),
                symmetry_mode=SymmetryMode(self.get("fitness", "symmetry")),
                evaluator=Evaluator(self.get("fitness", "evaluator")),
                rotation_deg=fl("fitness", "rotation_deg"),
                gap_override=None if gap is None else gap / 1e3,
                offset=(fl("fitness", "offset_x_mm") / 1e3, fl("fitness", "offset_y_mm") / 1e3),
                objective=Objective(self.get("fitness", "objective")),
                band=band,
                reference_impedance=fl("fitness", "z0"),
                port_topology=PortTopology(self.get("fitness", "port_topology")),
                cell_size=None if cell is None else cell / 1e3,
                external=external)
        except ValueError as exc:
            raise ConfigError(f"[fitness] {exc}") from exc

    def bpso_config(self, dimension: int) -> BpsoConfig:
        try:
            return BpsoConfig(
                dimension=dimension,
                swarm_size=self.getint("bpso", "swarm_size"),
                max_iterations=self.getint("bpso", "max_iterations"),
                c1=self.getfloat("bpso", "c1"), c2=self.getfloat("bpso", "c2"),
                w_start=self.getfloat("bpso", "w_start"), w_end=self.getfloat("bpso", "w_end"),
                v_max=self.getfloat("bpso", "v_max"),
                transfer_kind=TransferKind.parse(self.get("bpso", "transfer")),
                target_fitness=self.getfloat("bpso", "target_db", optional=True),
                rng_seed=self.getint("bpso", "seed"))
        except ValueError as exc:
            raise ConfigError(f"[bpso] {exc}") from exc

    # --- snapshots -------------------------------------------------------

    def snapshot(self, sections=None, meta: bool = True) -> str:
        out = configparser.ConfigParser(interpolation=None)
        out.optionxform = str
        if meta:
            out["meta"] = versions()
        for section in sections or DEFAULTS:
            out[section] = {k: self.get(section, k) for k in DEFAULTS[section]
                            if (section, k) not in SNAPSHOT_SKIP}
        buf = io.StringIO()
        out.write(buf)
        return buf.getvalue()

    def write_snapshot(self, path: str | PathLike):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.snapshot())

    def fitness_fingerprint(self) -> str:
        return self.snapshot(FITNESS_SECTIONS, meta=False)


def versions() -> dict:
    import scipy
    import shapely
    return {"pixcoupler": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "shapely": shapely.__version__}


def load_config(path: str | PathLike | None = None, overrides=()) -> RunConfig:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_dict(DEFAULTS)
    cfg = RunConfig(parser)
    if path is not None:
        user = configparser.ConfigParser(interpolation=None)
        user.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                user.read_file(fh, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from exc
        for section in user.sections():
            if section == "meta":
                continue  # provenance written by snapshots; not settings
            for key, value in user.items(section):
                cfg.set(section, key, value)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        cfg.set(section, name, value.strip())
    return cfg
