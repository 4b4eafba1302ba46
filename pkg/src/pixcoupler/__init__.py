"""Pixelated broadside coupler synthesis by binary particle swarm optimization."""

__version__ = "0.1.0"

from .bpso import BpsoConfig, StopReason, TransferKind, run  # noqa: E402
from .coupled_line import (CouplerGeometry, LineModeParams, PortTopology,  # noqa: E402
                           SParameterSet, two_port_sparams)
from .errors import PixCouplerError  # noqa: E402
from .fitness import CouplerFitness, CouplerFitnessSpec, SymmetryMode  # noqa: E402
from .pixels import PixelMask  # noqa: E402

__all__ = ["BpsoConfig", "CouplerFitness", "CouplerFitnessSpec", "CouplerGeometry",
           "LineModeParams", "PixCouplerError", "PixelMask", "PortTopology",
           "SParameterSet", "StopReason", "SymmetryMode", "TransferKind", "run",
           "two_port_sparams", "__version__"]
