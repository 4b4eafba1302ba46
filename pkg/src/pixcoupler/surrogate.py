"""Pixel masks -> line constants, the cheap stand-in for full-wave simulation.

The bare strip pair is extracted once per cross-section.  Pixels then act as
a uniform, length-averaged modification of that baseline::

    C_ud' = C_ud * A_eff / A_strip     (overlap of the two metal footprints)
    C'    = C    * A_up  / A_strip     (up-side metal area)

``L`` is left at its bare-strip value.
"""

from __future__ import annotations

from .capacitance import BareStripParams, bare_strip_params
from .coupled_line import CouplerGeometry, LineModeParams
from .pixels import PixelMask, effective_coupling_area, metal_area


def surrogate_mode_params(mask_up: PixelMask, mask_down: PixelMask,
                          geometry: CouplerGeometry, rotation_deg: float = 0.0,
                          offset=(0.0, 0.0), baseline: BareStripParams | None = None,
                          cell_size: float | None = None,
                          area_method: str = "exact") -> LineModeParams:
    if baseline is None:
        baseline = bare_strip_params(geometry, cell_size)
    a_strip = geometry.strip_area
    a_eff = effective_coupling_area(mask_up, mask_down, geometry, rotation_deg,
                                    offset, method=area_method)
    a_up = metal_area(mask_up, geometry)
    if a_eff == a_strip and a_up == a_strip:
        return LineModeParams.from_pul(baseline.L, baseline.C, baseline.C_ud)
    return LineModeParams.from_pul(baseline.L,
                                   baseline.C * (a_up / a_strip),
                                   baseline.C_ud * (a_eff / a_strip))
