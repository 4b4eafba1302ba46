import numpy as np
import pytest

from pixcoupler.capacitance import BareStripParams, bare_strip_params
from pixcoupler.coupled_line import (CouplerGeometry, LineModeParams, max_coupling_length,
                                     propagation_constants)
from pixcoupler.pixels import PixelMask
from pixcoupler.surrogate import surrogate_mode_params

G = CouplerGeometry()
R, C = G.pixel_rows, G.pixel_cols


def test_zero_masks_reproduce_bare_strip_exactly():
    base = bare_strip_params(G)
    m = surrogate_mode_params(PixelMask.zeros(R, C), PixelMask.zeros(R, C), G)
    assert m == LineModeParams.from_pul(base.L, base.C, base.C_ud)


def test_independent_scaling_formula():
    base = BareStripParams(L=1.5e-7, C=2.4e-10, C_ud=3.7e-11, C_air=7e-11, cell_size=2e-4)
    up = PixelMask(np.eye(R, C, dtype=np.uint8))
    down = PixelMask(np.eye(R, C, k=1, dtype=np.uint8) | np.eye(R, C, dtype=np.uint8))
    m = surrogate_mode_params(up, down, G, baseline=base)
    # straight-line restatement: overlap = strip + shared pixels (both flanks)
    pix = 0.5e-3 ** 2
    strip = 20e-3 * 17e-3
    shared = 2 * int(np.count_nonzero(up.bits & down.bits))
    up_metal = 2 * int(up.bits.sum())
    assert m.C_ud == pytest.approx(3.7e-11 * (strip + shared * pix) / strip, rel=1e-13)
    assert m.C == pytest.approx(2.4e-10 * (strip + up_metal * pix) / strip, rel=1e-13)
    assert m.L == 1.5e-7


def test_larger_area_shortens_full_coupling_length():
    base = bare_strip_params(G)
    lengths = []
    for fill in (0.0, 0.5, 1.0):
        rows = int(round(fill * R))
        bits = np.zeros((R, C), np.uint8)
        bits[R - rows:, :] = 1
        mask = PixelMask(bits)
        m = surrogate_mode_params(mask, mask, G, baseline=base)
        be, bo = propagation_constants(m.L, m.C, m.C_ud, 3.5e9)
        lengths.append(max_coupling_length(be, bo))
    assert lengths[0] > lengths[1] > lengths[2]


def test_doubling_overlap_raises_mode_split():
    base = BareStripParams(L=1.5e-7, C=2.4e-10, C_ud=3.7e-11, C_air=7e-11, cell_size=2e-4)
    m1 = LineModeParams.from_pul(base.L, base.C, base.C_ud)
    m2 = LineModeParams.from_pul(base.L, base.C, 2 * base.C_ud)
    d1 = np.subtract(*propagation_constants(m1.L, m1.C, m1.C_ud, 3.5e9)[::-1])
    d2 = np.subtract(*propagation_constants(m2.L, m2.C, m2.C_ud, 3.5e9)[::-1])
    assert d2 > d1 > 0
