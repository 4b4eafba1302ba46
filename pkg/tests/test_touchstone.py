import math

import numpy as np
import pytest

from pixcoupler import touchstone
from pixcoupler.coupled_line import LineModeParams, SParameterSet, two_port_sparams
from pixcoupler.errors import FormatError


def sample():
    m = LineModeParams.from_pul(1.5e-7, 2.4e-10, 3.7e-11)
    return two_port_sparams(m, 0.017, np.linspace(2e9, 8e9, 601))


def test_writer_layout():
    text = touchstone.dumps(sample())
    lines = text.split("\n")
    assert lines[0] == "# GHz S RI R 50"
    assert len(lines[1].split()) == 9
    assert float(lines[1].split()[0]) == 2.0
    assert "\r" not in text and text.endswith("\n")


def test_round_trip_exact(tmp_path):
    sp = sample()
    path = tmp_path / "x.s2p"
    touchstone.write(path, sp)
    back = touchstone.read(path)
    np.testing.assert_allclose(back.frequencies, sp.frequencies, rtol=1e-12)
    for name in ("s11", "s21", "s12", "s22"):
        np.testing.assert_allclose(getattr(back, name), getattr(sp, name), rtol=0, atol=1e-12)
    assert back.reference_impedance == 50.0


def test_reader_formats():
    ma = "! c\n# MHz S MA R 75\n1000 0.5 90 0.1 0 0.1 0 0.5 -90\n2000 0.5 0 0.2 180 0.2 180 0.5 0\n"
    sp = touchstone.loads(ma)
    assert sp.frequencies.tolist() == [1e9, 2e9]
    assert sp.reference_impedance == 75.0
    assert sp.s11[0] == pytest.approx(0.5j)
    assert sp.s21[1] == pytest.approx(-0.2)
    db = "# Hz S DB\n1e9 -6.0205999132796 0 0 0 0 0 0 0\n"
    assert abs(touchstone.loads(db).s11[0]) == pytest.approx(0.5, rel=1e-12)


@pytest.mark.parametrize("text,line", [
    ("# GHz S RI R 50\n1 0 0 0 0 0 0 0\n", 2),
    ("# GHz S RI R 50\n1 0 0 0 0 0 0 0 x\n", 2),
    ("# GHz Y RI R 50\n1 0 0 0 0 0 0 0 0\n", 1),
    ("# GHz S RI R 50\n2 0 0 0 0 0 0 0 0\n1 0 0 0 0 0 0 0 0\n", 3),
])
def test_reader_errors_have_line_numbers(text, line):
    with pytest.raises(FormatError) as info:
        touchstone.loads(text, path="r.s2p")
    assert info.value.line == line


def test_reader_rejects_empty():
    with pytest.raises(FormatError):
        touchstone.loads("! nothing\n")


def test_interpolation_in_db():
    sp = SParameterSet([1e9, 2e9], [0, 0], [0.1, 1.0], [0.1, 1.0], [0, 0])
    assert sp.s21_db_at(1.5e9) == pytest.approx(-10.0)
    assert sp.s21_db_at(1.5e9) != pytest.approx(20 * math.log10(0.55))
