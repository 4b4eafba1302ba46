"""Touchstone v1 two-port files.

Writer output is always ``# GHz S RI R 50``-style; the reader also accepts
Hz/kHz/MHz units and MA/DB pairs, as produced by most field solvers.
"""

from __future__ import annotations

import io
import math
from os import PathLike

import numpy as np

from .coupled_line import SParameterSet
from .errors import FormatError

_UNITS = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}


def _pair(fmt, a, b):
    if fmt == "ri":
        return complex(a, b)
    if fmt == "ma":
        return a * complex(math.cos(math.radians(b)), math.sin(math.radians(b)))
    mag = 10.0 ** (a / 20.0)
    return mag * complex(math.cos(math.radians(b)), math.sin(math.radians(b)))


def dumps(sparams: SParameterSet) -> str:
    z0 = sparams.reference_impedance
    z0_txt = f"{int(z0)}" if float(z0).is_integer() else repr(float(z0))
    out = io.StringIO()
    out.write(f"# GHz S RI R {z0_txt}\n")
    for k, f in enumerate(sparams.frequencies):
        vals = [f / 1e9]
        for s in (sparams.s11[k], sparams.s21[k], sparams.s12[k], sparams.s22[k]):
            vals += [s.real, s.imag]
        out.write(" ".join(repr(float(v)) for v in vals) + "\n")
    return out.getvalue()


def write(path: str | PathLike, sparams: SParameterSet):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(dumps(sparams))


def loads(text: str, path=None) -> SParameterSet:
    units, fmt, z0 = "ghz", "ma", 50.0
    seen_options = False
    numbers = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("!", 1)[0].strip()
        if not line:
            continue
        if line.startswith("#"):
            if seen_options:
                continue  # only the first option line counts
            seen_options = True
            toks = line[1:].lower().split()
            i = 0
            while i < len(toks):
                tok = toks[i]
                if tok in _UNITS:
                    units = tok
                elif tok in ("ri", "ma", "db"):
                    fmt = tok
                elif tok == "s":
                    pass
                elif tok in ("y", "z", "h", "g"):
                    raise FormatError(f"only S parameters are supported, got {tok.upper()}",
                                      line=lineno, path=path)
                elif tok == "r" and i + 1 < len(toks):
                    try:
                        z0 = float(toks[i + 1])
                    except ValueError:
                        raise FormatError(f"bad reference impedance {toks[i + 1]!r}",
                                          line=lineno, path=path) from None
                    i += 1
                else:
                    raise FormatError(f"unknown option {tok!r}", line=lineno, path=path)
                i += 1
            continue
        for tok in line.split():
            try:
                numbers.append((float(tok), lineno))
            except ValueError:
                raise FormatError(f"not a number: {tok!r}", line=lineno, path=path) from None
    if not numbers:
        raise FormatError("no data", path=path)
    if len(numbers) % 9:
        raise FormatError(f"{len(numbers)} values is not a whole number of 2-port records",
                          line=numbers[-1][1], path=path)
    rows = np.array([v for v, _ in numbers]).reshape(-1, 9)
    freqs = rows[:, 0] * _UNITS[units]
    if np.any(np.diff(freqs) <= 0):
        bad = int(np.argmax(np.diff(freqs) <= 0)) + 1
        raise FormatError("frequencies must be strictly increasing",
                          line=numbers[bad * 9][1], path=path)
    cols = [[_pair(fmt, r[j], r[j + 1]) for r in rows] for j in (1, 3, 5, 7)]
    return SParameterSet(freqs, cols[0], cols[1], cols[2], cols[3], z0)


def read(path: str | PathLike) -> SParameterSet:
    with open(path, encoding="ascii", errors="replace") as fh:
        return loads(fh.read(), path=str(path))
