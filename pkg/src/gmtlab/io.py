"""DVF / DVFLOW text formats.

DVF::

    DVF 1
    dim <d> <m>
    lambda <float>
    atoms <N>
    <x_1..x_d> <weight> <multiplicity> <H_1..H_d> <b_11..b_1d> ... <b_m1..b_md>

DVFLOW::

    DVFLOW 1
    frames <K>
    t <float>
    <DVF body without the "DVF 1" line>      (K times)

Lines starting with ``#`` are comments. Floats are written with 17
significant digits so that save(load(f)) reproduces f.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .varifold import DiscreteVarifold

log = logging.getLogger(__name__)

REORTHO_LIMIT = 1e-6


class DVFParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def fmt(v: float) -> str:
    return format(float(v), ".17g")


class _Lines:
    """Iterator over meaningful lines with 1-based line numbers."""

    def __init__(self, text: str):
        self._items = [(i + 1, ln.strip()) for i, ln in enumerate(text.split("\n"))
                       if ln.strip() and not ln.lstrip().startswith("#")]
        self._pos = 0

    def next(self, what: str):
        if self._pos >= len(self._items):
            last = self._items[-1][0] if self._items else 0
            raise DVFParseError(f"unexpected end of file, expected {what}", last + 1)
        item = self._items[self._pos]
        self._pos += 1
        return item

    def peek(self):
        return self._items[self._pos] if self._pos < len(self._items) else None

    def exhausted(self):
        return self._pos >= len(self._items)


def _keyword(lines: _Lines, key: str, n_values: int):
    lineno, text = lines.next(f"'{key}'")
    parts = text.split()
    if parts[0] != key or len(parts) != n_values + 1:
        raise DVFParseError(f"expected '{key}' with {n_values} value(s), got {text!r}", lineno)
    return lineno, parts[1:]


def _parse_float(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise DVFParseError(f"not a number: {tok!r}", lineno) from None


def _parse_int(tok, lineno):
    try:
        return int(tok)
    except ValueError:
        raise DVFParseError(f"not an integer: {tok!r}", lineno) from None


def _orthonormalize(bases, lineno_of):
    """Check atom bases; re-orthonormalize small deviations, reject large ones."""
    m = bases.shape[1]
    gram = np.einsum("nij,nkj->nik", bases, bases)
    dev = np.abs(gram - np.eye(m)).max(axis=(1, 2)) if len(bases) else np.zeros(0)
    bad = np.flatnonzero(dev > REORTHO_LIMIT)
    if bad.size:
        raise DVFParseError(f"atom basis is not orthonormal (deviation {dev[bad[0]]:.3g})",
                            lineno_of(bad[0]))
    fix = np.flatnonzero(dev > 1e-12)
    if fix.size:
        log.warning("re-orthonormalized %d atom bases (max deviation %.3g)", fix.size, dev.max())
        for i in fix:
            q, r = np.linalg.qr(bases[i].T)
            bases[i] = (q * np.sign(np.diag(r))).T
    return bases


def _parse_body(lines: _Lines) -> DiscreteVarifold:
    ln, (d_tok, m_tok) = _keyword(lines, "dim", 2)
    d, m = _parse_int(d_tok, ln), _parse_int(m_tok, ln)
    if not (d >= 2 and 1 <= m < d):
        raise DVFParseError(f"invalid dimensions d={d}, m={m}", ln)
    ln, (lam_tok,) = _keyword(lines, "lambda", 1)
    lam = _parse_float(lam_tok, ln)
    ln_atoms, (n_tok,) = _keyword(lines, "atoms", 1)
    n = _parse_int(n_tok, ln_atoms)
    if n < 0:
        raise DVFParseError("negative atom count", ln_atoms)
    width = 2 * d + 2 + m * d
    rows = np.empty((n, width))
    linenos = []
    for k in range(n):
        nxt = lines.peek()
        if nxt is None or not _looks_numeric(nxt[1]):
            where = nxt[0] if nxt else (linenos[-1] + 1 if linenos else ln_atoms + 1)
            raise DVFParseError(f"atom count mismatch: header declares {n} atoms, found {k}", where)
        lineno, text = lines.next("atom")
        parts = text.split()
        if len(parts) != width:
            raise DVFParseError(f"atom line has {len(parts)} fields, expected {width}", lineno)
        rows[k] = [_parse_float(p, lineno) for p in parts]
        linenos.append(lineno)
    x = rows[:, :d]
    weight = rows[:, d]
    mult = rows[:, d + 1]
    H = rows[:, d + 2:2 * d + 2]
    bases = rows[:, 2 * d + 2:].reshape(n, m, d).copy()
    bases = _orthonormalize(bases, lambda i: linenos[i])
    try:
        return DiscreteVarifold(x, weight, bases, mult, H, lam, ortho_tol=1e-10)
    except ValueError as exc:
        raise DVFParseError(str(exc), ln_atoms) from exc


def _looks_numeric(text: str) -> bool:
    tok = text.split()[0]
    try:
        float(tok)
        return True
    except ValueError:
        return False


def parse_dvf(text: str) -> DiscreteVarifold:
    lines = _Lines(text)
    ln, (version,) = _keyword(lines, "DVF", 1)
    if version != "1":
        raise DVFParseError(f"unsupported DVF version {version!r}", ln)
    V = _parse_body(lines)
    if not lines.exhausted():
        lineno, text = lines.next("end")
        raise DVFParseError(f"trailing content after the declared atoms: {text!r}", lineno)
    return V


def _body_lines(V: DiscreteVarifold) -> list[str]:
    out = [f"dim {V.d} {V.m}", f"lambda {fmt(V.lam)}", f"atoms {len(V)}"]
    for i in range(len(V)):
        vals = [*V.x[i], V.weight[i], V.multiplicity[i], *V.H[i], *V.bases[i].ravel()]
        out.append(" ".join(fmt(v) for v in vals))
    return out


def format_dvf(V: DiscreteVarifold) -> str:
    return "\n".join(["DVF 1", *_body_lines(V)]) + "\n"


def load_varifold(path) -> DiscreteVarifold:
    return parse_dvf(Path(path).read_text(encoding="utf-8"))


def save_varifold(V: DiscreteVarifold, path) -> None:
    Path(path).write_text(format_dvf(V), encoding="utf-8", newline="\n")


def parse_flow(text: str):
    from .flow import FlowTrack

    lines = _Lines(text)
    ln, (version,) = _keyword(lines, "DVFLOW", 1)
    if version != "1":
        raise DVFParseError(f"unsupported DVFLOW version {version!r}", ln)
    ln, (k_tok,) = _keyword(lines, "frames", 1)
    k = _parse_int(k_tok, ln)
    times, frames = [], []
    for _ in range(k):
        ln, (t_tok,) = _keyword(lines, "t", 1)
        times.append(_parse_float(t_tok, ln))
        frames.append(_parse_body(lines))
    if not lines.exhausted():
        lineno, text = lines.next("end")
        raise DVFParseError(f"trailing content after {k} frames: {text!r}", lineno)
    for V in frames:
        frac = np.abs(V.multiplicity - np.round(V.multiplicity))
        if frac.size and frac.max() > 0.05:
            log.warning("frame has non-integer multiplicities (max deviation %.3g)", frac.max())
    try:
        return FlowTrack(times, frames, metadata={"method": "loaded"})
    except ValueError as exc:
        raise DVFParseError(str(exc)) from exc


def format_flow(track) -> str:
    out = ["DVFLOW 1", f"frames {len(track)}"]
    for t, V in zip(track.times, track.frames):
        out.append(f"t {fmt(t)}")
        out.extend(_body_lines(V))
    return "\n".join(out) + "\n"


def load_flow(path):
    return parse_flow(Path(path).read_text(encoding="utf-8"))


def save_flow(track, path) -> None:
    Path(path).write_text(format_flow(track), encoding="utf-8", newline="\n")
