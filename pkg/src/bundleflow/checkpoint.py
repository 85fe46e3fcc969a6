"""Textual checkpoints for metric (and Higgs) fields, round-trip exact.

Layout: a header line of comma-separated ``key value`` pairs
(``rank``, ``sites``, ``time``, ``step``, ``dt``, ``streak``), then one line
per site with the row-major complex entries of H written as ``re im`` pairs.
An optional ``theta`` marker line introduces a second per-site block with the
same layout. Floats are written with shortest round-trip precision, so a
save/load cycle is bit-exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray


@dataclass
class Checkpoint:
    rank: int
    sites: int
    time: float
    step: int
    dt: float
    streak: int
    metric: Array
    theta: Array | None = None
    grown: int = 0


def _fmt(x: float) -> str:
    return repr(float(x))


def _matrix_line(m: Array) -> str:
    parts = []
    for v in np.asarray(m, dtype=complex).ravel():
        parts.append(_fmt(v.real))
        parts.append(_fmt(v.imag))
    return " ".join(parts)


def _parse_block(lines: list[str], start: int, sites: int, rank: int) -> tuple[Array, int]:
    out = np.zeros((sites, rank, rank), dtype=complex)
    for i in range(sites):
        vals = [float(tok) for tok in lines[start + i].split()]
        if len(vals) != 2 * rank * rank:
            raise ValueError(f"checkpoint line {start + i + 1}: expected {2 * rank * rank} values")
        arr = np.array(vals).reshape(rank * rank, 2)
        out[i] = (arr[:, 0] + 1j * arr[:, 1]).reshape(rank, rank)
    return out, start + sites


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    lines = [
        f"rank {ckpt.rank}, sites {ckpt.sites}, time {_fmt(ckpt.time)}, "
        f"step {ckpt.step}, dt {_fmt(ckpt.dt)}, streak {ckpt.streak}, grown {ckpt.grown}"
    ]
    for i in range(ckpt.sites):
        lines.append(_matrix_line(ckpt.metric[i]))
    if ckpt.theta is not None:
        lines.append("theta")
        for i in range(ckpt.sites):
            lines.append(_matrix_line(ckpt.theta[i]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = {}
    for chunk in lines[0].split(","):
        key, val = chunk.strip().split(" ", 1)
        header[key] = val.strip()
    try:
        rank = int(header["rank"])
        sites = int(header["sites"])
        time = float(header["time"])
        step = int(header.get("step", 0))
        dt = float(header.get("dt", 0.0))
        streak = int(header.get("streak", 0))
        grown = int(header.get("grown", 0))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed checkpoint header: {lines[0]!r}") from exc
    metric, pos = _parse_block(lines, 1, sites, rank)
    theta = None
    if pos < len(lines) and lines[pos].strip() == "theta":
        theta, pos = _parse_block(lines, pos + 1, sites, rank)
    return Checkpoint(
        rank=rank, sites=sites, time=time, step=step, dt=dt, streak=streak,
        metric=metric, theta=theta, grown=grown,
    )
