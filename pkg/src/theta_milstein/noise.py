"""Reproducible Brownian increments on a fine grid with exact coarsening.

Each path owns an independent counter-based stream keyed on
``(seed, path_index)``, so increments are identical no matter how many paths
run concurrently or in what order.  Increments are stored at the finest level
only; coarser levels are exact aggregations.  Coarsening by an even factor
aggregates adjacent pairs first, so refining dyadic grids level by level
reproduces the direct aggregation bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError

__all__ = [
    "LevelSpec",
    "NoiseGrid",
    "MomentStat",
    "MomentReport",
    "generate",
    "coarsen",
    "coarsen_array",
    "brownian_values",
    "normal_increments",
    "moment_check",
    "gaussian_even_moment",
    "write_binary",
    "read_binary",
]

_MAGIC = b"THMNOISE"
_HEADER = struct.Struct("<8sQQQd")

_MIN_MOMENT_SAMPLES = 10_000


class LevelSpec(NamedTuple):
    dt: float
    steps: int


@dataclass(frozen=True)
class NoiseGrid:
    """Brownian increments of one path on a uniform fine grid over [0, t_end]."""

    t_end: float
    seed: int
    path_index: int
    fine_increments: np.ndarray
    levels: tuple[LevelSpec, ...]

    @property
    def fine_steps(self) -> int:
        return int(self.fine_increments.size)

    @property
    def dt_fine(self) -> float:
        return self.t_end / self.fine_steps


def _keyed_generator(seed: int, path_index: int) -> np.random.Generator:
    if path_index < 0:
        raise DomainError("path_index must be >= 0")
    key = np.array(
        [int(seed) & 0xFFFFFFFFFFFFFFFF, int(path_index) & 0xFFFFFFFFFFFFFFFF],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def normal_increments(seed: int, path_index: int, dt: float, count: int) -> np.ndarray:
    """``count`` i.i.d. Normal(0, dt) draws from the stream (seed, path_index)."""
    if count < 1:
        raise DomainError("count must be >= 1")
    if dt <= 0:
        raise DomainError("dt must be > 0")
    gen = _keyed_generator(seed, path_index)
    return gen.standard_normal(count) * np.sqrt(dt)


def generate(
    seed: int,
    path_index: int,
    t_end: float,
    fine_steps: int,
    coarse_factors: tuple[int, ...] = (),
) -> NoiseGrid:
    """Draw the fine increments of one Brownian path.

    ``coarse_factors`` optionally registers coarser levels (each factor must
    divide ``fine_steps``); they are descriptors only, the data stays at the
    finest level.
    """
    if fine_steps < 1:
        raise DomainError("fine_steps must be >= 1")
    if t_end <= 0:
        raise DomainError("t_end must be > 0")
    dt = t_end / fine_steps
    increments = normal_increments(seed, path_index, dt, fine_steps)
    increments.setflags(write=False)
    levels = [LevelSpec(dt=dt, steps=fine_steps)]
    for factor in sorted(set(int(f) for f in coarse_factors)):
        if factor < 1 or fine_steps % factor:
            raise DomainError(
                f"coarse factor {factor} does not divide fine_steps={fine_steps}"
            )
        if factor > 1:
            levels.append(LevelSpec(dt=dt * factor, steps=fine_steps // factor))
    return NoiseGrid(
        t_end=float(t_end),
        seed=int(seed) & 0xFFFFFFFFFFFFFFFF,
        path_index=int(path_index),
        fine_increments=increments,
        levels=tuple(levels),
    )


def coarsen_array(increments: np.ndarray, factor: int) -> np.ndarray:
    """Aggregate increments in groups of ``factor`` along the last axis.

    Powers of two in the factor are taken out by successive pairwise sums,
    which makes nested dyadic coarsening exact:
    ``coarsen_array(coarsen_array(x, 2), k) == coarsen_array(x, 2 k)``
    bitwise.  Any odd remainder is summed left to right.
    """
    arr = np.asarray(increments, dtype=float)
    factor = int(factor)
    if factor < 1:
        raise DomainError("factor must be >= 1")
    n = arr.shape[-1]
    if n % factor:
        raise DomainError(f"factor {factor} does not divide increment count {n}")
    if factor == 1:
        return arr.copy()
    work = arr
    remaining = factor
    while remaining % 2 == 0:
        work = work[..., 0::2] + work[..., 1::2]
        remaining //= 2
    if remaining > 1:
        grouped = work.reshape(*work.shape[:-1], work.shape[-1] // remaining, remaining)
        out = grouped[..., 0].copy()
        for j in range(1, remaining):
            out += grouped[..., j]
        work = out
    return work


def coarsen(grid: NoiseGrid, factor: int) -> np.ndarray:
    """Increments of ``grid`` aggregated to a grid ``factor`` times coarser."""
    return coarsen_array(grid.fine_increments, factor)


def brownian_values(increments: np.ndarray) -> np.ndarray:
    """Brownian path values on the grid: w(0)=0 followed by running sums."""
    arr = np.asarray(increments, dtype=float)
    out = np.empty(arr.shape[:-1] + (arr.shape[-1] + 1,))
    out[..., 0] = 0.0
    np.cumsum(arr, axis=-1, out=out[..., 1:])
    return out


def gaussian_even_moment(dt: float, half_order: int) -> float:
    """E|dw|^(2i) = (2i - 1)!! dt^i for dw ~ Normal(0, dt)."""
    if half_order < 1:
        raise DomainError("half_order must be >= 1")
    double_factorial = 1
    for odd in range(3, 2 * half_order, 2):
        double_factorial *= odd
    return double_factorial * dt ** half_order


@dataclass(frozen=True)
class MomentStat:
    name: str
    estimate: float
    target: float
    std_error: float

    @property
    def deviation_sigmas(self) -> float:
        if self.std_error == 0:
            return 0.0 if self.estimate == self.target else float("inf")
        return abs(self.estimate - self.target) / self.std_error


@dataclass(frozen=True)
class MomentReport:
    """Sample moments of the increments against their Gaussian targets."""

    dt: float
    n: int
    stats: tuple[MomentStat, ...]

    def max_deviation_sigmas(self) -> float:
        return max(s.deviation_sigmas for s in self.stats)

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "n": self.n,
            "stats": [
                {
                    "name": s.name,
                    "estimate": s.estimate,
                    "target": s.target,
                    "std_error": s.std_error,
                }
                for s in self.stats
            ],
        }


def _sample_stat(name: str, values: np.ndarray, target: float) -> MomentStat:
    n = values.size
    est = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(n))
    return MomentStat(name=name, estimate=est, target=target, std_error=se)


def moment_check(grid: NoiseGrid) -> MomentReport:
    """Compare sample moments E|dw|^2, E|dw|^4, E(|dw|^2 - dt)^2 to their targets.

    The targets dt, 3 dt^2 and 2 dt^2 follow from the even Gaussian moments
    E|dw|^(2i) = (2i - 1)!! dt^i.  Requires at least 10^4 increments.
    """
    if grid.fine_steps < _MIN_MOMENT_SAMPLES:
        raise DomainError(
            f"moment_check needs at least {_MIN_MOMENT_SAMPLES} increments, got {grid.fine_steps}"
        )
    dt = grid.dt_fine
    dw2 = grid.fine_increments ** 2
    stats = (
        _sample_stat("second_moment", dw2, gaussian_even_moment(dt, 1)),
        _sample_stat("fourth_moment", dw2 ** 2, gaussian_even_moment(dt, 2)),
        _sample_stat("centered_square", (dw2 - dt) ** 2, 2.0 * dt * dt),
    )
    return MomentReport(dt=dt, n=grid.fine_steps, stats=stats)


def write_binary(grid: NoiseGrid, path) -> None:
    """Dump the fine increments as little-endian float64 with a fixed header."""
    header = _HEADER.pack(
        _MAGIC,
        grid.seed & 0xFFFFFFFFFFFFFFFF,
        grid.path_index,
        grid.fine_steps,
        grid.t_end,
    )
    payload = np.ascontiguousarray(grid.fine_increments, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_binary(path) -> NoiseGrid:
    """Load a grid written by :func:`write_binary` (bitwise round trip)."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise DomainError(f"{path}: truncated header")
        magic, seed, path_index, fine_steps, t_end = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise DomainError(f"{path}: bad magic {magic!r}")
        payload = fh.read(8 * fine_steps)
    if len(payload) != 8 * fine_steps:
        raise DomainError(f"{path}: truncated payload")
    increments = np.frombuffer(payload, dtype="<f8").astype(float)
    increments.setflags(write=False)
    return NoiseGrid(
        t_end=float(t_end),
        seed=int(seed),
        path_index=int(path_index),
        fine_increments=increments,
        levels=(LevelSpec(dt=float(t_end) / fine_steps, steps=int(fine_steps)),),
    )
