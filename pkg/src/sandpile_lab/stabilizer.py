"""Stabilization of chip configurations by toppling.

Every strategy returns the same final configuration and odometer, which is
the Abelian property; tests hold them to bit-exact agreement.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .exceptions import CapacityExceeded, InvariantViolation
from .lattice import ChipGrid, LatticeBox, Odometer, _embed, laplacian_array
from .validation import check_chip_grid, check_dimension, check_positive_int

DEFAULT_MEM_CAP = 4 * 2**30
STRATEGIES = ("fifo", "sweep", "tiled")


@dataclass(frozen=True)
class Strategy:
    """Toppling schedule: ``fifo``, ``sweep`` or ``tiled``."""

    name: str = "sweep"
    tile_size: int = 64
    workers: int = 1

    def __post_init__(self):
        if self.name not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.name!r}; expected one of {STRATEGIES}")
        if self.tile_size < 2:
            raise ValueError(f"tile_size must be >= 2, got {self.tile_size}")
        if self.workers < 1:
            raise ValueError(f"worker count must be >= 1, got {self.workers}")

    @classmethod
    def coerce(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        if isinstance(value, str):
            return cls(value)
        raise TypeError(f"cannot interpret {value!r} as a strategy")

    @property
    def tag(self) -> str:
        if self.name == "tiled":
            return f"tiled(tile_size={self.tile_size},workers={self.workers})"
        return self.name


@dataclass(frozen=True)
class StabilizeResult:
    final: ChipGrid
    odometer: Odometer
    total_topples: int
    strategy: str
    wall_time: float
    sequence: tuple | None = field(default=None, repr=False, compare=False)

    def radius(self) -> float:
        """Largest Euclidean norm of an occupied site."""
        occupied = self.final.counts > 0
        if not occupied.any():
            return 0.0
        return math.sqrt(int(self.final.box.norm_squared()[occupied].max()))

    def summary(self, n: int | None = None, timing: bool = False) -> dict:
        out = {
            "n": int(n) if n is not None else self.final.total(),
            "d": self.final.d,
            "strategy": self.strategy,
            "total_topples": self.total_topples,
            "radius": self.radius(),
        }
        if timing:
            out["wall_time_ms"] = round(self.wall_time * 1e3, 3)
        return out


def _offsets(box: LatticeBox) -> np.ndarray:
    strides = [box.side ** (box.d - 1 - i) for i in range(box.d)]
    return np.array([s * sign for s in strides for sign in (-1, 1)], dtype=np.int64)


def _check_capacity(box: LatticeBox, mem_cap: int, arrays: int = 3) -> None:
    need = arrays * 8 * box.size
    if need > mem_cap:
        raise CapacityExceeded(
            f"box d={box.d} k={box.k} needs ~{need / 2**30:.2f} GiB, cap is {mem_cap / 2**30:.2f} GiB"
        )


def _sweep(chips, odometer, threshold):
    # thresholds are compiled in: 4 for d=2, 6 for d=3
    if chips.ndim == 2:
        return _kernels.sweep_2d(chips, odometer)
    if chips.ndim == 3:
        return _kernels.sweep_3d(chips, odometer)
    raise ValueError(f"no sweep kernel for d={chips.ndim}")


def _tile_slices(side: int, tile: int) -> list[slice]:
    return [slice(a, min(a + tile, side - 1)) for a in range(1, side - 1, tile)]


def _run_tile(chips, tile, threshold):
    d = chips.ndim
    padded = tuple(slice(s.start - 1, s.stop + 1) for s in tile)
    inner = (slice(1, -1),) * d
    local = np.zeros(tuple(s.stop - s.start + 2 for s in tile), dtype=np.int64)
    local[inner] = chips[tile]
    local_odo = np.zeros_like(local)
    _sweep(local, local_odo, threshold)
    chips[tile] = local[inner]
    local[inner] = 0
    return padded, local, local_odo[inner]


def _tiled(chips, odometer, threshold, strategy: Strategy, pool):
    tiles = list(product(*[_tile_slices(n, strategy.tile_size) for n in chips.shape]))
    rounds = 0
    while True:
        busy = [t for t in tiles if chips[t].max() >= threshold]
        if not busy:
            return rounds
        rounds += 1
        if pool is None:
            outputs = [_run_tile(chips, t, threshold) for t in busy]
        else:
            outputs = list(pool.map(lambda t: _run_tile(chips, t, threshold), busy))
        # barrier: merge edge buffers and odometer increments
        for t, (padded, halo, odo_inc) in zip(busy, outputs):
            chips[padded] += halo
            odometer[t] += odo_inc


def _relax(chips, odometer, box: LatticeBox, strategy: Strategy, pool) -> None:
    threshold = 2 * box.d
    if strategy.name == "sweep":
        _sweep(chips, odometer, threshold)
    elif strategy.name == "fifo":
        topplable = ~box.outer_layer()
        _kernels.fifo(chips.reshape(-1), odometer.reshape(-1), topplable.reshape(-1), _offsets(box), threshold)
    else:
        _tiled(chips, odometer, threshold, strategy, pool)


def _grow(chips, odometer, box: LatticeBox, mem_cap: int):
    bigger = LatticeBox(box.d, 2 * box.k)
    _check_capacity(bigger, mem_cap)
    return _embed(chips, box.k, bigger.k), _embed(odometer, box.k, bigger.k), bigger


def _needs_growth(chips, box: LatticeBox) -> bool:
    return bool(np.any(chips[box.outer_layer()] >= 2 * box.d))


def check_certificate(eta: ChipGrid, lower: Odometer) -> bool:
    """True when ``eta + Lap(lower) >= 2d - 1`` wherever ``lower > 0``.

    Such a field never exceeds the true odometer, so it may be toppled up
    front (possibly out of legal order) without changing the result.
    """
    k = max(eta.box.k, lower.box.k) + 1
    e = _embed(eta.counts, eta.box.k, k)
    low = _embed(lower.topples, lower.box.k, k)
    lap = laplacian_array(low)
    support = low > 0
    return bool(np.all(low >= 0) and np.all((e + lap)[support] >= 2 * eta.d - 1))


def _verify(eta: np.ndarray, final: np.ndarray, odometer: np.ndarray, d: int) -> None:
    if int(final.sum()) != int(eta.sum()):
        raise InvariantViolation("chip count not conserved")
    if final.size and (final.min() < min(0, int(eta.min())) or final.max() > 2 * d - 1):
        raise InvariantViolation("final configuration is not stable")
    if odometer.size and odometer.min() < 0:
        raise InvariantViolation("negative odometer (integer overflow?)")
    if not np.array_equal(final, eta + laplacian_array(odometer)):
        raise InvariantViolation("final != eta + Lap(odometer)")


def _stabilize_arrays(eta_counts: np.ndarray, box: LatticeBox, strategy: Strategy,
                      mem_cap: int, lower: np.ndarray | None = None):
    """Core loop on raw arrays; ``eta_counts`` may hold negative entries."""
    _check_capacity(box, mem_cap)
    chips = eta_counts.astype(np.int64, copy=True)
    odometer = np.zeros(box.shape, dtype=np.int64)
    if lower is not None:
        chips += laplacian_array(lower)
        odometer += lower
    pool = None
    if strategy.name == "tiled" and strategy.workers > 1:
        pool = ThreadPoolExecutor(max_workers=strategy.workers)
    try:
        while True:
            if _needs_growth(chips, box):
                chips, odometer, box = _grow(chips, odometer, box, mem_cap)
            _relax(chips, odometer, box, strategy, pool)
            if not _needs_growth(chips, box):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return chips, odometer, box


def stabilize(eta, strategy="sweep", *, mem_cap: int = DEFAULT_MEM_CAP,
              lower_bound: Odometer | None = None) -> StabilizeResult:
    """Topple until every site holds fewer than ``2d`` chips.

    ``lower_bound``, if given, must satisfy :func:`check_certificate`; it
    is toppled first and the remainder is found by ``strategy``.
    The box grows (doubling its half-width) whenever an edge site would
    have to topple.
    """
    eta = check_chip_grid(eta)
    check_dimension(eta.d)
    strategy = Strategy.coerce(strategy)
    start = time.perf_counter()
    box = eta.box
    lower = None
    if lower_bound is not None:
        if lower_bound.d != eta.d:
            raise ValueError("lower bound has the wrong dimension")
        if not check_certificate(eta, lower_bound):
            raise ValueError("lower_bound does not satisfy the toppling certificate")
        trimmed = lower_bound.trimmed(margin=1)
        k = max(box.k, trimmed.box.k)
        box = LatticeBox(eta.d, k)
        lower = _embed(trimmed.topples, trimmed.box.k, k)
    counts = _embed(eta.counts, eta.box.k, box.k)
    chips, odometer, box = _stabilize_arrays(counts, box, strategy, mem_cap, lower)
    wall = time.perf_counter() - start
    _verify(_embed(counts, counts.shape[0] // 2, box.k), chips, odometer, box.d)
    return StabilizeResult(
        final=ChipGrid(box, chips),
        odometer=Odometer(box, odometer),
        total_topples=int(odometer.sum()),
        strategy=strategy.tag,
        wall_time=wall,
    )


def initial_half_width(n: int, d: int) -> int:
    coef = 0.45 if d == 2 else 0.35
    return math.ceil(coef * n ** (1.0 / d)) + 4


def _unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def point_pile_lower_bound(n: int, box: LatticeBox) -> Odometer:
    """Certified under-estimate of the odometer of ``n`` chips at the origin.

    Starts from the continuum odometer of a pile spread at density a bit
    above ``2d - 1`` and lowers it until :func:`check_certificate` holds.
    """
    d = box.d
    density = 2 * d - 1 + 1.5
    rho = (n / (density * _unit_ball_volume(d))) ** (1.0 / d)
    r = np.sqrt(box.norm_squared().astype(np.float64))
    centre = (box.k,) * d
    r[centre] = 1.0
    if d == 2:
        green = -np.log(r) / (2 * math.pi)
        green_rho = -math.log(rho) / (2 * math.pi) if rho > 0 else 0.0
    else:
        c = 1.0 / (d * (d - 2) * _unit_ball_volume(d))
        green = c * r ** (2 - d)
        green_rho = c * rho ** (2 - d)
    guess = density / (2 * d) * (r**2 - rho**2) + n * (green - green_rho)
    guess[r >= rho] = 0.0
    nb = sum(guess[tuple(box.k + (s if a == ax else 0) for a in range(d))]
             for ax in range(d) for s in (-1, 1))
    guess[centre] = (nb + n - density) / (2 * d)
    lower = np.maximum(np.floor(guess), 0).astype(np.int64)
    source = np.zeros(box.shape, dtype=np.int64)
    source[centre] = n
    topplable = ~box.outer_layer()
    _kernels.lower_to_certificate(lower.reshape(-1), source.reshape(-1),
                                  topplable.reshape(-1), _offsets(box), 2 * d - 1)
    return Odometer(box, lower)


def stabilize_point_pile(n: int, d: int, strategy="sweep", *, warm_start: bool = True,
                         mem_cap: int = DEFAULT_MEM_CAP) -> StabilizeResult:
    """Stable configuration and odometer for ``n`` chips at the origin."""
    n = check_positive_int(n, "n")
    d = check_dimension(d)
    box = LatticeBox(d, initial_half_width(n, d))
    _check_capacity(box, mem_cap)
    eta = ChipGrid.point(n, d, box.k)
    lower = point_pile_lower_bound(n, box) if warm_start else None
    return stabilize(eta, strategy, mem_cap=mem_cap, lower_bound=lower)


def random_legal_run(eta, seed: int, *, record: bool = False, max_record: int = 10**6,
                     mem_cap: int = DEFAULT_MEM_CAP) -> StabilizeResult:
    """Topple one uniformly chosen unstable site at a time.

    With ``record=True`` the toppled sites are returned in ``sequence``;
    more than ``max_record`` topplings raises :class:`CapacityExceeded`.
    """
    eta = check_chip_grid(eta)
    d = check_dimension(eta.d)
    start = time.perf_counter()
    box = eta.box
    chips = eta.counts.astype(np.int64, copy=True)
    odometer = np.zeros(box.shape, dtype=np.int64)
    buffer = np.empty(max_record if record else 0, dtype=np.int64)
    sequence: list = []
    _kernels.seed_rng(int(seed) % 2**32)
    while True:
        if _needs_growth(chips, box):
            chips, odometer, box = _grow(chips, odometer, box, mem_cap)
        topplable = ~box.outer_layer()
        steps, recorded = _kernels.random_legal(
            chips.reshape(-1), odometer.reshape(-1), topplable.reshape(-1),
            _offsets(box), 2 * d, buffer[: max_record - len(sequence)] if record else buffer)
        if record:
            if recorded < steps:
                raise CapacityExceeded(f"more than {max_record} topplings to record")
            idx = np.stack(np.unravel_index(buffer[:recorded], box.shape), axis=1) - box.k
            sequence.extend(tuple(int(x) for x in row) for row in idx)
        if not _needs_growth(chips, box):
            break
    wall = time.perf_counter() - start
    _verify(_embed(eta.counts, eta.box.k, box.k), chips, odometer, d)
    return StabilizeResult(
        final=ChipGrid(box, chips),
        odometer=Odometer(box, odometer),
        total_topples=int(odometer.sum()),
        strategy="random",
        wall_time=wall,
        sequence=tuple(sequence) if record else None,
    )


class SandpileStabilizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`stabilize`.

    Parameters
    ----------
    strategy : {"sweep", "fifo", "tiled"}
    tile_size : int
        Tile edge for the tiled strategy.
    n_jobs : int
        Worker threads for the tiled strategy.
    mem_cap_gb : float
        Refuse to grow the box past this many GiB of working arrays.

    Attributes
    ----------
    result_ : StabilizeResult
    final_ : ChipGrid
    odometer_ : Odometer
    n_topples_ : int
    """

    def __init__(self, strategy="sweep", tile_size=64, n_jobs=1, mem_cap_gb=4.0):
        self.strategy = strategy
        self.tile_size = tile_size
        self.n_jobs = n_jobs
        self.mem_cap_gb = mem_cap_gb

    def _strategy(self) -> Strategy:
        return Strategy(self.strategy, tile_size=self.tile_size, workers=self.n_jobs)

    def fit(self, X, y=None):
        eta = check_chip_grid(X)
        self.result_ = stabilize(eta, self._strategy(), mem_cap=int(self.mem_cap_gb * 2**30))
        self.final_ = self.result_.final
        self.odometer_ = self.result_.odometer
        self.n_topples_ = self.result_.total_topples
        return self

    def fit_point(self, n, d=2):
        """Fit on ``n`` chips at the origin of ``Z^d`` (warm-started)."""
        self.result_ = stabilize_point_pile(n, d, self._strategy(), mem_cap=int(self.mem_cap_gb * 2**30))
        self.final_ = self.result_.final
        self.odometer_ = self.result_.odometer
        self.n_topples_ = self.result_.total_topples
        return self

    def transform(self, X):
        """Stable counts of ``X`` as an array on the (possibly grown) box."""
        check_is_fitted(self)
        eta = check_chip_grid(X)
        return stabilize(eta, self._strategy(), mem_cap=int(self.mem_cap_gb * 2**30)).final.counts.copy()

    def fit_transform(self, X, y=None):
        return self.fit(X).final_.counts.copy()
