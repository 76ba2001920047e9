"""Lattice boxes, dense fields on them, and the discrete operators shared by
every other module.

Sites are integer tuples ``(x_1, ..., x_d)``. A :class:`LatticeBox` of
half-width ``k`` stores the cube ``{-k..k}^d`` as a dense C-ordered array
whose index along axis ``i`` is ``x_i + k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import BoxMismatch, OutOfBounds

Site = tuple[int, ...]


@dataclass(frozen=True)
class LatticeBox:
    """Origin-centered box ``{-k..k}^d`` of the integer lattice."""

    d: int
    k: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if self.k < 1:
            raise ValueError(f"half-width must be >= 1, got {self.k}")

    @property
    def side(self) -> int:
        return 2 * self.k + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def size(self) -> int:
        return self.side**self.d

    def contains(self, site: Sequence[int]) -> bool:
        return len(site) == self.d and all(-self.k <= x <= self.k for x in site)

    def index(self, site: Sequence[int]) -> tuple[int, ...]:
        if not self.contains(site):
            raise OutOfBounds(f"site {tuple(site)} outside box d={self.d} k={self.k}")
        return tuple(int(x) + self.k for x in site)

    def site(self, index: Sequence[int]) -> Site:
        return tuple(int(i) - self.k for i in index)

    def coordinates(self) -> list[np.ndarray]:
        """Open-mesh coordinate arrays, one per axis (broadcastable)."""
        axis = np.arange(-self.k, self.k + 1)
        out = []
        for i in range(self.d):
            shape = [1] * self.d
            shape[i] = self.side
            out.append(axis.reshape(shape))
        return out

    def norm_squared(self) -> np.ndarray:
        """Integer array of ``|x|^2`` over the box."""
        total = np.zeros(self.shape, dtype=np.int64)
        for c in self.coordinates():
            total = total + c.astype(np.int64) ** 2
        return total

    def outer_layer(self) -> np.ndarray:
        """Boolean mask of the sites with some coordinate equal to ``+-k``."""
        mask = np.zeros(self.shape, dtype=bool)
        for c in self.coordinates():
            mask |= np.abs(c) == self.k
        return mask


def _embed(values: np.ndarray, k_old: int, k_new: int, fill=0) -> np.ndarray:
    d = values.ndim
    if k_new == k_old:
        return values.copy()
    if k_new > k_old:
        out = np.full((2 * k_new + 1,) * d, fill, dtype=values.dtype)
        off = k_new - k_old
        out[(slice(off, off + 2 * k_old + 1),) * d] = values
        return out
    off = k_old - k_new
    inner = (slice(off, off + 2 * k_new + 1),) * d
    rest = values.copy()
    rest[inner] = fill
    if np.any(rest != fill):
        raise BoxMismatch(f"cannot shrink box from k={k_old} to k={k_new}: data outside")
    return values[inner].copy()


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values)
    values.flags.writeable = False
    return values


def _box_for_array(values: np.ndarray) -> LatticeBox:
    shape = values.shape
    if values.ndim < 1 or len(set(shape)) != 1 or shape[0] % 2 == 0 or shape[0] < 3:
        raise ValueError(f"expected an odd cube array of side >= 3, got shape {shape}")
    return LatticeBox(values.ndim, shape[0] // 2)


class _IntField:
    _kind = "field"

    def __init__(self, box: LatticeBox, values: np.ndarray):
        values = np.asarray(values)
        if values.shape != box.shape:
            raise BoxMismatch(f"array shape {values.shape} does not match box shape {box.shape}")
        if not np.issubdtype(values.dtype, np.integer):
            raise TypeError(f"{self._kind} values must be integers, got {values.dtype}")
        values = values.astype(np.int64, copy=True)
        if values.size and values.min() < 0:
            raise ValueError(f"{self._kind} values must be nonnegative")
        self.box = box
        self._values = _frozen(values)

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values)
        return cls(_box_for_array(values), values)

    @classmethod
    def zeros(cls, box: LatticeBox):
        return cls(box, np.zeros(box.shape, dtype=np.int64))

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __getitem__(self, site: Sequence[int]) -> int:
        if not self.box.contains(site):
            if len(site) != self.box.d:
                raise OutOfBounds(f"site {tuple(site)} has wrong dimension")
            return 0
        return int(self._values[self.box.index(site)])

    def total(self) -> int:
        return int(self._values.sum())

    def embed(self, k: int):
        """Same field on the box of half-width ``k`` (grow or lossless shrink)."""
        return type(self)(LatticeBox(self.d, k), _embed(self._values, self.box.k, k))

    def trimmed(self, margin: int = 1):
        """Smallest origin-centered box holding the support, plus ``margin``."""
        nz = np.argwhere(self._values != 0)
        reach = int(np.abs(nz - self.box.k).max()) if len(nz) else 0
        return self.embed(max(reach + margin, 1))

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        if other.d != self.d:
            return False
        k = max(self.box.k, other.box.k)
        return np.array_equal(self.embed(k).values, other.embed(k).values)

    __hash__ = None

    def __repr__(self):
        return f"{type(self).__name__}(d={self.d}, k={self.box.k}, total={self.total()})"


class ChipGrid(_IntField):
    """Nonnegative chip counts on a lattice box; zero outside the box."""

    _kind = "chip count"

    @property
    def counts(self) -> np.ndarray:
        return self._values

    @classmethod
    def point(cls, n: int, d: int, k: int = 1) -> "ChipGrid":
        box = LatticeBox(d, k)
        counts = np.zeros(box.shape, dtype=np.int64)
        counts[(k,) * d] = n
        return cls(box, counts)


class Odometer(_IntField):
    """Nonnegative per-site toppling counts."""

    _kind = "toppling count"

    @property
    def topples(self) -> np.ndarray:
        return self._values


class RealField:
    """Real values on the scaled lattice ``h Z^d`` restricted to a box."""

    def __init__(self, box: LatticeBox, h: float, values: np.ndarray):
        h = float(h)
        if not h > 0 or not math.isfinite(h):
            raise ValueError(f"lattice spacing must be positive, got {h}")
        values = np.array(values, dtype=np.float64)
        if values.shape != box.shape:
            raise BoxMismatch(f"array shape {values.shape} does not match box shape {box.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.box = box
        self.h = h
        self._values = _frozen(values)

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __getitem__(self, site: Sequence[int]) -> float:
        return float(self._values[self.box.index(site)])

    def positions(self) -> list[np.ndarray]:
        """Physical coordinates ``h z`` per axis (broadcastable)."""
        return [self.h * c for c in self.box.coordinates()]

    def __repr__(self):
        return f"RealField(d={self.d}, k={self.box.k}, h={self.h!r})"


def _raw(field) -> tuple[np.ndarray, float, LatticeBox]:
    if isinstance(field, RealField):
        return field.values, field.h, field.box
    if isinstance(field, _IntField):
        return field.values, 1.0, field.box
    raise TypeError(f"expected a lattice field, got {type(field).__name__}")


def discrete_laplacian(field, site: Sequence[int]):
    """``h^-2 * sum over neighbours y of (u(y) - u(x))`` at one site.

    Integer fields (``h = 1``) give an exact Python ``int``.
    """
    values, h, box = _raw(field)
    idx = box.index(site)
    total = 0
    for axis in range(box.d):
        for step in (-1, 1):
            nb = list(idx)
            nb[axis] += step
            if not 0 <= nb[axis] < box.side:
                raise OutOfBounds(f"neighbour of {tuple(site)} leaves the box")
            total += values[tuple(nb)] - values[idx]
    if isinstance(field, RealField):
        return float(total) / (h * h)
    return int(total)


def laplacian_array(values: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Discrete Laplacian of a whole array, treating values outside as zero.

    Integer input with ``h == 1`` stays integer and exact. For real fields
    only the interior of the result is meaningful.
    """
    values = np.asarray(values)
    padded = np.pad(values, 1)
    d = values.ndim
    centre = (slice(1, -1),) * d
    out = -2 * d * padded[centre]
    for axis in range(d):
        for lo, hi in ((0, -2), (2, None)):
            sl = list(centre)
            sl[axis] = slice(lo, hi)
            out = out + padded[tuple(sl)]
    if h != 1.0:
        out = out / (h * h)
    return out


def neighbours(site: Sequence[int]) -> Iterable[Site]:
    for axis in range(len(site)):
        for step in (-1, 1):
            nb = list(site)
            nb[axis] += step
            yield tuple(nb)


def lattice_boundary(members, box: LatticeBox) -> list[Site]:
    """Sites outside ``E`` adjacent to some site of ``E``, in raster order.

    ``members`` is either a boolean array over ``box`` or a predicate on
    site tuples. ``E`` is taken to be a subset of ``box``; boundary sites
    may fall one step outside it.
    """
    if callable(members):
        mask = np.zeros(box.shape, dtype=bool)
        for index in np.ndindex(*box.shape):
            mask[index] = bool(members(box.site(index)))
    else:
        mask = np.asarray(members, dtype=bool)
        if mask.shape != box.shape:
            raise BoxMismatch(f"mask shape {mask.shape} does not match box {box.shape}")
    padded = np.pad(mask, 1)
    adjacent = np.zeros_like(padded)
    for axis in range(box.d):
        adjacent |= np.roll(padded, 1, axis=axis) | np.roll(padded, -1, axis=axis)
    edge = adjacent & ~padded
    return [tuple(int(i) - box.k - 1 for i in idx) for idx in np.argwhere(edge)]


def round_half_down(x):
    """Nearest integer, ties toward minus infinity (0.5 -> 0, -0.5 -> -1)."""
    return np.ceil(np.asarray(x, dtype=np.float64) - 0.5).astype(np.int64)


def nn_interpolate(field: RealField, point: Sequence[float]) -> float:
    """Value at the lattice point nearest ``point`` (ties round down)."""
    if len(point) != field.d:
        raise ValueError(f"point has dimension {len(point)}, field has {field.d}")
    z = round_half_down(np.asarray(point, dtype=np.float64) / field.h)
    return field[tuple(int(c) for c in z)]


def nn_sample(field: RealField, points: np.ndarray) -> np.ndarray:
    """Vectorised :func:`nn_interpolate` over an ``(m, d)`` array of points."""
    points = np.asarray(points, dtype=np.float64)
    z = round_half_down(points / field.h)
    k = field.box.k
    if z.size and np.abs(z).max() > k:
        raise OutOfBounds("sample point rounds to a site outside the field's box")
    idx = tuple((z + k).T)
    return field.values[idx]


def rescale_chips(s: ChipGrid, n: int) -> RealField:
    """Chip field viewed on ``h Z^d`` with ``h = n^(-1/d)``."""
    if n < 1:
        raise ValueError("n must be positive")
    return RealField(s.box, n ** (-1.0 / s.d), s.counts.astype(np.float64))


def rescale_odometer(v: Odometer, n: int) -> RealField:
    """``h^2 v(z)`` on ``h Z^d``."""
    h = n ** (-1.0 / v.d)
    return RealField(v.box, h, h * h * v.topples.astype(np.float64))


def point_mask(box: LatticeBox, predicate: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Boolean mask from a vectorised predicate on stacked coordinates."""
    coords = np.stack(np.broadcast_arrays(*box.coordinates()), axis=-1)
    return np.asarray(predicate(coords), dtype=bool)
