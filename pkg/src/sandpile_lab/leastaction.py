"""Checks of the least action principle on concrete configurations.

The odometer of ``eta`` is the pointwise smallest nonnegative integer field
``v`` with ``eta + Lap(v) <= 2d - 1``. The helpers here test candidate
fields against that inequality, build stabilizing candidates that are not
produced by legal toppling, and compare recorded legal sequences.
"""
from __future__ import annotations

from collections import Counter
from typing import Iterator, NamedTuple

import numpy as np

from .exceptions import BoxMismatch, NotStabilizing
from .lattice import ChipGrid, LatticeBox, Odometer, _embed, laplacian_array
from .stabilizer import DEFAULT_MEM_CAP, Strategy, _stabilize_arrays, random_legal_run, stabilize
from .validation import check_chip_grid, check_odometer

CandidateOdometer = Odometer


class StabilizingCheck(NamedTuple):
    ok: bool
    site: tuple | None


def _common(eta: ChipGrid, v: Odometer):
    if eta.d != v.d:
        raise BoxMismatch(f"dimension mismatch: configuration d={eta.d}, candidate d={v.d}")
    k = max(eta.box.k, v.box.k) + 1
    return LatticeBox(eta.d, k), _embed(eta.counts, eta.box.k, k), _embed(v.topples, v.box.k, k)


def is_stabilizing(eta, v) -> StabilizingCheck:
    """Whether ``eta + Lap(v) <= 2d - 1`` everywhere.

    On failure ``site`` is the first violating site in raster order.
    """
    eta = check_chip_grid(eta)
    v = check_odometer(v)
    box, e, vv = _common(eta, v)
    bad = (e + laplacian_array(vv)) > 2 * box.d - 1
    if not bad.any():
        return StabilizingCheck(True, None)
    first = np.argwhere(bad)[0]
    return StabilizingCheck(False, box.site(first))


def check_least_action(eta, v, odometer: Odometer | None = None) -> bool:
    """Whether the true odometer of ``eta`` lies below ``v`` pointwise.

    ``v`` must be stabilizing. A ``False`` return means a bug somewhere.
    """
    eta = check_chip_grid(eta)
    v = check_odometer(v)
    verdict = is_stabilizing(eta, v)
    if not verdict.ok:
        raise NotStabilizing(f"candidate violates eta + Lap(v) <= 2d-1 at {verdict.site}")
    if odometer is None:
        odometer = stabilize(eta).odometer
    k = max(v.box.k, odometer.box.k)
    return bool(np.all(odometer.embed(k).topples <= v.embed(k).topples))


def _forced(box: LatticeBox, rng: np.random.Generator, region: int, sites: int, most: int) -> np.ndarray:
    forced = np.zeros(box.shape, dtype=np.int64)
    lo, hi = box.k - region, box.k + region + 1
    for _ in range(sites):
        idx = tuple(int(i) for i in rng.integers(lo, hi, size=box.d))
        forced[idx] += int(rng.integers(1, most + 1))
    return forced


def stabilizing_candidates(eta, rng: np.random.Generator, count: int, *,
                           base: Odometer | None = None, max_sites: int = 6,
                           max_forced: int = 3) -> Iterator[Odometer]:
    """Yield ``count`` stabilizing fields built by forced topplings.

    Alternates two constructions. ``extend`` tops up the true odometer with
    forced topplings and restabilizes. ``scratch`` forces topplings on the
    initial configuration itself (ignoring legality, so chip counts may go
    negative) and then stabilizes legally. Either way the sum of forced and
    legal topplings is a nonnegative field whose final configuration is
    stable.
    """
    eta = check_chip_grid(eta)
    if base is None:
        base = stabilize(eta).odometer
    d = eta.d
    reach = max(base.trimmed(0).box.k, eta.trimmed(0).box.k)
    box = LatticeBox(d, reach + 2 * max_sites + 4)
    e = _embed(eta.counts, eta.box.k, box.k)
    b = _embed(base.topples, base.box.k, box.k)
    for i in range(count):
        sites = int(rng.integers(1, max_sites + 1))
        forced = _forced(box, rng, reach + 1, sites, max_forced)
        start = b + forced if i % 2 == 0 else forced
        config = e + laplacian_array(start)
        chips, odo, grown = _stabilize_arrays(config, box, Strategy("sweep"), DEFAULT_MEM_CAP)
        yield Odometer(grown, odo + _embed(start, box.k, grown.k))


def toppling_multiplicity(sequence) -> Counter:
    return Counter(tuple(site) for site in sequence)


def permutation_audit(eta, seed_a: int, seed_b: int, max_topples: int = 10**6) -> bool:
    """Record two random legal stabilizing sequences and compare multisets.

    Raises :class:`~sandpile_lab.exceptions.CapacityExceeded` if either
    sequence is longer than ``max_topples``.
    """
    eta = check_chip_grid(eta)
    a = random_legal_run(eta, seed_a, record=True, max_record=max_topples)
    b = random_legal_run(eta, seed_b, record=True, max_record=max_topples)
    return toppling_multiplicity(a.sequence) == toppling_multiplicity(b.sequence)
