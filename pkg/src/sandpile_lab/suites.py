"""Seeded property suites behind ``sandpile-lab verify``.

Each suite returns a :class:`SuiteResult`; on failure the offending inputs
are kept so the caller can dump them as sfield files.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import sfield
from .green import GreenProblem, boundary_mask, continuum_phi_on_box, solve_phi_n
from .lattice import ChipGrid, laplacian_array
from .leastaction import check_least_action, is_stabilizing, permutation_audit, stabilizing_candidates
from .stabilizer import STRATEGIES, Strategy, random_legal_run, stabilize


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    detail: str = ""
    counterexamples: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "cases": self.cases, "detail": self.detail}


def random_configuration(rng: np.random.Generator, d: int, side: int, high: int | None = None) -> ChipGrid:
    high = 4 * d if high is None else high
    return ChipGrid.from_array(rng.integers(0, high + 1, size=(side,) * d))


def conservation_suite(rng, cases: int = 10) -> SuiteResult:
    for i in range(cases):
        d = 2 if i % 2 == 0 else 3
        eta = random_configuration(rng, d, 9 if d == 2 else 5)
        res = stabilize(eta)
        s, v = res.final, res.odometer
        k = max(s.box.k, eta.box.k) + 1
        lap = laplacian_array(v.embed(k).topples)
        if (s.total() != eta.total() or s.counts.max() > 2 * d - 1
                or not np.array_equal(s.embed(k).counts, eta.embed(k).counts + lap)):
            return SuiteResult("conservation", False, i + 1, f"case {i} (d={d})", {"eta": eta})
    return SuiteResult("conservation", True, cases)


def abelian_suite(rng, cases: int = 4, orders: int = 5) -> SuiteResult:
    for i in range(cases):
        d = 2 if i % 2 == 0 else 3
        eta = random_configuration(rng, d, 11 if d == 2 else 5)
        ref = stabilize(eta, "fifo")
        runs = [stabilize(eta, Strategy(name, tile_size=4)) for name in STRATEGIES]
        runs += [random_legal_run(eta, int(rng.integers(2**31))) for _ in range(orders)]
        for run in runs:
            if run.final != ref.final or run.odometer != ref.odometer:
                return SuiteResult("abelian", False, i + 1, f"{run.strategy} disagrees with fifo", {"eta": eta})
    return SuiteResult("abelian", True, cases)


def least_action_suite(rng, cases: int = 3, candidates: int = 20) -> SuiteResult:
    for i in range(cases):
        eta = random_configuration(rng, 2, 7)
        odometer = stabilize(eta).odometer
        if not is_stabilizing(eta, odometer).ok:
            return SuiteResult("least_action", False, i + 1, "odometer is not stabilizing", {"eta": eta})
        for j, v in enumerate(stabilizing_candidates(eta, rng, candidates, base=odometer)):
            if not check_least_action(eta, v, odometer):
                return SuiteResult("least_action", False, i + 1, f"candidate {j} lies below the odometer",
                                   {"eta": eta, "candidate": v})
    return SuiteResult("least_action", True, cases * candidates)


def permutation_suite(rng, cases: int = 3) -> SuiteResult:
    for i in range(cases):
        eta = random_configuration(rng, 2, 9)
        a, b = (int(x) for x in rng.integers(2**31, size=2))
        if not permutation_audit(eta, a, b):
            return SuiteResult("permutation", False, i + 1, f"seeds {a}, {b}", {"eta": eta})
    return SuiteResult("permutation", True, cases)


def green_suite(rng, cases: int = 2) -> SuiteResult:
    for i, (d, n) in enumerate([(2, 400), (3, 400)][:cases]):
        problem = GreenProblem(d, n, 1.2)
        phi, info = solve_phi_n(problem, return_info=True)
        domain = problem.domain()
        edge = boundary_mask(domain)
        exact = continuum_phi_on_box(phi.box, phi.h)
        if info.residual > problem.tol or not np.array_equal(phi.values[edge], exact[edge]):
            return SuiteResult("green", False, i + 1, f"d={d} n={n}", {"phi": phi})
    return SuiteResult("green", True, cases)


SUITES = {
    "conservation": conservation_suite,
    "abelian": abelian_suite,
    "least_action": least_action_suite,
    "permutation": permutation_suite,
    "green": green_suite,
}


def run_suites(seed: int, names=None) -> list[SuiteResult]:
    """Run the named suites (all by default), each from its own child seed."""
    names = list(SUITES) if names is None else list(names)
    children = np.random.SeedSequence(seed).spawn(len(SUITES))
    streams = dict(zip(SUITES, children))
    return [SUITES[name](np.random.default_rng(streams[name])) for name in names]


def dump_counterexamples(results, directory) -> list[str]:
    """Write every counterexample as ``<suite>-<label>.sfield``; returns the paths."""
    paths = []
    for res in results:
        for label, value in res.counterexamples.items():
            os.makedirs(directory, exist_ok=True)
            path = os.path.join(directory, f"{res.name}-{label}.sfield")
            sfield.write(path, value)
            paths.append(path)
    return paths
