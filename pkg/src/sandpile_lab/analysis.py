"""Rescaled fields, test-function pairings and cross-n convergence studies."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import BoxMismatch, InvariantViolation, SupportEscape
from .green import GreenProblem, solve_phi_n
from .lattice import ChipGrid, Odometer, RealField, _embed, nn_sample, rescale_chips
from .stabilizer import Strategy, stabilize_point_pile
from .validation import check_dimension, check_positive_int

RADIUS_CAP_2D = 0.45


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported function of ``x`` in ``R^d``.

    ``bump``      ``exp(1 - 1/(1 - |x-c|^2/r^2))`` inside ``B_r(c)``.
    ``polybump``  bump times the monomial ``((x-c)/r)^exponents``.
    ``plateau``   equal to 1 on ``B_inner(c)``, smooth step down to 0 at ``r``.
    """

    __test__ = False  # not a pytest class

    kind: str
    center: tuple
    radius: float
    exponents: tuple | None = None
    inner: float | None = None

    def __post_init__(self):
        if self.kind not in ("bump", "polybump", "plateau"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.kind == "polybump":
            if self.exponents is None or len(self.exponents) != len(self.center):
                raise ValueError("polybump needs one exponent per coordinate")
            if any(e < 0 for e in self.exponents):
                raise ValueError("exponents must be nonnegative")
        if self.kind == "plateau" and not (self.inner is not None and 0 <= self.inner < self.radius):
            raise ValueError("plateau needs 0 <= inner < radius")

    @classmethod
    def bump(cls, center, radius):
        return cls("bump", tuple(float(c) for c in center), float(radius))

    @classmethod
    def polybump(cls, center, radius, exponents):
        return cls("polybump", tuple(float(c) for c in center), float(radius),
                   tuple(int(e) for e in exponents))

    @classmethod
    def plateau(cls, center, inner, outer):
        return cls("plateau", tuple(float(c) for c in center), float(outer), inner=float(inner))

    @classmethod
    def parse(cls, text: str) -> "TestFunction":
        """``bump:0,0:0.3``, ``polybump:0,0:0.3:2,0`` or ``plateau:0,0:0.5:0.8``."""
        parts = text.strip().split(":")
        kind = parts[0].lower()
        try:
            center = [float(c) for c in parts[1].split(",")]
            if kind == "bump" and len(parts) == 3:
                return cls.bump(center, float(parts[2]))
            if kind == "polybump" and len(parts) == 4:
                return cls.polybump(center, float(parts[2]), [int(e) for e in parts[3].split(",")])
            if kind == "plateau" and len(parts) == 4:
                return cls.plateau(center, float(parts[2]), float(parts[3]))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"cannot parse test function {text!r}: {exc}") from None
        raise ValueError(f"cannot parse test function {text!r}")

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def name(self) -> str:
        c = ",".join(f"{x:g}" for x in self.center)
        if self.kind == "bump":
            return f"bump:{c}:{self.radius:g}"
        if self.kind == "polybump":
            return f"polybump:{c}:{self.radius:g}:" + ",".join(str(e) for e in self.exponents)
        return f"plateau:{c}:{self.inner:g}:{self.radius:g}"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = (x - np.asarray(self.center)) / self.radius
        q = np.sum(y * y, axis=-1)
        out = np.zeros(q.shape)
        if self.kind == "plateau":
            rho = np.sqrt(q) * self.radius
            t = np.clip((self.radius - rho) / (self.radius - self.inner), 0.0, 1.0)
            out = _smooth_step(t)
            return out
        inside = q < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - q[inside]))
        if self.kind == "polybump":
            for axis, e in enumerate(self.exponents):
                if e:
                    out = out * y[..., axis] ** e
        return out


def _smooth_step(t: np.ndarray) -> np.ndarray:
    def f(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a, b = f(t), f(1.0 - t)
    return a / (a + b)


def pair(sbar: RealField, phi: TestFunction) -> float:
    """``h^d * sum_z s(z) phi(h z)``: the integral of the piecewise-constant
    field against ``phi`` with cell-centre sampling."""
    if phi.d != sbar.d:
        raise ValueError(f"test function has dimension {phi.d}, field has {sbar.d}")
    reach = sbar.h * sbar.box.k
    if any(abs(c) + phi.radius > reach for c in phi.center):
        raise SupportEscape(f"support of {phi.name} leaves the field's box (half-width {reach:g})")
    pts = np.stack(np.broadcast_arrays(*sbar.positions()), axis=-1)
    return float(sbar.h**sbar.d * np.sum(sbar.values * phi(pts)))


def measured_radius(s: ChipGrid) -> float:
    """Largest Euclidean norm (lattice units) of a site holding chips."""
    occupied = s.counts > 0
    if not occupied.any():
        return 0.0
    return math.sqrt(int(s.box.norm_squared()[occupied].max()))


def wbar_field(v: Odometer, phi_hat: RealField, n: int) -> RealField:
    """``h^2 v(z) - phi_hat(h z)`` on ``phi_hat``'s box."""
    h = n ** (-1.0 / v.d)
    if v.d != phi_hat.d or not math.isclose(h, phi_hat.h, rel_tol=1e-12):
        raise BoxMismatch("odometer and fundamental solution live on different lattices")
    try:
        topples = _embed(v.topples, v.box.k, phi_hat.box.k)
    except BoxMismatch:
        raise BoxMismatch("odometer support extends beyond the fundamental solution's box") from None
    return RealField(phi_hat.box, phi_hat.h, h * h * topples - phi_hat.values)


def sample_grid(radius: float, d: int, points: int = 256) -> np.ndarray:
    """Uniform ``points^d`` grid on the cube ``[-R, R]^d`` restricted to ``B_R``."""
    axis = np.linspace(-radius, radius, points)
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return mesh[np.sum(mesh * mesh, axis=1) < radius * radius]


def sup_gap(a: RealField, b: RealField, points: np.ndarray, chunk: int = 1 << 20) -> float:
    """``max |a - b|`` over ``points``, each field read by nearest neighbour."""
    worst = 0.0
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        worst = max(worst, float(np.abs(nn_sample(a, block) - nn_sample(b, block)).max()))
    return worst


def trend_ok(values, allowed_increases: int = 1) -> bool:
    """True when the sequence ends below where it started (or is identically
    zero) and rises at most ``allowed_increases`` times along the way."""
    values = list(values)
    if len(values) < 2 or not any(values):
        return True
    rises = sum(1 for x, y in zip(values, values[1:]) if y > x)
    return values[-1] < values[0] and rises <= allowed_increases


@dataclass
class ConvergenceReport:
    d: int
    schedule: list
    test_functions: list
    eval_radius: float
    outer_radius: float
    rows: list = field(default_factory=list)
    gaps: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def wbar_gaps(self) -> list[float]:
        return [g["wbar_sup_gap"] for g in self.gaps]

    def pairing_gaps(self, name: str) -> list[float]:
        return [g["pairing_gaps"][name] for g in self.gaps]

    def pairings(self, name: str) -> list[float]:
        return [row["pairings"][name] for row in self.rows]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_convergence_study(schedule, test_functions, d: int = 2, *, strategy="sweep",
                          grid_points: int = 256, radius_factor: float = 1.6,
                          tol: float = 1e-10, keep_fields: bool = False,
                          config: dict | None = None):
    """Stabilize each ``n``, build the regularised odometer and pairings,
    and compare consecutive entries of the schedule.

    All fundamental solutions share one outer radius, ``radius_factor``
    times the largest rescaled pile radius, and gaps are measured on a
    common grid over a ball 5% wider than that pile radius.

    Returns the report, plus ``{n: (sbar, wbar)}`` when ``keep_fields``.
    """
    d = check_dimension(d)
    schedule = [check_positive_int(n, "n") for n in schedule]
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be a nonempty increasing list")
    test_functions = [t if isinstance(t, TestFunction) else TestFunction.parse(t) for t in test_functions]
    for t in test_functions:
        if t.d != d:
            raise ValueError(f"test function {t.name} has dimension {t.d}, expected {d}")
    strategy = Strategy.coerce(strategy)

    piles = {n: stabilize_point_pile(n, d, strategy) for n in schedule}
    rescaled_radius = {n: n ** (-1.0 / d) * measured_radius(piles[n].final) for n in schedule}
    pile_radius = max(rescaled_radius.values())
    eval_radius = 1.05 * pile_radius
    outer_radius = radius_factor * pile_radius
    report = ConvergenceReport(d, schedule, [t.name for t in test_functions],
                               eval_radius, outer_radius, config=dict(config or {}))

    fields = {}
    for n in schedule:
        res = piles[n]
        s = res.final
        h = n ** (-1.0 / d)
        if s.total() != n:
            raise InvariantViolation(f"n={n}: chip total {s.total()} != n")
        if s.counts.min() < 0 or s.counts.max() > 2 * d - 1:
            raise InvariantViolation(f"n={n}: unstable final configuration")
        mass = float(h**d * s.total())
        if abs(mass - 1.0) > 1e-12:
            raise InvariantViolation(f"n={n}: rescaled mass {mass!r} != 1")
        phi_hat, info = solve_phi_n(GreenProblem(d, n, outer_radius, tol), return_info=True)
        # pair on the wider Green box so test functions may reach past the pile
        sbar = rescale_chips(s.embed(phi_hat.box.k), n)
        wbar = wbar_field(res.odometer, phi_hat, n)
        lattice_r = measured_radius(s)
        outside = phi_hat.box.norm_squared() > lattice_r**2
        if not np.array_equal(wbar.values[outside], -phi_hat.values[outside]):
            raise InvariantViolation(f"n={n}: wbar differs from -phi_hat outside the pile")
        ratio = lattice_r / n ** (1.0 / d)
        if d == 2 and n >= 10**4 and ratio > RADIUS_CAP_2D:
            report.warnings.append(f"n={n}: radius ratio {ratio:.4f} above {RADIUS_CAP_2D}")
        report.rows.append({
            "n": n,
            "h": h,
            "mass": mass,
            "s_min": int(s.counts.min()),
            "s_max": int(s.counts.max()),
            "radius": lattice_r,
            "radius_rescaled": rescaled_radius[n],
            "radius_ratio": ratio,
            "total_topples": res.total_topples,
            "green_iterations": info.iterations,
            "green_residual": info.residual,
            "pairings": {t.name: pair(sbar, t) for t in test_functions},
        })
        fields[n] = (sbar, wbar)

    points = sample_grid(eval_radius, d, grid_points)
    for a, b in zip(schedule, schedule[1:]):
        ra, rb = report.rows[schedule.index(a)], report.rows[schedule.index(b)]
        gap = sup_gap(fields[a][1], fields[b][1], points)
        if not math.isfinite(gap):
            raise InvariantViolation(f"non-finite gap between n={a} and n={b}")
        report.gaps.append({
            "n_a": a,
            "n_b": b,
            "wbar_sup_gap": gap,
            "pairing_gaps": {t.name: abs(rb["pairings"][t.name] - ra["pairings"][t.name])
                             for t in test_functions},
        })
    if len(report.gaps) >= 2:
        if not trend_ok(report.wbar_gaps()):
            report.warnings.append("wbar sup gaps do not shrink along the schedule")
        for t in test_functions:
            if not trend_ok(report.pairing_gaps(t.name)):
                report.warnings.append(f"pairing gaps for {t.name} do not shrink along the schedule")
    if keep_fields:
        return report, fields
    return report


class ConvergenceStudy(BaseEstimator):
    """Estimator wrapper around :func:`run_convergence_study`.

    Attributes
    ----------
    report_ : ConvergenceReport
    """

    def __init__(self, schedule=(1000, 4000, 16000), test_functions=("bump:0,0:0.3",), d=2,
                 strategy="sweep", grid_points=256, radius_factor=1.6, tol=1e-10):
        self.schedule = schedule
        self.test_functions = test_functions
        self.d = d
        self.strategy = strategy
        self.grid_points = grid_points
        self.radius_factor = radius_factor
        self.tol = tol

    def fit(self, X=None, y=None):
        self.report_ = run_convergence_study(
            list(self.schedule), list(self.test_functions), self.d, strategy=self.strategy,
            grid_points=self.grid_points, radius_factor=self.radius_factor, tol=self.tol,
            config=self.get_params(),
        )
        return self

    def transform(self, X=None):
        """Pairing table: one row per ``n``, one column per test function."""
        check_is_fitted(self)
        names = self.report_.test_functions
        return np.array([[row["pairings"][nm] for nm in names] for row in self.report_.rows])
