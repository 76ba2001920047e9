"""Fundamental solution of the lattice Laplacian on ``h Z^d``.

The lattice field is obtained as a Dirichlet problem on the ball
``E = {|x| < R'}``: ``Lap_h u = -n delta_0`` inside, and ``u`` equal to the
continuum Newtonian potential on and outside the lattice boundary of ``E``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from .exceptions import BoxMismatch, NoConvergence, SingularBoundary, SingularPoint
from .lattice import LatticeBox, RealField, laplacian_array, nn_sample
from .validation import check_dimension, check_positive_int, check_tolerance


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _radius(x: np.ndarray) -> np.ndarray:
    # sorted squares: identical result under permutations and sign flips
    return np.sqrt(np.sort(x * x, axis=-1).sum(axis=-1))


def continuum_phi(x, d: int | None = None):
    """Newtonian potential: ``-log|x| / 2pi`` for d=2,
    ``|x|^(2-d) / (d (d-2) |B_1|)`` for d>=3.

    ``x`` is a single point or an array of points along the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    if d is None:
        d = x.shape[-1]
    if x.shape[-1] != d:
        raise ValueError(f"points have dimension {x.shape[-1]}, expected {d}")
    r = _radius(x)
    if np.any(r == 0):
        raise SingularPoint("the fundamental solution is singular at the origin")
    if d == 2:
        out = -np.log(r) / (2 * math.pi)
    elif d >= 3:
        out = r ** (2 - d) / (d * (d - 2) * unit_ball_volume(d))
    else:
        raise ValueError("dimension must be >= 2")
    return float(out) if out.ndim == 0 else out


def continuum_phi_on_box(box: LatticeBox, h: float) -> np.ndarray:
    """Continuum potential at every site ``h z`` of ``box``; NaN at 0."""
    r = h * np.sqrt(box.norm_squared().astype(np.float64))
    with np.errstate(divide="ignore"):
        if box.d == 2:
            out = -np.log(r) / (2 * math.pi)
        else:
            out = r ** (2 - box.d) / (box.d * (box.d - 2) * unit_ball_volume(box.d))
    out[(box.k,) * box.d] = np.nan
    return out


@dataclass(frozen=True)
class GreenProblem:
    """Discrete fundamental solution request for ``n`` chips in ``Z^d``.

    ``radius`` is the outer radius ``R'`` of the solve in rescaled units.
    """

    d: int
    n: int
    radius: float
    tol: float = 1e-10
    max_iter: int = 50_000

    def __post_init__(self):
        check_dimension(self.d)
        check_positive_int(self.n, "n")
        if not self.radius > 0:
            raise ValueError(f"outer radius must be positive, got {self.radius}")
        check_tolerance(self.tol)
        check_positive_int(self.max_iter, "max_iter")

    @property
    def h(self) -> float:
        return self.n ** (-1.0 / self.d)

    def box(self) -> LatticeBox:
        return LatticeBox(self.d, math.ceil(self.radius / self.h) + 2)

    def domain(self) -> np.ndarray:
        """Mask of the interior set ``E = hZ^d ∩ B_R'``."""
        box = self.box()
        return box.norm_squared() * (self.h * self.h) < self.radius**2


class SolveInfo(NamedTuple):
    iterations: int
    residual: float


def boundary_mask(domain: np.ndarray) -> np.ndarray:
    """Sites outside ``domain`` with a neighbour inside it."""
    padded = np.pad(domain, 1)
    near = np.zeros_like(padded)
    for axis in range(domain.ndim):
        near |= np.roll(padded, 1, axis) | np.roll(padded, -1, axis)
    return (near & ~padded)[(slice(1, -1),) * domain.ndim]


def _neg_lap(p: np.ndarray, out: np.ndarray) -> np.ndarray:
    d = p.ndim
    core = (slice(1, -1),) * d
    out.fill(0.0)
    out[core] = 2 * d * p[core]
    for axis in range(d):
        for lo, hi in ((0, -2), (2, None)):
            sl = list(core)
            sl[axis] = slice(lo, hi)
            out[core] -= p[tuple(sl)]
    return out


def solve_dirichlet(domain: np.ndarray, fixed: np.ndarray, rhs: np.ndarray, h: float,
                    tol: float = 1e-10, max_iter: int = 50_000,
                    guess: np.ndarray | None = None) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``Lap_h u = rhs`` on ``domain`` with ``u = fixed`` elsewhere.

    Jacobi-preconditioned conjugate gradients on the negated Laplacian.
    Stops once ``max |Lap_h u - rhs| <= tol * max(1, max |rhs|)`` over the
    domain. ``domain`` must not touch the outer layer of the array.
    """
    d = domain.ndim
    if domain[(slice(1, -1),) * d].sum() != domain.sum():
        raise BoxMismatch("solve domain touches the edge of the array")
    scale = max(1.0, float(np.abs(rhs[domain]).max()) if domain.any() else 1.0)
    target = 0.5 * tol * scale * h * h
    u = np.where(domain, 0.0 if guess is None else guess, fixed)
    u = np.where(np.isfinite(u), u, 0.0)
    # lattice units: r = -h^2 rhs - (-Lap_1 u), so Lap_h residual = r / h^2
    r = np.where(domain, -(h * h) * rhs - _neg_lap(u, np.empty_like(u)), 0.0)
    inv_diag = 1.0 / (2.0 * d)
    flat_u, flat_r = u.reshape(-1), r.reshape(-1)
    flat_domain = np.ascontiguousarray(domain).reshape(-1)
    steps = [stride // u.itemsize for stride in u.strides]
    offsets = np.array([s * sign for s in steps for sign in (-1, 1)], dtype=np.int64)
    p = flat_r * inv_diag
    ap = np.empty_like(p)
    rz = float(np.vdot(flat_r, p))
    worst = float(np.abs(flat_r).max())
    iterations = 0
    while worst > target:
        if iterations >= max_iter:
            raise NoConvergence(f"no convergence after {max_iter} iterations (residual {worst / (h * h):.3e})")
        alpha = rz / _kernels.cg_apply(p, ap, flat_domain, offsets)
        rz_next, worst = _kernels.cg_update(flat_u, flat_r, p, ap, alpha, inv_diag)
        _kernels.cg_direction(p, flat_r, rz_next / rz, inv_diag)
        rz = rz_next
        iterations += 1
    residual = np.abs(laplacian_array(u, h)[domain] - rhs[domain]).max() / scale if domain.any() else 0.0
    return u, SolveInfo(iterations, float(residual))


def relative_residual(field: RealField, n: int, domain: np.ndarray) -> float:
    """``max over domain of |Lap_h field + n delta_0| / n``."""
    lap = laplacian_array(field.values, field.h)
    lap[(field.box.k,) * field.d] += n
    return float(np.abs(lap[domain]).max() / n)


def solve_phi_n(problem: GreenProblem, return_info: bool = False):
    """Lattice fundamental solution on ``problem.box()``.

    Sites outside the solve domain carry the continuum potential exactly,
    so the field equals the continuum values on the lattice boundary.
    """
    box = problem.box()
    h = problem.h
    n = problem.n
    domain = problem.domain()
    origin = (box.k,) * box.d
    if not domain[origin]:
        raise SingularBoundary("origin lies on the boundary of the solve domain")
    phi = continuum_phi_on_box(box, h)
    # unit source: solve for Phi / n, multiply back afterwards
    fixed = np.where(domain, 0.0, phi / n)
    rhs = np.zeros(box.shape)
    rhs[origin] = -1.0
    guess = phi / n
    nb = tuple(box.k + (1 if a == 0 else 0) for a in range(box.d))
    guess[origin] = guess[nb] + h * h / (2 * box.d)
    scaled, info = solve_dirichlet(domain, fixed, rhs, h, problem.tol, problem.max_iter, guess)
    values = np.where(domain, n * scaled, phi)
    field = RealField(box, h, values)
    residual = relative_residual(field, n, domain)
    if residual > problem.tol:
        raise NoConvergence(f"relative residual {residual:.3e} exceeds tolerance {problem.tol:.1e}")
    if return_info:
        return field, SolveInfo(info.iterations, residual)
    return field


class BarrierReport(NamedTuple):
    passed: bool
    lower_margin: float
    upper_margin: float
    sites_checked: int


def barrier_bounds(w: RealField, phi_hat: RealField, R: float, slack: float = 1e-8) -> BarrierReport:
    """Check the two-sided barrier for ``w`` on ``E = hZ^d ∩ B_R``::

        |x|^2 - (R + h)^2 + min_{dE} (-phi_hat) <= w(x) <= max_{dE} (-phi_hat)

    Margins are the smallest slack on each side; the check passes when both
    are at least ``-slack``.
    """
    if w.d != phi_hat.d or w.box != phi_hat.box or w.h != phi_hat.h:
        raise BoxMismatch("w and phi_hat must share box and spacing")
    h = w.h
    box = w.box
    if math.ceil(R / h) + 1 > box.k:
        raise BoxMismatch(f"box k={box.k} does not cover B_(R+h) with R={R}")
    r2 = box.norm_squared() * (h * h)
    inside = r2 < R * R
    edge = boundary_mask(inside)
    neg_phi = -phi_hat.values[edge]
    lower = r2[inside] - (R + h) ** 2 + neg_phi.min()
    upper = neg_phi.max()
    vals = w.values[inside]
    lower_margin = float((vals - lower).min())
    upper_margin = float((upper - vals).min())
    return BarrierReport(
        lower_margin >= -slack and upper_margin >= -slack,
        lower_margin, upper_margin, int(inside.sum()),
    )


def annulus_error(field: RealField, inner: float = 0.5, outer: float = 1.0) -> float:
    """``max |field - Phi|`` over lattice sites with ``inner <= |x| <= outer``."""
    r = field.h * np.sqrt(field.box.norm_squared().astype(np.float64))
    ring = (r >= inner) & (r <= outer)
    if not ring.any():
        raise ValueError("annulus contains no lattice sites of the field")
    exact = continuum_phi_on_box(field.box, field.h)
    return float(np.abs(field.values[ring] - exact[ring]).max())


class FundamentalSolution(BaseEstimator):
    """Estimator wrapper around :func:`solve_phi_n`.

    ``fit`` takes no data; ``predict`` reads the lattice field at arbitrary
    points by nearest-neighbour interpolation.
    """

    def __init__(self, n=10_000, d=2, radius=1.5, tol=1e-10, max_iter=50_000):
        self.n = n
        self.d = d
        self.radius = radius
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X=None, y=None):
        problem = GreenProblem(self.d, self.n, self.radius, self.tol, self.max_iter)
        self.field_, info = solve_phi_n(problem, return_info=True)
        self.n_iter_ = info.iterations
        self.residual_ = info.residual
        self.domain_ = problem.domain()
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}, got {X.shape[1]}")
        return nn_sample(self.field_, X)
