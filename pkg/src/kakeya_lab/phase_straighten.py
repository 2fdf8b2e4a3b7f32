"""Reduce a translation-invariant phase with the proportionality property to a
straight normal form.

For phi(x, t; y) = <x, y> + psi(t; y) whose y-Hessian satisfies

    d_t^2 Hess_y psi(t; y) = c(t) d_t Hess_y psi(t; y),

the pipeline here

1. recovers c(t) and the vector A(t) = d_t^2 grad_y psi - c d_t grad_y psi,
2. solves B'' - c B' + A = 0 and alpha'' + c(alpha) alpha'^2 = 0,
3. builds kappa(x, t) = (x + B(alpha(t)), alpha(t)),
4. checks that phi(kappa(x, t); y) = <x, y> + t h(y) + q(y) + f(t).

All ODEs use classical RK4 with step-doubling error control.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .phase_analysis import check_h1, check_translation_invariant, sample_points
from .phase_expr import PhaseFunction, PhasePoint, deriv_tensor

__all__ = [
    "StraighteningError", "ScalarProfile", "VectorProfile", "Reparam", "Kappa",
    "StraighteningResult", "rk4_step_doubling", "uniform_grid", "default_y_samples",
    "extract_c", "extract_A", "solve_B", "solve_alpha", "assemble_kappa",
    "verify_straightened", "recover_hqf", "straighten",
]

SPREAD_TOL = 1e-6
PROPORTIONALITY_TOL = 1e-6
SINGULAR_TOL = 1e-10
ODE_TOL = 1e-10
MIN_DERIVATIVE = 1e-6
LINEARITY_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-6
HESSIAN_DET_TOL = 1e-8
HQF_STEP = 1e-4


class StraighteningError(RuntimeError):
    """A pipeline stage rejected its input."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message


# ------------------------------------------------------------------ integrator


def rk4_step_doubling(rhs: Callable, t0: float, y0, nodes, tol: float = ODE_TOL,
                      min_step: float = 1e-12) -> np.ndarray:
    """Integrate y' = rhs(t, y) from t0 through the monotone ``nodes``.

    Each accepted step compares one RK4 step of size h with two of size h/2;
    the difference over 15 estimates the local error of the half-step
    result, which must not exceed ``tol``. Steps always land on the nodes.
    """
    def step(t, y, h):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    y = np.array(y0, dtype=float)
    t = float(t0)
    out = np.empty((len(nodes),) + y.shape)
    h = None
    for k, target in enumerate(nodes):
        while t != target:
            span = target - t
            h = span if h is None or abs(h) > abs(span) else np.copysign(abs(h), span)
            full = step(t, y, h)
            half = step(t + h / 2, step(t, y, h / 2), h / 2)
            err = np.max(np.abs(half - full)) / 15.0
            if err <= tol:
                t = target if h == span else t + h
                y = half
                if err < tol / 32:
                    h = 2 * h
            else:
                h = h / 2
                if abs(h) < min_step:
                    raise StraighteningError("integrator", f"step-size control failed near t={t:.6g}")
        out[k] = y
    return out


def _integrate_both_ways(rhs, y0, grid: np.ndarray) -> np.ndarray:
    """Solve from t = 0 outward; ``grid`` must contain 0."""
    zero = int(np.argmin(np.abs(grid)))
    if grid[zero] != 0:
        raise ValueError("integration grid must contain t = 0")
    out = np.empty((len(grid),) + np.shape(y0))
    out[zero] = y0
    if zero + 1 < len(grid):
        out[zero + 1:] = rk4_step_doubling(rhs, 0.0, y0, grid[zero + 1:])
    if zero > 0:
        out[:zero] = rk4_step_doubling(rhs, 0.0, y0, grid[:zero][::-1])[::-1]
    return out


def uniform_grid(t_max: float, step: float) -> np.ndarray:
    n = int(round(t_max / step))
    return np.arange(-n, n + 1) * step


def default_y_samples(phi: PhaseFunction, n: int = 5, radius: float = 0.8) -> np.ndarray:
    """A cube lattice inscribed in the y-ball of radius ``radius * epsilon0``."""
    k = phi.d - 1
    a = radius * phi.epsilon0 / np.sqrt(k)
    line = np.linspace(-a, a, n)
    return np.stack(np.meshgrid(*[line] * k, indexing="ij"), -1).reshape(-1, k)


# ------------------------------------------------------------------ profiles


@dataclass(frozen=True)
class ScalarProfile:
    """Values on a uniform grid, cubic-spline interpolated."""

    t: np.ndarray
    values: np.ndarray
    spread: float = 0.0
    misfit: float = 0.0

    @cached_property
    def _spline(self):
        return CubicSpline(self.t, self.values)

    def __call__(self, s):
        return self._spline(s)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])


@dataclass(frozen=True)
class VectorProfile:
    """R^(d-1)-valued profile; Hermite interpolation when derivatives are known."""

    t: np.ndarray
    values: np.ndarray
    derivative: Optional[np.ndarray] = None
    spread: float = 0.0

    @cached_property
    def _spline(self):
        if self.derivative is None:
            return CubicSpline(self.t, self.values, axis=0)
        return CubicHermiteSpline(self.t, self.values, self.derivative, axis=0)

    def __call__(self, s):
        return self._spline(s)

    def deriv(self, s):
        return self._spline(s, 1)


@dataclass(frozen=True)
class Reparam:
    """alpha and alpha' on a grid; Hermite interpolation in between."""

    t: np.ndarray
    alpha: np.ndarray
    dalpha: np.ndarray

    @cached_property
    def _spline(self):
        return CubicHermiteSpline(self.t, self.alpha, self.dalpha)

    def __call__(self, s):
        return self._spline(s)

    def deriv(self, s):
        return self._spline(s, 1)

    def inverse(self, u) -> np.ndarray:
        """Solve alpha(s) = u by Newton from a piecewise-linear guess."""
        u = np.asarray(u, dtype=float)
        s = np.interp(u, self.alpha, self.t)
        for _ in range(20):
            ds = (self(s) - u) / self.deriv(s)
            s = s - ds
            if np.max(np.abs(ds), initial=0.0) < 1e-15:
                break
        return s


# ------------------------------------------------------------------ extraction


def _psi_tensor(phi, groups, t, ys) -> np.ndarray:
    """Derivative tensor at x = 0 on the (t, y) product grid: shape (n_t, n_y, ...)."""
    k = phi.d - 1
    tt = np.broadcast_to(np.asarray(t, dtype=float)[:, None], (len(t), len(ys)))
    yy = np.broadcast_to(ys[None, :, :], (len(t), len(ys), k))
    return deriv_tensor(phi, groups, PhasePoint(np.zeros(k), tt, yy))


def extract_c(phi: PhaseFunction, t_grid, y_samples) -> ScalarProfile:
    """Least-squares c(t; y) with d_t^2 Hess_y psi ~ c d_t Hess_y psi, averaged over y."""
    t_grid = np.asarray(t_grid, dtype=float)
    ys = np.asarray(y_samples, dtype=float)
    m1 = _psi_tensor(phi, ("t", "y", "y"), t_grid, ys)[:, :, 0]
    m2 = _psi_tensor(phi, ("t", "t", "y", "y"), t_grid, ys)[:, :, 0, 0]
    sv = np.linalg.svd(m1, compute_uv=False)
    if np.min(sv[..., -1]) < SINGULAR_TOL:
        raise StraighteningError("extract_c", "d_t Hess_y psi is singular at a sample")
    n1 = np.sum(m1 * m1, axis=(-2, -1))
    c = np.sum(m1 * m2, axis=(-2, -1)) / n1
    n2 = np.sqrt(np.sum(m2 * m2, axis=(-2, -1)))
    miss = np.sqrt(np.sum((m2 - c[..., None, None] * m1) ** 2, axis=(-2, -1)))
    rel = np.where(n2 > 1e-12, miss / np.where(n2 > 0, n2, 1), 0.0)
    misfit = float(rel.max())
    if misfit > PROPORTIONALITY_TOL:
        raise StraighteningError(
            "extract_c", f"d_t^2 Hess_y psi is not proportional to d_t Hess_y psi "
                         f"(relative misfit {misfit:.3g})")
    spread = float(np.max(c.max(axis=1) - c.min(axis=1)))
    if spread > SPREAD_TOL:
        raise StraighteningError("extract_c", f"c depends on y (spread {spread:.3g})")
    return ScalarProfile(t_grid, c.mean(axis=1), spread, misfit)


def extract_A(phi: PhaseFunction, c: ScalarProfile, t_grid, y_samples) -> VectorProfile:
    """A(t) = d_t^2 grad_y psi - c(t) d_t grad_y psi, averaged over y."""
    t_grid = np.asarray(t_grid, dtype=float)
    ys = np.asarray(y_samples, dtype=float)
    g1 = _psi_tensor(phi, ("t", "y"), t_grid, ys)[:, :, 0]
    g2 = _psi_tensor(phi, ("t", "t", "y"), t_grid, ys)[:, :, 0, 0]
    a = g2 - c(t_grid)[:, None, None] * g1
    spread = float(np.max(a.max(axis=1) - a.min(axis=1)))
    if spread > SPREAD_TOL:
        raise StraighteningError("extract_A", f"A depends on y (spread {spread:.3g})")
    return VectorProfile(t_grid, a.mean(axis=1), spread=spread)


# ------------------------------------------------------------------ ODEs


def solve_B(c: ScalarProfile, A: VectorProfile, t_grid=None) -> VectorProfile:
    """B'' - c B' + A = 0 with B(0) = B'(0) = 0, componentwise."""
    grid = np.asarray(c.t if t_grid is None else t_grid, dtype=float)
    k = A.values.shape[1]

    def rhs(t, state):
        return np.concatenate([state[k:], c(t) * state[k:] - A(t)])

    sol = _integrate_both_ways(rhs, np.zeros(2 * k), grid)
    return VectorProfile(grid, sol[:, :k], sol[:, k:])


def solve_alpha(c: ScalarProfile, t_max: float = 0.1, step: float = 1e-3) -> Reparam:
    """alpha'' + c(alpha) alpha'^2 = 0 with alpha(0) = 0, alpha'(0) = 1."""
    lo, hi = c.span
    grid = uniform_grid(t_max, step)

    def rhs(t, state):
        a, da = state
        if not lo <= a <= hi:
            raise StraighteningError("solve_alpha", f"alpha left the c profile range at t={t:.6g}")
        if da <= MIN_DERIVATIVE:
            raise StraighteningError("solve_alpha", f"alpha' degenerated at t={t:.6g}")
        return np.array([da, -c(a) * da * da])

    sol = _integrate_both_ways(rhs, np.array([0.0, 1.0]), grid)
    if np.min(sol[:, 1]) <= MIN_DERIVATIVE:
        raise StraighteningError("solve_alpha", "alpha' degenerated on the grid")
    return Reparam(grid, sol[:, 0], sol[:, 1])


@dataclass(frozen=True)
class Kappa:
    """kappa(x, t) = (x + B(alpha(t)), alpha(t))."""

    B: VectorProfile
    alpha: Reparam

    def __call__(self, x, t) -> tuple[np.ndarray, np.ndarray]:
        a = self.alpha(np.asarray(t, dtype=float))
        return np.asarray(x, dtype=float) + self.B(a), a

    def jacobian_det(self, t) -> np.ndarray:
        return self.alpha.deriv(t)

    def inverse(self, x, t) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        return np.asarray(x, dtype=float) - self.B(t), self.alpha.inverse(t)

    def apply(self, points) -> np.ndarray:
        """Map (..., d) arrays of (x, t)."""
        points = np.asarray(points, dtype=float)
        x, t = self(points[..., :-1], points[..., -1])
        return np.concatenate([x, t[..., None]], axis=-1)

    def apply_inverse(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        x, t = self.inverse(points[..., :-1], points[..., -1])
        return np.concatenate([x, t[..., None]], axis=-1)


def assemble_kappa(B: VectorProfile, alpha: Reparam) -> Kappa:
    if np.min(alpha.dalpha) <= MIN_DERIVATIVE:
        raise StraighteningError("assemble_kappa", "alpha' vanishes on the grid")
    return Kappa(B, alpha)


# ------------------------------------------------------------------ verification


def _phi_through_kappa(phi, kappa, t, ys, groups=()) -> np.ndarray:
    """Derivative tensor of phi at (kappa(0, t); y) on the (t, y) product grid."""
    k = phi.d - 1
    t = np.asarray(t, dtype=float)
    xk, tk = kappa(np.zeros(k), t)
    pt = PhasePoint(np.broadcast_to(xk[:, None, :], (len(t), len(ys), k)),
                    np.broadcast_to(tk[:, None], (len(t), len(ys))),
                    np.broadcast_to(ys[None], (len(t), len(ys), k)))
    if not groups:
        return np.broadcast_to(phi.evaluate(pt), pt.batch_shape)
    return deriv_tensor(phi, groups, pt)


@dataclass
class Verification:
    residual: float
    x_linearity: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.residual < self.tol and self.x_linearity < LINEARITY_TOL

    def to_dict(self) -> dict:
        return {"residual": self.residual, "x_linearity": self.x_linearity,
                "tol": self.tol, "pass": self.passed}


def verify_straightened(phi: PhaseFunction, kappa: Kappa, t_grid, y_samples,
                        tol: float = 1e-6) -> Verification:
    """Max norm of d^2/dt^2 grad_y phi(kappa(0, t); y) on the grid.

    Central second differences with the grid spacing h and 2h, combined by
    Richardson extrapolation. Also checks
    phi(kappa(x, t); y) - phi(kappa(0, t); y) = <x, y>.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    ys = np.asarray(y_samples, dtype=float)
    g = _phi_through_kappa(phi, kappa, t_grid, ys, ("y",))
    h = t_grid[1] - t_grid[0]
    d1 = (g[2:] - 2 * g[1:-1] + g[:-2]) / h ** 2
    d2 = (g[4:] - 2 * g[2:-2] + g[:-4]) / (2 * h) ** 2
    rich = (4 * d1[1:-1] - d2) / 3
    residual = float(np.max(np.linalg.norm(rich, axis=-1)))

    k = phi.d - 1
    rng = np.random.default_rng(0)
    xs = rng.uniform(-0.5, 0.5, (4, k)) * phi.epsilon0 / np.sqrt(k)
    base = _phi_through_kappa(phi, kappa, t_grid, ys)
    xk, tk = kappa(np.zeros(k), t_grid)
    lin = 0.0
    for x in xs:
        pt = PhasePoint(np.broadcast_to((xk + x)[:, None, :], (len(t_grid), len(ys), k)),
                        np.broadcast_to(tk[:, None], (len(t_grid), len(ys))),
                        np.broadcast_to(ys[None], (len(t_grid), len(ys), k)))
        moved = np.broadcast_to(phi.evaluate(pt), pt.batch_shape)
        lin = max(lin, float(np.max(np.abs(moved - base - ys @ x))))
    return Verification(residual, lin, tol)


@dataclass
class HQF:
    t: np.ndarray
    y: np.ndarray
    h: np.ndarray
    q: np.ndarray
    f: np.ndarray
    offset: float
    reconstruction: float
    hessian_det: float

    @property
    def passed(self) -> bool:
        return self.reconstruction < RECONSTRUCTION_TOL and abs(self.hessian_det) > HESSIAN_DET_TOL

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "y": self.y.tolist(), "h": self.h.tolist(),
                "q": self.q.tolist(), "f": self.f.tolist(), "offset": self.offset,
                "reconstruction_residual": self.reconstruction,
                "hessian_det": self.hessian_det, "pass": self.passed}

    def write_csv(self, path) -> None:
        k = self.y.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "t"] + [f"y{i + 1}" for i in range(k)] + ["value"])
            for yv, hv in zip(self.y, self.h):
                w.writerow(["h", ""] + [repr(float(v)) for v in yv] + [repr(float(hv))])
            for yv, qv in zip(self.y, self.q):
                w.writerow(["q", ""] + [repr(float(v)) for v in yv] + [repr(float(qv))])
            for tv, fv in zip(self.t, self.f):
                w.writerow(["f", repr(float(tv))] + [""] * k + [repr(float(fv))])


def recover_hqf(phi: PhaseFunction, kappa: Kappa, t_grid, y_samples) -> HQF:
    """Split Phi(t; y) = phi(kappa(0, t); y) as t h(y) + q(y) + f(t) + Phi(0; 0)."""
    t_grid = np.asarray(t_grid, dtype=float)
    ys = np.asarray(y_samples, dtype=float)
    origin = np.zeros((1, ys.shape[1]))
    pts = np.vstack([origin, ys])

    def dt(s):
        vals = _phi_through_kappa(phi, kappa, np.array([s, -s]), pts)
        return (vals[0] - vals[1]) / (2 * s)

    slope = (4 * dt(HQF_STEP / 2) - dt(HQF_STEP)) / 3
    h = slope[1:] - slope[0]
    at0 = _phi_through_kappa(phi, kappa, np.array([0.0]), pts)[0]
    offset = float(at0[0])
    q = at0[1:] - offset
    f = _phi_through_kappa(phi, kappa, t_grid, origin)[:, 0] - offset
    full = _phi_through_kappa(phi, kappa, t_grid, ys)
    model = t_grid[:, None] * h[None] + q[None] + f[:, None] + offset
    recon = float(np.max(np.abs(full - model)))

    # Hessian of h at y = 0 from the symbolic tensor contracted with d kappa/dt at t = 0
    k = phi.d - 1
    xk, tk = kappa(np.zeros(k), np.array(0.0))
    vel = np.concatenate([kappa.B.deriv(tk) * kappa.alpha.deriv(0.0), [kappa.alpha.deriv(0.0)]])
    tensor = deriv_tensor(phi, ("X", "y", "y"), PhasePoint(xk, tk, np.zeros(k)))
    det = float(np.linalg.det(np.einsum("i,ijk->jk", vel, tensor)))
    return HQF(t_grid, ys, h, q, f, offset, recon, det)


# ------------------------------------------------------------------ pipeline


@dataclass
class StraighteningResult:
    phase: dict
    c: ScalarProfile
    A: VectorProfile
    B: VectorProfile
    alpha: Reparam
    kappa: Kappa
    verification: Verification
    hqf: HQF
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verification.passed and self.hqf.passed

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "pass": self.passed,
            "c": {"t": self.c.t.tolist(), "values": self.c.values.tolist(),
                  "y_spread": self.c.spread, "proportionality_misfit": self.c.misfit},
            "A": {"t": self.A.t.tolist(), "values": self.A.values.tolist(),
                  "y_spread": self.A.spread},
            "B": {"t": self.B.t.tolist(), "values": self.B.values.tolist(),
                  "derivative": self.B.derivative.tolist()},
            "alpha": {"t": self.alpha.t.tolist(), "values": self.alpha.alpha.tolist(),
                      "derivative": self.alpha.dalpha.tolist(),
                      "min_derivative": float(np.min(self.alpha.dalpha))},
            "verification": self.verification.to_dict(),
            "hqf": self.hqf.to_dict(),
            "notes": list(self.notes),
        }


def straighten(phi: PhaseFunction, t_max: float = 0.1, step: float = 1e-3,
               profile_radius: float = 0.8, y_samples=None, tol: float = 1e-6) -> StraighteningResult:
    """Run every stage; raises :class:`StraighteningError` at the first rejection.

    c, A and B live on [-R, R] with R = profile_radius * epsilon0 so that
    alpha, computed on [-t_max, t_max], can be composed with them.
    """
    ys = default_y_samples(phi) if y_samples is None else np.asarray(y_samples, dtype=float)
    probe = sample_points(phi, 3)
    if not check_translation_invariant(phi, probe).passed:
        raise StraighteningError("precondition", "phase is not translation invariant")
    if not check_h1(phi, probe).passed:
        raise StraighteningError("precondition", "mixed Hessian is rank deficient")
    wide = uniform_grid(profile_radius * phi.epsilon0, step)
    c = extract_c(phi, wide, ys)
    A = extract_A(phi, c, wide, ys)
    B = solve_B(c, A)
    alpha = solve_alpha(c, t_max, step)
    kappa = assemble_kappa(B, alpha)
    ver = verify_straightened(phi, kappa, alpha.t, ys, tol)
    hqf = recover_hqf(phi, kappa, alpha.t, ys)
    return StraighteningResult(phi.to_spec(), c, A, B, alpha, kappa, ver, hqf)
