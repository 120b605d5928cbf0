"""Numerical kernel: adaptive ODE integration, small dense solves, root
finding, norm-constrained minimization and an adaptive quadrature oracle.

Everything here is deterministic for fixed inputs and free of module-level
state, so independent calls can run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate
import scipy.optimize

from .errors import (
    ConstraintProjectionFailure,
    NoConvergence,
    NonFiniteDerivative,
    NonFiniteFunction,
    PtError,
    RefinementLimit,
    SingularMatrix,
    StepLimitExceeded,
)


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = math.inf
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0 and self.max_step > 0):
            raise ValueError("tolerances and max_step must be positive")


@dataclass(frozen=True)
class RootFindReport:
    solution: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool


@dataclass
class Trajectory:
    """Accepted steps of an adaptive integration: times, states, derivatives.

    ``sample`` interpolates with a cubic Hermite polynomial on each step,
    which is accurate far beyond the step tolerances used here.
    """

    t: np.ndarray
    y: np.ndarray
    f: np.ndarray = field(repr=False)

    def sample(self, tq):
        scalar = np.isscalar(tq) or np.ndim(tq) == 0
        tq = np.atleast_1d(np.asarray(tq, dtype=float))
        idx = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0, len(self.t) - 2)
        t0 = self.t[idx]
        h = self.t[idx + 1] - t0
        s = np.where(h > 0, (tq - t0) / np.where(h > 0, h, 1.0), 0.0)
        s = np.clip(s, 0.0, 1.0)[:, None]
        hh = h[:, None]
        y0, y1 = self.y[idx], self.y[idx + 1]
        f0, f1 = self.f[idx], self.f[idx + 1]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s**2 * (3 - 2 * s)
        h11 = s**2 * (s - 1)
        out = h00 * y0 + h10 * hh * f0 + h01 * y1 + h11 * hh * f1
        return out[0] if scalar else out

    def final(self):
        return self.t[-1], self.y[-1]


# Dormand-Prince 5(4) coefficients (FSAL).
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B - np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def integrate_adaptive(rhs, y0, t_span, settings: IntegratorSettings = IntegratorSettings()):
    """Integrate ``dy/dt = rhs(t, y)`` with an embedded RK 4(5) pair.

    Uses PI step-size control. Works for real or complex state vectors.
    Returns a :class:`Trajectory` containing every accepted step (both
    endpoints included). If the right-hand side raises a :class:`PtError`
    or produces non-finite values, the partial trajectory is attached to
    the raised exception.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing and non-degenerate")
    y = np.atleast_1d(np.asarray(y0)).astype(
        complex if np.iscomplexobj(y0) else float
    ).copy()

    ts = [t0]
    ys = [y.copy()]

    def _fail(exc, t_fail):
        traj = Trajectory(np.array(ts), np.array(ys), np.array(fs))
        exc.trajectory = traj
        exc.t_fail = t_fail
        raise exc

    try:
        f = np.atleast_1d(np.asarray(rhs(t0, y)))
    except PtError as exc:
        exc.trajectory = Trajectory(np.array(ts), np.array(ys), np.zeros_like(np.array(ys)))
        exc.t_fail = t0
        raise
    if not np.all(np.isfinite(f.view(float))):
        fs = [np.zeros_like(y)]
        _fail(NonFiniteDerivative("rhs not finite at initial state"), t0)
    fs = [f.copy()]

    rtol, atol = settings.rel_tol, settings.abs_tol
    # initial step guess from the scale of y and f
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean(np.abs(y / scale) ** 2))
    d1 = np.sqrt(np.mean(np.abs(f / scale) ** 2))
    h = min(settings.max_step, t1 - t0, 0.01 * d0 / d1 if d1 > 1e-300 else 1e-6)
    h = max(h, 1e-14 * (t1 - t0))

    t = t0
    err_prev = 1.0
    nsteps = 0
    k = np.empty((7,) + y.shape, dtype=y.dtype)
    while t < t1:
        if nsteps >= settings.max_steps:
            _fail(StepLimitExceeded(f"max_steps={settings.max_steps} reached at t={t}"), t)
        h = min(h, t1 - t)
        k[0] = f
        try:
            for i in range(1, 7):
                yi = y + h * (k[:i].T @ _DP_A[i])
                k[i] = rhs(t + _DP_C[i] * h, yi)
        except PtError as exc:
            _fail(exc, t)
        if not np.all(np.isfinite(k.view(float))):
            _fail(NonFiniteDerivative(f"rhs not finite near t={t}"), t)

        y_new = y + h * (k.T @ _DP_B)
        err_vec = h * (k.T @ _DP_E)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean(np.abs(err_vec / scale) ** 2))
        nsteps += 1
        if err <= 1.0:
            t += h
            y = y_new
            f = k[6].copy()  # FSAL
            ts.append(t)
            ys.append(y.copy())
            fs.append(f.copy())
            err_prev = max(err, 1e-10)
        # PI controller
        fac = 0.9 * (err + 1e-300) ** -0.2 * err_prev**0.04
        h *= min(5.0, max(0.2, fac))
        h = min(h, settings.max_step)
        if h <= 1e-15 * max(abs(t), 1.0):
            _fail(NonFiniteDerivative(f"step size underflow at t={t}"), t)

    return Trajectory(np.array(ts), np.array(ys), np.array(fs))


def solve_linear(matrix, rhs, cond_limit=1e14):
    """Solve a small dense linear system, guarding against near-singularity."""
    a = np.asarray(matrix, dtype=float)
    b = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        raise SingularMatrix("non-finite entries in linear system")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrix(f"condition estimate {cond:.3e} exceeds {cond_limit:.1e}")
    return np.linalg.solve(a, b)


def _fd_jacobian(f, x, fx):
    n = len(x)
    jac = np.empty((len(fx), n))
    for i in range(n):
        step = max(1e-7, 1e-7 * abs(x[i]))
        xp = x.copy()
        xp[i] += step
        jac[:, i] = (f(xp) - fx) / step
    return jac


def root_find(f, x0, tol=1e-10, max_iter=200, jac=None):
    """Quasi-Newton (Broyden) root search with finite-difference Jacobian.

    Deterministic: same inputs give the same iterates. Returns a
    :class:`RootFindReport`; convergence is measured in the max norm.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()

    def feval(xv):
        fv = np.atleast_1d(np.asarray(f(xv), dtype=float))
        if not np.all(np.isfinite(fv)):
            raise NonFiniteFunction(f"f({xv}) is not finite")
        return fv

    def newton_step(jac_m, fx_v):
        try:
            return np.linalg.solve(jac_m, -fx_v)
        except np.linalg.LinAlgError:
            # singular model Jacobian: minimum-norm least-squares step; the
            # Broyden updates along it restore an invertible model
            return np.linalg.lstsq(jac_m, -fx_v, rcond=None)[0]

    fx = feval(x)
    if np.max(np.abs(fx)) <= tol:
        return RootFindReport(x, float(np.max(np.abs(fx))), 0, True)
    if jac is None:
        jac = _fd_jacobian(feval, x, fx)
    for it in range(1, max_iter + 1):
        dx = newton_step(jac, fx)
        if not np.all(np.isfinite(dx)) or np.max(np.abs(dx)) == 0.0:
            return RootFindReport(x, float(np.max(np.abs(fx))), it, False)
        # backtracking on the residual norm
        lam = 1.0
        norm0 = np.max(np.abs(fx))
        f_new = None
        for _ in range(40):
            try:
                f_new = feval(x + lam * dx)
            except NonFiniteFunction:
                lam *= 0.5
                continue
            if np.max(np.abs(f_new)) < norm0 or lam < 1e-8:
                break
            lam *= 0.5
        if f_new is None:
            return RootFindReport(x, float(np.max(np.abs(fx))), it, False)
        step = lam * dx
        x = x + step
        df = f_new - fx
        fx = f_new
        if np.max(np.abs(fx)) <= tol:
            return RootFindReport(x, float(np.max(np.abs(fx))), it, True)
        denom = step @ step
        if denom > 0:
            jac = jac + np.outer((df - jac @ step) / denom, step)
        if lam < 1e-6:
            # stagnation: refresh the Jacobian
            jac = _fd_jacobian(feval, x, fx)
    return RootFindReport(x, float(np.max(np.abs(fx))), max_iter, False)


def minimize_norm_constrained(energy, x0, constraint=None, tol=1e-8, project=None,
                              bounds=None, max_iter=500):
    """Minimize ``energy(x)`` subject to ``constraint(x) == 1``.

    ``project``, when given, maps an iterate onto the constraint set exactly
    (used for quadratic norm constraints where rescaling part of the vector
    suffices). After the SQP solve the result is projected so that
    ``|constraint(x*) - 1| <= 1e-10``.

    Returns ``(x*, energy*)``.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()

    if project is None and constraint is not None:
        def project(x):
            c = constraint(x)
            if not np.isfinite(c) or c <= 0:
                raise ConstraintProjectionFailure("cannot normalize zero-norm iterate")
            return x / np.sqrt(c)

    if constraint is not None:
        x0 = project(x0)
        cons = [{"type": "eq", "fun": lambda x: constraint(x) - 1.0}]
    else:
        cons = []

    res = scipy.optimize.minimize(
        energy, x0, method="SLSQP", constraints=cons, bounds=bounds,
        options={"maxiter": max_iter, "ftol": 1e-14},
    )
    x = res.x
    if constraint is not None:
        x = project(x)
        if abs(constraint(x) - 1.0) > 1e-10:
            raise ConstraintProjectionFailure(
                f"constraint residual {abs(constraint(x) - 1.0):.3e}"
            )
        if energy(x) > energy(x0) + 1e-12 * (1 + abs(energy(x0))):
            raise NoConvergence("minimizer did not improve on projected start")
    elif not res.success and res.status != 8:
        raise NoConvergence(res.message)
    return x, float(energy(x))


def _quad_1d(fun, a, b, tol):
    # request tighter accuracy than we verify: quad's error estimate is
    # conservative and routinely lands slightly above the requested eps
    eps = tol / 50.0
    re, err_re = scipy.integrate.quad(lambda x: np.real(fun(x)), a, b,
                                      epsabs=eps, epsrel=eps, limit=200)
    probe = fun(0.5 * (a + b) if np.isfinite(a) and np.isfinite(b) else 0.0)
    if np.iscomplexobj(np.asarray(probe)):
        im, err_im = scipy.integrate.quad(lambda x: np.imag(fun(x)), a, b,
                                          epsabs=eps, epsrel=eps, limit=200)
        val = re + 1j * im
        err = err_re + err_im
    else:
        val, err = re, err_re
    return val, err


def quadrature_oracle(integrand, region, tol=1e-10):
    """Adaptive quadrature over 1-3 dimensions (test oracle, not production).

    ``region`` is a pair ``(a, b)`` or a sequence of such pairs, with
    ``+-inf`` allowed. Complex integrands are handled componentwise. Raises
    :class:`RefinementLimit` if the error estimate exceeds ``tol`` relative
    to ``max(1, |value|)``.
    """
    region = np.asarray(region, dtype=float)
    if region.ndim == 1:
        dims = [region]
    else:
        dims = list(region)
    ndim = len(dims)
    if ndim == 1:
        val, err = _quad_1d(lambda x: integrand(x), dims[0][0], dims[0][1], tol)
    elif ndim == 2:
        def outer(y):
            v, _ = _quad_1d(lambda x: integrand(x, y), dims[0][0], dims[0][1], tol / 10)
            return v
        val, err = _quad_1d(outer, dims[1][0], dims[1][1], tol)
    elif ndim == 3:
        def outer2(z):
            def outer1(y):
                v, _ = _quad_1d(lambda x: integrand(x, y, z),
                                dims[0][0], dims[0][1], tol / 100)
                return v
            v, _ = _quad_1d(outer1, dims[1][0], dims[1][1], tol / 10)
            return v
        val, err = _quad_1d(outer2, dims[2][0], dims[2][1], tol)
    else:
        raise ValueError("only 1-3 dimensions supported")
    if err > tol * max(1.0, abs(val)):
        raise RefinementLimit(f"quadrature error {err:.3e} above tol {tol:.1e}")
    return val
