"""ODE integration of velocity fields, fundamental matrices and diagnostics.

The rectified map is R(x) = z(1) where dz/dt = v(t, z), z(0) = x.  The
fundamental matrix Phi(t) = dz(t)/dx solves dPhi/dt = dv/dz(t, z_t) Phi
with Phi(0) = I, and Phi(1, s) = Phi(1) Phi(s)^{-1} propagates a
perturbation made at time s to the endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats
from scipy.spatial.distance import cdist

from .closedform import AffineMap, gaussian_affine_coupling_field
from .core import GaussianParams, SampleSet, Trajectory, VelocityField, as_points
from .errors import IntegrationError, ParameterError, RectflowError
from .geometry import deflate


@dataclass(frozen=True)
class IntegratorSpec:
    """Fixed-step (or adaptive) integration settings.

    Parameters
    ----------
    method : "euler" or "rk4"
    steps : number of uniform steps T
    adaptive : optional {"rtol", "atol", "min_step"}; uses an embedded
        Runge-Kutta 4(5) pair and reports on the uniform grid of ``steps``
    jacobian_mode : "analytic" or "central_fd"
    fd_step : central finite-difference step
    body : optional convex body; states are projected onto body deflated by
        1e-9 after every step (for estimated bounded fields)
    """

    method: str = "rk4"
    steps: int = 1000
    adaptive: Optional[dict] = None
    jacobian_mode: str = "analytic"
    fd_step: float = 1e-5
    body: object = None

    def __post_init__(self):
        if self.method not in ("euler", "rk4"):
            raise ParameterError("method must be 'euler' or 'rk4'")
        if int(self.steps) < 1:
            raise ParameterError("steps must be >= 1")
        if self.jacobian_mode not in ("analytic", "central_fd"):
            raise ParameterError("jacobian_mode must be 'analytic' or 'central_fd'")
        if not 1e-8 <= self.fd_step <= 1e-3:
            raise ParameterError("fd_step must lie in [1e-8, 1e-3]")


def _grid(spec, t_span):
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ParameterError("t_span must be increasing")
    return np.linspace(t0, t1, int(spec.steps) + 1)


def _guard(spec):
    if spec.body is None:
        return None
    inner = deflate(spec.body, 1e-9)
    return inner.project


def _eval(v, t, Z):
    out = v(t, Z)
    if not np.all(np.isfinite(out)):
        bad = np.flatnonzero(~np.all(np.isfinite(out.reshape(-1, Z.shape[-1])), axis=-1))[0]
        z = Z.reshape(-1, Z.shape[-1])[bad]
        raise IntegrationError(f"non-finite velocity at t={t:.6g}, z={z}", t=t, z=z)
    return out


def _step(f, t, Z, h, method):
    if method == "euler":
        return Z + h * f(t, Z)
    k1 = f(t, Z)
    k2 = f(t + 0.5 * h, Z + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, Z + 0.5 * h * k2)
    k4 = f(t + h, Z + h * k3)
    return Z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_batch(v: VelocityField, X, spec: IntegratorSpec = IntegratorSpec(), t_span=(0.0, 1.0)):
    """Integrate many start points at once.

    Returns ``(times, states)`` with states of shape ``(T + 1, m, d)``.
    """
    X = np.atleast_2d(as_points(X, v.dim)).astype(np.float64)
    times = _grid(spec, t_span)
    proj = _guard(spec)
    if spec.adaptive is not None:
        return times, _integrate_adaptive(v, X, spec, times)
    out = np.empty((len(times),) + X.shape)
    Z = proj(X) if proj else X.copy()
    out[0] = Z
    f = lambda t, Y: _eval(v, t, Y)
    for k in range(len(times) - 1):
        h = times[k + 1] - times[k]
        Z = _step(f, times[k], Z, h, spec.method)
        if not np.all(np.isfinite(Z)):
            raise IntegrationError(f"state became non-finite at t={times[k + 1]:.6g}", t=times[k + 1])
        if proj:
            Z = proj(Z)
        out[k + 1] = Z
    return times, out


def _integrate_adaptive(v, X, spec, times):
    opts = dict(spec.adaptive)
    shape = X.shape

    def rhs(t, y):
        return _eval(v, t, y.reshape(shape)).ravel()

    sol = integrate.solve_ivp(rhs, (times[0], times[-1]), X.ravel(), method="RK45",
                              t_eval=times, rtol=opts.get("rtol", 1e-8), atol=opts.get("atol", 1e-10))
    if not sol.success:
        raise IntegrationError(f"adaptive integration failed: {sol.message}")
    steps = np.diff(sol.t)
    if "min_step" in opts and sol.t.size > 1 and steps.min() < opts["min_step"]:
        raise IntegrationError("adaptive step fell below min_step")
    return sol.y.T.reshape((len(times),) + shape)


def integrate_flow(v: VelocityField, x, spec: IntegratorSpec = IntegratorSpec(), t_span=(0.0, 1.0)) -> Trajectory:
    """Integrate dz/dt = v(t, z) from ``x``; the last state is R_hat(x)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    times, states = integrate_batch(v, x[None, :], spec, t_span)
    return Trajectory(times, states[:, 0, :])


def rectified_map(v: VelocityField, xs, spec: IntegratorSpec = IntegratorSpec(), return_errors=False):
    """Endpoints R_hat(x) for a batch of start points.

    If the batched integration fails, points are retried one at a time;
    failed points get NaN endpoints and their errors are collected.
    """
    X = np.atleast_2d(as_points(xs, v.dim))
    try:
        _, states = integrate_batch(v, X, spec)
        out, errors = states[-1], []
    except RectflowError:
        out = np.full(X.shape, np.nan)
        errors = []
        for k, x in enumerate(X):
            try:
                out[k] = integrate_flow(v, x, spec).endpoint
            except RectflowError as exc:
                errors.append((k, exc))
        if errors and not return_errors:
            raise errors[0][1]
    return (out, errors) if return_errors else out


# ---------------------------------------------------------------------------
# Fundamental matrices
# ---------------------------------------------------------------------------

def _jac(v, spec, t, Z):
    if spec.jacobian_mode == "analytic" and v.has_jacobian:
        return v.jacobian(t, Z)
    return v.jacobian(t, Z, fd_step=spec.fd_step)


def fundamental_matrix(v: VelocityField, base: Trajectory, spec: IntegratorSpec = IntegratorSpec()) -> Trajectory:
    """Co-integrate (z, Phi, log det Phi) from the start of ``base`` on its grid.

    The state equation is re-integrated with the same method and grid, so
    the returned states coincide with ``base`` while every Runge-Kutta
    stage has its Jacobian.  ``log_det`` holds int_0^t tr dv/dz ds.
    """
    times = np.asarray(base.times)
    d = base.dim
    z = np.array(base.states[0], dtype=np.float64)
    Phi = np.eye(d)
    ld = 0.0
    Phis = np.empty((len(times), d, d))
    lds = np.empty(len(times))
    Zs = np.empty((len(times), d))
    Phis[0], lds[0], Zs[0] = Phi, ld, z

    def rhs(t, state):
        zz, P, _ = state
        J = _jac(v, spec, t, zz)
        return _eval(v, t, zz), J @ P, float(np.trace(J))

    for k in range(len(times) - 1):
        t, h = times[k], times[k + 1] - times[k]
        s = (z, Phi, ld)
        if spec.method == "euler":
            dz, dP, dl = rhs(t, s)
            z, Phi, ld = z + h * dz, Phi + h * dP, ld + h * dl
        else:
            k1 = rhs(t, s)
            k2 = rhs(t + h / 2, tuple(a + h / 2 * b for a, b in zip(s, k1)))
            k3 = rhs(t + h / 2, tuple(a + h / 2 * b for a, b in zip(s, k2)))
            k4 = rhs(t + h, tuple(a + h * b for a, b in zip(s, k3)))
            z, Phi, ld = (a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
                          for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4))
        Phis[k + 1], lds[k + 1], Zs[k + 1] = Phi, ld, z
    return Trajectory(times, Zs, Phis, lds)


def propagators_to_end(traj: Trajectory):
    """Phi(1, t_k) = Phi(t_T) Phi(t_k)^{-1} for every grid time."""
    if traj.fundamental is None:
        raise ParameterError("trajectory carries no fundamental matrices")
    F = np.asarray(traj.fundamental)
    # Phi(T) Phi(k)^{-1} = (Phi(k)^{-T} Phi(T)^T)^T
    return np.transpose(np.linalg.solve(np.transpose(F, (0, 2, 1)), F[-1].T[None]), (0, 2, 1))


def alekseev_residual(v_true: VelocityField, v_hat: VelocityField, x, spec: IntegratorSpec = IntegratorSpec()):
    """Compare R_hat(x) - R(x) with its first-order variation-of-parameters term.

    linearized = int_0^1 Phi(1, s, z_s) (v_hat - v)(s, z_s) ds along the
    true path z_s, by Simpson's rule on the integration grid (trapezoid
    when the step count is odd).

    Returns ``(lhs, linearized, residual_norm)``.
    """
    base = integrate_flow(v_true, x, spec)
    withphi = fundamental_matrix(v_true, base, spec)
    hat = integrate_flow(v_hat, x, spec)
    lhs = hat.endpoint - base.endpoint
    Z = np.asarray(withphi.states)
    G = np.stack([v_hat(t, z) - v_true(t, z) for t, z in zip(withphi.times, Z)])
    P = propagators_to_end(withphi)
    integrand = np.einsum("kab,kb->ka", P, G)
    if spec.steps % 2 == 0:
        lin = integrate.simpson(integrand, x=withphi.times, axis=0)
    else:
        lin = integrate.trapezoid(integrand, x=withphi.times, axis=0)
    return lhs, lin, float(np.linalg.norm(lhs - lin))


# ---------------------------------------------------------------------------
# Rectification iteration
# ---------------------------------------------------------------------------

def affine_map_of_flow(v: VelocityField, spec: IntegratorSpec, m0):
    """Recover the affine flow map of an affine field from d + 1 integrations."""
    d = v.dim
    starts = np.vstack([m0, m0 + np.eye(d)])
    ends = rectified_map(v, starts, spec)
    A = (ends[1:] - ends[0]).T
    return AffineMap(A, ends[0] - A @ m0)


def rectify_iterate(coupling, estimator: Optional[Callable] = None, spec: IntegratorSpec = IntegratorSpec(),
                    params: Optional[GaussianParams] = None):
    """Rectify a deterministic coupling once more.

    Parameters
    ----------
    coupling : AffineMap (with ``params``) or a pair ``(x0, R_hat(x0))``
    estimator : callable ``PairedData -> VelocityField`` for the sample path
        (default: Nadaraya-Watson ``reg2`` with ``EstimatorConfig()``)

    Returns
    -------
    (VelocityField, new_map)
        ``new_map`` is an AffineMap on the Gaussian path and a callable on
        the sample path.
    """
    if isinstance(coupling, AffineMap):
        if params is None:
            raise ParameterError("the analytic path needs GaussianParams")
        field = gaussian_affine_coupling_field(coupling, params)
        return field, affine_map_of_flow(field, spec, params.m0)
    from .estimators import EstimatorConfig, PairedData, estimator_field
    x0, y = coupling
    data = PairedData(SampleSet(np.atleast_2d(x0) if np.ndim(x0) > 1 else np.asarray(x0)[:, None], "source"),
                      SampleSet(np.atleast_2d(y) if np.ndim(y) > 1 else np.asarray(y)[:, None], "target"))
    if estimator is None:
        field = estimator_field("reg2", data, EstimatorConfig())
    else:
        field = estimator(data)
    return field, (lambda xs: rectified_map(field, xs, spec))


# ---------------------------------------------------------------------------
# Stability-bound arithmetic
# ---------------------------------------------------------------------------

def error_estimate(B, delta, x_gap, integral):
    """E_delta(t) = 2 B delta + |x' - x| + int_delta^{t v delta} |F - G|(s, w(s)) ds."""
    return 2.0 * B * delta + x_gap + integral


def stability_bound_nagumo(c, delta, err, t):
    """Bound t^c delta^{-c} E_delta(t) for a(s) = c/s and kappa(u) = u."""
    if not 0 < c < 1:
        raise ParameterError("the Nagumo-type bound needs c in (0, 1)")
    if not delta > 0:
        raise ParameterError("delta must be positive")
    return (t / delta) ** c * err


def stability_bound_osgood(a, delta, err, t):
    """Bound E_delta(t) exp(int_delta^{t v delta} a(s) ds) for kappa(u) = u (Psi = log).

    ``a`` is the constant L of the Osgood example or a callable a(s).
    """
    if not delta > 0:
        raise ParameterError("delta must be positive")
    hi = max(t, delta)
    if callable(a):
        area = integrate.quad(a, delta, hi, limit=200)[0] if hi > delta else 0.0
    else:
        area = float(a) * (hi - delta)
    return err * np.exp(area)


# ---------------------------------------------------------------------------
# Marginal preservation
# ---------------------------------------------------------------------------

def energy_distance(X, Y):
    """V-statistic energy distance 2E|X-Y| - E|X-X'| - E|Y-Y'|."""
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    return float(2 * cdist(X, Y).mean() - cdist(X, X).mean() - cdist(Y, Y).mean())


def ks_critical(n, m=None, coef=1.63):
    """Approximate two-sample KS critical value (1% level for coef = 1.63)."""
    m = n if m is None else m
    return coef * np.sqrt((n + m) / (n * m))


def marginal_preservation_stat(pushed, target, energy=True):
    """Per-coordinate two-sample KS statistics and the energy distance."""
    P = pushed.data if isinstance(pushed, SampleSet) else np.atleast_2d(pushed)
    T = target.data if isinstance(target, SampleSet) else np.atleast_2d(target)
    if P.shape[1] != T.shape[1]:
        raise ParameterError("dimension mismatch")
    ks = [float(stats.ks_2samp(P[:, j], T[:, j]).statistic) for j in range(P.shape[1])]
    return {"ks_1d": ks, "energy_distance": energy_distance(P, T) if energy else None}
