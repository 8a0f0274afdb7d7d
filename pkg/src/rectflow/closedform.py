"""Closed-form velocity fields, transport maps and asymptotic variances.

These are the analytic oracles for the estimators:

* Gaussian pairs under the independence coupling (affine velocity),
* deterministic affine couplings X1 = A X0 + b,
* Gaussian mixtures (softmax-weighted Gaussian velocities),
* the uniform distribution on [0, 1] transported to itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from .core import GaussianParams, MixtureParams, VelocityField, _frozen, as_points
from .errors import DomainError, FarFieldError, ParameterError, SingularityError


def matrix_sqrt_psd(S):
    """Symmetric PSD square root P D^{1/2} P^T."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    scale = max(1.0, float(np.max(np.abs(S))))
    if S.shape[0] != S.shape[1] or np.max(np.abs(S - S.T)) > 1e-10 * scale:
        raise ParameterError("matrix_sqrt_psd needs a symmetric matrix")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() < -1e-10 * scale:
        raise ParameterError("matrix_sqrt_psd needs a positive semidefinite matrix")
    R = (V * np.sqrt(np.clip(w, 0, None))) @ V.T
    return 0.5 * (R + R.T)


def _inv_sqrt_pd(S, what="matrix"):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() <= 1e-12 * max(1.0, w.max()):
        raise ParameterError(f"{what} must be nonsingular")
    R = (V / np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


@dataclass(frozen=True, eq=False)
class AffineMap:
    """x -> A x + b."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if A.shape != (b.shape[0], b.shape[0]):
            raise ParameterError("AffineMap needs a square A matching b")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ParameterError("AffineMap entries must be finite")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "b", _frozen(b))

    @property
    def dim(self):
        return self.b.shape[0]

    def __call__(self, x):
        x = as_points(x, self.dim)
        return x @ self.A.T + self.b


# ---------------------------------------------------------------------------
# Gaussian pairs
# ---------------------------------------------------------------------------

def gaussian_velocity_matrix(t, p: GaussianParams):
    """Slope M(t) = (t S1 - (1-t) S0)(t^2 S1 + (1-t)^2 S0)^{-1} of the Gaussian field."""
    C = p.cov_t(t)
    B = t * p.S1 - (1 - t) * p.S0
    w = np.linalg.eigvalsh(C)
    if w.min() <= 1e-12:
        raise SingularityError(f"t^2 S1 + (1-t)^2 S0 is singular at t={t}", t=t)
    try:
        L = np.linalg.cholesky(C)
        # M = B C^{-1}  <=>  M^T = C^{-1} B^T
        return cho_solve((L, True), B.T).T
    except np.linalg.LinAlgError:
        return np.linalg.solve(C, B.T).T


def gaussian_velocity(t, z, p: GaussianParams):
    """Velocity of the independence coupling between two Gaussians.

    v_t(z) = m1 - m0 + (t S1 - (1-t) S0)(t^2 S1 + (1-t)^2 S0)^{-1} (z - m_t)

    Parameters
    ----------
    t : float
    z : array_like, shape (..., d)
    p : GaussianParams

    Raises
    ------
    SingularityError
        If t^2 S1 + (1-t)^2 S0 has an eigenvalue below 1e-12.
    """
    z = as_points(z, p.dim)
    M = gaussian_velocity_matrix(t, p)
    return (p.m1 - p.m0) + (z - p.mean_t(t)) @ M.T


def gaussian_velocity_field(p: GaussianParams) -> VelocityField:
    """The Gaussian velocity as a :class:`VelocityField` with analytic Jacobian."""

    def func(t, z):
        return gaussian_velocity(t, z, p)

    def jac(t, z):
        M = gaussian_velocity_matrix(t, p)
        return np.broadcast_to(M, z.shape[:-1] + M.shape).copy()

    return VelocityField(func, p.dim, jac, info={"kind": "gaussian"})


def gaussian_rectified_map(p: GaussianParams) -> AffineMap:
    """Rectified map S0^{1/2}(S0^{-1/2} S1 S0^{-1/2})^{1/2} S0^{-1/2}(x - m0) + m1."""
    r0 = matrix_sqrt_psd(p.S0)
    ir0 = _inv_sqrt_pd(p.S0, "S0")
    A = r0 @ matrix_sqrt_psd(ir0 @ p.S1 @ ir0) @ ir0
    return AffineMap(A, p.m1 - A @ p.m0)


def gaussian_ot_map(p: GaussianParams) -> AffineMap:
    """Optimal transport map S0^{-1/2}(S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2}(x - m0) + m1."""
    r0 = matrix_sqrt_psd(p.S0)
    ir0 = _inv_sqrt_pd(p.S0, "S0")
    A = ir0 @ matrix_sqrt_psd(r0 @ p.S1 @ r0) @ ir0
    A = 0.5 * (A + A.T)
    return AffineMap(A, p.m1 - A @ p.m0)


def _check_coupling(amap: AffineMap, p: GaussianParams, tol=1e-8):
    A = amap.A
    scale = max(1.0, float(np.max(np.abs(p.S1))))
    if np.max(np.abs(A @ p.S0 @ A.T - p.S1)) > tol * scale:
        raise ParameterError("coupling inconsistent: A S0 A^T != S1")
    if np.max(np.abs(A @ p.m0 + amap.b - p.m1)) > tol * max(1.0, float(np.max(np.abs(p.m1)))):
        raise ParameterError("coupling inconsistent: A m0 + b != m1")
    ev = np.linalg.eigvals(A)
    if np.max(np.abs(ev.imag)) > 1e-8 or ev.real.min() <= 0:
        raise ParameterError("coupling matrix must be similar to a positive definite matrix")


def gaussian_affine_coupling_velocity(t, z, amap: AffineMap, p: GaussianParams, check=True):
    """Velocity of the deterministic coupling X1 = A X0 + b with X0 ~ N(m0, S0).

    v_t(z) = m1 - m0 + (A - I)(t A + (1-t) I)^{-1} (z - m_t)
    """
    if check:
        _check_coupling(amap, p)
    z = as_points(z, p.dim)
    I = np.eye(p.dim)
    M = np.linalg.solve((t * amap.A + (1 - t) * I).T, (amap.A - I).T).T
    return (p.m1 - p.m0) + (z - p.mean_t(t)) @ M.T


def gaussian_affine_coupling_field(amap: AffineMap, p: GaussianParams) -> VelocityField:
    _check_coupling(amap, p)
    I = np.eye(p.dim)

    def slope(t):
        return np.linalg.solve((t * amap.A + (1 - t) * I).T, (amap.A - I).T).T

    def func(t, z):
        return (p.m1 - p.m0) + (z - p.mean_t(t)) @ slope(t).T

    def jac(t, z):
        M = slope(t)
        return np.broadcast_to(M, z.shape[:-1] + M.shape).copy()

    return VelocityField(func, p.dim, jac, info={"kind": "affine_coupling"})


# ---------------------------------------------------------------------------
# Gaussian mixtures
# ---------------------------------------------------------------------------

def _mixture_terms(t, z, p: MixtureParams, need_grad=False):
    """Log weights, component velocities and slopes for every (i, j) pair."""
    z = as_points(z, p.dim)
    logw, vel, slopes, grads = [], [], [], []
    d = p.dim
    for wi, (m0, S0) in zip(p.weights0, p.components0):
        for wj, (m1, S1) in zip(p.weights1, p.components1):
            if wi == 0 or wj == 0:
                continue
            g = GaussianParams(m0, m1, S0, S1)
            C = g.cov_t(t)
            M = gaussian_velocity_matrix(t, g)
            r = z - g.mean_t(t)
            L = np.linalg.cholesky(C)
            sol = np.linalg.solve(L, r.reshape(-1, d).T).T.reshape(r.shape)
            logdet = 2 * np.log(np.diag(L)).sum()
            logtau = -0.5 * (sol ** 2).sum(-1) - 0.5 * logdet - 0.5 * d * np.log(2 * np.pi)
            logw.append(np.log(wi) + np.log(wj) + logtau)
            vel.append((m1 - m0) + r @ M.T)
            slopes.append(M)
            if need_grad:
                Ci = np.linalg.inv(C)
                grads.append(-(r @ Ci))
    return np.stack(logw, -1), np.stack(vel, -2), slopes, grads


def mixture_velocity(t, z, p: MixtureParams):
    """Velocity between Gaussian mixtures under the independence coupling.

    A softmax (in log-space) over component pairs (i, j) with weights
    pi0_i pi1_j N(z; m_t^{ij}, S_t^{ij}) of the pairwise Gaussian velocities.
    """
    logw, vel, _, _ = _mixture_terms(t, z, p)
    lse = logsumexp(logw, axis=-1, keepdims=True)
    if not np.all(np.isfinite(lse)):
        raise FarFieldError(f"all mixture weights underflow at t={t}")
    w = np.exp(logw - lse)
    return (w[..., None] * vel).sum(-2)


def mixture_velocity_field(p: MixtureParams) -> VelocityField:
    def func(t, z):
        return mixture_velocity(t, z, p)

    def jac(t, z):
        logw, vel, slopes, grads = _mixture_terms(t, z, p, need_grad=True)
        lse = logsumexp(logw, axis=-1, keepdims=True)
        if not np.all(np.isfinite(lse)):
            raise FarFieldError(f"all mixture weights underflow at t={t}")
        w = np.exp(logw - lse)                        # (..., K)
        G = np.stack(grads, -2)                       # (..., K, d) grad log tau
        Gbar = (w[..., None] * G).sum(-2, keepdims=True)
        Ms = np.stack(slopes, 0)                      # (K, d, d)
        J = np.einsum("...k,kab->...ab", w, Ms)
        J = J + np.einsum("...k,...ka,...kb->...ab", w, vel, G - Gbar)
        return J

    return VelocityField(func, p.dim, jac, info={"kind": "mixture"})


# ---------------------------------------------------------------------------
# Uniform on [0, 1]
# ---------------------------------------------------------------------------

def _uniform_midpoint(t, z):
    a = np.maximum((z - 1) / t, -z / (1 - t))
    b = np.minimum(z / t, (1 - z) / (1 - t))
    return 0.5 * (a + b)


def uniform_velocity(t, z):
    """Velocity for Unif(0, 1) transported to itself.

    For t <= 1/2 the three-branch formula

        v = z (1 - 2t)      / (2 t (1-t))   if z <= t
            (1 - 2z) t      / (2 t (1-t))   if t < z < 1 - t
            (1 - z)(2t - 1) / (2 t (1-t))   if z >= 1 - t

    and for t > 1/2 the midpoint (a_t(z) + b_t(z)) / 2 of S_t(z).
    """
    t = float(t)
    if not 0.0 < t < 1.0:
        raise DomainError(f"uniform_velocity needs t in (0, 1), got {t}")
    z = np.asarray(z, dtype=np.float64)
    if np.any((z < -1e-12) | (z > 1 + 1e-12)):
        raise DomainError("uniform_velocity needs z in [0, 1]")
    z = np.clip(z, 0.0, 1.0)
    if t > 0.5:
        return _uniform_midpoint(t, z)
    c = 1.0 / (2 * t * (1 - t))
    return c * np.where(z <= t, z * (1 - 2 * t),
                        np.where(z >= 1 - t, (1 - z) * (2 * t - 1), (1 - 2 * z) * t))


def uniform_velocity_field() -> VelocityField:
    def func(t, z):
        if t <= 0.0:
            return 0.5 - z
        if t >= 1.0:
            return z - 0.5
        return uniform_velocity(t, z)

    return VelocityField(func, 1, info={"kind": "uniform"})


def uniform_lipschitz_bound(t):
    """Lipschitz constant a(t) = 1 / (2 t (1 - t)) of the uniform velocity in z."""
    return 1.0 / (2.0 * t * (1.0 - t))


# ---------------------------------------------------------------------------
# 1-D asymptotics
# ---------------------------------------------------------------------------

def _sigmas(p: GaussianParams):
    if p.dim != 1:
        raise ParameterError("1-D Gaussian parameters required")
    return float(np.sqrt(p.S0[0, 0])), float(np.sqrt(p.S1[0, 0]))


def gaussian_fundamental_matrix_1d(t, p: GaussianParams):
    """Phi(1, t, z_t) = s1 / sqrt(t^2 s1^2 + (1-t)^2 s0^2) for 1-D Gaussians."""
    s0, s1 = _sigmas(p)
    return s1 / np.sqrt(t * t * s1 * s1 + (1 - t) ** 2 * s0 * s0)


def gaussian_clt_variance_1d(x, p: GaussianParams):
    """Asymptotic variance of sqrt(n)(R_hat(x) - R(x)) for 1-D Gaussians.

    Sigma(x) = 2 s0 s1 (s1/s0) (arctan(s1/s0) + arctan(s0/s1)) exp((x-m0)^2 / (2 s0^2))

    which is pi s1^2 exp((x-m0)^2/(2 s0^2)) since the two arctangents sum
    to pi/2.  The factor s0 s1 comes from Var(X1 - X0 | X_t) =
    s0^2 s1^2 / (t^2 s1^2 + (1-t)^2 s0^2); for standard normals it equals 1
    and Sigma(m0) = pi.
    """
    s0, s1 = _sigmas(p)
    m0 = float(p.m0[0])
    return (2 * s0 * s1 * (s1 / s0) * (np.arctan(s1 / s0) + np.arctan(s0 / s1))
            * np.exp((np.asarray(x, dtype=np.float64) - m0) ** 2 / (2 * s0 * s0)))
