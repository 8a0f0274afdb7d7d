"""Sample-based estimators of the velocity field v_t(z) = E[X1 - X0 | X_t = z].

Families
--------
regression   : ``v_reg0`` (two-sample U-statistic), ``v_reg2`` (one pairing),
               ``v_reg3`` (regress X0 on X_t), ``fit_linear_velocity``.
density      : ``v_den`` (ratio of delta-integrals of two density handles),
               ``v_sub3`` / ``v_sub4`` (density estimate on one side only).
semiparametric : ``onestep_influence``, ``v_onestep``, ``v_hybrid``.
smoothed     : ``v_smoothed`` (Gaussian-smoothed transport U-statistic).

All estimators accept ``z`` of shape ``(d,)``; the regression estimators
also accept ``(m, d)`` query batches.  At t in {0, 1} they return the
sample-mean endpoint values mean(X1) - z and z - mean(X0).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace as _replace
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from .core import SampleSet, VelocityField, as_points
from .errors import (DegenerateTimeError, EmptyWindowError, EndpointError, FitError,
                     InsufficientDataError, ParameterError)
from .geometry import Box, st_bounding_box, st_membership
from .kde import GAUSSIAN, KDE, KernelSpec, unit_ball_volume

FLOOR = 1e-300
LOG_FLOOR = np.log(FLOOR)


@dataclass(frozen=True)
class EstimatorConfig:
    """Settings shared by the estimators.

    Parameters
    ----------
    bandwidth : kernel bandwidth h
    kernel : kernel family for regression weights and fitted KDEs
    t0_endpoint : endpoint guard (hybrid dispatch and the v_reg3 1/t guard)
    split_fraction : share of each sample used to fit the KDEs in v_onestep
    grid_per_axis : Gauss-Legendre nodes per axis (per panel) for delta-integrals;
        None means 64 for d = 1 and 32 for d = 2
    panels : composite panels per axis when the delta-window comes from
        effective supports rather than a body
    mc_draws, mc_seed : Monte Carlo delta-integration for d > 2
    body : optional convex body (bounded case)
    den_mode : "auto", "quadrature" or "substitution" for v_den
    """

    bandwidth: float = 0.3
    kernel: KernelSpec = GAUSSIAN
    t0_endpoint: float = 0.05
    split_fraction: float = 0.5
    grid_per_axis: Optional[int] = None
    panels: int = 8
    mc_draws: int = 4096
    mc_seed: int = 0
    body: object = None
    den_mode: str = "auto"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ParameterError("bandwidth must be positive")
        if not 0 < self.t0_endpoint < 0.5:
            raise ParameterError("t0_endpoint must lie in (0, 0.5)")
        if not 0 < self.split_fraction < 1:
            raise ParameterError("split_fraction must lie in (0, 1)")
        if self.den_mode not in ("auto", "quadrature", "substitution"):
            raise ParameterError("den_mode must be auto, quadrature or substitution")
        if self.grid_per_axis is not None and int(self.grid_per_axis) < 2:
            raise ParameterError("grid_per_axis must be >= 2")
        if int(self.panels) < 1 or int(self.mc_draws) < 1:
            raise ParameterError("panels and mc_draws must be positive")

    def replace(self, **kw):
        return _replace(self, **kw)


@dataclass(frozen=True, eq=False)
class PairedData:
    """Source and target samples with a pairing convention.

    ``index_paired`` pairs X0_i with X1_i (needs equal n); ``all_pairs``
    uses every (X0_j, X1_i) combination.
    """

    x0: SampleSet
    x1: SampleSet
    pairing: str = "index_paired"

    def __post_init__(self):
        x0 = self.x0 if isinstance(self.x0, SampleSet) else SampleSet(self.x0, "source")
        x1 = self.x1 if isinstance(self.x1, SampleSet) else SampleSet(self.x1, "target")
        if x0.dim != x1.dim:
            raise ParameterError("source and target dimensions differ")
        if self.pairing not in ("index_paired", "all_pairs"):
            raise ParameterError("pairing must be index_paired or all_pairs")
        if self.pairing == "index_paired" and x0.n != x1.n:
            raise ParameterError("index_paired data needs equal sample sizes")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)

    @property
    def dim(self):
        return self.x0.dim

    @property
    def n(self):
        return self.x0.n

    def interpolate(self, t):
        """X_t = (1-t) X0 + t X1 for index-paired data."""
        return (1 - t) * self.x0.data + t * self.x1.data

    @property
    def delta(self):
        return self.x1.data - self.x0.data


def _paired(data, where):
    if data.pairing != "index_paired":
        raise ParameterError(f"{where} needs index_paired data")


def endpoint_value(t, z, mean0, mean1):
    """v_0(z) = E[X1] - z and v_1(z) = z - E[X0]; None for interior t."""
    if t == 0.0:
        return mean1 - z
    if t == 1.0:
        return z - mean0
    return None


def _check_t(t):
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ParameterError(f"t must lie in [0, 1], got {t}")
    return t


# ---------------------------------------------------------------------------
# Kernel weights
# ---------------------------------------------------------------------------

def _log_kernel(r2, d, kernel: KernelSpec):
    """log K(u) as a function of |u|^2 (-inf outside compact support)."""
    if kernel.family == "gaussian":
        return -0.5 * r2 - 0.5 * d * np.log(2 * np.pi)
    with np.errstate(divide="ignore"):
        if kernel.family == "epanechnikov":
            c = (d + 2) / (2 * unit_ball_volume(d))
            return np.where(r2 < 1.0, np.log(c) + np.log(np.clip(1.0 - r2, 0, None)), -np.inf)
        return np.where(r2 <= 1.0, -np.log(unit_ball_volume(d)), -np.inf)


def nadaraya_watson(Q, X, Y, h, kernel: KernelSpec = GAUSSIAN):
    """Kernel-weighted mean of Y at queries Q.

    Q : (..., m, d) queries, X : (..., n, d) covariates, Y : (..., n, k).
    Leading batch axes broadcast.  Weights are normalised in log-space;
    the unnormalised density (n h^d)^{-1} sum K must exceed 1e-300.
    """
    d = X.shape[-1]
    n = X.shape[-2]
    D = Q[..., :, None, :] - X[..., None, :, :]
    r2 = np.einsum("...mnd,...mnd->...mn", D, D) / (h * h)
    lk = _log_kernel(r2, d, kernel)
    lse = logsumexp(lk, axis=-1, keepdims=True)
    logden = lse - np.log(n) - d * np.log(h)
    if not np.all(logden > LOG_FLOOR):
        raise EmptyWindowError("kernel denominator below 1e-300; widen the bandwidth")
    W = np.exp(lk - lse)
    return W @ Y


def _nw_chunked(Q, X, Y, h, kernel, budget=4_000_000):
    n = X.shape[0]
    step = max(1, budget // max(n * X.shape[1], 1))
    out = np.empty((Q.shape[0], Y.shape[1]))
    for s in range(0, Q.shape[0], step):
        out[s:s + step] = nadaraya_watson(Q[s:s + step], X, Y, h, kernel)
    return out


def _queries(z, d):
    z = as_points(z, d)
    return z, z.reshape(-1, d)


# ---------------------------------------------------------------------------
# Regression estimators
# ---------------------------------------------------------------------------

def reg0_sums(t, z, data: PairedData, h, kernel: KernelSpec = GAUSSIAN):
    """(numerator, denominator) of v_reg0 at a single z, both divided by n0 n1.

    denominator = (n0 n1)^{-1} sum_ij K_h((1-t) X0_j + t X1_i - z).
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    X0, X1 = data.x0.data, data.x1.data
    d = X0.shape[1]
    A = (1 - t) * X0 - z
    num = np.zeros(d)
    den = 0.0
    step = max(1, 4_000_000 // max(X0.shape[0] * d, 1))
    for s in range(0, X1.shape[0], step):
        B = t * X1[s:s + step]
        D = B[:, None, :] + A[None, :, :]
        r2 = np.einsum("ijd,ijd->ij", D, D) / (h * h)
        K = kernel.from_sq(r2, d) / h ** d            # (i, j)
        den += K.sum()
        num += K.sum(1) @ X1[s:s + step] - K.sum(0) @ X0
    scale = 1.0 / (X0.shape[0] * X1.shape[0])
    return num * scale, den * scale


def v_reg0(t, z, data: PairedData, cfg: EstimatorConfig):
    """Two-sample U-statistic regression estimator over all (X0_j, X1_i) pairs."""
    t = _check_t(t)
    z, Q = _queries(z, data.dim)
    out = np.empty_like(Q)
    for k, q in enumerate(Q):
        e = endpoint_value(t, q, data.x0.data.mean(0), data.x1.data.mean(0))
        if e is not None:
            out[k] = e
            continue
        num, den = reg0_sums(t, q, data, cfg.bandwidth, cfg.kernel)
        if not den > FLOOR:
            raise EmptyWindowError("reg0 denominator below 1e-300")
        out[k] = num / den
    return out.reshape(z.shape)


def v_reg2(t, z, data: PairedData, cfg: EstimatorConfig):
    """Nadaraya-Watson regression of X1 - X0 on X_t for one index pairing."""
    _paired(data, "v_reg2")
    t = _check_t(t)
    z, Q = _queries(z, data.dim)
    e = endpoint_value(t, Q, data.x0.data.mean(0), data.x1.data.mean(0))
    if e is not None:
        return e.reshape(z.shape)
    out = _nw_chunked(Q, data.interpolate(t), data.delta, cfg.bandwidth, cfg.kernel)
    return out.reshape(z.shape)


def v_reg2_batch(t, Z, X0, X1, h, kernel: KernelSpec = GAUSSIAN):
    """``v_reg2`` for a stack of independent data sets.

    Z : (M, m, d) states, X0 and X1 : (M, n, d) samples.  Entry k uses data
    set k only and agrees with ``v_reg2`` on it, except that an empty kernel
    window yields NaN rather than raising.
    """
    t = _check_t(t)
    if t == 0.0:
        return X1.mean(1, keepdims=True) - Z
    if t == 1.0:
        return Z - X0.mean(1, keepdims=True)
    Xt = (1 - t) * X0 + t * X1
    D = Z[..., :, None, :] - Xt[..., None, :, :]
    r2 = np.einsum("...mnd,...mnd->...mn", D, D) / (h * h)
    lk = _log_kernel(r2, X0.shape[-1], kernel)
    with np.errstate(invalid="ignore"):
        lse = logsumexp(lk, axis=-1, keepdims=True)
        W = np.exp(lk - lse)
    out = W @ (X1 - X0)
    logden = lse - np.log(X0.shape[-2]) - X0.shape[-1] * np.log(h)
    out[~(logden[..., 0] > LOG_FLOOR)] = np.nan
    return out


def v_reg3(t, z, data: PairedData, cfg: EstimatorConfig):
    """z/t - E_hat[X0 | X_t = z]/t, with E_hat a Nadaraya-Watson estimate."""
    _paired(data, "v_reg3")
    t = _check_t(t)
    z, Q = _queries(z, data.dim)
    e = endpoint_value(t, Q, data.x0.data.mean(0), data.x1.data.mean(0))
    if e is not None:
        return e.reshape(z.shape)
    if t < cfg.t0_endpoint:
        raise EndpointError(f"v_reg3 needs t >= {cfg.t0_endpoint}, got {t}")
    m0 = _nw_chunked(Q, data.interpolate(t), data.x0.data, cfg.bandwidth, cfg.kernel)
    return ((Q - m0) / t).reshape(z.shape)


# ---------------------------------------------------------------------------
# Density-based estimators
# ---------------------------------------------------------------------------

def _handle_mean(p):
    if hasattr(p, "mean"):
        return np.atleast_1d(np.asarray(p.mean(), dtype=np.float64))
    raise ParameterError("density handle exposes no mean for the endpoint formula")


def _delta_window(t, z, p0, p1, body):
    if body is not None:
        return st_bounding_box(body, t, z)
    lo0, hi0 = p0.bounding_box()
    lo1, hi1 = p1.bounding_box()
    a = np.maximum((z - hi0) / t, (lo1 - z) / (1 - t))
    b = np.minimum((z - lo0) / t, (hi1 - z) / (1 - t))
    return a, b


def _tensor_rule(a, b, q, panels):
    """Composite Gauss-Legendre nodes/weights on the box prod [a_j, b_j]."""
    x, w = leggauss(q)
    axes, wts = [], []
    for lo, hi in zip(a, b):
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        axes.append((mid[:, None] + half[:, None] * x).ravel())
        wts.append((half[:, None] * w).ravel())
    D = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(a))
    W = np.prod(np.stack(np.meshgrid(*wts, indexing="ij"), -1).reshape(-1, len(a)), -1)
    return D, W


def den_quadrature(t, z, p0hat, p1hat, cfg: EstimatorConfig):
    """(f_t(z), p_t(z)) by direct integration over delta.

    f_t(z) = int delta p0(z - t delta) p1(z + (1-t) delta) d delta and
    p_t(z) the same integral without the delta factor.
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    d = z.shape[0]
    a, b = _delta_window(t, z, p0hat, p1hat, cfg.body)
    if np.any(b <= a):
        raise EmptyWindowError(f"S_t(z) has empty interior at t={t}, z={z}")
    if d <= 2:
        q = int(cfg.grid_per_axis or (64 if d == 1 else 32))
        panels = 1 if isinstance(cfg.body, Box) else int(cfg.panels if d == 1 else max(1, cfg.panels // 2))
        D, W = _tensor_rule(a, b, q, panels)
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(cfg.mc_seed))))
        D = a + (b - a) * rng.random((int(cfg.mc_draws), d))
        W = np.full(D.shape[0], np.prod(b - a) / D.shape[0])
    if cfg.body is not None and not isinstance(cfg.body, Box):
        W = W * st_membership(cfg.body, t, z, D)
    r = W * p0hat(z - t * D) * p1hat(z + (1 - t) * D)
    p = float(r.sum())
    f = r @ D
    return f, p


def sub3_parts(t, z, x0, p1hat):
    """(f_hat, p_hat) using the source sample and a target density handle."""
    X0 = x0.data if isinstance(x0, SampleSet) else np.atleast_2d(x0)
    d = X0.shape[1]
    delta = (z - X0) / t
    w = p1hat(delta + X0)
    c = 1.0 / (X0.shape[0] * t ** d)
    return c * (w @ delta), c * float(w.sum())


def sub4_parts(t, z, x1, p0hat):
    """(f_hat, p_hat) using the target sample and a source density handle."""
    X1 = x1.data if isinstance(x1, SampleSet) else np.atleast_2d(x1)
    d = X1.shape[1]
    delta = (X1 - z) / (1 - t)
    w = p0hat(X1 - delta)
    c = 1.0 / (X1.shape[0] * (1 - t) ** d)
    return c * (w @ delta), c * float(w.sum())


def _ratio(f, p, what):
    if not p > FLOOR:
        raise EmptyWindowError(f"{what}: density denominator below 1e-300")
    return f / p


def _interior(t, where):
    t = float(t)
    if not 0.0 < t < 1.0:
        raise DegenerateTimeError(f"{where} needs t in (0, 1), got {t}")
    return t


def v_sub3(t, z, x0, p1hat, cfg: EstimatorConfig = None, return_parts=False):
    """Substitution estimator averaging over the X0 sample; variance factor t^{-d}."""
    t = _interior(t, "v_sub3")
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    f, p = sub3_parts(t, z, x0, p1hat)
    v = _ratio(f, p, "v_sub3")
    return (v, f, p) if return_parts else v


def v_sub4(t, z, x1, p0hat, cfg: EstimatorConfig = None, return_parts=False):
    """Substitution estimator averaging over the X1 sample; variance factor (1-t)^{-d}."""
    t = _interior(t, "v_sub4")
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    f, p = sub4_parts(t, z, x1, p0hat)
    v = _ratio(f, p, "v_sub4")
    return (v, f, p) if return_parts else v


def v_den(t, z, p0hat, p1hat, cfg: EstimatorConfig, return_parts=False):
    """Density-based estimator f_hat_t(z) / p_hat_t(z).

    With a body, or with handles that carry no samples, both delta-integrals
    are computed by quadrature (Gauss-Legendre for d <= 2, Monte Carlo
    above).  Otherwise (unbounded, KDE handles) the substitution form is
    used with the empirical measure of the side whose explicit factor is
    max(t, 1-t)^{-d}: the source sample for t >= 1/2, the target for t < 1/2.
    """
    t = _check_t(t)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if z.ndim == 2:
        # batch of query points, one row each
        parts = [v_den(t, row, p0hat, p1hat, cfg, return_parts=True) for row in z]
        v = np.stack([q[0] for q in parts])
        if not return_parts:
            return v
        return v, [q[1] for q in parts], [q[2] for q in parts]
    e = endpoint_value(t, z, _handle_mean(p0hat) if t == 1 else None,
                       _handle_mean(p1hat) if t == 0 else None)
    if e is not None:
        return (e, None, None) if return_parts else e
    mode = cfg.den_mode
    if mode == "auto":
        has = getattr(p0hat, "samples", None) is not None and getattr(p1hat, "samples", None) is not None
        mode = "substitution" if (cfg.body is None and has) else "quadrature"
    if mode == "substitution":
        if t >= 0.5:
            f, p = sub3_parts(t, z, p0hat.samples, p1hat)
        else:
            f, p = sub4_parts(t, z, p1hat.samples, p0hat)
    else:
        f, p = den_quadrature(t, z, p0hat, p1hat, cfg)
    v = _ratio(f, p, "v_den")
    return (v, f, p) if return_parts else v


def density_parts_bound(t, d, sup_p0, sup_p1hat, l2_err0, l2_err1):
    """Upper bound on |p_hat_t(z) - p_t(z)| from L2 errors of the two densities.

    (sup p0 * |p1_hat - p1|_2 + sup p1_hat * |p0_hat - p0|_2) / (t (1-t))^{d/2}
    """
    return (sup_p0 * l2_err1 + sup_p1hat * l2_err0) / (t * (1 - t)) ** (d / 2)


def velocity_rate_bound(r, diam):
    """Sup-error bound 2 diam (e^{4r} - 1) when density ratios lie in [e^{-r}, e^{r}]."""
    return 2.0 * diam * np.expm1(4.0 * r)


# ---------------------------------------------------------------------------
# One-step estimator
# ---------------------------------------------------------------------------

ROLES = ("N0", "N1", "D0", "D1")


def onestep_influence(x, role, t, z, density, f_t, p_t):
    """Influence-function values at observations ``x``.

    role N0 / D0 take a source observation x and the target density p1:
        phi_N0 = t^{-d} ((z - x)/t) p1((z - x)/t + x) - f_t
        phi_D0 = t^{-d} p1((z - x)/t + x) - p_t
    role N1 / D1 take a target observation y and the source density p0:
        phi_N1 = (1-t)^{-d} ((y - z)/(1-t)) p0((z - y)/(1-t) + y) - f_t
        phi_D1 = (1-t)^{-d} p0((z - y)/(1-t) + y) - p_t
    """
    role = role[-2:] if role.startswith("phi_") else role
    if role not in ROLES:
        raise ParameterError(f"role must be one of {ROLES}")
    t = _interior(t, "onestep_influence")
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    X = np.atleast_2d(x) if x.ndim else x.reshape(1, 1)
    if X.shape[-1] != z.shape[0]:
        X = X.reshape(-1, z.shape[0])
    d = z.shape[0]
    if role in ("N0", "D0"):
        delta = (z - X) / t
        w = density(delta + X) / t ** d
    else:
        delta = (X - z) / (1 - t)
        w = density(X - delta) / (1 - t) ** d
    if role[0] == "N":
        out = w[:, None] * delta - np.asarray(f_t, dtype=np.float64)
    else:
        out = w - float(p_t)
    return out[0] if single else out


@dataclass(frozen=True, eq=False)
class OneStepResult:
    estimate: np.ndarray
    variance: np.ndarray
    plugin: np.ndarray
    correction0: np.ndarray
    correction1: np.ndarray
    f_t: np.ndarray
    p_t: float
    extras: dict = field(default_factory=dict)


def _split(n, frac, where):
    k = int(np.floor(frac * n))
    if k < 2 or n - k < 2:
        raise InsufficientDataError(f"{where}: split leaves fewer than 2 observations on a side")
    return k


def v_onestep(t, z, data: PairedData, cfg: EstimatorConfig, densities=None, full=False):
    """Plug-in plus the empirical mean of the estimated influence functions.

    The first ``split_fraction`` of each sample fits KDEs p0_hat and p1_hat
    (unless ``densities=(p0, p1)`` injects them); the plug-in v_pi = f/p is
    computed from them by quadrature; the held-out observations average

        phi_j = phi_Nj / p - v_pi phi_Dj / p,    j = 0, 1.

    Returns ``(estimate, variance)`` where variance is
    Cov(phi_0)/n0' + Cov(phi_1)/n1' over the held-out parts; with
    ``full=True`` a :class:`OneStepResult`.
    """
    t = _interior(t, "v_onestep")
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    X0, X1 = data.x0.data, data.x1.data
    k0 = _split(X0.shape[0], cfg.split_fraction, "v_onestep")
    k1 = _split(X1.shape[0], cfg.split_fraction, "v_onestep")
    if densities is None:
        p0 = KDE(X0[:k0], cfg.kernel, cfg.bandwidth)
        p1 = KDE(X1[:k1], cfg.kernel, cfg.bandwidth)
    else:
        p0, p1 = densities
    f, p = den_quadrature(t, z, p0, p1, cfg)
    v_pi = _ratio(f, p, "v_onestep")
    H0, H1 = X0[k0:], X1[k1:]
    phi0 = (onestep_influence(H0, "N0", t, z, p1, f, p)
            - v_pi * onestep_influence(H0, "D0", t, z, p1, f, p)[:, None]) / p
    phi1 = (onestep_influence(H1, "N1", t, z, p0, f, p)
            - v_pi * onestep_influence(H1, "D1", t, z, p0, f, p)[:, None]) / p
    c0, c1 = phi0.mean(0), phi1.mean(0)
    est = v_pi + c0 + c1
    var = (np.atleast_2d(np.cov(phi0, rowvar=False)) / H0.shape[0]
           + np.atleast_2d(np.cov(phi1, rowvar=False)) / H1.shape[0])
    if full:
        return OneStepResult(est, var, v_pi, c0, c1, f, p)
    return est, var


def v_hybrid(t, z, data: PairedData, cfg: EstimatorConfig):
    """Sample-mean endpoint values on [0, t0] and [1 - t0, 1], one-step inside.

    The dispatch is literal, so the estimate may jump at t0 and 1 - t0.
    """
    t = _check_t(t)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if t <= cfg.t0_endpoint:
        return data.x1.data.mean(0) - z
    if t >= 1.0 - cfg.t0_endpoint:
        return z - data.x0.data.mean(0)
    return v_onestep(t, z, data, cfg)[0]


# ---------------------------------------------------------------------------
# Smoothed transport
# ---------------------------------------------------------------------------

def smoothed_kernels(t, z, u, v, sigma):
    """The two Gaussian delta-integrals of the smoothed-transport estimator.

    With s2 = t^2 + (1-t)^2, completing the square in delta gives

        h_tilde(u, v) = int N_sigma(z - t delta - u) N_sigma(z + (1-t) delta - v) d delta
                      = N(z; (1-t) u + t v, sigma^2 s2 I)
        h(u, v)       = mu(u, v) h_tilde(u, v),
        mu(u, v)      = (t (z - u) + (1-t)(v - z)) / s2.

    Returns ``(h, h_tilde)`` for broadcastable ``u``, ``v``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    d = z.shape[0]
    s2 = t * t + (1 - t) ** 2
    r = z - (1 - t) * np.asarray(u) - t * np.asarray(v)
    ht = np.exp(-0.5 * (r * r).sum(-1) / (sigma * sigma * s2)) / (2 * np.pi * sigma * sigma * s2) ** (d / 2)
    mu = (t * (z - u) + (1 - t) * (v - z)) / s2
    return mu * ht[..., None], ht


def smoothed_log_weights(t, z, data: PairedData, sigma):
    """Log of the pair weights h_tilde(X0_j, X1_i), shape (n1, n0)."""
    X0, X1 = data.x0.data, data.x1.data
    s2 = t * t + (1 - t) ** 2
    R = z - (1 - t) * X0[None, :, :] - t * X1[:, None, :]
    return -0.5 * np.einsum("ijd,ijd->ij", R, R) / (sigma * sigma * s2)


def v_smoothed(t, z, data: PairedData, sigma):
    """Ratio of the U-statistics sum_ij h(X0_j, X1_i) / sum_ij h_tilde(X0_j, X1_i)."""
    if not sigma > 0:
        raise ParameterError("sigma must be positive")
    t = _check_t(t)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    X0, X1 = data.x0.data, data.x1.data
    e = endpoint_value(t, z, X0.mean(0), X1.mean(0))
    if e is not None:
        return e
    s2 = t * t + (1 - t) ** 2
    lw = smoothed_log_weights(t, z, data, sigma)
    W = np.exp(lw - lw.max())
    W /= W.sum()
    # sum_ij W_ij mu_ij with mu_ij = (t (z - X0_j) + (1-t)(X1_i - z)) / s2
    return ((2 * t - 1) * z - t * (W.sum(0) @ X0) + (1 - t) * (W.sum(1) @ X1)) / s2


# ---------------------------------------------------------------------------
# Linear velocity fits
# ---------------------------------------------------------------------------

def _ols(X, Y, ridge):
    xm, ym = X.mean(0), Y.mean(0)
    Xc, Yc = X - xm, Y - ym
    G = Xc.T @ Xc
    jitter = ridge * max(1.0, float(np.trace(G)) / G.shape[0])
    G = G + jitter * np.eye(G.shape[0])
    w = np.linalg.eigvalsh(G)
    if w.min() <= 10 * jitter * (1 + 1e-12) and X.shape[0] < X.shape[1] + 2:
        raise FitError("design is rank deficient beyond the ridge jitter")
    B = np.linalg.solve(G, Xc.T @ Yc).T
    return B, ym - B @ xm


def _lasso_cv(X, y, n_lambdas, folds, tol, max_iter, alpha=None):
    """Cyclic coordinate-descent Lasso with alpha chosen by K-fold CV (no shuffling)."""
    # sklearn is slow to import; only the L1 path needs it
    from sklearn.exceptions import ConvergenceWarning
    from sklearn.linear_model import Lasso, lasso_path
    from sklearn.model_selection import KFold

    n = X.shape[0]
    xm, ym = X.mean(0), y.mean()
    Xc, yc = X - xm, y - ym
    lam_max = float(np.max(np.abs(Xc.T @ yc)) / n)
    notes = []
    if alpha is None:
        if lam_max <= 0:
            return np.zeros(X.shape[1]), ym, 0.0, notes
        grid = np.logspace(np.log10(1e-4 * lam_max), np.log10(1e1 * lam_max), n_lambdas)[::-1]
        err = np.zeros(len(grid))
        failed = False
        for tr, te in KFold(folds).split(X):
            Xt, yt = X[tr], y[tr]
            mx, my = Xt.mean(0), yt.mean()
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ConvergenceWarning)
                _, coefs, _ = lasso_path(Xt - mx, yt - my, alphas=grid, tol=tol, max_iter=max_iter)
            if any(issubclass(c.category, ConvergenceWarning) for c in caught):
                failed = True
            pred = (X[te] - mx) @ coefs + my
            err += ((pred - y[te][:, None]) ** 2).mean(0)
        if failed:
            alpha = float(grid.min())
            notes.append("lasso CV did not converge on a fold; using the smallest lambda")
        else:
            alpha = float(grid[int(np.argmin(err))])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        model = Lasso(alpha=alpha, fit_intercept=False, tol=tol, max_iter=max_iter,
                      selection="cyclic").fit(Xc, yc)
    if any(issubclass(c.category, ConvergenceWarning) for c in caught):
        notes.append("final lasso fit did not converge")
    coef = model.coef_.copy()
    return coef, ym - coef @ xm, alpha, notes


def fit_linear_velocity(data: PairedData, t_grid, penalty="none", alpha=None, folds=5,
                        n_lambdas=30, tol=1e-8, max_iter=10_000, ridge=1e-10) -> VelocityField:
    """Fit Delta ~ B_t X_t + c_t separately at each grid time.

    Parameters
    ----------
    penalty : "none" (OLS via normal equations with ridge jitter) or "l1"
        (Lasso per output coordinate; ``alpha`` fixed, or chosen by
        ``folds``-fold CV over ``n_lambdas`` values log-spaced in
        [1e-4, 1e1] * lambda_max).

    Returns
    -------
    VelocityField
        Evaluates the model of the nearest grid time.  ``info`` holds
        ``t_grid``, ``slopes`` (T, d, d), ``intercepts`` (T, d), chosen
        ``alphas`` and ``warnings``.
    """
    _paired(data, "fit_linear_velocity")
    tg = np.sort(np.atleast_1d(np.asarray(t_grid, dtype=np.float64)))
    if tg.size == 0:
        raise ParameterError("t_grid must be nonempty")
    if penalty not in ("none", "l1"):
        raise ParameterError("penalty must be 'none' or 'l1'")
    d, n = data.dim, data.n
    if penalty == "none" and n < d + 2:
        raise FitError(f"OLS needs n >= d + 2 (n={n}, d={d})")
    D = data.delta
    slopes = np.empty((tg.size, d, d))
    icpt = np.empty((tg.size, d))
    alphas = np.full((tg.size, d), np.nan)
    notes = []
    for k, t in enumerate(tg):
        Xt = data.interpolate(t)
        if penalty == "none":
            slopes[k], icpt[k] = _ols(Xt, D, ridge)
            continue
        for j in range(d):
            c, b, a, msg = _lasso_cv(Xt, D[:, j], n_lambdas, folds, tol, max_iter, alpha)
            slopes[k, j], icpt[k, j], alphas[k, j] = c, b, a
            notes.extend(f"t={t:g}, output {j}: {m}" for m in msg)

    def nearest(t):
        return int(np.argmin(np.abs(tg - t)))

    def func(t, z):
        k = nearest(t)
        return z @ slopes[k].T + icpt[k]

    def jac(t, z):
        k = nearest(t)
        return np.broadcast_to(slopes[k], z.shape[:-1] + (d, d)).copy()

    info = {"t_grid": tg, "slopes": slopes, "intercepts": icpt, "alphas": alphas,
            "warnings": notes, "penalty": penalty}
    return VelocityField(func, d, jac, info=info)


# ---------------------------------------------------------------------------
# Fields from estimators
# ---------------------------------------------------------------------------

def estimator_field(name, data: PairedData, cfg: EstimatorConfig, sigma=None) -> VelocityField:
    """Freeze an estimator on its data as a :class:`VelocityField`."""
    d = data.dim
    if name == "reg2":
        return VelocityField(lambda t, z: v_reg2(t, z, data, cfg), d, info={"kind": "reg2"})
    if name == "reg3":
        return VelocityField(lambda t, z: v_reg3(t, z, data, cfg), d, info={"kind": "reg3"})
    if name == "reg0":
        return VelocityField(lambda t, z: v_reg0(t, z, data, cfg), d, info={"kind": "reg0"})
    if name == "smoothed":
        s = cfg.bandwidth if sigma is None else sigma

        def f(t, z):
            Q = z.reshape(-1, d)
            return np.stack([v_smoothed(t, q, data, s) for q in Q]).reshape(z.shape)
        return VelocityField(f, d, info={"kind": "smoothed"})
    raise ParameterError(f"no frozen field for estimator {name!r}")
