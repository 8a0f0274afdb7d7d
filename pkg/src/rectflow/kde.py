"""Kernels, kernel density estimates and boundary-corrected kernels.

Besides the estimators this module holds the *density handles* consumed by
the density-based velocity estimators: any callable ``p(x)`` with ``x`` of
shape ``(..., d)`` returning ``(...)``.  Handles optionally expose
``bounding_box()`` (an effective support), ``mean()`` and ``samples``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import gamma, pi
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from .core import SampleSet, _frozen, as_points, check_covariance
from .errors import DegenerateRegionError, DomainError, ParameterError
from .geometry import Box

FAMILIES = ("gaussian", "epanechnikov", "uniform_ball")

# budget of pairwise entries per chunk in the O(n m) kernel sums
_CHUNK = 2_000_000


def unit_ball_volume(d):
    return pi ** (d / 2) / gamma(d / 2 + 1)


@dataclass(frozen=True)
class KernelSpec:
    """A radial kernel that integrates to one over R^d.

    ``epanechnikov`` and ``uniform_ball`` are supported on the unit ball.
    """

    family: str = "gaussian"
    order_hint: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown kernel family {self.family!r}")
        if int(self.order_hint) < 1:
            raise ParameterError("order_hint must be >= 1")

    @property
    def support_radius(self):
        return np.inf if self.family == "gaussian" else 1.0

    def from_sq(self, r2, d):
        """Kernel value as a function of the squared norm |u|^2."""
        if self.family == "gaussian":
            return np.exp(-0.5 * r2) / (2 * pi) ** (d / 2)
        if self.family == "epanechnikov":
            c = (d + 2) / (2 * unit_ball_volume(d))
            return np.where(r2 <= 1.0, c * (1.0 - r2), 0.0)
        return np.where(r2 <= 1.0, 1.0 / unit_ball_volume(d), 0.0)

    def __call__(self, u):
        u = as_points(u)
        return self.from_sq((u * u).sum(-1), u.shape[-1])


GAUSSIAN = KernelSpec("gaussian")


def pairwise_sq(Q, X):
    """Squared distances between rows of Q (m, d) and X (n, d)."""
    D = Q[:, None, :] - X[None, :, :]
    return np.einsum("mnd,mnd->mn", D, D)


def _chunks(m, n):
    step = max(1, _CHUNK // max(n, 1))
    for s in range(0, m, step):
        yield slice(s, min(m, s + step))


# ---------------------------------------------------------------------------
# Density handles
# ---------------------------------------------------------------------------

class KDE:
    """Standard kernel density estimate (n h^d)^{-1} sum_i K((X_i - x)/h)."""

    def __init__(self, samples, kernel: KernelSpec = GAUSSIAN, h: float = 1.0):
        if not h > 0:
            raise ParameterError("bandwidth must be positive")
        self.samples = samples if isinstance(samples, SampleSet) else SampleSet(samples)
        self.kernel = kernel
        self.h = float(h)
        self.dim = self.samples.dim

    def __call__(self, x):
        x = as_points(x, self.dim)
        X = self.samples.data
        Q = x.reshape(-1, self.dim)
        out = np.empty(Q.shape[0])
        norm = 1.0 / (X.shape[0] * self.h ** self.dim)
        for sl in _chunks(Q.shape[0], X.shape[0]):
            r2 = pairwise_sq(Q[sl], X) / (self.h * self.h)
            out[sl] = self.kernel.from_sq(r2, self.dim).sum(1) * norm
        return out.reshape(x.shape[:-1])

    def bounding_box(self):
        X = self.samples.data
        pad = (8.5 if self.kernel.family == "gaussian" else 1.0) * self.h
        return X.min(0) - pad, X.max(0) + pad

    def mean(self):
        return self.samples.data.mean(0)


def kde_eval(samples, kernel: KernelSpec, h, x):
    """Evaluate the standard KDE of ``samples`` at ``x``."""
    out = KDE(samples, kernel, h)(x)
    return float(out) if np.ndim(out) == 0 else out


class GaussianDensity:
    """N(mean, cov) density handle."""

    samples = None

    def __init__(self, mean, cov):
        self.m = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.S = check_covariance(cov)
        self.dim = self.m.shape[0]
        self._L = np.linalg.cholesky(self.S)
        self._logc = -np.log(np.diag(self._L)).sum() - 0.5 * self.dim * np.log(2 * pi)

    def logpdf(self, x):
        x = as_points(x, self.dim)
        r = (x - self.m).reshape(-1, self.dim)
        sol = np.linalg.solve(self._L, r.T).T
        return (self._logc - 0.5 * (sol ** 2).sum(-1)).reshape(x.shape[:-1])

    def __call__(self, x):
        return np.exp(self.logpdf(x))

    def bounding_box(self, k=12.0):
        s = np.sqrt(np.diag(self.S))
        return self.m - k * s, self.m + k * s

    def mean(self):
        return self.m.copy()


class MixtureDensity:
    """Gaussian-mixture density handle."""

    samples = None

    def __init__(self, weights, components):
        self.w = np.asarray(weights, dtype=np.float64)
        self.parts = [GaussianDensity(m, S) for m, S in components]
        self.dim = self.parts[0].dim

    def __call__(self, x):
        logs = [np.log(w) + g.logpdf(x) for w, g in zip(self.w, self.parts) if w > 0]
        return np.exp(logsumexp(np.stack(logs, -1), axis=-1))

    def bounding_box(self):
        boxes = [g.bounding_box() for g in self.parts]
        return np.min([b[0] for b in boxes], 0), np.max([b[1] for b in boxes], 0)

    def mean(self):
        return sum(w * g.m for w, g in zip(self.w, self.parts))


class UniformDensity:
    """Uniform density on a convex body."""

    samples = None

    def __init__(self, body, volume: Optional[float] = None):
        self.body = body
        self.dim = body.dim
        if volume is None:
            if not isinstance(body, Box):
                raise ParameterError("volume must be given for non-box bodies")
            volume = float(np.prod(body.hi - body.lo))
        self.volume = float(volume)

    def __call__(self, x):
        x = as_points(x, self.dim)
        return np.where(self.body.contains(x), 1.0 / self.volume, 0.0)

    def bounding_box(self):
        return self.body.bounding_box()

    def mean(self):
        lo, hi = self.body.bounding_box()
        return 0.5 * (lo + hi)


class FunctionDensity:
    """Wrap a plain callable as a density handle with a declared support box."""

    samples = None

    def __init__(self, func, lo, hi, mean=None):
        self.func = func
        self.lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
        self.dim = self.lo.shape[0]
        self._mean = mean

    def __call__(self, x):
        return np.asarray(self.func(as_points(x, self.dim)), dtype=np.float64)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def mean(self):
        if self._mean is None:
            raise ParameterError("this density handle has no mean")
        return np.atleast_1d(np.asarray(self._mean, dtype=np.float64))


# ---------------------------------------------------------------------------
# Boundary-corrected kernels
# ---------------------------------------------------------------------------

def monomial_exponents(d, m):
    """Multi-indices 1 <= |alpha| <= m, graded, then by first differing index."""
    alphas = [a for a in itertools.product(range(m + 1), repeat=d) if 1 <= sum(a) <= m]
    alphas.sort(key=lambda a: (sum(a), a))
    return np.array(alphas, dtype=np.int64).reshape(-1, d)


def _monomials(u, E):
    # u (..., d), E (k, d) -> (..., k)
    return np.prod(u[..., None, :] ** E, axis=-1)


def window_quadrature(body, z, h, nodes_per_axis):
    """Tensor Gauss-Legendre rule on V_{z,h} = (body - z) intersected with B(0, h).

    Nodes fill the bounding box of V (the body's bounding box shifted by -z,
    clipped to [-h, h]^d) and are masked by membership in V.  When V is a
    box (always in 1-D), the rule is exact for polynomials of degree
    < 2 * nodes_per_axis.
    """
    d = body.dim
    blo, bhi = body.bounding_box()
    lo = np.maximum(blo - z, -h)
    hi = np.minimum(bhi - z, h)
    if np.any(hi <= lo):
        raise DegenerateRegionError("window V_{z,h} has empty interior")
    x, w = leggauss(int(nodes_per_axis))
    axes = [0.5 * (hi[k] - lo[k]) * x + 0.5 * (hi[k] + lo[k]) for k in range(d)]
    wts = [0.5 * (hi[k] - lo[k]) * w for k in range(d)]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    W = np.prod(np.stack(np.meshgrid(*wts, indexing="ij"), -1).reshape(-1, d), axis=-1)
    keep = (np.linalg.norm(U, axis=-1) <= h * (1 + 1e-12)) & body.contains(z + U)
    return U[keep], W[keep]


@dataclass(frozen=True, eq=False)
class BoundaryKernel:
    """Order-m kernel K_{z,h} on V_{z,h} in polynomial-residual form.

    K(u) = c0 + coef . Upsilon(u / h) for u in V_{z,h}, zero outside, where
    Upsilon lists the monomials of degree 1..m.
    """

    body: object
    z: np.ndarray
    h: float
    m: int
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    vol: float
    exponents: np.ndarray
    c0: float
    coef: np.ndarray

    def inside(self, u):
        u = np.asarray(u, dtype=np.float64)
        return (np.linalg.norm(u, axis=-1) <= self.h * (1 + 1e-12)) & self.body.contains(self.z + u)

    def polynomial(self, u):
        u = as_points(u, self.z.shape[0])
        return self.c0 + _monomials(u / self.h, self.exponents) @ self.coef

    def __call__(self, u):
        u = as_points(u, self.z.shape[0])
        return np.where(self.inside(u), self.polynomial(u), 0.0)


def boundary_kernel_construct(body, z, h, m, nodes_per_axis: Optional[int] = None) -> BoundaryKernel:
    """Build the order-m boundary kernel at ``z`` by residualising 1 on Upsilon_m.

    Parameters
    ----------
    body : Box, Ball or Polytope
    z : point in ``body``
    h : bandwidth
    m : correction order (moments of degree 1..m vanish)
    nodes_per_axis : Gauss-Legendre nodes per axis, default ``max(2m + 2, 8)``
    """
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if not body.contains(z):
        raise DomainError("boundary kernel centre must lie in the body")
    if not h > 0 or int(m) < 1:
        raise ParameterError("need h > 0 and m >= 1")
    m = int(m)
    q = int(nodes_per_axis or max(2 * m + 2, 8))
    U, W = window_quadrature(body, z, h, q)
    d = body.dim
    if len(W) < (m + 2) ** d:
        raise DegenerateRegionError("too few quadrature nodes in V_{z,h}")
    E = monomial_exponents(d, m)
    P = _monomials(U / h, E)                     # (N, k)
    vol = float(W.sum())
    B = (P * W[:, None]).T @ P
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > 1e12:
        raise DegenerateRegionError(f"moment matrix condition {cond:.3g} exceeds 1e12")
    beta = np.linalg.solve(B, P.T @ W)
    resid = 1.0 - P @ beta
    mass = float(W @ resid)
    scale = vol / mass
    c0, coef = scale, -scale * beta
    vals = c0 + P @ coef
    return BoundaryKernel(body, _frozen(z), float(h), m, _frozen(U), _frozen(W), _frozen(vals),
                          vol, E, float(c0), _frozen(coef))


def kernel_moment_report(bk: BoundaryKernel):
    """(max normalised moment of degree 1..m, zeroth-moment relative error).

    Moments are taken in the scaled variable u/h and divided by vol.
    """
    P = _monomials(bk.nodes / bk.h, bk.exponents)
    wv = bk.weights * bk.values
    moments = np.abs(wv @ P) / bk.vol
    zeroth = abs(wv.sum() - bk.vol) / bk.vol
    return float(moments.max()) if moments.size else 0.0, float(zeroth)


class BoundaryKDE:
    """Boundary-corrected density estimate n^{-1} sum_i K_{z,h}(X_i - z) / Vol(V_{z,h})."""

    def __init__(self, samples, body, h, m=1, nodes_per_axis=None):
        self.samples = samples if isinstance(samples, SampleSet) else SampleSet(samples)
        self.body = body
        self.h = float(h)
        self.m = int(m)
        self.nodes_per_axis = nodes_per_axis
        self.dim = self.samples.dim

    def at(self, z):
        bk = boundary_kernel_construct(self.body, z, self.h, self.m, self.nodes_per_axis)
        X = self.samples.data
        # only samples within distance h can contribute
        near = np.abs(X - bk.z).max(axis=1) <= self.h
        vals = bk(X[near] - bk.z)
        return float(vals.sum() / (X.shape[0] * bk.vol))

    def __call__(self, x):
        x = as_points(x, self.dim)
        flat = x.reshape(-1, self.dim)
        out = np.zeros(flat.shape[0])
        inside = self.body.contains(flat)
        for k in np.flatnonzero(inside):
            out[k] = self.at(flat[k])
        return out.reshape(x.shape[:-1])

    def bounding_box(self):
        return self.body.bounding_box()

    def mean(self):
        return self.samples.data.mean(0)


def boundary_kde_eval(samples, body, h, m, z, nodes_per_axis=None):
    """Boundary-corrected KDE at a single point ``z`` of the body."""
    return BoundaryKDE(samples, body, h, m, nodes_per_axis).at(z)
