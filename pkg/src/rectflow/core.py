"""Domain types, samplers and empirical moments shared by every module."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InsufficientDataError, ParameterError

SYM_TOL = 1e-12
EIG_TOL = 1e-10

_U64 = 2**64


def _frozen(a):
    a = np.array(a, dtype=np.float64, order="C")
    a.setflags(write=False)
    return a


def as_points(z, dim=None):
    """Return ``z`` as a float array whose last axis has length ``dim``.

    Scalars are promoted to shape ``(1,)`` so that 1-D callers may pass
    plain floats.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0:
        z = z.reshape(1)
    if dim is not None and z.shape[-1] != dim:
        raise ParameterError(f"expected last axis of length {dim}, got shape {z.shape}")
    return z


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngSpec:
    """A reproducible random stream keyed on ``(seed, stream)``.

    Streams with distinct ids are statistically independent (they are
    spawned children of one ``SeedSequence``), so replicate ``r`` can use
    ``stream=r`` no matter how replicates are scheduled.
    """

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) < _U64:
                raise ParameterError(f"{name} must be a 64-bit unsigned integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, k: int) -> "RngSpec":
        """Derive a sub-stream, e.g. one per replicate of a macro-seed."""
        return RngSpec(self.seed, (int(self.stream) * 1_000_003 + int(k) + 1) % _U64)


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, RngSpec):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise ParameterError("rng must be an RngSpec or numpy Generator")


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleSet:
    """An ``n x d`` array of draws from one marginal.

    ``label`` is ``"source"`` for draws of X0 and ``"target"`` for X1.
    """

    data: np.ndarray
    label: str = "source"

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ParameterError(f"sample data must be n x d with n, d >= 1, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ParameterError("sample data must be finite")
        if self.label not in ("source", "target"):
            raise ParameterError("label must be 'source' or 'target'")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n

    def subset(self, sl) -> "SampleSet":
        return SampleSet(self.data[sl], self.label)


class VelocityField:
    """A time-dependent vector field ``(t, z) -> v(t, z)``.

    ``func`` must accept ``z`` of shape ``(..., d)`` and return an array of
    the same shape.  ``jac``, when given, returns ``(..., d, d)``.  Without
    an analytic Jacobian, :meth:`jacobian` falls back to central finite
    differences.
    """

    def __init__(self, func: Callable, dim: int, jac: Optional[Callable] = None,
                 info: Optional[dict] = None):
        self.func = func
        self.dim = int(dim)
        self.jac = jac
        self.info = dict(info or {})

    @property
    def has_jacobian(self) -> bool:
        return self.jac is not None

    def __call__(self, t, z):
        return self.func(float(t), as_points(z, self.dim))

    def jacobian(self, t, z, fd_step: Optional[float] = None):
        z = as_points(z, self.dim)
        if self.jac is not None and fd_step is None:
            return self.jac(float(t), z)
        step = 1e-5 if fd_step is None else float(fd_step)
        d = self.dim
        J = np.empty(z.shape + (d,))
        for k in range(d):
            e = np.zeros(d)
            e[k] = step
            J[..., :, k] = (self.func(float(t), z + e) - self.func(float(t), z - e)) / (2 * step)
        return J


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States of one path on a time grid, optionally with fundamental matrices.

    ``fundamental[k]`` is Phi(times[k], times[0]) and ``log_det[k]`` is the
    co-integrated trace integral of the Jacobian, when computed.
    """

    times: np.ndarray
    states: np.ndarray
    fundamental: Optional[np.ndarray] = None
    log_det: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        s = np.asarray(self.states, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if t.ndim != 1 or len(t) < 1 or len(s) != len(t):
            raise ParameterError("times and states must have matching length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ParameterError("times must be strictly increasing")
        if not np.all(np.isfinite(s)):
            raise ParameterError("trajectory states must be finite")
        object.__setattr__(self, "times", _frozen(t))
        object.__setattr__(self, "states", _frozen(s))
        if self.fundamental is not None:
            object.__setattr__(self, "fundamental", _frozen(self.fundamental))
        if self.log_det is not None:
            object.__setattr__(self, "log_det", _frozen(self.log_det))

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def with_fundamental(self, fundamental, log_det=None) -> "Trajectory":
        return Trajectory(self.times, self.states, fundamental, log_det)


# ---------------------------------------------------------------------------
# Parameter families
# ---------------------------------------------------------------------------

def check_covariance(S, name="covariance") -> np.ndarray:
    """Validate a symmetric PSD matrix and clamp tiny negative eigenvalues."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if S.shape[0] != S.shape[1]:
        raise ParameterError(f"{name} must be square, got {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if np.max(np.abs(S - S.T)) > SYM_TOL * scale:
        raise ParameterError(f"{name} is not symmetric")
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w.min() < -EIG_TOL * scale:
        raise ParameterError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3g})")
    if w.min() < 0:
        S = (V * np.clip(w, 0, None)) @ V.T
        S = 0.5 * (S + S.T)
    return S


def _vec(m, d=None):
    m = np.atleast_1d(np.asarray(m, dtype=np.float64))
    if m.ndim != 1 or (d is not None and m.shape[0] != d):
        raise ParameterError("mean must be a vector of matching dimension")
    return m


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Means and covariances of X0 ~ N(m0, S0) and X1 ~ N(m1, S1)."""

    m0: np.ndarray
    m1: np.ndarray
    S0: np.ndarray
    S1: np.ndarray

    def __post_init__(self):
        m0 = _vec(self.m0)
        d = m0.shape[0]
        m1 = _vec(self.m1, d)
        S0 = check_covariance(self.S0, "S0")
        S1 = check_covariance(self.S1, "S1")
        if S0.shape != (d, d) or S1.shape != (d, d):
            raise ParameterError("covariance shapes do not match the means")
        for k, v in (("m0", m0), ("m1", m1), ("S0", S0), ("S1", S1)):
            object.__setattr__(self, k, _frozen(v))

    @classmethod
    def from_1d(cls, m0=0.0, s0=1.0, m1=0.0, s1=1.0):
        """1-D parameters given standard deviations ``s0``, ``s1``."""
        return cls([m0], [m1], [[s0 * s0]], [[s1 * s1]])

    @classmethod
    def standard(cls, d=1):
        return cls(np.zeros(d), np.zeros(d), np.eye(d), np.eye(d))

    @property
    def dim(self) -> int:
        return self.m0.shape[0]

    def mean_t(self, t):
        return (1 - t) * self.m0 + t * self.m1

    def cov_t(self, t):
        return t * t * self.S1 + (1 - t) ** 2 * self.S0

    def source(self):
        return self.m0, self.S0

    def target(self):
        return self.m1, self.S1


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Gaussian mixtures for X0 and X1.

    ``components0`` is a sequence of ``(mean, covariance)`` pairs with
    mixing weights ``weights0``; likewise for the target.
    """

    weights0: np.ndarray
    components0: tuple
    weights1: np.ndarray
    components1: tuple

    def __post_init__(self):
        dims = set()
        for side in ("0", "1"):
            w = np.atleast_1d(np.asarray(getattr(self, "weights" + side), dtype=np.float64))
            comps = list(getattr(self, "components" + side))
            if len(comps) == 0:
                raise ParameterError("mixture needs at least one component")
            if len(w) != len(comps):
                raise ParameterError("one weight per component required")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ParameterError("mixture weights must be nonnegative and sum to 1")
            clean = []
            for mean, cov in comps:
                mean = _vec(mean)
                cov = check_covariance(cov)
                if cov.shape != (mean.shape[0],) * 2:
                    raise ParameterError("component covariance does not match its mean")
                dims.add(mean.shape[0])
                clean.append((_frozen(mean), _frozen(cov)))
            object.__setattr__(self, "weights" + side, _frozen(w))
            object.__setattr__(self, "components" + side, tuple(clean))
        if len(dims) != 1:
            raise ParameterError("all components must share one dimension")

    @classmethod
    def self_transport(cls, weights, components):
        return cls(weights, components, weights, components)

    @classmethod
    def symmetric_1d(cls, mu=1.0, sigma=1.0):
        """The mixture 0.5 N(mu, sigma^2) + 0.5 N(-mu, sigma^2), transported to itself."""
        comps = [([mu], [[sigma * sigma]]), ([-mu], [[sigma * sigma]])]
        return cls.self_transport([0.5, 0.5], comps)

    @property
    def dim(self) -> int:
        return self.components0[0][0].shape[0]

    def source(self):
        return self.weights0, self.components0

    def target(self):
        return self.weights1, self.components1

    def mean(self, side=0):
        w, comps = (self.weights0, self.components0) if side == 0 else (self.weights1, self.components1)
        return sum(wi * c[0] for wi, c in zip(w, comps))


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def _cov_factor(cov):
    """Matrix L with L L^T = cov (Cholesky when PD, else clamped eigen)."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0, None))


def sample_gaussian(params_half, n, rng, label="source") -> SampleSet:
    """Draw ``n`` i.i.d. rows from N(mean, cov).

    Parameters
    ----------
    params_half : (mean, cov)
        One side of a :class:`GaussianParams`, e.g. ``p.source()``.
    n : int
    rng : RngSpec or numpy Generator
    """
    mean, cov = params_half
    mean = _vec(mean)
    cov = check_covariance(cov)
    if cov.shape != (mean.shape[0],) * 2:
        raise ParameterError("covariance does not match mean")
    if int(n) < 1:
        raise ParameterError("n must be >= 1")
    g = _rng(rng)
    Z = g.standard_normal((int(n), mean.shape[0]))
    return SampleSet(mean + Z @ _cov_factor(cov).T, label)


def sample_mixture(params_half, n, rng, label="source") -> SampleSet:
    """Draw from a Gaussian mixture: categorical component, then a Gaussian draw."""
    weights, comps = params_half
    comps = list(comps)
    if len(comps) == 0:
        raise ParameterError("mixture needs at least one component")
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(comps) or np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
        raise ParameterError("invalid mixture weights")
    if int(n) < 1:
        raise ParameterError("n must be >= 1")
    g = _rng(rng)
    d = _vec(comps[0][0]).shape[0]
    labels = g.choice(len(comps), size=int(n), p=weights / weights.sum())
    Z = g.standard_normal((int(n), d))
    out = np.empty_like(Z)
    for k, (mean, cov) in enumerate(comps):
        idx = labels == k
        out[idx] = _vec(mean, d) + Z[idx] @ _cov_factor(check_covariance(cov)).T
    return SampleSet(out, label)


def sample_uniform_box(lo, hi, n, rng, label="source") -> SampleSet:
    """Uniform draws on the box prod_j [lo_j, hi_j]."""
    lo = _vec(lo)
    hi = _vec(hi, lo.shape[0])
    if np.any(lo >= hi):
        raise ParameterError("box requires lo < hi in every coordinate")
    if int(n) < 1:
        raise ParameterError("n must be >= 1")
    g = _rng(rng)
    return SampleSet(lo + (hi - lo) * g.random((int(n), lo.shape[0])), label)


def empirical_moments(s: SampleSet):
    """Sample mean and unbiased (n - 1) covariance."""
    x = s.data if isinstance(s, SampleSet) else np.atleast_2d(np.asarray(s, dtype=np.float64))
    if x.shape[0] < 2:
        raise InsufficientDataError("empirical_moments needs at least two rows")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    return mean, 0.5 * (cov + cov.T)


__all__: Sequence[str] = [
    "RngSpec", "SampleSet", "VelocityField", "Trajectory", "GaussianParams",
    "MixtureParams", "sample_gaussian", "sample_mixture", "sample_uniform_box",
    "empirical_moments", "check_covariance", "as_points",
]
