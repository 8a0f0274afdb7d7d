"""Convex bodies for the bounded case and the displacement set S_t(z).

For a body Omega, time t in (0, 1) and z in Omega,

    S_t(z) = {delta : z - t delta in Omega and z + (1 - t) delta in Omega}

is the set of displacements X1 - X0 compatible with X_t = z.  Three body
variants are supported: axis-aligned boxes, Euclidean balls and bounded
polytopes {x : A x <= b}.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .core import _frozen
from .errors import DegenerateTimeError, DomainError, EmptyBodyError, ParameterError

TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ParameterError("box bounds must be vectors of equal length")
        if np.any(lo >= hi):
            raise ParameterError("box requires lo < hi in every coordinate")
        object.__setattr__(self, "lo", _frozen(lo))
        object.__setattr__(self, "hi", _frozen(hi))

    @property
    def dim(self):
        return self.lo.shape[0]

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.all((x >= self.lo - TOL) & (x <= self.hi + TOL), axis=-1)

    def dist_to_boundary(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.minimum(x - self.lo, self.hi - x).min(axis=-1)

    def deflate(self, eps):
        lo, hi = self.lo + eps, self.hi - eps
        if np.any(lo >= hi):
            raise EmptyBodyError(f"deflating box by {eps} leaves it empty")
        return Box(lo, hi)

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def project(self, x):
        return np.clip(x, self.lo, self.hi)

    def to_dict(self):
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=np.float64))
        if c.ndim != 1:
            raise ParameterError("ball center must be a vector")
        if not float(self.radius) > 0:
            raise ParameterError("ball radius must be positive")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return self.center.shape[0]

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.linalg.norm(x - self.center, axis=-1) <= self.radius + TOL

    def dist_to_boundary(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.radius - np.linalg.norm(x - self.center, axis=-1)

    def deflate(self, eps):
        r = self.radius - eps
        if r <= 0:
            raise EmptyBodyError(f"deflating ball by {eps} leaves it empty")
        return Ball(self.center, r)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def diameter(self):
        return 2.0 * self.radius

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        u = x - self.center
        r = np.linalg.norm(u, axis=-1, keepdims=True)
        scale = np.where(r > self.radius, self.radius / np.where(r > 0, r, 1.0), 1.0)
        return self.center + u * scale

    def to_dict(self):
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Polytope:
    """Bounded polytope {x : A x <= b}.

    Boundedness and a nonempty interior are the caller's responsibility.
    """

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if A.shape[0] != b.shape[0]:
            raise ParameterError("A and b must have the same number of rows")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms == 0):
            raise ParameterError("polytope rows must be nonzero")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "b", _frozen(b))

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def _norms(self):
        return np.linalg.norm(self.A, axis=1)

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.all(x @ self.A.T <= self.b + TOL, axis=-1)

    def dist_to_boundary(self, x):
        x = np.asarray(x, dtype=np.float64)
        return ((self.b - x @ self.A.T) / self._norms).min(axis=-1)

    def deflate(self, eps):
        out = Polytope(self.A, self.b - eps * self._norms)
        if len(out.vertices()) == 0:
            raise EmptyBodyError(f"deflating polytope by {eps} leaves it empty")
        return out

    def vertices(self):
        """Vertices by brute-force enumeration of d-row active sets (small m only)."""
        d = self.dim
        pts = []
        for rows in itertools.combinations(range(self.A.shape[0]), d):
            Ar = self.A[list(rows)]
            if abs(np.linalg.det(Ar)) < 1e-14:
                continue
            v = np.linalg.solve(Ar, self.b[list(rows)])
            if np.all(self.A @ v <= self.b + 1e-9):
                pts.append(v)
        if not pts:
            return np.empty((0, d))
        return np.unique(np.round(np.array(pts), 12), axis=0)

    def bounding_box(self):
        V = self.vertices()
        if len(V) == 0:
            raise EmptyBodyError("polytope has no vertices (empty or unbounded)")
        return V.min(axis=0), V.max(axis=0)

    def diameter(self):
        V = self.vertices()
        if len(V) < 2:
            return 0.0
        diff = V[:, None, :] - V[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    def project(self, x, sweeps=50):
        # cyclic projection onto violated halfspaces; exact for one active facet
        y = np.array(x, dtype=np.float64)
        for _ in range(sweeps):
            viol = y @ self.A.T - self.b
            if np.all(viol <= TOL):
                break
            for i in range(self.A.shape[0]):
                a = self.A[i]
                s = np.maximum(y @ a - self.b[i], 0.0) / (a @ a)
                y = y - s[..., None] * a if y.ndim > 1 else y - s * a
        return y

    def to_dict(self):
        return {"type": "polytope", "A": self.A.tolist(), "b": self.b.tolist()}


ConvexBody = (Box, Ball, Polytope)


# ---------------------------------------------------------------------------
# Functional interface
# ---------------------------------------------------------------------------

def contains(body, x):
    """Closed membership with absolute tolerance 1e-12."""
    out = body.contains(x)
    return bool(out) if np.ndim(out) == 0 else out


def dist_to_boundary(body, x):
    """Distance from an interior point ``x`` to the boundary of ``body``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(body.contains(x)):
        raise DomainError("dist_to_boundary requires x inside the body")
    out = np.maximum(body.dist_to_boundary(x), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def diameter(body) -> float:
    return body.diameter()


def deflate(body, eps):
    """The eroded body {x : B(x, eps) inside body}."""
    if eps < 0:
        raise ParameterError("eps must be nonnegative")
    return body.deflate(float(eps))


def _check_t(t):
    if not 0.0 < t < 1.0:
        raise DegenerateTimeError(f"S_t(z) queries need t in (0, 1), got {t}")


def st_interval_box(body: Box, t, z):
    """Per-coordinate interval [a_j, b_j] with S_t(z) = prod_j [a_j, b_j] for a box."""
    if not isinstance(body, Box):
        raise ParameterError("st_interval_box needs a Box body")
    _check_t(t)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    a = np.maximum((z - body.hi) / t, (body.lo - z) / (1 - t))
    b = np.minimum((z - body.lo) / t, (body.hi - z) / (1 - t))
    return a, b


def st_bounding_box(body, t, z):
    """Axis-aligned box containing S_t(z); exact for Box bodies."""
    _check_t(t)
    lo, hi = body.bounding_box()
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    a = np.maximum((z - hi) / t, (lo - z) / (1 - t))
    b = np.minimum((z - lo) / t, (hi - z) / (1 - t))
    return a, b


def st_membership(body, t, z, delta):
    """Whether z - t delta and z + (1 - t) delta both lie in the body."""
    _check_t(t)
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    delta = np.asarray(delta, dtype=np.float64)
    out = body.contains(z - t * delta) & body.contains(z + (1 - t) * delta)
    return bool(out) if np.ndim(out) == 0 else out


def st_norm_bound(body, t, z):
    """Upper bound (diam - dist(z, boundary)) / max(t, 1 - t) on |delta| over S_t(z)."""
    return (body.diameter() - dist_to_boundary(body, z)) / max(t, 1 - t)


def flow_distance_lower_bound(dist0, t):
    """Lower bound (1 - t) dist0 on the boundary distance of a flow path at time t."""
    return (1.0 - t) * dist0


def project(body, x):
    return body.project(x)


def body_from_dict(d: dict):
    kind = d.get("type")
    if kind == "box":
        return Box(d["lo"], d["hi"])
    if kind == "ball":
        return Ball(d["center"], d["radius"])
    if kind == "polytope":
        return Polytope(d["A"], d["b"])
    raise ParameterError(f"unknown body type {kind!r}")


def body_to_json(body) -> str:
    return json.dumps(body.to_dict(), sort_keys=True)


def body_from_json(s: str):
    return body_from_dict(json.loads(s))
