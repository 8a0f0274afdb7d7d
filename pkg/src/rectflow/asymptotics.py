"""Asymptotic variance of the 1-D rectified-map estimator and CLT experiments.

For 1-D Gaussians the asymptotic variance of sqrt(n)(R_hat(x) - R(x)) is

    Sigma(x) = int_0^1 Phi(1, t, z_t)^2 / p_t(z_t) E[|Delta - v_t(z_t)| | X_t = z_t] dt,

with z_t the exact path from x.  Given X_t = z, Delta = X1 - X0 is normal
with variance s0^2 s1^2 / (t^2 s1^2 + (1-t)^2 s0^2), so the conditional
mean absolute deviation is sqrt(2 Var / pi).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

from .closedform import gaussian_fundamental_matrix_1d, gaussian_rectified_map
from .core import GaussianParams, RngSpec, sample_gaussian
from .errors import ExperimentError, ParameterError, RectflowError
from .estimators import EstimatorConfig, PairedData, estimator_field, v_onestep
from .flow import IntegratorSpec, integrate_flow


def _sigmas(p: GaussianParams):
    if p.dim != 1:
        raise ParameterError("1-D Gaussian parameters required")
    return float(np.sqrt(p.S0[0, 0])), float(np.sqrt(p.S1[0, 0]))


def conditional_delta_law_1d(t, z, p: GaussianParams):
    """Mean and variance of X1 - X0 given (1 - t) X0 + t X1 = z."""
    s0, s1 = _sigmas(p)
    m0, m1 = float(p.m0[0]), float(p.m1[0])
    st2 = t * t * s1 * s1 + (1 - t) ** 2 * s0 * s0
    cov = t * s1 * s1 - (1 - t) * s0 * s0
    mt = (1 - t) * m0 + t * m1
    return m1 - m0 + cov / st2 * (z - mt), s0 * s0 * s1 * s1 / st2


def sigma_integrand_1d(t, x, p: GaussianParams):
    s0, s1 = _sigmas(p)
    t = np.asarray(t, dtype=np.float64)
    st = np.sqrt(t * t * s1 * s1 + (1 - t) ** 2 * s0 * s0)
    u = (x - float(p.m0[0])) / s0
    zt = (1 - t) * float(p.m0[0]) + t * float(p.m1[0]) + st * u
    pt = np.exp(-0.5 * u * u) / (np.sqrt(2 * np.pi) * st)
    _, var = conditional_delta_law_1d(t, zt, p)
    phi = gaussian_fundamental_matrix_1d(t, p)
    return phi ** 2 / pt * np.sqrt(2 * var / np.pi)


def sigma_quadrature_1d(x, p: GaussianParams, t_nodes=256):
    """Sigma(x) by Gauss-Legendre quadrature over t in (0, 1).

    ``t_nodes`` is the node count or an explicit ``(nodes, weights)`` pair
    on [0, 1].
    """
    if np.isscalar(t_nodes):
        g, w = leggauss(int(t_nodes))
        nodes, weights = 0.5 * (g + 1), 0.5 * w
    else:
        nodes, weights = map(np.asarray, t_nodes)
    return float(np.dot(weights, sigma_integrand_1d(nodes, float(x), p)))


@dataclass(frozen=True, eq=False)
class CltRunResult:
    x: float
    n: int
    h: float
    replicates: int
    errors: np.ndarray
    scaled_variance: float
    reference: float
    failures: list = field(default_factory=list)

    @property
    def ratio(self):
        return self.scaled_variance / self.reference

    def summary(self):
        return {"n": self.n, "h": self.h, "M": self.replicates,
                "scaled_variance": self.scaled_variance,
                "sigma_reference": self.reference, "ratio": self.ratio,
                "failures": len(self.failures)}


def _replicate(args):
    p, x, n, h, estimator, spec, rng, kernel = args
    X0 = sample_gaussian((p.m0, p.S0), n, rng.child(0), "source")
    X1 = sample_gaussian((p.m1, p.S1), n, rng.child(1), "target")
    cfg = EstimatorConfig(bandwidth=h, kernel=kernel)
    fld = estimator_field(estimator, PairedData(X0, X1), cfg)
    return float(integrate_flow(fld, [x], spec).endpoint[0])


def clt_experiment(p: GaussianParams, x, n, h=None, M=200, estimator="reg2",
                   spec: IntegratorSpec = IntegratorSpec(steps=200), rng: RngSpec = RngSpec(0),
                   kernel=None, workers=None):
    """Replicate R_hat(x) - R(x) and report n var(errors) against Sigma(x).

    Replicate k draws from ``rng.child(k)``, so results do not depend on
    ``workers``.  Failed replicates are recorded; more than 10% of them
    raise :class:`ExperimentError`.
    """
    from .kde import GAUSSIAN

    if p.dim != 1:
        raise ParameterError("clt_experiment is 1-D")
    if estimator not in ("reg2", "reg0"):
        raise ParameterError("estimator must be 'reg2' or 'reg0'")
    if int(M) < 2:
        raise ParameterError("M must be at least 2")
    h = float(n) ** -0.25 if h is None else float(h)
    kernel = GAUSSIAN if kernel is None else kernel
    jobs = [(p, float(x), int(n), h, estimator, spec, rng.child(k), kernel) for k in range(int(M))]
    truth = float(gaussian_rectified_map(p)(np.array([x]))[0])
    values = np.full(len(jobs), np.nan)
    failures = []

    def record(k, fut_or_val):
        try:
            values[k] = fut_or_val() if callable(fut_or_val) else fut_or_val
        except RectflowError as exc:
            failures.append((k, str(exc)))

    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(_replicate, j) for j in jobs]
            for k, f in enumerate(futs):
                record(k, f.result)
    else:
        for k, j in enumerate(jobs):
            record(k, lambda j=j: _replicate(j))
    if len(failures) > 0.1 * len(jobs):
        raise ExperimentError(f"{len(failures)} of {len(jobs)} replicates failed")
    errs = values[np.isfinite(values)] - truth
    return CltRunResult(float(x), int(n), h, int(M), errs,
                        float(n * np.var(errs, ddof=1)),
                        float(sigma_reference(x, p)), failures)


def sigma_reference(x, p: GaussianParams):
    from .closedform import gaussian_clt_variance_1d
    return gaussian_clt_variance_1d(x, p)


def default_workers():
    return os.cpu_count() or 1


def variance_blowup_scan(t_grid, data: PairedData, z, cfg: EstimatorConfig):
    """Trace of the one-step variance estimate at each t in ``t_grid``."""
    out = []
    for t in np.atleast_1d(t_grid):
        if not 0.0 < t < 1.0:
            raise ParameterError("t_grid must lie in (0, 1)")
        _, var = v_onestep(float(t), z, data, cfg)
        out.append((float(t), float(np.trace(var))))
    return out
