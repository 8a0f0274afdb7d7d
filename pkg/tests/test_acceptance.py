"""Acceptance checks, one test per criterion.

Each test prints a ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line before asserting.  Run directly with ``python tests/test_acceptance.py``
or through pytest.
"""

import time

import numpy as np
import pytest
from scipy import stats

from rectflow.asymptotics import clt_experiment, default_workers, sigma_quadrature_1d, variance_blowup_scan
from rectflow.cli import run_experiment
from rectflow.closedform import (gaussian_affine_coupling_field, gaussian_clt_variance_1d,
                                 gaussian_fundamental_matrix_1d, gaussian_ot_map, gaussian_rectified_map,
                                 gaussian_velocity, gaussian_velocity_field, mixture_velocity,
                                 mixture_velocity_field, uniform_lipschitz_bound, uniform_velocity,
                                 uniform_velocity_field)
from rectflow.core import GaussianParams, MixtureParams, RngSpec, VelocityField, sample_gaussian, sample_mixture
from rectflow.estimators import EstimatorConfig, PairedData, reg0_sums, v_den, v_sub3
from rectflow.flow import (IntegratorSpec, alekseev_residual, fundamental_matrix, integrate_batch,
                           integrate_flow, propagators_to_end)
from rectflow.geometry import Ball, Box, dist_to_boundary, flow_distance_lower_bound
from rectflow.kde import (GAUSSIAN, KDE, GaussianDensity, MixtureDensity, UniformDensity, boundary_kde_eval,
                          boundary_kernel_construct, kde_eval, kernel_moment_report)


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return _report


def _spd(g, d):
    A = g.normal(size=(d, d))
    return A @ A.T + 0.5 * np.eye(d)


def _orthogonal(g, d):
    Q, R = np.linalg.qr(g.normal(size=(d, d)))
    return Q * np.sign(np.diag(R))


def test_criterion_01_closed_form_trajectory(report):
    t0 = time.perf_counter()
    xs = np.array([-2.0, -1.0, -0.25, 0.25, 1.0, 2.0])[:, None]
    times, Z = integrate_batch(gaussian_velocity_field(GaussianParams.standard(1)), xs, IntegratorSpec("rk4", 1000))
    truth = xs[None, :, 0] * np.sqrt(times ** 2 + (1 - times) ** 2)[:, None]
    err = float(np.abs(Z[..., 0] - truth).max())
    wall = time.perf_counter() - t0
    report(1, err < 1e-8 and wall < 1.0, f"max abs error {err:.2e} (< 1e-8), {wall:.2f} s (< 1 s)")


def test_criterion_02_gaussian_map_identities(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(2)
    commuting, differing = [], 0
    for k in range(50):
        d = 1 + k % 5
        Q = _orthogonal(g, d)
        S0 = Q @ np.diag(g.uniform(0.3, 3.0, d)) @ Q.T
        S1 = Q @ np.diag(g.uniform(0.3, 3.0, d)) @ Q.T
        p = GaussianParams(g.normal(size=d), g.normal(size=d), S0, S1)
        R, T = gaussian_rectified_map(p), gaussian_ot_map(p)
        commuting.append(max(np.abs(R.A - T.A).max(), np.abs(R.b - T.b).max()))
        d2 = 2 + k % 4
        q = GaussianParams(g.normal(size=d2), g.normal(size=d2), _spd(g, d2), _spd(g, d2))
        R2, T2 = gaussian_rectified_map(q), gaussian_ot_map(q)
        differing += int(np.abs(R2.A - T2.A).max() > 1e-6)
    worst = float(max(commuting))
    wall = time.perf_counter() - t0
    ok = worst < 1e-9 and differing >= 45 and wall < 5
    report(2, ok, f"commuting max diff {worst:.1e} (< 1e-9), non-commuting differ {differing}/50 (>= 45), "
                  f"{wall:.2f} s")


def test_criterion_03_iteration_invariance(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(3)
    d = 3
    p = GaussianParams(g.normal(size=d), g.normal(size=d), _spd(g, d), _spd(g, d))
    first = gaussian_rectified_map(p)
    fld = gaussian_affine_coupling_field(first, p)
    xs = sample_gaussian((p.m0, p.S0), 20, RngSpec(3)).data
    _, Z = integrate_batch(fld, xs, IntegratorSpec("rk4", 200))
    err = float(np.abs(Z[-1] - first(xs)).max())
    wall = time.perf_counter() - t0
    report(3, err < 1e-6 and wall < 2, f"second pass vs first pass max diff {err:.1e} (< 1e-6), {wall:.2f} s")


def test_criterion_04_representation_equivalence(report):
    t0 = time.perf_counter()
    ts = np.linspace(0.1, 0.9, 9)
    cfg = EstimatorConfig()
    p = GaussianParams.from_1d(0.5, 1.0, -1.0, 2.0)
    mp = MixtureParams.symmetric_1d()
    zs = np.linspace(-2.0, 2.0, 9)[:, None]
    g0, g1 = GaussianDensity(p.m0, p.S0), GaussianDensity(p.m1, p.S1)
    mix = MixtureDensity(mp.weights0, mp.components0)
    errs = {"gaussian": 0.0, "mixture": 0.0, "uniform": 0.0}
    for t in ts:
        errs["gaussian"] = max(errs["gaussian"],
                               np.abs(v_den(t, zs, g0, g1, cfg) - gaussian_velocity(t, zs, p)).max())
        errs["mixture"] = max(errs["mixture"], np.abs(v_den(t, zs, mix, mix, cfg) - mixture_velocity(t, zs, mp)).max())
    body = Box([0.0], [1.0])
    u = UniformDensity(body)
    ucfg = EstimatorConfig(body=body)
    for t in ts:
        for z in np.linspace(0.05, 0.95, 9):
            errs["uniform"] = max(errs["uniform"], abs(v_den(t, [z], u, u, ucfg)[0] - uniform_velocity(t, z)))
    wall = time.perf_counter() - t0
    worst = max(errs.values())
    report(4, worst < 1e-5 and wall < 30,
           ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f" (< 1e-5), {wall:.1f} s")


def test_criterion_05_bandwidth_identity(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(5)
    p = GaussianParams.from_1d(0.0, 1.0, 1.0, 2.0)
    r = RngSpec(5)
    data = PairedData(sample_gaussian((p.m0, p.S0), 300, r.child(0)), sample_gaussian((p.m1, p.S1), 300, r.child(1)))
    h = 0.4
    kde1 = KDE(data.x1, GAUSSIAN, h)
    worst = 0.0
    for _ in range(20):
        t, z = g.uniform(0.05, 0.95), np.array([g.uniform(-2, 3)])
        _, _, phat = v_sub3(t, z, data.x0, kde1, return_parts=True)
        _, den = reg0_sums(t, z, data, t * h)
        worst = max(worst, float(np.abs(np.asarray(phat) / np.asarray(den) - 1).max()))
    wall = time.perf_counter() - t0
    report(5, worst < 1e-12 and wall < 5, f"max relative difference {worst:.1e} (< 1e-12), {wall:.2f} s")


def _ks_pass(pushed, fresh):
    return all(stats.ks_2samp(pushed[:, j], fresh[:, j]).pvalue > 0.01 for j in range(pushed.shape[1]))


def test_criterion_06_marginal_preservation(report):
    t0 = time.perf_counter()
    n, spec = 2000, IntegratorSpec("rk4", 100)
    p = GaussianParams(np.zeros(2), np.array([1.0, -0.5]), np.eye(2), np.array([[2.0, 0.6], [0.6, 1.0]]))
    mp = MixtureParams.symmetric_1d()
    flows = {
        "gaussian": (gaussian_velocity_field(p), lambda r, lab: sample_gaussian((p.m0, p.S0) if lab == "source"
                                                                                 else (p.m1, p.S1), n, r, lab)),
        "mixture": (mixture_velocity_field(mp), lambda r, lab: sample_mixture(mp.source() if lab == "source"
                                                                               else mp.target(), n, r, lab)),
    }
    passes = {}
    for name, (v, draw) in flows.items():
        count = 0
        for seed in range(20):
            r = RngSpec(600 + seed)
            X0 = draw(r.child(0), "source").data
            _, Z = integrate_batch(v, X0, spec)
            F0, F1 = draw(r.child(1), "source").data, draw(r.child(2), "target").data
            ok = True
            for t, k in ((0.5, 50), (1.0, 100)):
                ok &= _ks_pass(Z[k], (1 - t) * F0 + t * F1)
            count += int(ok)
        passes[name] = count
    wall = time.perf_counter() - t0
    ok = min(passes.values()) >= 18 and wall < 60
    report(6, ok, f"KS 1% level at t in {{0.5, 1}}: gaussian {passes['gaussian']}/20, "
                  f"mixture {passes['mixture']}/20 (>= 18), {wall:.1f} s")


def test_criterion_07_fundamental_matrix(report):
    t0 = time.perf_counter()
    spec = IntegratorSpec("rk4", 1000)
    p = GaussianParams.from_1d(0.0, 1.0, 0.5, 2.0)
    v = gaussian_velocity_field(p)
    tr = fundamental_matrix(v, integrate_flow(v, [0.7], spec), spec)
    prop = propagators_to_end(tr)
    idx = np.arange(0, 1001, 50)
    closed = np.array([gaussian_fundamental_matrix_1d(tr.times[k], p) for k in idx])
    err1 = float(np.abs(prop[idx, 0, 0] - closed).max())
    q = GaussianParams(np.zeros(2), np.ones(2), np.array([[1.0, 0.3], [0.3, 0.6]]), np.array([[2.0, -0.4], [-0.4, 1.5]]))
    w = gaussian_velocity_field(q)
    tr2 = fundamental_matrix(w, integrate_flow(w, [0.2, -0.3], spec), spec)
    err2 = float(np.abs(np.linalg.det(tr2.fundamental) - np.exp(tr2.log_det)).max())
    wall = time.perf_counter() - t0
    ok = err1 < 1e-6 and err2 < 1e-6 and wall < 5
    report(7, ok, f"Phi(1,t) vs closed form on 21 t: {err1:.1e}; det vs exp(trace integral): {err2:.1e} "
                  f"(< 1e-6), {wall:.2f} s")


def test_criterion_08_alekseev_first_order(report):
    t0 = time.perf_counter()
    v = mixture_velocity_field(MixtureParams.symmetric_1d())
    spec = IntegratorSpec("rk4", 200)
    out = []
    for eps in (1e-3, 5e-4):
        vh = VelocityField(lambda t, z, e=eps: v(t, z) + e, 1, v.jacobian)
        lhs, lin, res = alekseev_residual(v, vh, [0.5], spec)
        out.append((res, res / float(np.linalg.norm(lhs))))
    rel = out[0][1]
    shrink = out[0][0] / out[1][0]
    wall = time.perf_counter() - t0
    ok = rel < 0.05 and 3 <= shrink <= 5 and wall < 10
    report(8, ok, f"residual/|lhs| {rel:.2e} (< 0.05), residual shrink on halving {shrink:.2f} (in [3, 5]), {wall:.1f} s")


def test_criterion_09_clt_variance(report):
    t0 = time.perf_counter()
    p = GaussianParams.standard(1)
    quad_err = abs(sigma_quadrature_1d(0.0, p) - gaussian_clt_variance_1d(0.0, p))
    ratios = []
    for seed in range(5):
        res = clt_experiment(p, 0.0, 2000, M=200, rng=RngSpec(900 + seed), workers=default_workers())
        ratios.append(res.ratio)
    inside = sum(0.4 <= r <= 2.5 for r in ratios)
    wall = time.perf_counter() - t0
    ok = inside >= 4 and quad_err < 1e-6 and wall < 600
    report(9, ok, f"n var / pi per macro-seed {np.round(ratios, 3).tolist()}, {inside}/5 in [0.4, 2.5] (>= 4); "
                  f"quadrature vs closed form {quad_err:.1e} (< 1e-6), {wall:.0f} s")


def test_criterion_10_boundary_kde(report):
    t0 = time.perf_counter()
    g = np.random.default_rng(10)
    worst = 0.0
    for body in (Box([0.0, 0.0], [1.0, 1.0]), Ball([0.0, 0.0], 1.0), Box([0.0], [1.0])):
        for k in range(20):
            if body.dim == 1:
                z = np.array([g.random() * (0.15 if k % 2 == 0 else 1.0)])
            elif isinstance(body, Box):
                z = g.random(2) if k % 2 else np.array([g.random() * 0.1, g.random()])
            else:
                rad = 0.95 + 0.05 * np.sqrt(g.random()) if k % 2 == 0 else np.sqrt(g.random())
                ang = 2 * np.pi * g.random()
                z = rad * np.array([np.cos(ang), np.sin(ang)])
            for m in (1, 2):
                mom, zero = kernel_moment_report(boundary_kernel_construct(body, z, 0.2, m))
                worst = max(worst, mom, zero)
    s = sample_uniform(100_000)
    corr = abs(boundary_kde_eval(s, Box([0.0], [1.0]), 0.1, 1, [0.0]) - 1.0)
    plain = abs(float(np.atleast_1d(kde_eval(s, GAUSSIAN, 0.1, [0.0]))[0]) - 1.0)
    wall = time.perf_counter() - t0
    ok = worst < 1e-8 and corr < 0.5 * plain and wall < 60
    report(10, ok, f"worst moment {worst:.1e} (< 1e-8); |err| corrected {corr:.3f} vs uncorrected {plain:.3f} "
                   f"(ratio < 0.5), {wall:.1f} s")


def sample_uniform(n):
    from rectflow.core import sample_uniform_box
    return sample_uniform_box([0.0], [1.0], n, RngSpec(10))


def test_criterion_11_variance_blowup(report):
    t0 = time.perf_counter()
    p = GaussianParams.standard(1)
    cfg = EstimatorConfig(bandwidth=0.3)
    ratios = []
    for seed in range(10):
        r = RngSpec(1100 + seed)
        data = PairedData(sample_gaussian((p.m0, p.S0), 400, r.child(0)),
                          sample_gaussian((p.m1, p.S1), 400, r.child(1)))
        scan = dict(variance_blowup_scan([0.05, 0.5], data, np.array([0.0]), cfg))
        ratios.append(scan[0.05] / scan[0.5])
    hits = sum(r >= 2 for r in ratios)
    wall = time.perf_counter() - t0
    report(11, hits >= 8 and wall < 60,
           f"trace(t=0.05)/trace(t=0.5) {np.round(ratios, 2).tolist()}, {hits}/10 >= 2 (need 8), {wall:.1f} s")


@pytest.mark.slow
def test_criterion_12_identity_d50(report, tmp_path):
    t0 = time.perf_counter()
    _, man = run_experiment("fig4", out=str(tmp_path), workers=1)
    wall = time.perf_counter() - t0
    checks = {c["name"]: c for c in man["checks"] if c["acceptance"]}
    plug = next(c for n, c in checks.items() if n.startswith("plug-in"))
    lasso = next(c for n, c in checks.items() if n.startswith("lasso"))
    ok = plug["passed"] and lasso["passed"] and wall < 600
    report(12, ok, f"plug-in max diagonal deviation {plug['value']:.3f} ({plug['threshold']}): "
                   f"{'ok' if plug['passed'] else 'not met'}; lasso {lasso['name']} {lasso['value']} "
                   f"({lasso['threshold']}): {'ok' if lasso['passed'] else 'not met'}; {wall:.0f} s")


def test_criterion_13_uniform_confinement(report):
    t0 = time.perf_counter()
    body = Box([0.0], [1.0])
    T = 1000
    xs = np.linspace(0.1, 0.9, 9)[:, None]
    times, Z = integrate_batch(uniform_velocity_field(), xs, IntegratorSpec("rk4", T))
    inside = bool(np.all((Z >= 0) & (Z <= 1)))
    slack = 10.0 / T         # |v| <= 1 on [0, 1], so ten steps move a path by at most 10 / T
    worst = np.inf
    for k in range(T):       # the bound degenerates at t = 1
        for i in range(len(xs)):
            gap = dist_to_boundary(body, Z[k, i]) - flow_distance_lower_bound(dist_to_boundary(body, xs[i]), times[k])
            worst = min(worst, gap + slack)
    g = np.random.default_rng(13)
    lip_ok = 0
    for _ in range(2000):
        t = g.uniform(0.01, 0.99)
        z1, z2 = g.random(2)
        dv = abs(uniform_velocity(t, z1) - uniform_velocity(t, z2))
        lip_ok += int(dv <= uniform_lipschitz_bound(t) * abs(z1 - z2) + 1e-12)
    wall = time.perf_counter() - t0
    ok = inside and worst >= 0 and lip_ok == 2000 and wall < 10
    report(13, ok, f"paths in [0,1]: {inside}; min slack margin {worst:.2e} (>= 0); "
                   f"Lipschitz increments {lip_ok}/2000; {wall:.1f} s")


def test_criterion_14_determinism(report, tmp_path):
    runs = {"fig1": {}, "fig2": {"n_mc": 500},
            "fig3": {"n": 40, "M": 30, "bandwidths": [0.3, 1.0], "T": 20},
            "clt": {"M": 4, "n": 200, "T": 20},
            "boundary_kde_bench": {"n": 5000, "reps": 2, "moment_points": 2}}
    same, total = 0, 0
    for name, cfg in runs.items():
        a, man = run_experiment(name, cfg, out=str(tmp_path / "a"), seed=14, workers=1)
        b, _ = run_experiment(name, cfg, out=str(tmp_path / "b"), seed=14, workers=1)
        for f in man["files"]:
            if f.endswith(".csv"):
                total += 1
                same += int(open(f"{a}/{f}", "rb").read() == open(f"{b}/{f}", "rb").read())
    report(14, same == total and total > 0, f"{same}/{total} CSV files byte-identical across reruns")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
