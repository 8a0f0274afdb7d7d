"""Experiment harness: ``rectflow <experiment> --config file.json ...``.

Each experiment resolves its configuration (defaults, then the JSON file,
then ``--seed``/``--set`` overrides), computes its data, and writes CSVs,
``plot.svg``, ``resolved_config.json`` and ``manifest.json`` (last) into
``<out>/<experiment>/``.  Files are assembled in a scratch directory that
is renamed into place only on success.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import svgplot
from .asymptotics import clt_experiment, sigma_quadrature_1d
from .closedform import (gaussian_rectified_map, gaussian_velocity, mixture_velocity_field)
from .core import GaussianParams, MixtureParams, RngSpec, empirical_moments, sample_gaussian, sample_mixture, sample_uniform_box
from .errors import FarFieldError, ParameterError, RectflowError
from .estimators import (EstimatorConfig, PairedData, estimator_field, fit_linear_velocity, v_den, v_onestep,
                         v_reg0, v_reg2, v_reg2_batch, v_reg3, v_smoothed)
from .flow import IntegratorSpec, integrate_batch, ks_critical, marginal_preservation_stat, rectified_map
from .geometry import Ball, Box
from .kde import GAUSSIAN, KDE, KernelSpec, boundary_kde_eval, boundary_kernel_construct, kde_eval, kernel_moment_report

ALIASES = {"fig1": "fig1_velocity_paths", "fig2": "fig2_mixture_paths", "fig3": "fig3_trajectories_1d",
           "fig4": "fig4_identity_d50", "clt": "clt_1d"}


# ---------------------------------------------------------------------------
# Output plumbing
# ---------------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


@dataclass
class RunOutput:
    """Files and checks accumulated by a runner."""

    files: dict = field(default_factory=dict)
    rows: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def csv(self, name, header, rows):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        n = 0
        for r in rows:
            w.writerow([_cell(v) for v in r])
            n += 1
        self.files[name] = buf.getvalue()
        self.rows[name] = n

    def json(self, name, obj):
        self.files[name] = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"

    def svg(self, panels, rows=1, cols=1, title=""):
        self.files["plot.svg"] = svgplot.render(panels, rows, cols, title)

    def check(self, name, value, threshold, passed, acceptance=True):
        self.checks.append({"name": name, "value": _jsonable(value), "threshold": threshold,
                            "passed": bool(passed), "acceptance": bool(acceptance)})


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_outputs(out_root, name, cfg, result: RunOutput, wall):
    os.makedirs(out_root, exist_ok=True)
    scratch = tempfile.mkdtemp(prefix=f".{name}.", dir=out_root)
    try:
        for fname, text in result.files.items():
            with open(os.path.join(scratch, fname), "w", newline="") as fh:
                fh.write(text)
        with open(os.path.join(scratch, "resolved_config.json"), "w") as fh:
            fh.write(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        manifest = {
            "experiment": name,
            "config_hash": config_hash(cfg),
            "files": sorted(list(result.files) + ["resolved_config.json"]),
            "row_counts": result.rows,
            "sha256": {f: hashlib.sha256(t.encode()).hexdigest() for f, t in sorted(result.files.items())},
            "wall_clock_seconds": wall,
            "warnings": result.warnings,
            "checks": result.checks,
            **result.extra,
        }
        with open(os.path.join(scratch, "manifest.json"), "w") as fh:
            fh.write(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
        final = os.path.join(out_root, name)
        if os.path.exists(final):
            shutil.rmtree(final)
        os.replace(scratch, final)
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    return final, manifest


# ---------------------------------------------------------------------------
# fig1: closed-form velocities and self-transport paths
# ---------------------------------------------------------------------------

def run_fig1(cfg):
    res = RunOutput()
    p9 = GaussianParams.from_1d(0.0, 1.0, 0.0, 3.0)
    t = np.linspace(0.0, 1.0, cfg["t_points"])
    vel = []
    panels = [svgplot.Panel("velocity, N(0,1) to N(0,9)", "t", "v(t,z)"),
              svgplot.Panel("self-transport paths, N(0,1)", "t", "z(t)")]
    for k, z in enumerate(cfg["z_values"]):
        v = np.array([gaussian_velocity(tt, [z], p9)[0] for tt in t])
        vel.extend((z, tt, vv) for tt, vv in zip(t, v))
        panels[0].line(t, v, color="black", dash=k > 0, label=f"z={z:g}")
    res.csv("velocity.csv", ["z", "t", "v"], vel)
    paths = []
    scale = np.sqrt(t * t + (1 - t) ** 2)
    for x in cfg["starts"]:
        paths.extend((x, tt, x * s) for tt, s in zip(t, scale))
        panels[1].line(t, x * scale)
    res.csv("paths.csv", ["x", "t", "z"], paths)
    res.svg(panels, 1, 2)
    res.check("self path x=1, t=0.5", float(np.sqrt(0.5)), "0.70710678 +- 1e-8",
              abs(np.sqrt(0.5) - 0.70710678) < 1e-8)
    v0 = gaussian_velocity(0.0, [1.0], p9)[0]
    v1 = gaussian_velocity(1.0, [1.0], p9)[0]
    res.check("v(0, 1) for N(0,1) to N(0,9)", v0, "-1 +- 1e-12", abs(v0 + 1) < 1e-12)
    res.check("v(1, 1) for N(0,1) to N(0,9)", v1, "1 +- 1e-12", abs(v1 - 1) < 1e-12)
    return res


# ---------------------------------------------------------------------------
# fig2: mixture self-transport fan
# ---------------------------------------------------------------------------

def run_fig2(cfg):
    res = RunOutput()
    mp = MixtureParams.symmetric_1d(cfg["mu"], cfg["sigma"])
    starts = np.asarray(cfg["starts"], dtype=np.float64)
    if np.any(np.abs(starts) > 10):
        raise FarFieldError("fig2 start points must lie in [-10, 10]")
    v = mixture_velocity_field(mp)
    spec = IntegratorSpec("rk4", cfg["T"])
    times, Z = integrate_batch(v, starts[:, None], spec)
    every = max(1, cfg["T"] // cfg["output_points"])
    keep = np.arange(0, len(times), every)
    rows = [(0, i, times[k], Z[k, i, 0]) for i in range(len(starts)) for k in keep]
    res.csv("trajectories.csv", ["replicate", "start_index", "t", "z_1"], rows)
    panel = svgplot.Panel("mixture self-transport", "t", "z(t)")
    for i in range(len(starts)):
        panel.line(times[keep], Z[keep, i, 0])
    res.svg([panel])
    ends = Z[-1, :, 0]
    sym = [abs(ends[i] + ends[j]) for i in range(len(starts)) for j in range(len(starts))
           if abs(starts[i] + starts[j]) < 1e-12]
    sym_err = float(max(sym)) if sym else 0.0
    res.check("R(-x) = -R(x) on the start grid", sym_err, "< 1e-8", sym_err < 1e-8)
    root = RngSpec(cfg["seed"])
    X0 = sample_mixture(mp.source(), cfg["n_mc"], root.child(0))
    X1 = sample_mixture(mp.target(), cfg["n_mc"], root.child(1), "target")
    pushed = rectified_map(v, X0.data, spec)
    ks = marginal_preservation_stat(pushed, X1, energy=False)["ks_1d"][0]
    crit = ks_critical(cfg["n_mc"])
    res.check("KS(pushforward, fresh target)", ks, f"< {crit:.6f} (1% level)", ks < crit)
    return res


# ---------------------------------------------------------------------------
# fig3: kernel-regression trajectories, 1-D standard Gaussians
# ---------------------------------------------------------------------------

def _rk4_batch(f, Z, times):
    traj = np.empty((len(times),) + Z.shape)
    traj[0] = Z
    for k in range(len(times) - 1):
        t, h = times[k], times[k + 1] - times[k]
        k1 = f(t, Z)
        k2 = f(t + h / 2, Z + h / 2 * k1)
        k3 = f(t + h / 2, Z + h / 2 * k2)
        k4 = f(t + h, Z + h * k3)
        Z = Z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        traj[k + 1] = Z
    return traj


def fig3_trajectories(cfg, h):
    """Trajectories (T + 1, M, S) for bandwidth ``h``, replicates batched."""
    M, n, S = cfg["M"], cfg["n"], len(cfg["starts"])
    root = RngSpec(cfg["seed"])
    X0 = np.empty((M, n, 1))
    X1 = np.empty((M, n, 1))
    for k in range(M):
        r = root.child(k)
        X0[k] = sample_gaussian((np.zeros(1), np.eye(1)), n, r.child(0)).data
        X1[k] = sample_gaussian((np.zeros(1), np.eye(1)), n, r.child(1)).data
    Z = np.broadcast_to(np.asarray(cfg["starts"], float)[None, :, None], (M, S, 1)).copy()
    times = np.linspace(0.0, 1.0, cfg["T"] + 1)
    chunk = max(1, 4_000_000 // (n * S))
    parts = []
    for s in range(0, M, chunk):
        sl = slice(s, s + chunk)
        f = lambda t, Y, sl=sl: v_reg2_batch(t, Y, X0[sl], X1[sl], h, GAUSSIAN)
        with np.errstate(invalid="ignore"):
            parts.append(_rk4_batch(f, Z[sl], times))
    return times, np.concatenate(parts, axis=1)[..., 0]


def run_fig3(cfg):
    res = RunOutput()
    starts = np.asarray(cfg["starts"], dtype=np.float64)
    bws = [float(h) for h in cfg["bandwidths"]]
    res.extra["bandwidths"] = bws
    panels = []
    band_rows, traj_rows = [], []
    truth_rows = []
    times = np.linspace(0.0, 1.0, cfg["T"] + 1)
    scale = np.sqrt(times ** 2 + (1 - times) ** 2)
    for i, x in enumerate(starts):
        truth_rows.extend((x, t, x * s) for t, s in zip(times, scale))
    res.csv("truth.csv", ["x", "t", "z"], truth_rows)
    contain = None
    for b, h in enumerate(bws):
        times, traj = fig3_trajectories(cfg, h)
        bad = ~np.all(np.isfinite(traj), axis=(0, 2))
        if bad.any():
            res.warnings.append(f"h={h:g}: {int(bad.sum())} replicates hit an empty kernel window and were dropped")
        if bad.mean() > 0.1:
            raise RectflowError(f"h={h:g}: more than 10% of replicates failed")
        good = traj[:, ~bad, :]
        mean = good.mean(1)
        lo, hi = np.quantile(good, [0.025, 0.975], axis=1)
        panel = svgplot.Panel(f"h = {h:g}", "t", "z(t)")
        for i, x in enumerate(starts):
            band_rows.extend((h, x, t, m, l, u) for t, m, l, u in zip(times, mean[:, i], lo[:, i], hi[:, i]))
            color = svgplot.PALETTE[i % len(svgplot.PALETTE)]
            panel.band(times, lo[:, i], hi[:, i], color=color)
            panel.line(times, mean[:, i], color=color)
            panel.line(times, good[:, 0, i], color=color, dash=True, width=0.8)
            panel.line(times, x * scale, color="black", width=1.0)
        k = 0
        traj_rows.extend((h, k, i, t, traj[j, k, i]) for i in range(len(starts)) for j, t in enumerate(times))
        panels.append(panel)
        if b == int(np.argmax(bws)):
            i = int(np.argmin(np.abs(starts)))
            tr = starts[i] * scale
            inside = (lo[:, i] <= tr) & (tr <= hi[:, i])
            contain, contain_end = float(np.mean(inside)), bool(inside[-1])
    res.csv("bands.csv", ["bandwidth", "x", "t", "mean", "lower", "upper"], band_rows)
    res.csv("trajectories.csv", ["bandwidth", "replicate", "start_index", "t", "z_1"], traj_rows)
    res.svg(panels, 1, len(panels), "kernel-regression trajectories, N(0,1) self-transport")
    res.check("95% band contains R(x) at t=1 (largest h, smallest |x|)", contain_end, "True",
              contain_end, acceptance=False)
    # large h is visibly biased at intermediate t, so this fraction is reported, not gated
    res.check("95% band contains truth (largest h, smallest |x|)", contain, ">= 0.9 of grid times",
              contain >= 0.9, acceptance=False)
    return res


# ---------------------------------------------------------------------------
# fig4: d = 50 identity transport
# ---------------------------------------------------------------------------

def run_fig4(cfg):
    res = RunOutput()
    d, n, B = cfg["d"], cfg["n"], cfg["block"]
    root = RngSpec(cfg["seed"])
    X0 = sample_gaussian((np.zeros(d), np.eye(d)), n, root.child(0))
    X1 = sample_gaussian((np.zeros(d), np.eye(d)), n, root.child(1), "target")
    data = PairedData(X0, X1)
    spec = IntegratorSpec("euler", cfg["T"])
    tg = np.arange(cfg["T"]) / cfg["T"]
    x = np.linspace(-3.0, 3.0, cfg["grid_points"])
    G = len(x)
    P = np.zeros((G * B, d))
    for j in range(B):
        P[j * G:(j + 1) * G, j] = x
    m0, S0 = empirical_moments(X0)
    m1, S1 = empirical_moments(X1)
    curves = {"plugin": gaussian_rectified_map(GaussianParams(m0, m1, S0, S1))(P)}
    lin = fit_linear_velocity(data, tg, "none")
    curves["linear"] = rectified_map(lin, P, spec)
    lasso = fit_linear_velocity(data, tg, "l1", folds=cfg["folds"], n_lambdas=cfg["n_lambdas"])
    res.warnings.extend(lasso.info["warnings"])
    curves["lasso_cv"] = rectified_map(lasso, P, spec)
    kr = estimator_field("reg2", data, EstimatorConfig(bandwidth=cfg["h"]))
    curves["kernel"] = rectified_map(kr, P, spec)
    rows, crows = [], []
    slopes = {}
    panels = [svgplot.Panel(f"({i + 1},{j + 1})") for i in range(B) for j in range(B)]
    for e, (name, E) in enumerate(curves.items()):
        S = np.empty((B, B))
        for i in range(B):
            for j in range(B):
                y = E[j * G:(j + 1) * G, i]
                truth = x if i == j else np.zeros(G)
                rows.extend((name, i + 1, j + 1, xv, yv, tv) for xv, yv, tv in zip(x, y, truth))
                sl, ic = np.polyfit(x, y, 1)
                S[i, j] = sl
                crows.append((name, i + 1, j + 1, sl, ic, float(np.abs(y - truth).max())))
                panels[i * B + j].line(x, y, color=svgplot.PALETTE[e], width=1.0)
        slopes[name] = S
    for i in range(B):
        for j in range(B):
            panels[i * B + j].line(x, x if i == j else 0 * x, color="black", dash=True, width=0.8)
    res.csv("curves.csv", ["estimator", "i", "j", "x", "value", "truth"], rows)
    res.csv("coeffs.csv", ["estimator", "i", "j", "slope", "intercept", "max_abs_dev"], crows)
    res.svg(panels, B, B, "R_i(0,..,x_j,..,0): plugin, linear, lasso_cv, kernel")
    dev = max(float(np.abs(curves["plugin"][j * G:(j + 1) * G, j] - x).max()) for j in range(B))
    res.check("plug-in diagonal max deviation", dev, "< 0.4", dev < 0.4)
    S = slopes["lasso_cv"]
    off = float(np.sqrt(np.mean(S[~np.eye(B, dtype=bool)] ** 2)))
    diag = float(np.sqrt(np.mean(np.diag(S) ** 2)))
    res.check("lasso_cv off-diagonal slope RMS / diagonal RMS", off / diag, "< 0.2", off < diag / 5)
    return res


# ---------------------------------------------------------------------------
# CLT, estimator bench, boundary KDE bench
# ---------------------------------------------------------------------------

def run_clt(cfg):
    res = RunOutput()
    p = GaussianParams.from_1d(cfg["m0"], cfg["s0"], cfg["m1"], cfg["s1"])
    kernel = KernelSpec(cfg["kernel"])
    r = clt_experiment(p, cfg["x"], cfg["n"], cfg["h"], cfg["M"], cfg["estimator"],
                       IntegratorSpec("rk4", cfg["T"]), RngSpec(cfg["seed"]), kernel, cfg["workers"])
    res.csv("errors.csv", ["replicate", "error"], enumerate(r.errors))
    summary = r.summary()
    res.json("summary.json", summary)
    for k, msg in r.failures:
        res.warnings.append(f"replicate {k}: {msg}")
    q = sigma_quadrature_1d(cfg["x"], p)
    res.check("sigma quadrature vs closed form", abs(q - r.reference), "< 1e-6", abs(q - r.reference) < 1e-6)
    res.check("n var / Sigma(x)", r.ratio, "in [0.4, 2.5]", 0.4 <= r.ratio <= 2.5)
    panel = svgplot.Panel("sorted sqrt(n) errors vs normal quantiles", "normal quantile", "sqrt(n) error")
    from scipy.stats import norm
    e = np.sort(r.errors) * np.sqrt(r.n)
    qn = norm.ppf((np.arange(len(e)) + 0.5) / len(e))
    panel.line(qn, e).line(qn, qn * np.sqrt(r.reference), color="black", dash=True)
    res.svg([panel])
    return res


def _bench_estimators(name, t, Z, data, cfg, h):
    ec = EstimatorConfig(bandwidth=h)
    if name == "reg0":
        return v_reg0(t, Z, data, ec)
    if name == "reg2":
        return v_reg2(t, Z, data, ec)
    if name == "reg3":
        return v_reg3(t, Z, data, ec)
    if name == "smoothed":
        return np.stack([v_smoothed(t, z, data, h) for z in Z])
    if name == "den":
        p0, p1 = KDE(data.x0, GAUSSIAN, h), KDE(data.x1, GAUSSIAN, h)
        return np.stack([v_den(t, z, p0, p1, ec) for z in Z])
    if name == "onestep":
        return np.stack([v_onestep(t, z, data, ec)[0] for z in Z])
    raise ParameterError(f"unknown bench estimator {name!r}")


def run_estimator_bench(cfg):
    res = RunOutput()
    p = GaussianParams.from_1d(cfg["m0"], cfg["s0"], cfg["m1"], cfg["s1"])
    Z = np.asarray(cfg["z_values"], float)[:, None]
    root = RngSpec(cfg["seed"])
    rows, table = [], {}
    for ni, n in enumerate(cfg["n_values"]):
        h = cfg["h_scale"] * n ** (-0.2)
        for name in cfg["estimators"]:
            rmse = []
            for r in range(cfg["reps"]):
                g = root.child(ni).child(r)
                data = PairedData(sample_gaussian((p.m0, p.S0), n, g.child(0)),
                                  sample_gaussian((p.m1, p.S1), n, g.child(1), "target"))
                se = []
                for t in cfg["t_values"]:
                    est = _bench_estimators(name, t, Z, data, cfg, h)
                    se.append((est - gaussian_velocity(t, Z, p)) ** 2)
                rmse.append(float(np.sqrt(np.mean(se))))
            med = float(np.median(rmse))
            table.setdefault(name, []).append(med)
            rows.append((name, n, h, med))
    mono = {k: bool(np.all(np.diff(v) < 0)) for k, v in table.items()}
    res.csv("bench.csv", ["estimator", "n", "bandwidth", "median_rmse", "monotone_in_n"],
            [r + (mono[r[0]],) for r in rows])
    res.json("summary.json", {"median_rmse": table, "monotone_in_n": mono, "n_values": cfg["n_values"]})
    for k, ok in mono.items():
        res.check(f"{k}: median RMSE decreasing in n", table[k], "strictly decreasing", ok, acceptance=False)
    panel = svgplot.Panel("median RMSE of v_hat on the (t, z) grid", "log10 n", "log10 RMSE")
    for k, v in table.items():
        panel.line(np.log10(cfg["n_values"]), np.log10(v), label=k)
    res.svg([panel])
    return res


def run_boundary_kde_bench(cfg):
    res = RunOutput()
    root = RngSpec(cfg["seed"])
    body = Box([0.0], [1.0])
    h, m = cfg["h"], cfg["m"]
    zs = np.asarray(cfg["z_values"], float)
    rows = []
    corr = np.empty((cfg["reps"], len(zs)))
    unc = np.empty_like(corr)
    for r in range(cfg["reps"]):
        s = sample_uniform_box([0.0], [1.0], cfg["n"], root.child(r))
        for k, z in enumerate(zs):
            corr[r, k] = boundary_kde_eval(s, body, h, m, [z])
            unc[r, k] = kde_eval(s, KernelSpec(cfg["kernel"]), h, [z])
    for k, z in enumerate(zs):
        rows.append((z, float(corr[:, k].mean()), float(corr[:, k].std(ddof=1)) if cfg["reps"] > 1 else 0.0,
                     float(unc[:, k].mean()), float(unc[:, k].std(ddof=1)) if cfg["reps"] > 1 else 0.0))
    res.csv("uniform_bias.csv", ["z", "corrected_mean", "corrected_sd", "uncorrected_mean", "uncorrected_sd"], rows)
    # moment conditions at random points of a box and a ball
    g = root.child(10_000).generator()
    mrows = []
    worst = 0.0
    for body2, label in ((Box([0.0, 0.0], [1.0, 1.0]), "box"), (Ball([0.0, 0.0], 1.0), "ball")):
        for k in range(cfg["moment_points"]):
            if label == "box":
                z = g.random(2) if k % 2 else np.array([g.random() * 0.1, g.random()])
            else:
                rad = np.sqrt(g.random()) * (1.0 if k % 2 else 0.05) + (0.0 if k % 2 else 0.95)
                ang = 2 * np.pi * g.random()
                z = min(rad, 1.0) * np.array([np.cos(ang), np.sin(ang)])
            for mm in (1, 2):
                bk = boundary_kernel_construct(body2, z, cfg["h2"], mm)
                mom, zero = kernel_moment_report(bk)
                worst = max(worst, mom, zero)
                mrows.append((label, k, z[0], z[1], mm, mom, zero))
    res.csv("moments.csv", ["body", "point", "z_1", "z_2", "m", "max_moment", "zeroth_rel_err"], mrows)
    k0 = int(np.argmin(np.abs(zs)))
    ec, eu = abs(corr[:, k0].mean() - 1.0), abs(unc[:, k0].mean() - 1.0)
    res.check("boundary kernel moments", worst, "< 1e-8", worst < 1e-8)
    res.check("|corrected - 1| / |uncorrected - 1| at z=0", ec / eu, "< 0.5", ec < 0.5 * eu)
    panel = svgplot.Panel("Unif[0,1] density estimates", "z", "estimate")
    panel.line(zs, corr.mean(0), label="corrected").line(zs, unc.mean(0), label="uncorrected")
    panel.line(zs, np.ones_like(zs), color="black", dash=True)
    res.svg([panel])
    return res


# ---------------------------------------------------------------------------
# Registry and entry point
# ---------------------------------------------------------------------------

EXPERIMENTS = {
    "fig1_velocity_paths": (run_fig1, {"t_points": 201, "z_values": [1.0, 0.5, 0.25],
                                       "starts": [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0]}),
    "fig2_mixture_paths": (run_fig2, {"mu": 1.0, "sigma": 1.0, "starts": np.linspace(-3, 3, 13).tolist(),
                                      "T": 1000, "output_points": 100, "n_mc": 2000}),
    "fig3_trajectories_1d": (run_fig3, {"n": 200, "M": 1000, "bandwidths": [0.1, 0.3, 1.0],
                                        "starts": [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0], "T": 50}),
    "fig4_identity_d50": (run_fig4, {"n": 100, "d": 50, "T": 50, "h": 1.0, "block": 6,
                                     "grid_points": 41, "folds": 5, "n_lambdas": 30}),
    "clt_1d": (run_clt, {"m0": 0.0, "s0": 1.0, "m1": 0.0, "s1": 1.0, "x": 0.0, "n": 2000, "h": None,
                         "M": 200, "estimator": "reg2", "kernel": "gaussian", "T": 200}),
    "estimator_bench": (run_estimator_bench, {"m0": 0.0, "s0": 1.0, "m1": 1.0, "s1": 2.0,
                                              "n_values": [200, 800, 3200], "reps": 5, "h_scale": 0.5,
                                              "t_values": [0.25, 0.5, 0.75], "z_values": [-0.5, 0.0, 0.5],
                                              "estimators": ["reg0", "reg2", "reg3", "den", "onestep", "smoothed"]}),
    "boundary_kde_bench": (run_boundary_kde_bench, {"n": 100_000, "h": 0.1, "m": 1, "reps": 5,
                                                    "kernel": "gaussian",
                                                    "z_values": [0.0, 0.02, 0.05, 0.1, 0.2, 0.5],
                                                    "h2": 0.2, "moment_points": 10}),
}
COMMON = {"seed": 0, "workers": 1}


def _parse_value(s):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def resolve_config(experiment, file_cfg=None, seed=None, sets=(), workers=None):
    """Defaults, then the JSON document, then command-line overrides."""
    name = ALIASES.get(experiment, experiment)
    if name not in EXPERIMENTS:
        raise ParameterError(f"unknown experiment {experiment!r}")
    cfg = {**COMMON, **EXPERIMENTS[name][1]}
    layers = [dict(file_cfg or {})]
    layers[0].pop("experiment", None)
    over = {}
    for item in sets:
        if "=" not in item:
            raise ParameterError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = _parse_value(v)
    if seed is not None:
        over["seed"] = int(seed)
    if workers is not None:
        over["workers"] = int(workers)
    layers.append(over)
    for layer in layers:
        unknown = sorted(set(layer) - set(cfg))
        if unknown:
            raise ParameterError(f"unknown config keys for {name}: {unknown}")
        cfg.update(layer)
    return name, cfg


def run_experiment(experiment, cfg_overrides=None, out="results", seed=None, sets=(), workers=None):
    """Run one experiment and write its outputs; returns (out_dir, manifest)."""
    name, cfg = resolve_config(experiment, cfg_overrides, seed, sets, workers)
    t0 = time.perf_counter()
    result = EXPERIMENTS[name][0](cfg)
    wall = time.perf_counter() - t0
    return write_outputs(out, name, cfg, result, wall)


def build_parser():
    ap = argparse.ArgumentParser(prog="rectflow", description="Rectified-flow experiment harness")
    ap.add_argument("experiment", help="one of: " + ", ".join(list(EXPERIMENTS) + list(ALIASES)))
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default="results")
    ap.add_argument("--workers", type=int, help="replicate workers (default: logical cores)")
    ap.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    file_cfg = None
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    try:
        final, manifest = run_experiment(args.experiment, file_cfg, args.out, args.seed, args.sets, workers)
    except (RectflowError, ValueError) as exc:
        print(f"rectflow: error: {exc}", file=sys.stderr)
        return 2
    failed = [c for c in manifest["checks"] if c["acceptance"] and not c["passed"]]
    for c in manifest["checks"]:
        tag = "PASS" if c["passed"] else "FAIL"
        print(f"{tag} {c['name']}: {c['value']} ({c['threshold']})")
    print(f"wrote {final}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
